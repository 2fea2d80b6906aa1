"""
Potential energy surfaces V(R, theta) for the frozen-bond Li-CN Hamiltonian.

Three kinds are provided:

- ``surrogate``: Morse oscillator in R whose depth, width and equilibrium
  radius are cosine series in theta, plus an angular double well U(theta)
  with the deeper well at theta = pi (energy 0), a shallower isomer well at
  theta = 0 and a single interior saddle.
- ``tabulated-expansion``: V = sum_l v_l(R) B_l(theta) with B_l a Legendre
  polynomial in cos(theta) or cos(l theta) and v_l cubic splines through
  tabulated radial samples.
- ``harmonic``: separable harmonic fixture used by the analytic oracles.

Energies are hartree internally; ``evaluate`` reports cm-1. All surfaces
are even in theta about 0 and pi.
"""

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
import json
import logging

import numpy as np
from numpy.polynomial import chebyshev, legendre
from scipy import ndimage, optimize
from scipy.interpolate import CubicSpline

from semiclassical.exceptions import (
    ConfigError,
    MepError,
    PesDomainError,
    StationaryPointError,
)
from semiclassical.otel_tracing import traced_function
from semiclassical.units import HARTREE_TO_CM, LICN_RE, from_cm, licn_reduced_masses

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * np.pi


def fold_angle(theta):
    """Map theta onto [0, pi]; returns (folded, sign of d(folded)/d(theta))."""
    theta = np.asarray(theta, dtype=float)
    wrapped = np.mod(np.abs(theta), TWO_PI)
    upper = wrapped <= np.pi
    folded = np.where(upper, wrapped, TWO_PI - wrapped)
    sign = np.where(theta < 0, -1.0, 1.0) * np.where(upper, 1.0, -1.0)
    return folded, sign


@dataclass(frozen=True)
class Masses:
    """Reduced masses (electron masses) and frozen C-N bond length (bohr)."""

    mu1: float
    mu2: float
    re: float = LICN_RE
    centrifugal: bool = True

    @classmethod
    def licn(cls):
        mu1, mu2 = licn_reduced_masses()
        return cls(mu1=mu1, mu2=mu2, re=LICN_RE)

    def angular_coefficient(self, R):
        """G(R) = 1/(mu1 R^2) + 1/(mu2 re^2), the P_theta^2 / 2 prefactor."""
        R = np.asarray(R, dtype=float)
        rigid = 1.0 / (self.mu2 * self.re**2)
        if not self.centrifugal:
            return np.full_like(R, rigid) if R.ndim else rigid
        return 1.0 / (self.mu1 * R**2) + rigid

    def angular_coefficient_derivative(self, R):
        R = np.asarray(R, dtype=float)
        if not self.centrifugal:
            return np.zeros_like(R) if R.ndim else 0.0
        return -2.0 / (self.mu1 * R**3)

    def to_dict(self):
        return {"mu1": self.mu1, "mu2": self.mu2, "re": self.re, "centrifugal": self.centrifugal}


@dataclass(frozen=True)
class StationaryPoint:
    R: float
    theta: float
    energy: float  # cm-1
    classification: str  # "minimum" | "saddle"
    hessian_eigenvalues: tuple = ()

    def to_dict(self):
        return {
            "R": self.R,
            "theta": self.theta,
            "energy_cm": self.energy,
            "classification": self.classification,
        }


class PesModel(ABC):
    """Immutable potential surface on R in [R_min, R_max], theta periodic and even."""

    kind = "abstract"

    def __init__(self, masses, r_bounds):
        r_min, r_max = (float(r) for r in r_bounds)
        if not 0.0 < r_min < r_max:
            raise ConfigError(f"invalid radial domain {r_bounds}")
        self.masses = masses
        self.r_bounds = (r_min, r_max)

    # subclasses work on folded theta in [0, pi]
    @abstractmethod
    def _potential(self, R, theta):
        ...

    @abstractmethod
    def _gradient(self, R, theta):
        """(dV/dR, dV/dtheta) at folded theta."""

    @abstractmethod
    def parameters(self):
        ...

    def check_domain(self, R, theta):
        R = np.asarray(R, dtype=float)
        theta = np.asarray(theta, dtype=float)
        r_min, r_max = self.r_bounds
        slack = 1e-12 * (r_max - r_min)
        bad = ~np.isfinite(R) | (R < r_min - slack) | (R > r_max + slack)
        if np.any(bad):
            raise PesDomainError("R", float(R[bad].flat[0]) if R.ndim else float(R), self.r_bounds)
        if np.any(~np.isfinite(theta)):
            raise PesDomainError("theta", float(theta[~np.isfinite(theta)].flat[0]), "finite angle")

    def potential(self, R, theta):
        """V in hartree; accepts scalars or broadcastable arrays."""
        self.check_domain(R, theta)
        folded, _ = fold_angle(theta)
        value = self._potential(np.asarray(R, dtype=float), folded)
        return float(value) if np.ndim(value) == 0 else value

    def potential_gradient(self, R, theta):
        """(dV/dR, dV/dtheta) in hartree/bohr and hartree/rad."""
        self.check_domain(R, theta)
        folded, sign = fold_angle(theta)
        d_r, d_theta = self._gradient(np.asarray(R, dtype=float), folded)
        d_theta = d_theta * sign
        if np.ndim(d_r) == 0:
            return float(d_r), float(d_theta)
        return d_r, d_theta

    def evaluate(self, R, theta):
        """V in cm-1."""
        value = self.potential(R, theta)
        return value * HARTREE_TO_CM

    def gradient(self, R, theta):
        return self.potential_gradient(R, theta)

    def hessian(self, R, theta, step=1e-5):
        """Symmetrised central-difference Hessian of the analytic gradient."""
        r_min, r_max = self.r_bounds
        h_r = min(step, 0.5 * (R - r_min), 0.5 * (r_max - R)) if r_min < R < r_max else step
        gp = np.array(self.potential_gradient(R + h_r, theta))
        gm = np.array(self.potential_gradient(R - h_r, theta))
        col_r = (gp - gm) / (2.0 * h_r)
        gp = np.array(self.potential_gradient(R, theta + step))
        gm = np.array(self.potential_gradient(R, theta - step))
        col_t = (gp - gm) / (2.0 * step)
        hess = np.column_stack([col_r, col_t])
        return 0.5 * (hess + hess.T)

    def to_dict(self):
        return {
            "kind": self.kind,
            "masses": self.masses.to_dict(),
            "domain": {"R": list(self.r_bounds)},
            self._block_name: self.parameters(),
        }

    @property
    def _block_name(self):
        return {"surrogate": "surrogate", "tabulated-expansion": "expansion"}.get(self.kind, self.kind)

    def dump(self, path):
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2))
        return path

    def __repr__(self):
        return f"{self.__class__.__name__}(R={self.r_bounds})"


def _cosine_series(coeffs, theta):
    """sum_k c_k cos(k theta) and its theta derivative."""
    x = np.cos(theta)
    value = chebyshev.chebval(x, coeffs)
    if len(coeffs) > 1:
        slope = -np.sin(theta) * chebyshev.chebval(x, chebyshev.chebder(coeffs))
    else:
        slope = np.zeros_like(value)
    return value, slope


class SurrogatePes(PesModel):
    """
    Analytic double-well surface.

    V = D(theta) [1 - exp(-a(theta) (R - Re(theta)))]^2 + U(theta)

    With x = cos(theta), U'(x) = k (x_s - x) exp(beta x): U rises
    monotonically from the deep well at x = -1 (theta = pi, U = 0) to the
    barrier at x_s = cos(theta_saddle) and falls to the isomer well at
    x = 1. k and beta are solved from the barrier height and isomer energy,
    so the double-well shape holds for any admissible parameters.
    """

    kind = "surrogate"

    DEFAULTS = {
        "depth_cm": [12000.0],
        "width": [0.97],
        "re": [4.1846, 0.225, 0.3904],
        "barrier_cm": 2600.0,
        "isomer_cm": 1700.0,
        "saddle_theta": 0.918,
    }

    def __init__(self, masses=None, r_bounds=(2.8, 8.5), **params):
        super().__init__(masses or Masses.licn(), r_bounds)
        unknown = set(params) - set(self.DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown surrogate parameters: {sorted(unknown)}")
        merged = {**self.DEFAULTS, **params}
        self._params = merged
        self.depth = np.asarray(from_cm(np.asarray(merged["depth_cm"], dtype=float)), dtype=float)
        self.width = np.asarray(merged["width"], dtype=float)
        self.re = np.asarray(merged["re"], dtype=float)
        self.barrier = from_cm(float(merged["barrier_cm"]))
        self.isomer = from_cm(float(merged["isomer_cm"]))
        self.saddle_theta = float(merged["saddle_theta"])
        if not 0.0 < self.saddle_theta < np.pi:
            raise ConfigError(f"saddle_theta must lie in (0, pi), got {self.saddle_theta}")
        if not self.isomer < self.barrier or self.barrier <= 0.0:
            raise ConfigError("need 0 < barrier and isomer energy below the barrier")
        if np.any(chebyshev.chebval(np.linspace(-1, 1, 33), self.depth) <= 0.0):
            raise ConfigError("Morse depth must stay positive for all theta")
        self._x_s = np.cos(self.saddle_theta)
        self._beta = self._solve_beta()
        self._k = self.barrier / self._antiderivative(self._x_s)
        logger.debug(f"surrogate angular well: k={self._k:.6e} beta={self._beta:.6f}")

    def _antiderivative(self, x, beta=None):
        """F(x) = int_{-1}^{x} (x_s - s) exp(beta s) ds."""
        beta = self._beta if beta is None else beta
        x_s = self._x_s
        if abs(beta) < 1e-8:
            return x_s * (x + 1.0) - 0.5 * (x**2 - 1.0)

        def primitive(s):
            return np.exp(beta * s) * ((x_s - s) / beta + 1.0 / beta**2)

        return primitive(x) - primitive(-1.0)

    def _solve_beta(self):
        target = self.isomer / self.barrier

        def mismatch(beta):
            return self._antiderivative(1.0, beta) / self._antiderivative(self._x_s, beta) - target

        return optimize.brentq(mismatch, -40.0, 40.0, xtol=1e-14, rtol=1e-14, maxiter=400)

    def angular_well(self, theta):
        x = np.cos(theta)
        value = self._k * self._antiderivative(x)
        slope = -np.sin(theta) * self._k * (self._x_s - x) * np.exp(self._beta * x)
        return value, slope

    def equilibrium_radius(self, theta):
        return _cosine_series(self.re, theta)

    def _pieces(self, R, theta):
        depth, d_depth = _cosine_series(self.depth, theta)
        width, d_width = _cosine_series(self.width, theta)
        re, d_re = _cosine_series(self.re, theta)
        shift = R - re
        decay = np.exp(-width * shift)
        return depth, d_depth, width, d_width, re, d_re, shift, decay

    def _potential(self, R, theta):
        depth, _, _, _, _, _, _, decay = self._pieces(R, theta)
        well, _ = self.angular_well(theta)
        return depth * (1.0 - decay) ** 2 + well

    def _gradient(self, R, theta):
        depth, d_depth, width, d_width, re, d_re, shift, decay = self._pieces(R, theta)
        _, d_well = self.angular_well(theta)
        d_r = 2.0 * depth * (1.0 - decay) * width * decay
        d_theta = (
            d_depth * (1.0 - decay) ** 2
            + 2.0 * depth * (1.0 - decay) * decay * (d_width * shift - width * d_re)
            + d_well
        )
        return d_r, d_theta

    def parameters(self):
        return {k: (list(v) if isinstance(v, (list, tuple, np.ndarray)) else v) for k, v in self._params.items()}


class ExpansionPes(PesModel):
    """V = sum_l v_l(R) B_l(theta) with cubic-spline radial functions."""

    kind = "tabulated-expansion"

    def __init__(self, masses, r_grid, samples, basis="legendre", units="cm-1"):
        r_grid = np.asarray(r_grid, dtype=float)
        samples = np.atleast_2d(np.asarray(samples, dtype=float))
        if samples.shape[1] != r_grid.size:
            raise ConfigError(
                f"expansion samples have {samples.shape[1]} radial points, grid has {r_grid.size}"
            )
        if np.any(np.diff(r_grid) <= 0.0):
            raise ConfigError("expansion R grid must be strictly increasing")
        if basis not in ("legendre", "cosine"):
            raise ConfigError(f"unknown angular basis '{basis}'")
        if units not in ("cm-1", "hartree"):
            raise ConfigError(f"unknown energy units '{units}'")
        super().__init__(masses, (r_grid[0], r_grid[-1]))
        self.basis = basis
        self.units = units
        self.r_grid = r_grid
        self.samples = samples
        scale = 1.0 / HARTREE_TO_CM if units == "cm-1" else 1.0
        self._splines = [CubicSpline(r_grid, row * scale) for row in samples]
        self._order = samples.shape[0] - 1
        vander, deriv = (legendre.legvander, legendre.legder) if basis == "legendre" else (
            chebyshev.chebvander,
            chebyshev.chebder,
        )
        self._vander = vander
        # column l holds the basis coefficients of dB_l/dx
        eye = np.eye(self._order + 1)
        self._dmat = np.zeros((self._order + 1, self._order + 1))
        for order in range(1, self._order + 1):
            coeffs = deriv(eye[order])
            self._dmat[: coeffs.size, order] = coeffs

    def _radial(self, R, nu=0):
        return np.stack([spline(R, nu) for spline in self._splines], axis=-1)

    def _potential(self, R, theta):
        R, theta = np.broadcast_arrays(R, theta)
        basis = self._vander(np.cos(theta), self._order)
        return np.sum(self._radial(R) * basis, axis=-1)

    def _gradient(self, R, theta):
        R, theta = np.broadcast_arrays(R, theta)
        basis = self._vander(np.cos(theta), self._order)
        d_basis = (basis @ self._dmat) * (-np.sin(theta))[..., None]
        d_r = np.sum(self._radial(R, 1) * basis, axis=-1)
        d_theta = np.sum(self._radial(R) * d_basis, axis=-1)
        return d_r, d_theta

    def parameters(self):
        return {
            "basis": self.basis,
            "units": self.units,
            "R": self.r_grid.tolist(),
            "radial": self.samples.tolist(),
        }


class HarmonicPes(PesModel):
    """
    Separable fixture: 1/2 mu1 w_R^2 (R - R0)^2 + 1/2 (w_t^2 / G) (theta - pi)^2.

    Meant for masses with ``centrifugal=False`` so the kinetic operator
    separates; the angular well is centred on theta = pi.
    """

    kind = "harmonic"

    def __init__(self, masses, r0, omega_r_cm, omega_theta_cm, r_bounds=None):
        r0 = float(r0)
        super().__init__(masses, r_bounds or (r0 - 2.0, r0 + 2.0))
        self.r0 = r0
        self.omega_r = from_cm(float(omega_r_cm))
        self.omega_theta = from_cm(float(omega_theta_cm))
        self.k_r = masses.mu1 * self.omega_r**2
        self.k_theta = self.omega_theta**2 / float(masses.angular_coefficient(r0))

    @classmethod
    def matched(cls, alpha_r=16.114, alpha_theta=14.123, r0=4.35, masses=None):
        """Fixture whose ground state has exactly the given Gaussian widths."""
        masses = masses or Masses(*licn_reduced_masses(), re=LICN_RE, centrifugal=False)
        omega_r = 2.0 * alpha_r / masses.mu1
        omega_theta = 2.0 * alpha_theta * float(masses.angular_coefficient(r0))
        return cls(masses, r0, omega_r * HARTREE_TO_CM, omega_theta * HARTREE_TO_CM)

    def packet_widths(self):
        """(alpha_R, alpha_theta) of the exact ground state."""
        g = float(self.masses.angular_coefficient(self.r0))
        return 0.5 * self.masses.mu1 * self.omega_r, 0.5 * self.omega_theta / g

    def _potential(self, R, theta):
        return 0.5 * self.k_r * (R - self.r0) ** 2 + 0.5 * self.k_theta * (theta - np.pi) ** 2

    def _gradient(self, R, theta):
        R, theta = np.broadcast_arrays(R, theta)
        return self.k_r * (R - self.r0), self.k_theta * (theta - np.pi)

    def parameters(self):
        return {
            "R0": self.r0,
            "omega_R_cm": self.omega_r * HARTREE_TO_CM,
            "omega_theta_cm": self.omega_theta * HARTREE_TO_CM,
        }


def pes_from_dict(document):
    """Build a PesModel from the JSON document layout."""
    try:
        kind = document["kind"]
        masses_block = document.get("masses")
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed PES document: {exc}") from exc
    if masses_block is None:
        masses = Masses.licn()
    else:
        try:
            masses = Masses(
                mu1=float(masses_block["mu1"]),
                mu2=float(masses_block["mu2"]),
                re=float(masses_block.get("re", LICN_RE)),
                centrifugal=bool(masses_block.get("centrifugal", True)),
            )
        except KeyError as exc:
            raise ConfigError(f"PES masses block missing {exc}") from exc
    domain = document.get("domain", {}).get("R")
    if kind == "surrogate":
        kwargs = {"r_bounds": tuple(domain)} if domain else {}
        return SurrogatePes(masses=masses, **kwargs, **document.get("surrogate", {}))
    if kind == "tabulated-expansion":
        block = document.get("expansion")
        if not block:
            raise ConfigError("tabulated-expansion PES needs an 'expansion' block")
        return ExpansionPes(
            masses,
            block["R"],
            block["radial"],
            basis=block.get("basis", "legendre"),
            units=block.get("units", "cm-1"),
        )
    if kind == "harmonic":
        block = document.get("harmonic", {})
        return HarmonicPes(
            masses,
            block["R0"],
            block["omega_R_cm"],
            block["omega_theta_cm"],
            r_bounds=tuple(domain) if domain else None,
        )
    raise ConfigError(f"unknown PES kind '{kind}'")


def load_pes(path):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"PES file {path} does not exist")
    try:
        document = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"PES file {path} is not valid JSON: {exc}") from exc
    return pes_from_dict(document)


@traced_function()
def find_stationary_points(pes, n_scan=64, gradient_tol=1e-9, max_seeds=48):
    """
    Locate minima and saddles: coarse scan of |grad V|^2, then Newton
    refinement of each local minimum of the scan. Maxima are discarded.
    """
    r_min, r_max = pes.r_bounds
    r_axis = np.linspace(r_min, r_max, n_scan)
    t_axis = np.linspace(0.0, np.pi, n_scan)
    rr, tt = np.meshgrid(r_axis, t_axis, indexing="ij")
    d_r, d_t = pes.potential_gradient(rr, tt)
    # put both gradient components on a common length scale
    scale_t = (r_max - r_min) / np.pi
    norm2 = d_r**2 + (d_t / scale_t) ** 2
    is_seed = norm2 == ndimage.minimum_filter(norm2, size=3, mode="nearest")
    order = np.argsort(norm2[is_seed])
    seeds = np.column_stack([rr[is_seed], tt[is_seed]])[order][:max_seeds]

    found = []
    for seed in seeds:
        try:
            sol = optimize.root(
                lambda x: np.array(pes.potential_gradient(*x)),
                seed,
                jac=lambda x: pes.hessian(*x),
                method="hybr",
                options={"xtol": 1e-14},
            )
        except (PesDomainError, ValueError) as exc:
            logger.debug(f"seed {seed} left the domain: {exc}")
            continue
        R, theta = sol.x
        if not (r_min < R < r_max) or not np.all(np.isfinite(sol.x)):
            continue
        theta = float(fold_angle(theta)[0])
        if abs(theta) < 1e-10:
            theta = 0.0
        elif abs(theta - np.pi) < 1e-10:
            theta = float(np.pi)
        grad = np.hypot(*pes.potential_gradient(R, theta))
        if grad > gradient_tol:
            continue
        if any(abs(R - p.R) < 1e-5 and abs(theta - p.theta) < 1e-5 for p in found):
            continue
        eigenvalues = np.linalg.eigvalsh(pes.hessian(R, theta))
        negative = int(np.sum(eigenvalues < 0.0))
        if negative == 2:
            logger.debug(f"discarding maximum at R={R:.4f} theta={theta:.4f}")
            continue
        found.append(
            StationaryPoint(
                R=float(R),
                theta=theta,
                energy=float(pes.evaluate(R, theta)),
                classification="minimum" if negative == 0 else "saddle",
                hessian_eigenvalues=tuple(float(e) for e in eigenvalues),
            )
        )
    if not found:
        raise StationaryPointError("Newton refinement converged from no seed", seeds.tolist())
    found.sort(key=lambda p: (p.classification != "minimum", p.energy))
    logger.info(
        f"stationary points: {sum(p.classification == 'minimum' for p in found)} minima, "
        f"{sum(p.classification == 'saddle' for p in found)} saddles"
    )
    return found


@dataclass(frozen=True)
class MinimumEnergyPath:
    theta: np.ndarray
    radius: np.ndarray
    slope: np.ndarray
    energy: np.ndarray = field(repr=False)  # hartree

    @cached_property
    def _spline(self):
        return CubicSpline(self.theta, self.radius, bc_type=((1, 0.0), (1, 0.0)))

    def re(self, theta):
        folded, _ = fold_angle(theta)
        value = self._spline(folded)
        return float(value) if np.ndim(value) == 0 else value

    def dre(self, theta):
        folded, sign = fold_angle(theta)
        value = self._spline(folded, 1) * sign
        return float(value) if np.ndim(value) == 0 else value

    @property
    def energy_cm(self):
        return self.energy * HARTREE_TO_CM

    def rows(self):
        for t, r, s, e in zip(self.theta, self.radius, self.slope, self.energy_cm):
            yield {"theta": t, "R_e": r, "dR_e_dtheta": s, "energy_cm": e}


@traced_function()
def minimum_energy_path(pes, theta_grid=None, gradient_tol=1e-9):
    """Radial minimum R_e(theta) on a theta grid covering [0, pi]."""
    theta_grid = np.linspace(0.0, np.pi, 181) if theta_grid is None else np.asarray(theta_grid, float)
    if theta_grid[0] > 1e-12 or abs(theta_grid[-1] - np.pi) > 1e-12 or np.any(np.diff(theta_grid) <= 0):
        raise MepError(float(theta_grid[0]), "theta grid must ascend from 0 to pi")
    r_min, r_max = pes.r_bounds
    radii = np.empty_like(theta_grid)
    for i, theta in enumerate(theta_grid):
        coarse = optimize.minimize_scalar(
            lambda r: pes.potential(r, theta),
            bounds=(r_min, r_max),
            method="bounded",
            options={"xatol": 1e-10},
        )
        if not coarse.success:
            raise MepError(float(theta), coarse.message)

        def radial_force(r):
            return pes.potential_gradient(r, theta)[0]

        def radial_curvature(r, h=1e-6):
            return (radial_force(r + h) - radial_force(r - h)) / (2.0 * h)

        try:
            polished = optimize.root_scalar(
                radial_force, x0=coarse.x, fprime=radial_curvature, method="newton", xtol=1e-14
            )
            r_e = polished.root
        except (RuntimeError, PesDomainError) as exc:
            raise MepError(float(theta), str(exc)) from exc
        if abs(radial_force(r_e)) > gradient_tol:
            raise MepError(float(theta), f"residual dV/dR={radial_force(r_e):.3e}")
        if i and abs(r_e - radii[i - 1]) > 5.0 * (theta - theta_grid[i - 1]):
            raise MepError(float(theta), f"R_e jumps from {radii[i - 1]:.4f} to {r_e:.4f}")
        radii[i] = r_e
    spline = CubicSpline(theta_grid, radii, bc_type=((1, 0.0), (1, 0.0)))
    energy = np.asarray(pes.potential(radii, theta_grid))
    return MinimumEnergyPath(
        theta=theta_grid, radius=radii, slope=spline(theta_grid, 1), energy=energy
    )
