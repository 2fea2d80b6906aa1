"""
Grid quantum mechanics for the frozen-bond Hamiltonian.

R is a periodic Fourier grid R_i = R_min + i dR; theta is the midpoint grid
theta_j = (j + 1/2) pi / N of the cosine (even) or sine (odd) transform on
[0, pi]. Kinetic operators are diagonal in their spectral representations:
P_R^2 / 2 mu1 via FFT along R, 1/2 G(R_i) P_theta^2 via DCT-II/DST-II along
theta with the R-dependent prefactor applied row by row.
"""

from dataclasses import dataclass, field, replace
from functools import cached_property, lru_cache
import logging

import numpy as np
from scipy import fft

from semiclassical.dynamics import PhasePoint
from semiclassical.exceptions import ConfigError, ConstructionError, GridError, PropagationError
from semiclassical.otel_tracing import traced_function
from semiclassical.porbit import DEFAULT_ALPHA, OrbitTrack, line_action, stability_exponent
from semiclassical.units import HARTREE_TO_CM, HBAR, from_cm

logger = logging.getLogger(__name__)

EDGE_TOLERANCE = 1e-8
MAX_KINETIC_PHASE = 0.5


def _power_of_two(n):
    return n >= 1 and n & (n - 1) == 0


@dataclass(frozen=True)
class GridSpec:
    n_r: int
    n_theta: int
    r_min: float
    r_max: float
    masses: object
    hbar: float = HBAR
    parity: str = "even"

    def __post_init__(self):
        for name in ("n_r", "n_theta"):
            n = getattr(self, name)
            if not _power_of_two(n) or n < 32:
                raise ConfigError(f"{name} must be a power of two >= 32, got {n}")
        if not 0.0 < self.r_min < self.r_max:
            raise ConfigError(f"invalid radial box [{self.r_min}, {self.r_max}]")
        if self.parity not in ("even", "odd"):
            raise ConfigError(f"parity must be 'even' or 'odd', got {self.parity!r}")

    @classmethod
    def for_pes(cls, pes, n_r=64, n_theta=64, r_min=None, r_max=None, parity="even"):
        lo, hi = pes.r_bounds
        return cls(n_r, n_theta, lo if r_min is None else r_min, hi if r_max is None else r_max,
                   pes.masses, parity=parity)

    @property
    def shape(self):
        return (self.n_r, self.n_theta)

    @cached_property
    def dr(self):
        return (self.r_max - self.r_min) / self.n_r

    @cached_property
    def dtheta(self):
        return np.pi / self.n_theta

    @cached_property
    def r(self):
        return self.r_min + self.dr * np.arange(self.n_r)

    @cached_property
    def theta(self):
        return (np.arange(self.n_theta) + 0.5) * self.dtheta

    @cached_property
    def k_r(self):
        return 2.0 * np.pi * fft.fftfreq(self.n_r, d=self.dr)

    @cached_property
    def k_theta(self):
        # cos(k theta), k = 0..N-1 for the even sector; sin(k theta), k = 1..N for the odd one
        start = 0 if self.parity == "even" else 1
        return np.arange(start, start + self.n_theta, dtype=float)

    @property
    def weight(self):
        return self.dr * self.dtheta

    def mesh(self):
        return np.meshgrid(self.r, self.theta, indexing="ij")

    def doubled(self):
        return replace(self, n_r=2 * self.n_r, n_theta=2 * self.n_theta)

    def angular_transform(self, values):
        if self.parity == "even":
            return fft.dct(values, type=2, axis=1, norm="ortho")
        return fft.dst(values, type=2, axis=1, norm="ortho")

    def angular_inverse(self, coeffs):
        if self.parity == "even":
            return fft.idct(coeffs, type=2, axis=1, norm="ortho")
        return fft.idst(coeffs, type=2, axis=1, norm="ortho")

    def check_resolution(self, pes, energy_cm, points_per_wavelength=4.0):
        """Raise GridError if the local de Broglie wavelength at ``energy_cm`` is under-resolved."""
        rr, tt = self.mesh()
        kinetic = np.clip(from_cm(energy_cm) - pes.potential(rr, tt), 0.0, None)
        p_r = np.sqrt(2.0 * self.masses.mu1 * kinetic.max())
        g = self.masses.angular_coefficient(self.r)
        p_theta = np.sqrt(2.0 * (kinetic.max(axis=1) / g).max())
        for name, momentum, step in (("R", p_r, self.dr), ("theta", p_theta, self.dtheta)):
            if momentum > 0.0 and 2.0 * np.pi * self.hbar / momentum < points_per_wavelength * step:
                raise GridError(
                    f"{name} spacing {step:.4f} under-resolves the de Broglie wavelength "
                    f"{2.0 * np.pi * self.hbar / momentum:.4f} at {energy_cm:.1f} cm-1"
                )

    def bounds(self):
        return (self.r_min, self.r_max, 0.0, float(np.pi))

    def to_dict(self):
        return {
            "n_r": self.n_r,
            "n_theta": self.n_theta,
            "r_min": self.r_min,
            "r_max": self.r_max,
            "hbar": self.hbar,
            "parity": self.parity,
        }


@dataclass
class Wavefunction:
    values: np.ndarray
    grid: GridSpec

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        if self.values.shape != self.grid.shape:
            raise GridError(f"amplitudes {self.values.shape} do not match grid {self.grid.shape}")
        if not np.all(np.isfinite(self.values)):
            raise GridError("wavefunction has non-finite amplitudes")

    def norm(self):
        return float(np.sqrt(np.sum(np.abs(self.values) ** 2) * self.grid.weight))

    def normalized(self):
        norm = self.norm()
        if norm == 0.0:
            raise ConstructionError("cannot normalise a zero wavefunction")
        return Wavefunction(self.values / norm, self.grid)

    def scaled(self, factor):
        return Wavefunction(self.values * factor, self.grid)

    def edge_ratio(self):
        """Largest amplitude on the radial box edges relative to the maximum."""
        peak = np.abs(self.values).max()
        if peak == 0.0:
            return 0.0
        edges = np.abs(np.concatenate([self.values[0], self.values[-1]])).max()
        return float(edges / peak)

    def expectation_r(self):
        density = np.abs(self.values) ** 2
        return float(np.sum(density * self.grid.r[:, None]) / np.sum(density))

    def expectation_p_r(self):
        transformed = fft.ifft(self.grid.k_r[:, None] * fft.fft(self.values, axis=0), axis=0)
        return float((np.vdot(self.values, transformed) / np.vdot(self.values, self.values)).real) * self.grid.hbar


def overlap(psi, phi):
    """<psi|phi> by midpoint quadrature."""
    if psi.grid != phi.grid:
        raise GridError("overlap between wavefunctions on different grids")
    return complex(np.vdot(psi.values, phi.values) * psi.grid.weight)


class GridHamiltonian:
    """Potential and kinetic factors of one (pes, grid) pair."""

    def __init__(self, pes, grid):
        self.pes = pes
        self.grid = grid
        rr, tt = grid.mesh()
        self.potential = np.asarray(pes.potential(rr, tt), dtype=float)
        hbar2 = grid.hbar**2
        self.radial = hbar2 * grid.k_r**2 / (2.0 * grid.masses.mu1)
        self.angular = 0.5 * hbar2 * np.outer(grid.masses.angular_coefficient(grid.r), grid.k_theta**2)

    def kinetic(self, values):
        t_r = fft.ifft(self.radial[:, None] * fft.fft(values, axis=0), axis=0)
        t_theta = self.grid.angular_inverse(self.angular * self.grid.angular_transform(values))
        return t_r + t_theta

    def apply(self, values):
        return self.kinetic(values) + self.potential * values

    def max_time_step(self):
        """Largest dt with kinetic phase per step below MAX_KINETIC_PHASE."""
        return MAX_KINETIC_PHASE * self.grid.hbar / (self.radial.max() + self.angular.max())

    def dense_matrix(self):
        """Real symmetric matrix of H in the orthonormal grid basis (small grids only)."""
        n = self.grid.n_r * self.grid.n_theta
        eye = np.eye(n).reshape(n, *self.grid.shape)
        columns = np.array([self.apply(e).real.ravel() for e in eye])
        return 0.5 * (columns + columns.T)


@lru_cache(maxsize=8)
def grid_hamiltonian(pes, grid):
    return GridHamiltonian(pes, grid)


def apply_hamiltonian(psi, pes):
    return Wavefunction(grid_hamiltonian(pes, psi.grid).apply(psi.values), psi.grid)


@traced_function()
def propagate(psi, pes, dt, n_steps):
    """
    Symmetric split-operator propagation exp(-i H n dt / hbar) psi:
    V/2, T_theta/2, T_R, T_theta/2, V/2 per step, each sub-step exact in its
    own representation.
    """
    if n_steps < 0 or dt <= 0.0:
        raise ConfigError(f"need dt > 0 and n_steps >= 0, got dt={dt}, n_steps={n_steps}")
    ham = grid_hamiltonian(pes, psi.grid)
    grid = psi.grid
    if dt > ham.max_time_step() * (1.0 + 1e-12):
        logger.warning(f"time step {dt:.4f} exceeds the kinetic phase bound {ham.max_time_step():.4f}")
    half_v = np.exp(-0.5j * dt * ham.potential / grid.hbar)
    half_theta = np.exp(-0.5j * dt * ham.angular / grid.hbar)
    full_r = np.exp(-1j * dt * ham.radial / grid.hbar)[:, None]
    values = psi.values.copy()
    for step in range(n_steps):
        values = half_v * values
        values = grid.angular_inverse(half_theta * grid.angular_transform(values))
        values = fft.ifft(full_r * fft.fft(values, axis=0), axis=0)
        values = grid.angular_inverse(half_theta * grid.angular_transform(values))
        values = half_v * values
        if not np.all(np.isfinite(values)):
            raise PropagationError("non-finite amplitudes during propagation", step)
    return Wavefunction(values, grid)


def frozen_gaussian(grid, point, alpha_r=DEFAULT_ALPHA[0], alpha_theta=DEFAULT_ALPHA[1], gamma=0.0,
                    check_edges=True):
    """
    exp{-a_R (R-R_t)^2 - a_t (theta-theta_t)^2 + i/hbar [P_R (R-R_t) + P_t (theta-theta_t)] + i gamma}

    plus its periodic and reflected images so that the result has the
    grid's theta parity. Unnormalised.
    """
    if check_edges:
        width = 1.0 / np.sqrt(alpha_r)
        distances = (point.R - grid.r_min, grid.r_max - point.R)
        if min(distances) < 3.0 * width:
            raise GridError(
                f"packet at R={point.R:.4f} within 3 widths ({3.0 * width:.4f}) of the box edges: "
                f"distances {distances[0]:.4f}, {distances[1]:.4f}"
            )
    dr = grid.r - point.R
    radial = np.exp(-alpha_r * dr**2 + 1j * point.p_r * dr / grid.hbar)
    sign = 1.0 if grid.parity == "even" else -1.0
    angular = np.zeros(grid.n_theta, dtype=complex)
    for shift in (-2.0 * np.pi, 0.0, 2.0 * np.pi):
        for mirror in (1.0, -1.0):
            d = mirror * grid.theta - point.theta - shift
            term = np.exp(-alpha_theta * d**2 + 1j * point.p_theta * d / grid.hbar)
            angular += term if mirror > 0 else sign * term
    return Wavefunction(np.exp(1j * gamma) * np.outer(radial, angular), grid)


@traced_function()
def energy_moments(psi, pes):
    """(<H>, sigma) in cm-1 with H^2 from double application."""
    psi = psi.normalized()
    ham = grid_hamiltonian(pes, psi.grid)
    h_psi = ham.apply(psi.values)
    weight = psi.grid.weight
    mean = float(np.vdot(psi.values, h_psi).real * weight)
    second = float(np.vdot(psi.values, ham.apply(h_psi)).real * weight)
    variance = second - mean**2
    if variance < 0.0:
        if variance < -1e-10 * max(mean**2, second, 1e-30):
            raise ConstructionError(f"negative energy variance {variance:.3e}")
        variance = 0.0
    return mean * HARTREE_TO_CM, float(np.sqrt(variance)) * HARTREE_TO_CM


@dataclass
class LocalizedState:
    wavefunction: Wavefunction = field(repr=False)
    kind: str  # tube | scar
    label: str
    n: int
    bs_energy: float  # cm-1
    mean_energy: float
    dispersion: float
    raw_norm: float = 1.0
    stable: bool = True
    flags: list = field(default_factory=list)
    orbit: object = field(default=None, repr=False)

    def key(self):
        return f"{self.kind}:{self.label}:{self.n}"

    def metadata(self):
        return {
            "kind": self.kind,
            "label": self.label,
            "n": self.n,
            "bs_energy_cm": self.bs_energy,
            "mean_energy_cm": self.mean_energy,
            "dispersion_cm": self.dispersion,
            "raw_norm": self.raw_norm,
            "stable": self.stable,
            "flags": list(self.flags),
        }


@dataclass(frozen=True)
class ScarParams:
    exponent: float
    area: float
    ehrenfest_time: float
    window: str = "cosine"

    @classmethod
    def build(cls, exponent, area, hbar=HBAR):
        if exponent <= 0.0:
            raise ConfigError(f"stability exponent must be positive, got {exponent}")
        ehrenfest = np.log(area / hbar) / (2.0 * exponent)
        if ehrenfest <= 0.0:
            raise ConfigError(f"Ehrenfest time {ehrenfest:.4f} <= 0 (A/hbar = {area / hbar:.4f})")
        return cls(exponent, area, float(ehrenfest))

    @classmethod
    def for_orbit(cls, po, pes, hbar=HBAR):
        return cls.build(stability_exponent(po), line_action(po, pes), hbar)


def _tube_sum(track, n_samples, grid, alpha):
    period = track.po.period
    times = np.linspace(0.0, period, n_samples + 1)
    weights = np.full(times.size, period / n_samples)
    weights[[0, -1]] *= 0.5
    states, action, gouy = track.at(times)
    total = np.zeros(grid.shape, dtype=complex)
    for w, y, s, mu in zip(weights, states, action, gouy):
        gamma = s / grid.hbar - 0.5 * np.pi * mu
        total += w * frozen_gaussian(grid, PhasePoint.from_array(y), *alpha, gamma=gamma).values
    return total


def _coherence_factor(phase, periods):
    """|sum_k exp(i k phase)| / periods for ``periods`` traversals."""
    if periods <= 1:
        return 1.0
    return float(abs(np.sum(np.exp(1j * phase * np.arange(periods)))) / periods)


@traced_function()
def tube_function(po, n, bs_energy_cm, pes, grid, alpha=DEFAULT_ALPHA, min_samples=128,
                  max_samples=8192, tol=1e-6, periods=8, integ_tol=1e-12):
    """
    Time average of frozen Gaussians transported along ``po`` with phase
    S_t/hbar - mu_t pi/2. The orbit must already be converged at the BS
    energy. ``raw_norm`` is the pre-normalisation norm of the phase-coherent
    average over ``periods`` traversals.
    """
    if abs(po.energy - bs_energy_cm) > 1e-6 * max(1.0, abs(bs_energy_cm)):
        raise ConstructionError(
            f"orbit '{po.label}' sits at {po.energy:.6f} cm-1, not at the BS energy {bs_energy_cm:.6f}"
        )
    track = OrbitTrack(po, pes, integ_tol, alpha)
    samples = min_samples
    previous = _tube_sum(track, samples, grid, alpha)
    while True:
        samples *= 2
        current = _tube_sum(track, samples, grid, alpha)
        scale = np.linalg.norm(current)
        change = np.linalg.norm(current - previous) / scale if scale > 0.0 else 0.0
        logger.debug(f"tube '{po.label}' n={n}: {samples} samples, change {change:.2e}")
        if change < tol:
            break
        if samples >= max_samples:
            raise ConstructionError(
                f"tube quadrature for '{po.label}' n={n} not converged ({change:.2e}) at {samples} samples"
            )
        previous = current
    psi = Wavefunction(current, grid)
    if psi.edge_ratio() > EDGE_TOLERANCE:
        raise ConstructionError(f"tube '{po.label}' n={n} reaches the radial box edge ({psi.edge_ratio():.2e})")
    _, _, gouy_end = track.at([po.period])
    closing_phase = po.action / grid.hbar - 0.5 * np.pi * float(gouy_end[0])
    raw_norm = psi.norm() / po.period * _coherence_factor(closing_phase, periods)
    psi = psi.normalized()
    mean, sigma = energy_moments(psi, pes)
    return LocalizedState(
        wavefunction=psi,
        kind="tube",
        label=po.label,
        n=n,
        bs_energy=bs_energy_cm,
        mean_energy=mean,
        dispersion=sigma,
        raw_norm=raw_norm,
        stable=po.stable,
        orbit=po,
    )


@traced_function()
def scar_function(tube, scarp, pes, dt=None):
    """
    Cosine-windowed finite-time Fourier transform of a tube state:
    int_{-T_E}^{T_E} cos(pi t / 2 T_E) exp(-i (H - E_n) t / hbar) psi_tube dt.
    The backward branch uses exp(+iHt) psi = conj(exp(-iHt) conj(psi)).
    """
    if tube.kind != "tube":
        raise ConfigError(f"scar construction needs a tube state, got '{tube.kind}'")
    if tube.stable:
        raise ConfigError(f"'{tube.label}' is stable; scar functions need unstable orbits")
    t_e = scarp.ehrenfest_time
    if t_e <= 0.0:
        raise ConfigError(f"Ehrenfest time must be positive, got {t_e}")
    psi = tube.wavefunction
    grid = psi.grid
    ham = grid_hamiltonian(pes, grid)
    bound = ham.max_time_step() if dt is None else dt
    n_steps = max(1, int(np.ceil(t_e / bound)))
    step = t_e / n_steps
    energy = from_cm(tube.bs_energy)
    forward = psi
    backward = Wavefunction(np.conj(psi.values), grid)
    # half-weight t = 0 endpoint from each branch
    total = step * psi.values
    for k in range(1, n_steps + 1):
        forward = propagate(forward, pes, step, 1)
        backward = propagate(backward, pes, step, 1)
        t = k * step
        weight = step * np.cos(0.5 * np.pi * t / t_e) * (0.5 if k == n_steps else 1.0)
        phase = np.exp(1j * energy * t / grid.hbar)
        total = total + weight * (phase * forward.values + np.conj(phase * backward.values))
    scar = Wavefunction(total, grid)
    if scar.norm() == 0.0:
        raise ConstructionError(f"scar '{tube.label}' n={tube.n} vanished")
    scar = scar.normalized()
    mean, sigma = energy_moments(scar, pes)
    logger.info(
        f"scar '{tube.label}' n={tube.n}: T_E={t_e:.1f} ({n_steps} steps), "
        f"sigma {tube.dispersion:.2f} -> {sigma:.2f} cm-1"
    )
    return LocalizedState(
        wavefunction=scar,
        kind="scar",
        label=tube.label,
        n=tube.n,
        bs_energy=tube.bs_energy,
        mean_energy=mean,
        dispersion=sigma,
        raw_norm=tube.raw_norm,
        stable=False,
        orbit=tube.orbit,
    )


def flag_dispersion(state, density, factor=5.0):
    """Flag states whose sigma exceeds ``factor`` local mean level spacings."""
    if not np.isfinite(state.dispersion) or state.dispersion * density > factor:
        state.flags.append("high-dispersion")
        logger.warning(
            f"{state.key()}: sigma={state.dispersion:.2f} cm-1 exceeds {factor} level spacings"
        )
    return state
