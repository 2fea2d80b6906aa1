"""
Selective Gram-Schmidt basis construction.

Candidates (tube and scar states) are ranked by the selection parameter
eta_j = rho(E_j) sqrt(sigma_j^2 + dE_j^2). The first pick maximises 1/eta_j;
afterwards every survivor is orthogonalised against the newest auxiliary
function and the next pick maximises |psi_j^(k)|^2 / eta_j. The Hamiltonian is
then diagonalised in the orthonormal auxiliary basis.
"""

from dataclasses import dataclass, field
import logging

import numpy as np
from scipy import linalg
from scipy.interpolate import CubicSpline

from semiclassical.exceptions import ConfigError, DiagonalizationError, SelectionError
from semiclassical.otel_tracing import traced_function
from semiclassical.qgrid import Wavefunction, grid_hamiltonian
from semiclassical.units import HARTREE_TO_CM, HBAR, from_cm

logger = logging.getLogger(__name__)

DEPENDENCE_THRESHOLD = 1e-6
TIE_TOLERANCE = 1e-12
ASYMMETRY_TOLERANCE = 1e-6
ETA_FLOOR = 1e-12


def weyl_count(pes, energy_cm, sector="even", n_r=256, n_theta=256, hbar=HBAR):
    """
    Leading Weyl estimate of the number of states below ``energy_cm``.

    At fixed (R, theta) the allowed momenta fill an ellipse of area
    2 pi (E - V) sqrt(mu1 / G(R)); the volume is integrated by the midpoint
    rule over the radial box and theta in [0, pi], which is one parity
    sector. ``sector="full"`` doubles it.
    """
    if sector not in ("even", "odd", "full"):
        raise ConfigError(f"unknown parity sector {sector!r}")
    lo, hi = pes.r_bounds
    dr = (hi - lo) / n_r
    dtheta = np.pi / n_theta
    r = lo + (np.arange(n_r) + 0.5) * dr
    theta = (np.arange(n_theta) + 0.5) * dtheta
    rr, tt = np.meshgrid(r, theta, indexing="ij")
    potential = pes.potential(rr, tt)
    jacobian = np.sqrt(pes.masses.mu1 / pes.masses.angular_coefficient(r))[:, None]
    energies = np.atleast_1d(from_cm(np.asarray(energy_cm, dtype=float)))
    factor = 2.0 * np.pi * dr * dtheta / (2.0 * np.pi * hbar) ** 2
    counts = np.array(
        [factor * np.sum(np.clip(e - potential, 0.0, None) * jacobian) for e in energies]
    )
    if sector == "full":
        counts *= 2.0
    return float(counts[0]) if np.ndim(energy_cm) == 0 else counts


@dataclass
class DensityOfStates:
    """Cubic-spline fit of the Weyl staircase; rho is its analytic derivative (states per cm-1)."""

    energies: np.ndarray
    counts: np.ndarray
    sector: str = "even"
    spline: CubicSpline = field(init=False, repr=False)

    def __post_init__(self):
        self.spline = CubicSpline(self.energies, self.counts)

    @classmethod
    def fit(cls, pes, e_max_cm, sector="even", n_nodes=128, e_min_cm=0.0):
        if e_max_cm <= e_min_cm:
            raise ConfigError(f"density window [{e_min_cm}, {e_max_cm}] is empty")
        energies = np.linspace(e_min_cm, e_max_cm, n_nodes)
        return cls(energies, weyl_count(pes, energies, sector=sector), sector)

    def count(self, energy_cm):
        return self.spline(energy_cm)

    def __call__(self, energy_cm):
        rho = self.spline(energy_cm, 1)
        return float(rho) if np.ndim(rho) == 0 else rho

    def to_rows(self):
        return [{"energy_cm": e, "N_sc": n, "rho": self(e)} for e, n in zip(self.energies, self.counts)]


@dataclass(frozen=True)
class SelectionParams:
    e_ref: float
    c_b: float
    density: DensityOfStates
    sigma_sc: float = None

    def __post_init__(self):
        if self.c_b < 0.0:
            raise ConfigError(f"c_b must be non-negative, got {self.c_b}")
        if self.e_ref <= 0.0:
            raise ConfigError(f"E_ref must lie above the global minimum, got {self.e_ref}")
        if not self.density(self.e_ref) > 0.0:
            raise ConfigError(f"density of states vanishes at E_ref={self.e_ref}")


def selection_parameter(state, params):
    delta = max(0.0, state.bs_energy - params.e_ref)
    return params.density(state.bs_energy) * float(np.hypot(state.dispersion, delta))


def semiclassical_dispersion(pool, params):
    if params.sigma_sc is not None:
        return params.sigma_sc
    if not pool:
        raise SelectionError("cannot take the median dispersion of an empty pool")
    return float(np.median([s.dispersion for s in pool]))


def basis_size(params, pool):
    """N_b = round(N_sc(E_ref + 2 sigma_sc) + c_b sigma_sc rho(E_ref))."""
    sigma = semiclassical_dispersion(pool, params)
    n_basis = int(round(float(params.density.count(params.e_ref + 2.0 * sigma))
                        + params.c_b * sigma * params.density(params.e_ref)))
    eligible = sum(in_window(s, params) for s in pool)
    if eligible < n_basis:
        raise SelectionError(
            f"pool has {eligible} candidates in the energy window but N_b={n_basis}; "
            "add more (longer) periodic orbits or raise the BS level cutoff"
        )
    logger.info(f"basis size N_b={n_basis} (sigma_sc={sigma:.2f} cm-1, pool {len(pool)})")
    return n_basis


def in_window(state, params):
    return state.bs_energy < params.e_ref + 2.0 * state.dispersion


def _stack(pool):
    grid = pool[0].wavefunction.grid
    scale = np.sqrt(grid.weight)
    rows = []
    for state in pool:
        if state.wavefunction.grid != grid:
            raise SelectionError(f"{state.key()} lives on a different grid")
        rows.append(state.wavefunction.values.ravel() * scale)
    return np.array(rows), grid


def _pick(scores, alive):
    """argmax over alive candidates, ties within TIE_TOLERANCE broken by lowest index."""
    masked = np.where(alive, scores, -np.inf)
    best = masked.max()
    return int(np.flatnonzero(masked >= best - TIE_TOLERANCE * max(abs(best), 1.0))[0])


@dataclass
class BasisSelection:
    pool: list = field(repr=False)
    selected: list
    eta: np.ndarray
    residual_norms: list
    auxiliary: np.ndarray = field(repr=False)  # (N_b, n_grid), sqrt(weight)-scaled
    grid: object = field(repr=False)
    eligible: np.ndarray = field(repr=False, default=None)
    history: list = field(repr=False, default_factory=list)
    early_stop: bool = False

    def __len__(self):
        return len(self.selected)

    def gram(self):
        return self.auxiliary.conj() @ self.auxiliary.T

    def auxiliary_function(self, a):
        return Wavefunction(self.auxiliary[a].reshape(self.grid.shape) / np.sqrt(self.grid.weight), self.grid)

    def ledger(self):
        rows = []
        for order, (j, residual) in enumerate(zip(self.selected, self.residual_norms)):
            state = self.pool[j]
            rows.append(
                {
                    "order": order,
                    "pool_index": j,
                    "kind": state.kind,
                    "label": state.label,
                    "n": state.n,
                    "bs_energy_cm": state.bs_energy,
                    "dispersion_cm": state.dispersion,
                    "eta": float(self.eta[j]),
                    "residual_norm": residual,
                }
            )
        return rows


@traced_function()
def select_basis(pool, params, n_basis=None, threshold=DEPENDENCE_THRESHOLD):
    """
    Greedy selection with classical Gram-Schmidt updates and one
    re-orthogonalisation pass of every new auxiliary function.
    """
    if not pool:
        raise SelectionError("empty candidate pool")
    if n_basis is None:
        n_basis = basis_size(params, pool)
    vectors, grid = _stack(pool)
    eta = np.array([selection_parameter(s, params) for s in pool])
    if np.any(~np.isfinite(eta)) or np.any(eta < 0.0):
        bad = [pool[j].key() for j in np.flatnonzero(~(eta >= 0.0))]
        raise SelectionError(f"invalid selection parameter for {bad}")
    # exact eigenstates have sigma = 0 below E_ref
    eta = np.maximum(eta, ETA_FLOOR)
    eligible = np.array([in_window(s, params) for s in pool])
    norms = np.linalg.norm(vectors, axis=1)
    residuals = vectors / norms[:, None]
    norms2 = np.ones(len(pool))
    alive = eligible.copy()
    selected, residual_norms, auxiliary, history = [], [], [], []
    while len(selected) < n_basis:
        if not alive.any():
            logger.warning(f"selection stopped early: {len(selected)} of {n_basis} functions independent")
            break
        j = _pick(norms2 / eta, alive)
        phi = residuals[j] / np.sqrt(norms2[j])
        if auxiliary:
            basis = np.array(auxiliary)
            phi = phi - basis.T @ (basis.conj() @ phi)
            phi /= np.linalg.norm(phi)
        selected.append(j)
        residual_norms.append(float(np.sqrt(norms2[j])))
        auxiliary.append(phi)
        alive[j] = False
        residuals -= np.outer(residuals @ phi.conj(), phi)
        norms2 = np.sum(np.abs(residuals) ** 2, axis=1).real
        alive &= norms2 >= threshold**2
        history.append(np.sqrt(norms2))
        logger.debug(f"pick {len(selected)}: {pool[j].key()} residual {residual_norms[-1]:.3e}")
    logger.info(f"selected {len(selected)} of {int(eligible.sum())} eligible candidates")
    return BasisSelection(
        pool=pool,
        selected=selected,
        eta=eta,
        residual_norms=residual_norms,
        auxiliary=np.array(auxiliary),
        grid=grid,
        eligible=eligible,
        history=history,
        early_stop=len(selected) < n_basis,
    )


@dataclass
class EigenResult:
    energies: np.ndarray  # cm-1, ascending
    coefficients: np.ndarray  # columns are eigenvectors in the auxiliary basis
    dispersion: np.ndarray  # sigma_N, cm-1
    relative_dispersion: np.ndarray  # sigma_r
    parity: str
    selection: BasisSelection = field(repr=False)
    hamiltonian: np.ndarray = field(repr=False, default=None)
    basis_dispersion: np.ndarray = field(repr=False, default=None)  # sigma of each auxiliary function

    def __len__(self):
        return len(self.energies)

    def weighted_dispersion(self):
        """sqrt(sum_a |C_aN|^2 sigma_a^2): spread of the basis elements building each state."""
        return np.sqrt(np.abs(self.coefficients.T) ** 2 @ self.basis_dispersion**2)

    def eigenstate(self, index):
        """Eigenfunction |N> reconstructed on the grid."""
        grid = self.selection.grid
        values = self.coefficients[:, index] @ self.selection.auxiliary
        return Wavefunction(values.reshape(grid.shape) / np.sqrt(grid.weight), grid)

    def to_rows(self):
        return [
            {"N": i, "energy_cm": float(e), "sigma_cm": float(s), "sigma_r": float(r)}
            for i, (e, s, r) in enumerate(zip(self.energies, self.dispersion, self.relative_dispersion))
        ]


@traced_function()
def assemble_and_diagonalize(selection, pes, density=None):
    """Rayleigh-Ritz in the auxiliary basis; sigma_N from |H Psi_N|^2 - E_N^2."""
    grid = selection.grid
    if len(selection) == 0:
        raise DiagonalizationError("no auxiliary functions to diagonalise")
    gram = selection.gram()
    deviation = np.abs(gram - np.eye(len(selection))).max()
    if deviation > 1e-10:
        raise DiagonalizationError(f"auxiliary basis not orthonormal (max deviation {deviation:.2e})")
    ham = grid_hamiltonian(pes, grid)
    scale = np.sqrt(grid.weight)
    h_aux = np.array(
        [ham.apply(row.reshape(grid.shape) / scale).ravel() * scale for row in selection.auxiliary]
    ) * HARTREE_TO_CM
    matrix = selection.auxiliary.conj() @ h_aux.T
    asymmetry = np.abs(matrix - matrix.conj().T).max()
    if asymmetry > ASYMMETRY_TOLERANCE:
        raise DiagonalizationError(f"Hamiltonian matrix asymmetry {asymmetry:.2e} cm-1")
    matrix = 0.5 * (matrix + matrix.conj().T)
    try:
        energies, coefficients = linalg.eigh(matrix)
    except linalg.LinAlgError as exc:
        raise DiagonalizationError(f"eigensolver failed: {exc}") from exc
    h_states = coefficients.T @ h_aux
    second = np.sum(np.abs(h_states) ** 2, axis=1)
    variance = second - energies**2
    dispersion = np.sqrt(np.clip(variance, 0.0, None))
    relative = dispersion * density(energies) if density is not None else np.full_like(energies, np.nan)
    diagonal = np.diag(matrix).real
    basis_dispersion = np.sqrt(np.clip(np.sum(np.abs(h_aux) ** 2, axis=1) - diagonal**2, 0.0, None))
    logger.info(
        f"diagonalised N_b={len(selection)}: E_0={energies[0]:.2f} cm-1, "
        f"median sigma={np.median(dispersion):.2f} cm-1"
    )
    return EigenResult(
        energies=energies,
        coefficients=coefficients,
        dispersion=dispersion,
        relative_dispersion=np.asarray(relative, dtype=float),
        parity=grid.parity,
        selection=selection,
        hamiltonian=matrix,
        basis_dispersion=basis_dispersion,
    )
