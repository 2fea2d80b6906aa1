"""
Analysis of SGSM eigenstates: local representations, localisation
intensities, participation ratios, stick spectra and the heuristic error
envelope against a reference spectrum.
"""

from dataclasses import dataclass, field
import logging

import numpy as np
from scipy.ndimage import uniform_filter1d

from semiclassical.exceptions import ConfigError, MatchingError
from semiclassical.otel_tracing import traced_function
from semiclassical.qgrid import overlap

logger = logging.getLogger(__name__)

RECONSTRUCTION_TARGET = 0.999
INTENSITY_FLOOR = 1e-12
MATCH_THRESHOLD = 0.5


@dataclass
class LocalTerm:
    pool_index: int
    label: str
    n: int
    kind: str
    intensity: float
    cumulative: float

    def to_dict(self):
        return {
            "pool_index": self.pool_index,
            "label": self.label,
            "n": self.n,
            "kind": self.kind,
            "x": self.intensity,
            "cumulative": self.cumulative,
        }


@dataclass
class LocalRepresentation:
    index: int
    energy: float
    terms: list
    functions: np.ndarray = field(repr=False)  # local orthonormal functions, sqrt(weight)-scaled

    @property
    def x1(self):
        return self.terms[0].intensity if self.terms else 0.0

    @property
    def x2(self):
        return self.terms[1].intensity if len(self.terms) > 1 else 0.0

    @property
    def cumulative(self):
        return self.terms[-1].cumulative if self.terms else 0.0

    def coefficients(self, eigenstate):
        """<phi_i^loc|N> for the local functions."""
        scale = np.sqrt(eigenstate.grid.weight)
        return self.functions.conj() @ (eigenstate.values.ravel() * scale)

    def reconstruct(self, eigenstate):
        grid = eigenstate.grid
        coeffs = self.coefficients(eigenstate)
        values = (coeffs @ self.functions).reshape(grid.shape) / np.sqrt(grid.weight)
        return type(eigenstate)(values, grid)

    def to_dict(self):
        return {"N": self.index, "energy_cm": self.energy, "terms": [t.to_dict() for t in self.terms]}


def _pool_matrix(pool, grid):
    scale = np.sqrt(grid.weight)
    return np.array([s.wavefunction.values.ravel() * scale for s in pool])


@traced_function()
def local_representation(index, eigen, pool, k_max=10, target=RECONSTRUCTION_TARGET):
    """
    Greedy reconstruction of eigenstate ``index``: pick the residual with
    the largest localisation intensity x = |<psi_j^(k)|N>|^2 / |psi_j^(k)|^2,
    orthogonalise all others against it, repeat.
    """
    state = eigen.eigenstate(index)
    grid = state.grid
    target_vec = state.values.ravel() * np.sqrt(grid.weight)
    residuals = _pool_matrix(pool, grid)
    norms2 = np.sum(np.abs(residuals) ** 2, axis=1)
    alive = norms2 > INTENSITY_FLOOR
    terms, functions = [], []
    total = 0.0
    while len(terms) < k_max and total < target:
        projections = residuals.conj() @ target_vec
        intensity = np.where(alive, np.abs(projections) ** 2 / np.where(alive, norms2, 1.0), 0.0)
        j = int(np.argmax(intensity))
        if intensity[j] < INTENSITY_FLOOR:
            logger.debug(f"state {index}: residual intensities exhausted after {len(terms)} terms")
            break
        phi = residuals[j] / np.sqrt(norms2[j])
        total += float(intensity[j])
        source = pool[j]
        terms.append(LocalTerm(j, source.label, source.n, source.kind, float(intensity[j]), total))
        functions.append(phi)
        residuals -= np.outer(residuals @ phi.conj(), phi)
        norms2 = np.sum(np.abs(residuals) ** 2, axis=1)
        alive &= norms2 > INTENSITY_FLOOR
        alive[j] = False
    return LocalRepresentation(index, float(eigen.energies[index]), terms, np.array(functions).reshape(len(functions), -1))


def participation_ratio(coefficients):
    """(sum |C|^2)^2 / sum |C|^4."""
    weights = np.abs(np.asarray(coefficients)) ** 2
    total = weights.sum()
    if total == 0.0:
        raise ConfigError("participation ratio of a zero coefficient vector")
    return float(total**2 / np.sum(weights**2))


def spectrum_of_state(index, eigen, pool, density):
    """Sticks (E_N - E_BS,j) rho versus |<psi_j|N>|^2 for every pool state."""
    state = eigen.eigenstate(index)
    energy = float(eigen.energies[index])
    rho = density(energy)
    sticks = []
    for source in pool:
        weight = abs(overlap(source.wavefunction, state)) ** 2
        sticks.append(((energy - source.bs_energy) * rho, weight))
    return sticks


def mobile_mean(values, window=5):
    """Centred moving average; edge values are repeated to fill the window."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return values
    return uniform_filter1d(values, size=min(window, values.size), mode="nearest")


@dataclass
class StateMetrics:
    index: int
    energy: float
    participation: float
    sigma_r: float
    x1: float
    x2: float
    representation: LocalRepresentation = field(repr=False, default=None)

    def row(self):
        return {
            "N": self.index,
            "energy_cm": self.energy,
            "sigma_r": self.sigma_r,
            "R_N": self.participation,
            "x1": self.x1,
            "x2": self.x2,
        }


@traced_function()
def analyze_states(eigen, pool, k_max=10, window=5):
    metrics = []
    for index in range(len(eigen)):
        rep = local_representation(index, eigen, pool, k_max=k_max)
        metrics.append(
            StateMetrics(
                index=index,
                energy=float(eigen.energies[index]),
                participation=participation_ratio(eigen.coefficients[:, index]),
                sigma_r=float(eigen.relative_dispersion[index]),
                x1=rep.x1,
                x2=rep.x2,
                representation=rep,
            )
        )
    rows = [m.row() for m in metrics]
    for column in ("sigma_r", "R_N", "x1", "x2"):
        smoothed = mobile_mean([r[column] for r in rows], window)
        for row, value in zip(rows, smoothed):
            row[f"{column}_mean"] = float(value)
    logger.info(f"analysed {len(metrics)} eigenstates")
    return metrics, rows


def match_states(eigen, reference, threshold=MATCH_THRESHOLD):
    """
    Greedy maximal-overlap assignment of computed states to reference
    states. Returns (pairs, unmatched) with pairs of (N, N', |<N'|N>|^2).
    """
    if eigen.selection.grid != reference.grid:
        raise MatchingError("computed and reference spectra live on different grids")
    computed = np.array([eigen.eigenstate(i).values.ravel() for i in range(len(eigen))])
    overlaps = np.abs(reference.vectors.conj() @ computed.T * reference.grid.weight) ** 2
    pairs, unmatched = [], []
    free = np.ones(overlaps.shape[0], dtype=bool)
    for i in np.argsort(-overlaps.max(axis=0), kind="stable"):
        column = np.where(free, overlaps[:, i], -1.0)
        k = int(np.argmax(column))
        if column[k] < threshold:
            unmatched.append(int(i))
            continue
        free[k] = False
        pairs.append((int(i), k, float(overlaps[k, i])))
    pairs.sort()
    swaps = sum(1 for i, k, _ in pairs if i != k)
    if unmatched:
        logger.warning(f"{len(unmatched)} computed states have no reference partner above {threshold}")
    if swaps:
        logger.info(f"{swaps} matched states are permuted relative to the reference ordering")
    return pairs, unmatched


def error_bounds(sigma_r):
    """(energy bound 4/3 sigma_r^(3/4), overlap-deficit bound sigma_r)."""
    sigma_r = np.asarray(sigma_r, dtype=float)
    return 4.0 / 3.0 * sigma_r**0.75, sigma_r


@traced_function()
def error_bound_check(eigen, reference, density, threshold=MATCH_THRESHOLD):
    pairs, unmatched = match_states(eigen, reference, threshold)
    rows = []
    for i, k, fidelity in pairs:
        sigma_r = float(eigen.relative_dispersion[i])
        delta_e = abs(float(eigen.energies[i]) - float(reference.energies[k])) * density(float(eigen.energies[i]))
        deficit = 1.0 - fidelity
        energy_bound, deficit_bound = error_bounds(sigma_r)
        rows.append(
            {
                "N": i,
                "reference_N": k,
                "energy_cm": float(eigen.energies[i]),
                "reference_energy_cm": float(reference.energies[k]),
                "sigma_r": sigma_r,
                "delta_e_r": float(delta_e),
                "overlap_deficit": float(deficit),
                "energy_ok": bool(delta_e <= energy_bound),
                "overlap_ok": bool(deficit <= deficit_bound),
            }
        )
    passed = sum(r["energy_ok"] and r["overlap_ok"] for r in rows)
    report = {
        "matched": len(rows),
        "unmatched": unmatched,
        "pass_fraction": passed / len(rows) if rows else 0.0,
        "max_delta_e_r": max((r["delta_e_r"] for r in rows), default=0.0),
        "min_overlap": min((1.0 - r["overlap_deficit"] for r in rows), default=0.0),
        "states": rows,
    }
    logger.info(f"error envelope: {passed}/{len(rows)} matched states inside both bounds")
    return report
