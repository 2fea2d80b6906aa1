"""
Reference eigensolver on the qgrid discretisation.

Small grids are diagonalised densely; larger ones with ARPACK on a
matrix-free LinearOperator. Convergence is certified by doubling the grid
until the lowest eigenvalues move by less than ``shift_tol`` cm-1.
"""

from dataclasses import dataclass, field
import logging

import numpy as np
from scipy import fft, linalg
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigsh

from semiclassical.analysis import participation_ratio
from semiclassical.exceptions import ConvergenceError, DiagonalizationError
from semiclassical.otel_tracing import traced_function
from semiclassical.qgrid import Wavefunction, grid_hamiltonian
from semiclassical.units import HARTREE_TO_CM

logger = logging.getLogger(__name__)

DENSE_LIMIT = 4096


@dataclass
class ReferenceSpectrum:
    energies: np.ndarray  # cm-1
    vectors: np.ndarray = field(repr=False)  # (n_states, N_R * N_theta), grid-normalised
    grid: object = field(repr=False)
    parity: str = "even"
    shifts: list = field(default_factory=list)
    grids_tried: list = field(default_factory=list)
    certified: bool = False

    def __len__(self):
        return len(self.energies)

    def wavefunction(self, index):
        return Wavefunction(self.vectors[index].reshape(self.grid.shape), self.grid)

    def gram(self):
        return self.vectors.conj() @ self.vectors.T * self.grid.weight

    def metadata(self):
        return {
            "parity": self.parity,
            "grid": list(self.grid.shape),
            "n_states": len(self),
            "grids_tried": self.grids_tried,
            "max_shifts_cm": self.shifts,
            "certified": self.certified,
        }

    def to_rows(self):
        return [{"N": i, "energy_cm": float(e)} for i, e in enumerate(self.energies)]


def _lowest(pes, grid, n_states):
    ham = grid_hamiltonian(pes, grid)
    dim = grid.n_r * grid.n_theta
    if n_states >= dim:
        raise DiagonalizationError(f"{n_states} states requested from a {dim}-point grid")
    if dim <= DENSE_LIMIT:
        energies, vectors = linalg.eigh(ham.dense_matrix(), subset_by_index=(0, n_states - 1))
    else:
        op = LinearOperator(
            (dim, dim),
            matvec=lambda x: ham.apply(x.reshape(grid.shape)).real.ravel(),
            dtype=float,
        )
        try:
            energies, vectors = eigsh(op, k=n_states, which="SA", ncv=max(2 * n_states + 1, 40), tol=1e-12)
        except ArpackNoConvergence as exc:
            raise DiagonalizationError(f"ARPACK did not converge: {exc}") from exc
    order = np.argsort(energies)
    vectors = vectors[:, order].T / np.sqrt(grid.weight)
    return energies[order] * HARTREE_TO_CM, vectors


@traced_function()
def reference_eigensolve(pes, grid, n_states, certify=True, shift_tol=0.1, max_doublings=2):
    """Lowest ``n_states`` eigenpairs of the grid Hamiltonian in the grid's parity sector."""
    energies, vectors = _lowest(pes, grid, n_states)
    spectrum = ReferenceSpectrum(energies, vectors, grid, grid.parity, grids_tried=[list(grid.shape)])
    if not certify:
        return spectrum
    previous = (energies, vectors, grid)
    for _ in range(max_doublings):
        current = previous[2].doubled()
        finer, finer_vectors = _lowest(pes, current, n_states)
        shift = float(np.abs(finer - previous[0]).max())
        spectrum.shifts.append(shift)
        spectrum.grids_tried.append(list(current.shape))
        logger.info(f"reference grid {current.shape}: max eigenvalue shift {shift:.4f} cm-1")
        if shift < shift_tol:
            spectrum.certified = True
            break
        previous = (finer, finer_vectors, current)
    if not spectrum.certified:
        raise ConvergenceError(
            f"reference spectrum not converged to {shift_tol} cm-1 after {max_doublings} doublings",
            spectrum.shifts,
        )
    if previous[2] is not grid:
        # certified energies belong to the refined grid, not the requested one
        spectrum.energies, spectrum.vectors, spectrum.grid = previous
        logger.warning(f"requested grid {grid.shape} only converges at {spectrum.grid.shape}; "
                       f"shifts {spectrum.shifts}")
    return spectrum


def grid_basis_dispersion(pes, grid):
    """
    Energy dispersion (cm-1) of each normalised grid-point function,
    from the diagonals of T, T^2 and V in closed form.
    """
    ham = grid_hamiltonian(pes, grid)
    eye = np.eye(grid.n_theta)
    if grid.parity == "even":
        transform = fft.dct(eye, type=2, axis=0, norm="ortho")
    else:
        transform = fft.dst(eye, type=2, axis=0, norm="ortho")
    c2 = transform**2  # (k, theta point)
    t_theta = ham.angular @ c2  # (R, theta)
    t_theta2 = (ham.angular**2) @ c2
    t_r = ham.radial.mean()
    t_r2 = np.mean(ham.radial**2)
    kinetic = t_r + t_theta
    kinetic2 = t_r2 + 2.0 * t_r * t_theta + t_theta2
    v = ham.potential
    mean = kinetic + v
    second = kinetic2 + 2.0 * v * kinetic + v**2
    return np.sqrt(np.clip(second - mean**2, 0.0, None)) * HARTREE_TO_CM


@traced_function()
def comparison_metrics(reference, basis, basis_dispersion, density):
    """
    (sigma_r, R_N) of each reference state expanded in an orthonormal
    ``basis`` (rows sqrt(weight)-scaled, or None for the grid-point basis)
    whose elements have dispersions ``basis_dispersion`` (cm-1).
    """
    scaled = reference.vectors * np.sqrt(reference.grid.weight)
    coefficients = scaled if basis is None else scaled @ basis.conj().T
    dispersion = np.asarray(basis_dispersion, dtype=float).ravel()
    rows = []
    for i, c in enumerate(coefficients):
        weights = np.abs(c) ** 2
        sigma = float(np.sqrt(weights @ dispersion**2 / weights.sum()))
        energy = float(reference.energies[i])
        rows.append(
            {
                "N": i,
                "energy_cm": energy,
                "sigma_cm": sigma,
                "sigma_r": sigma * density(energy),
                "R_N": participation_ratio(c),
            }
        )
    return rows
