import numpy as np
import pytest

from semiclassical.exceptions import ConvergenceError, DiagonalizationError
from semiclassical import refsolver
from semiclassical.qgrid import GridSpec, apply_hamiltonian, grid_hamiltonian
from semiclassical.refsolver import comparison_metrics, grid_basis_dispersion, reference_eigensolve
from semiclassical.selftest import exact_energy
from semiclassical.units import HARTREE_TO_CM


@pytest.fixture(scope="module")
def dense_grid(harmonic_pes):
    return GridSpec.for_pes(harmonic_pes, 32, 64)


class TestReferenceEigensolve:
    def test_harmonic_even_levels(self, harmonic_pes, dense_grid):
        spectrum = reference_eigensolve(harmonic_pes, dense_grid, 5, certify=False)
        np.testing.assert_allclose(spectrum.energies, [exact_energy(0, 2 * k) for k in range(5)], atol=1e-3)
        assert not spectrum.certified
        assert spectrum.grids_tried == [[32, 64]]

    def test_orthonormal_vectors(self, harmonic_pes, dense_grid):
        spectrum = reference_eigensolve(harmonic_pes, dense_grid, 4, certify=False)
        np.testing.assert_allclose(spectrum.gram(), np.eye(4), atol=1e-10)
        assert spectrum.wavefunction(0).norm() == pytest.approx(1.0)

    def test_odd_sector(self, harmonic_pes):
        grid = GridSpec.for_pes(harmonic_pes, 32, 64, parity="odd")
        spectrum = reference_eigensolve(harmonic_pes, grid, 2, certify=False)
        np.testing.assert_allclose(spectrum.energies, [exact_energy(0, 1), exact_energy(0, 3)], atol=1e-3)
        assert spectrum.parity == "odd"

    def test_too_many_states(self, harmonic_pes, small_grid):
        with pytest.raises(DiagonalizationError):
            reference_eigensolve(harmonic_pes, small_grid, 32 * 32, certify=False)

    def test_certification_needs_a_doubling(self, harmonic_pes, dense_grid):
        with pytest.raises(ConvergenceError):
            reference_eigensolve(harmonic_pes, dense_grid, 3, max_doublings=0)

    def test_certified_energies_come_from_the_converged_grid(self, harmonic_pes, dense_grid, monkeypatch):
        energies = {32: 10.0, 64: 10.5, 128: 10.55}

        def lowest(pes, grid, n_states):
            return np.array([energies[grid.n_r]]), np.full((1, grid.n_r * grid.n_theta), float(grid.n_r))

        monkeypatch.setattr(refsolver, "_lowest", lowest)
        spectrum = reference_eigensolve(harmonic_pes, dense_grid, 1)
        assert spectrum.certified
        assert spectrum.shifts == pytest.approx([0.5, 0.05])
        np.testing.assert_allclose(spectrum.energies, [10.5])
        assert spectrum.grid.shape == (64, 128)
        assert spectrum.vectors.shape == (1, 64 * 128)
        assert spectrum.metadata()["grid"] == [64, 128]

    def test_residual_of_the_grid_hamiltonian(self, harmonic_pes, dense_grid):
        spectrum = reference_eigensolve(harmonic_pes, dense_grid, 4, certify=False)
        for i, energy in enumerate(spectrum.energies):
            psi = spectrum.wavefunction(i)
            residual = apply_hamiltonian(psi, harmonic_pes).values - energy / HARTREE_TO_CM * psi.values
            assert np.sqrt(np.sum(np.abs(residual) ** 2) * dense_grid.weight) < 1e-6

    def test_padding_the_radial_box(self, harmonic_pes):
        narrow = GridSpec(32, 32, 3.45, 5.25, harmonic_pes.masses)
        padded = GridSpec.for_pes(harmonic_pes, 64, 32)
        assert (padded.r_min, padded.r_max) == (3.15, 5.55)
        base = reference_eigensolve(harmonic_pes, narrow, 3, certify=False).energies
        wide = reference_eigensolve(harmonic_pes, padded, 3, certify=False).energies
        np.testing.assert_allclose(wide, base, atol=0.05)

    @pytest.mark.slow
    def test_certified_on_doubled_grid(self, harmonic_pes, dense_grid):
        spectrum = reference_eigensolve(harmonic_pes, dense_grid, 3)
        assert spectrum.certified
        assert spectrum.grids_tried == [[32, 64], [64, 128]]
        assert spectrum.shifts[0] < 0.1
        assert spectrum.metadata()["certified"] is True


class TestGridBasisDispersion:
    def test_matches_dense_hamiltonian(self, harmonic_pes, small_grid):
        matrix = grid_hamiltonian(harmonic_pes, small_grid).dense_matrix()
        variance = np.sum(matrix**2, axis=0) - np.diag(matrix) ** 2
        expected = np.sqrt(variance).reshape(small_grid.shape) * HARTREE_TO_CM
        np.testing.assert_allclose(grid_basis_dispersion(harmonic_pes, small_grid), expected, rtol=1e-6)


class TestComparisonMetrics:
    def test_grid_point_basis(self, harmonic_pes, dense_grid, harmonic_density):
        spectrum = reference_eigensolve(harmonic_pes, dense_grid, 3, certify=False)
        sigma = grid_basis_dispersion(harmonic_pes, dense_grid)
        rows = comparison_metrics(spectrum, None, sigma, harmonic_density)
        assert [r["N"] for r in rows] == [0, 1, 2]
        assert all(r["R_N"] > 5.0 for r in rows)
        assert all(r["sigma_r"] == pytest.approx(r["sigma_cm"] * harmonic_density(r["energy_cm"])) for r in rows)

    def test_eigenbasis_is_sharp(self, harmonic_pes, dense_grid, harmonic_density):
        spectrum = reference_eigensolve(harmonic_pes, dense_grid, 3, certify=False)
        basis = spectrum.vectors * np.sqrt(dense_grid.weight)
        rows = comparison_metrics(spectrum, basis, np.zeros(3), harmonic_density)
        np.testing.assert_allclose([r["R_N"] for r in rows], 1.0, atol=1e-8)
        np.testing.assert_allclose([r["sigma_cm"] for r in rows], 0.0, atol=1e-12)
