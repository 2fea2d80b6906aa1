import numpy as np
import pytest

from semiclassical.exceptions import ConfigError, DiagonalizationError, SelectionError
from semiclassical.qgrid import LocalizedState, Wavefunction, overlap
from semiclassical.selftest import OMEGA_R, OMEGA_THETA
from semiclassical.sgsm import (
    ETA_FLOOR,
    BasisSelection,
    DensityOfStates,
    SelectionParams,
    assemble_and_diagonalize,
    basis_size,
    selection_parameter,
    select_basis,
    weyl_count,
)


@pytest.fixture
def params(harmonic_density):
    return SelectionParams(10000.0, 6.0, harmonic_density)


def _naive_greedy(pool, eta, n_basis):
    """Greedy picks recomputing every residual from scratch against a QR basis of the chosen states."""
    vectors = np.array([s.wavefunction.normalized().values.ravel() for s in pool])
    chosen, norms = [], []
    while len(chosen) < n_basis:
        residual = vectors
        if chosen:
            q, _ = np.linalg.qr(vectors[chosen].T)
            residual = vectors - (vectors @ q.conj()) @ q.T
        norms2 = np.sum(np.abs(residual) ** 2, axis=1)
        scores = norms2 / eta
        scores[chosen] = -np.inf
        j = int(np.argmax(scores))
        chosen.append(j)
        norms.append(float(np.sqrt(norms2[j])))
    return chosen, norms


@pytest.fixture
def random_pool(small_grid):
    """Ten correlated states: random mixtures of six random amplitudes plus a little noise."""
    rng = np.random.default_rng(11)
    base = rng.standard_normal((6, *small_grid.shape))
    mixing = rng.standard_normal((10, 6))
    pool = []
    for k in range(10):
        values = np.tensordot(mixing[k], base, axes=1) + 0.05 * rng.standard_normal(small_grid.shape)
        energy = float(rng.uniform(500.0, 4000.0))
        pool.append(
            LocalizedState(
                wavefunction=Wavefunction(values, small_grid).normalized(),
                kind="scar" if k % 3 else "tube",
                label=f"R{k}",
                n=k,
                bs_energy=energy,
                mean_energy=energy,
                dispersion=float(rng.uniform(1.0, 50.0)),
            )
        )
    return pool


class TestWeylCount:
    def test_harmonic_staircase(self, harmonic_pes):
        energy = 5000.0
        full = energy**2 / (2.0 * OMEGA_R * OMEGA_THETA)
        assert weyl_count(harmonic_pes, energy, sector="full") == pytest.approx(full, rel=1e-2)
        assert weyl_count(harmonic_pes, energy) == pytest.approx(0.5 * full, rel=1e-2)

    def test_vectorised(self, harmonic_pes):
        counts = weyl_count(harmonic_pes, np.array([-10.0, 1000.0, 2000.0]))
        assert counts[0] == 0.0
        assert np.all(np.diff(counts) > 0.0)

    def test_unknown_sector(self, harmonic_pes):
        with pytest.raises(ConfigError):
            weyl_count(harmonic_pes, 1000.0, sector="gerade")


class TestDensityOfStates:
    def test_rho_is_staircase_slope(self, harmonic_density):
        energy = 3000.0
        assert harmonic_density(energy) == pytest.approx(energy / (2.0 * OMEGA_R * OMEGA_THETA), rel=1e-2)
        staircase = energy**2 / (4.0 * OMEGA_R * OMEGA_THETA)
        assert harmonic_density.count(energy) == pytest.approx(staircase, rel=1e-2)

    def test_rows(self, harmonic_density):
        rows = harmonic_density.to_rows()
        assert len(rows) == 128
        assert set(rows[0]) == {"energy_cm", "N_sc", "rho"}

    def test_empty_window(self, harmonic_pes):
        with pytest.raises(ConfigError):
            DensityOfStates.fit(harmonic_pes, 0.0)


class TestSelectionParams:
    @pytest.mark.parametrize("e_ref, c_b", [(3000.0, -1.0), (0.0, 6.0), (-5.0, 6.0)])
    def test_invalid(self, harmonic_density, e_ref, c_b):
        with pytest.raises(ConfigError):
            SelectionParams(e_ref, c_b, harmonic_density)

    def test_eta_grows_above_reference(self, exact_pool, harmonic_density):
        params = SelectionParams(2000.0, 6.0, harmonic_density)
        below, above = exact_pool[0], exact_pool[3]
        expected = harmonic_density(below.bs_energy) * below.dispersion
        assert selection_parameter(below, params) == pytest.approx(expected)
        expected = harmonic_density(above.bs_energy) * np.hypot(above.dispersion, above.bs_energy - 2000.0)
        assert selection_parameter(above, params) == pytest.approx(expected)

    def test_basis_size_needs_enough_candidates(self, exact_pool, harmonic_density):
        params = SelectionParams(10000.0, 6.0, harmonic_density, sigma_sc=50.0)
        with pytest.raises(SelectionError):
            basis_size(params, exact_pool)


class TestSelectBasis:
    def test_first_pick_has_smallest_eta(self, exact_pool, params):
        selection = select_basis(exact_pool, params, n_basis=3)
        eta = [selection_parameter(s, params) for s in exact_pool]
        assert selection.selected[0] == int(np.argmin(eta))
        assert selection.residual_norms[0] == pytest.approx(1.0)

    def test_deterministic(self, exact_pool, params):
        first = select_basis(exact_pool, params, n_basis=5).selected
        assert select_basis(exact_pool, params, n_basis=5).selected == first

    def test_auxiliary_functions_orthonormal(self, exact_pool, params):
        selection = select_basis(exact_pool, params, n_basis=len(exact_pool))
        assert np.abs(selection.gram() - np.eye(len(selection))).max() < 1e-10
        assert not selection.early_stop

    def test_dependent_candidate_stops_early(self, exact_pool, params):
        pool = exact_pool[:3] + [exact_pool[1]]
        selection = select_basis(pool, params, n_basis=4)
        assert selection.early_stop
        assert len(selection) == 3
        assert sorted(selection.selected) in ([0, 1, 2], [0, 2, 3])

    def test_ledger_rows(self, exact_pool, params):
        rows = select_basis(exact_pool, params, n_basis=2).ledger()
        assert [r["order"] for r in rows] == [0, 1]
        assert set(rows[0]) >= {"pool_index", "label", "eta", "residual_norm"}

    def test_matches_naive_greedy(self, random_pool, params):
        eta = np.maximum([selection_parameter(s, params) for s in random_pool], ETA_FLOOR)
        expected, norms = _naive_greedy(random_pool, eta, 8)
        selection = select_basis(random_pool, params, n_basis=8)
        assert selection.selected == expected
        np.testing.assert_allclose(selection.residual_norms, norms, rtol=1e-8)

    def test_empty_pool(self, params):
        with pytest.raises(SelectionError):
            select_basis([], params, n_basis=1)


class TestDiagonalize:
    def test_recovers_exact_levels(self, exact_pool, params, harmonic_pes, harmonic_density):
        selection = select_basis(exact_pool, params, n_basis=len(exact_pool))
        eigen = assemble_and_diagonalize(selection, harmonic_pes, harmonic_density)
        expected = np.sort([s.bs_energy for s in exact_pool])
        np.testing.assert_allclose(eigen.energies, expected, atol=1e-2)
        assert eigen.dispersion.max() < 1.0
        assert eigen.parity == "even"

    def test_eigenstate_reconstruction(self, exact_pool, params, harmonic_pes):
        selection = select_basis(exact_pool, params, n_basis=4)
        eigen = assemble_and_diagonalize(selection, harmonic_pes)
        ground = eigen.eigenstate(0)
        assert ground.norm() == pytest.approx(1.0, abs=1e-10)
        assert abs(overlap(ground, exact_pool[0].wavefunction)) ** 2 == pytest.approx(1.0, abs=1e-8)
        assert np.all(np.isnan(eigen.relative_dispersion))
        assert eigen.weighted_dispersion().shape == (4,)

    def test_rows(self, exact_pool, params, harmonic_pes, harmonic_density):
        selection = select_basis(exact_pool, params, n_basis=2)
        eigen = assemble_and_diagonalize(selection, harmonic_pes, harmonic_density)
        assert [r["N"] for r in eigen.to_rows()] == [0, 1]

    def test_non_orthonormal_basis_rejected(self, exact_pool, harmonic_pes, params):
        selection = select_basis(exact_pool, params, n_basis=2)
        skewed = BasisSelection(
            pool=selection.pool,
            selected=selection.selected,
            eta=selection.eta,
            residual_norms=selection.residual_norms,
            auxiliary=selection.auxiliary * 1.1,
            grid=selection.grid,
        )
        with pytest.raises(DiagonalizationError):
            assemble_and_diagonalize(skewed, harmonic_pes)

    def test_empty_selection_rejected(self, exact_pool, harmonic_pes, params):
        selection = select_basis(exact_pool, params, n_basis=1)
        selection.selected, selection.auxiliary = [], selection.auxiliary[:0]
        with pytest.raises(DiagonalizationError):
            assemble_and_diagonalize(selection, harmonic_pes)
