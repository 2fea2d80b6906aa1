import numpy as np
import pytest

from semiclassical.qgrid import overlap
from semiclassical.selftest import Check, exact_energy, exact_state, run_selftest


class TestClosedForms:
    def test_exact_energy(self):
        assert exact_energy(0, 0) == 1300.0
        assert exact_energy(1, 2) == 2500.0 * 1.5 + 100.0 * 2.5

    def test_exact_states_orthonormal(self, harmonic_pes, harmonic_grid):
        a = exact_state(harmonic_pes, harmonic_grid, 0, 2)
        b = exact_state(harmonic_pes, harmonic_grid, 1, 0)
        assert a.norm() == pytest.approx(1.0)
        assert abs(overlap(a, b)) < 1e-10

    def test_check_document(self):
        check = Check("tube_min_overlap", np.float64(0.9995), 0.999, np.bool_(True), elapsed=1.23456)
        assert check.to_dict() == {
            "name": "tube_min_overlap",
            "value": 0.9995,
            "threshold": 0.999,
            "passed": True,
            "elapsed_s": 1.235,
        }


class TestSuiteChecks:
    def test_symplecticity(self, harmonic_suite):
        assert harmonic_suite.symplecticity() < 1e-8

    def test_hermiticity(self, harmonic_suite):
        assert harmonic_suite.hermiticity() < 1e-10


@pytest.mark.slow
class TestHarmonicAcceptance:
    def test_every_check_passes(self):
        checks = run_selftest()
        assert {c.name for c in checks} == {
            "bs_relative_error",
            "tube_min_overlap",
            "sgsm_max_error_cm",
            "gram_orthonormality",
            "monodromy_symplecticity",
            "propagator_unitarity",
            "hamiltonian_hermiticity",
        }
        assert all(c.passed for c in checks)
