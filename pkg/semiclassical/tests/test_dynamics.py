import numpy as np
import pytest

from semiclassical.dynamics import (
    PhasePoint,
    allowed_angles,
    crossings,
    flow_derivative,
    flow_jacobian,
    hamiltonian,
    integrate,
    launch_from_section,
    poincare_section,
    section_coordinates,
    sos_launches,
    wrap_angle,
)
from semiclassical.exceptions import ConfigError
from semiclassical.units import HARTREE_TO_CM, from_cm


class TestPhasePoint:
    def test_theta_is_wrapped(self):
        point = PhasePoint(4.0, 3.0 * np.pi / 2.0)
        assert point.theta == pytest.approx(-np.pi / 2.0)

    def test_non_positive_radius_rejected(self):
        with pytest.raises(ConfigError):
            PhasePoint(0.0, 1.0)

    def test_wrap_angle_range(self):
        values = wrap_angle(np.linspace(-10.0, 10.0, 101))
        assert np.all(values > -np.pi) and np.all(values <= np.pi)


class TestHamiltonFlow:
    def test_harmonic_energy(self, harmonic_pes):
        point = PhasePoint(harmonic_pes.r0 + 0.1, np.pi, 3.0, 0.0)
        expected = 0.5 * 3.0**2 / harmonic_pes.masses.mu1 + 0.5 * harmonic_pes.k_r * 0.01
        assert hamiltonian(point, harmonic_pes) == pytest.approx(expected, rel=1e-14)

    def test_jacobian_matches_finite_differences(self, surrogate_pes):
        y = np.array([4.6, 1.2, 2.0, 0.4])
        jac = flow_jacobian(y, surrogate_pes)
        h = 1e-6
        numeric = np.column_stack(
            [(flow_derivative(y + h * e, surrogate_pes) - flow_derivative(y - h * e, surrogate_pes)) / (2 * h)
             for e in np.eye(4)]
        )
        np.testing.assert_allclose(jac, numeric, rtol=1e-4, atol=1e-9)


class TestIntegrate:
    def test_energy_conserved(self, surrogate_pes, linear_seed):
        start = PhasePoint(linear_seed.R + 0.2, np.pi - 0.4)
        trajectory = integrate(start, surrogate_pes, 5000.0, tol=1e-11)
        assert trajectory.energy_drift < 1e-8

    def test_harmonic_period_and_action(self, harmonic_pes):
        start = PhasePoint(harmonic_pes.r0 + 0.05, np.pi)
        period = 2.0 * np.pi / harmonic_pes.omega_r
        trajectory = integrate(start, harmonic_pes, period, tol=1e-12)
        np.testing.assert_allclose(trajectory.states[-1], start.as_array(), atol=1e-8)
        energy = hamiltonian(start, harmonic_pes)
        assert trajectory.action[-1] == pytest.approx(energy * period, rel=1e-8)

    def test_dense_sample(self, harmonic_pes):
        start = PhasePoint(harmonic_pes.r0 + 0.05, np.pi)
        trajectory = integrate(start, harmonic_pes, 100.0)
        state, _ = trajectory.sample(trajectory.times[3])
        np.testing.assert_allclose(state, trajectory.states[3], atol=1e-10)

    def test_invalid_inputs(self, harmonic_pes):
        start = PhasePoint(harmonic_pes.r0, np.pi)
        with pytest.raises(ConfigError):
            integrate(start, harmonic_pes, -1.0)
        with pytest.raises(ConfigError):
            integrate(start, harmonic_pes, 10.0, tol=1e-2)


class TestSurfaceOfSection:
    energy_cm = 1500.0

    def test_launch_lies_on_section_at_energy(self, surrogate_pes, surrogate_mep):
        point = launch_from_section(3.0, 1.0, from_cm(self.energy_cm), surrogate_pes, surrogate_mep, 1)
        rho, psi, _, p_psi = section_coordinates(point.as_array(), surrogate_mep)
        assert rho == pytest.approx(0.0, abs=1e-12)
        assert psi == pytest.approx(3.0)
        assert p_psi == pytest.approx(1.0)
        assert hamiltonian(point, surrogate_pes) * HARTREE_TO_CM == pytest.approx(self.energy_cm, rel=1e-12)

    def test_forbidden_launch(self, surrogate_pes, surrogate_mep):
        assert launch_from_section(0.0, 0.0, from_cm(self.energy_cm), surrogate_pes, surrogate_mep) is None

    def test_allowed_range_excludes_isomer_below_its_energy(self, surrogate_pes, surrogate_mep):
        allowed = allowed_angles(surrogate_pes, surrogate_mep, from_cm(self.energy_cm))
        assert allowed.min() > surrogate_pes.saddle_theta
        assert allowed.max() == pytest.approx(np.pi)

    def test_section_points_conserve_energy(self, surrogate_pes, surrogate_mep):
        launch = sos_launches(surrogate_pes, surrogate_mep, self.energy_cm, 1)[0]
        section = poincare_section(launch, surrogate_pes, surrogate_mep, 20)
        assert section.complete
        assert len(section) == 20
        for p in section.points:
            energy = from_cm(self.energy_cm)
            back = launch_from_section(p.psi, p.p_psi, energy, surrogate_pes, surrogate_mep, 1)
            assert back is not None

    def test_time_cap_gives_partial_section(self, surrogate_pes, surrogate_mep):
        launch = sos_launches(surrogate_pes, surrogate_mep, self.energy_cm, 1)[0]
        section = crossings(launch, surrogate_pes, surrogate_mep, 500, t_max=2000.0)
        assert not section.complete
        assert section.elapsed == pytest.approx(2000.0)

    def test_bad_direction(self, surrogate_pes, surrogate_mep, linear_seed):
        with pytest.raises(ConfigError):
            crossings(linear_seed, surrogate_pes, surrogate_mep, 5, direction=0)

    def test_launches_below_path_rejected(self, surrogate_pes, surrogate_mep):
        with pytest.raises(ConfigError):
            sos_launches(surrogate_pes, surrogate_mep, -10.0, 4)
