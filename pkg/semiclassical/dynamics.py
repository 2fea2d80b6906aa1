"""
Classical dynamics of the frozen-bond Hamiltonian

    H = P_R^2 / 2 mu1 + 1/2 G(R) P_theta^2 + V(R, theta)

with G(R) = 1/(mu1 R^2) + 1/(mu2 re^2). Trajectories carry the action
S_t = int (P_R dR + P_theta dtheta) as an extra integrated state. The
Poincare surface of section is the minimum energy path rho = R - Re(theta) = 0
in the canonical variables (psi, P_psi) = (theta, P_theta + P_R Re'(theta)).
"""

from dataclasses import dataclass, field
import logging

import numpy as np
from scipy.integrate import solve_ivp

from semiclassical.exceptions import ConfigError, IntegrationError
from semiclassical.units import HARTREE_TO_CM, from_cm

logger = logging.getLogger(__name__)

# relative drift is measured against max(|E|, 1 cm-1) so the zero of energy
# at the global minimum does not blow it up
ENERGY_FLOOR = 1.0 / HARTREE_TO_CM


def wrap_angle(theta):
    """Wrap to (-pi, pi]."""
    wrapped = np.pi - np.mod(np.pi - np.asarray(theta, dtype=float), 2.0 * np.pi)
    return float(wrapped) if np.ndim(wrapped) == 0 else wrapped


@dataclass(frozen=True)
class PhasePoint:
    R: float
    theta: float
    p_r: float = 0.0
    p_theta: float = 0.0

    def __post_init__(self):
        if not self.R > 0.0:
            raise ConfigError(f"R must be positive, got {self.R}")
        object.__setattr__(self, "theta", wrap_angle(self.theta))

    @classmethod
    def from_array(cls, y):
        return cls(float(y[0]), float(y[1]), float(y[2]), float(y[3]))

    def as_array(self):
        return np.array([self.R, self.theta, self.p_r, self.p_theta])

    def reversed(self):
        return PhasePoint(self.R, self.theta, -self.p_r, -self.p_theta)

    def to_dict(self):
        return {"R": self.R, "theta": self.theta, "P_R": self.p_r, "P_theta": self.p_theta}


def _kinetic(y, masses):
    R, _, p_r, p_theta = y[0], y[1], y[2], y[3]
    return 0.5 * p_r**2 / masses.mu1 + 0.5 * masses.angular_coefficient(R) * p_theta**2


def hamiltonian(point, pes):
    """Total energy in hartree; ``point`` may be a PhasePoint or a state vector."""
    y = point.as_array() if isinstance(point, PhasePoint) else np.asarray(point, dtype=float)
    return float(_kinetic(y, pes.masses) + pes.potential(y[0], y[1]))


def _vector_field(y, pes):
    R, theta, p_r, p_theta = y[0], y[1], y[2], y[3]
    masses = pes.masses
    d_r, d_theta = pes.potential_gradient(R, theta)
    g = masses.angular_coefficient(R)
    g_prime = masses.angular_coefficient_derivative(R)
    return np.array(
        [
            p_r / masses.mu1,
            g * p_theta,
            -0.5 * g_prime * p_theta**2 - d_r,
            -d_theta,
        ]
    )


def flow_derivative(point, pes):
    """(dR/dt, dtheta/dt, dP_R/dt, dP_theta/dt) from Hamilton's equations."""
    y = point.as_array() if isinstance(point, PhasePoint) else np.asarray(point, dtype=float)
    return _vector_field(y, pes)


def hamiltonian_hessian(y, pes):
    """Hessian of H in (R, theta, P_R, P_theta)."""
    R, theta, _, p_theta = y[0], y[1], y[2], y[3]
    masses = pes.masses
    hess = np.zeros((4, 4))
    hess[:2, :2] = pes.hessian(R, theta)
    if masses.centrifugal:
        hess[0, 0] += 3.0 * p_theta**2 / (masses.mu1 * R**4)
    hess[0, 3] = hess[3, 0] = masses.angular_coefficient_derivative(R) * p_theta
    hess[2, 2] = 1.0 / masses.mu1
    hess[3, 3] = masses.angular_coefficient(R)
    return hess


SYMPLECTIC_J = np.block([[np.zeros((2, 2)), np.eye(2)], [-np.eye(2), np.zeros((2, 2))]])


def flow_jacobian(y, pes):
    """Linearised vector field J * Hess(H)."""
    return SYMPLECTIC_J @ hamiltonian_hessian(y, pes)


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # (n, 4); theta kept unwrapped along the trajectory
    action: np.ndarray
    energy: float  # cm-1
    energy_drift: float = 0.0
    dense: object = field(default=None, repr=False)

    def points(self):
        return [PhasePoint.from_array(y) for y in self.states]

    @property
    def final(self):
        return PhasePoint.from_array(self.states[-1])

    def sample(self, t):
        """State (and action) at time t from the dense interpolant."""
        if self.dense is None:
            raise IntegrationError("trajectory has no dense output", self.times[-1])
        values = self.dense(t)
        return values[:4], values[4]


def _with_action(pes):
    def rhs(t, y):
        flow = _vector_field(y, pes)
        return np.append(flow, y[2] * flow[0] + y[3] * flow[1])

    return rhs


def _check_tolerance(tol):
    if not 1e-14 < tol < 1e-4:
        raise ConfigError(f"integration tolerance {tol} outside (1e-14, 1e-4)")


def _solve(pes, y0, t_span, tol, events=None, max_step=np.inf):
    sol = solve_ivp(
        _with_action(pes),
        t_span,
        y0,
        method="DOP853",
        rtol=tol,
        atol=tol,
        dense_output=True,
        events=events,
        max_step=max_step,
    )
    if sol.status == -1:
        raise IntegrationError(sol.message, float(sol.t[-1]))
    return sol


def relative_drift(pes, states, energy):
    reference = max(abs(energy), ENERGY_FLOOR)
    values = np.array([hamiltonian(y, pes) for y in states])
    return float(np.max(np.abs(values - energy)) / reference)


def integrate(start, pes, t_final, tol=1e-10):
    """Adaptive DOP853 integration with dense output and the action as an extra state."""
    if not t_final > 0.0:
        raise ConfigError(f"t_final must be positive, got {t_final}")
    _check_tolerance(tol)
    y0 = np.append(start.as_array(), 0.0)
    energy = hamiltonian(start, pes)
    sol = _solve(pes, y0, (0.0, t_final), tol)
    states = sol.y[:4].T
    drift = relative_drift(pes, states, energy)
    if drift > 10.0 * tol:
        logger.warning(f"energy drift {drift:.2e} exceeds 10*tol over t={t_final:.1f}")
    return Trajectory(
        times=sol.t,
        states=states,
        action=sol.y[4],
        energy=energy * HARTREE_TO_CM,
        energy_drift=drift,
        dense=sol.sol,
    )


@dataclass(frozen=True)
class SosPoint:
    psi: float
    p_psi: float
    time: float
    direction: int

    def to_dict(self):
        return {"psi": self.psi, "P_psi": self.p_psi, "time": self.time, "direction": self.direction}


@dataclass
class SurfaceOfSection:
    points: list
    complete: bool
    elapsed: float
    final_state: np.ndarray = field(default=None, repr=False)
    final_action: float = 0.0

    def __len__(self):
        return len(self.points)

    def as_array(self):
        return np.array([[p.psi, p.p_psi] for p in self.points]).reshape(-1, 2)


def section_coordinates(y, mep):
    """(rho, psi, P_rho, P_psi) for a state vector."""
    R, theta, p_r, p_theta = y[0], y[1], y[2], y[3]
    rho = R - mep.re(theta)
    return rho, wrap_angle(theta), p_r, p_theta + p_r * mep.dre(theta)


def section_velocity(y, pes, mep):
    flow = _vector_field(y, pes)
    return flow[0] - mep.dre(y[1]) * flow[1]


def crossings(start, pes, mep, n_crossings, direction=1, tol=1e-10, t_max=None,
              include_start=True, chunk=20000.0):
    """
    Integrate from ``start`` until ``n_crossings`` section crossings with the
    requested sign of d(rho)/dt have been found, or ``t_max`` is reached.
    """
    if direction not in (1, -1):
        raise ConfigError(f"crossing direction must be +1 or -1, got {direction}")
    _check_tolerance(tol)
    t_max = max(5.0e4, 4.0e3 * n_crossings) if t_max is None else float(t_max)
    y = np.append(start.as_array(), 0.0)
    found = []
    rho0 = section_coordinates(y, mep)[0]
    if include_start and abs(rho0) < 1e-10 and np.sign(section_velocity(y, pes, mep)) == direction:
        _, psi, _, p_psi = section_coordinates(y, mep)
        found.append(SosPoint(psi, p_psi, 0.0, direction))

    def event(t, state):
        return state[0] - mep.re(state[1])

    event.direction = direction

    elapsed = 0.0
    while len(found) < n_crossings and elapsed < t_max:
        span = min(chunk, t_max - elapsed)
        sol = _solve(pes, y, (elapsed, elapsed + span), tol, events=event)
        for t_hit, y_hit in zip(sol.t_events[0], sol.y_events[0]):
            # the chunk start can re-detect a crossing that sits exactly at t0
            if t_hit - elapsed < 1e-9 and found and abs(found[-1].time - t_hit) < 1e-9:
                continue
            _, psi, _, p_psi = section_coordinates(y_hit, mep)
            found.append(SosPoint(float(psi), float(p_psi), float(t_hit), direction))
            if len(found) == n_crossings:
                y = y_hit
                elapsed = float(t_hit)
                break
        else:
            y = sol.y[:, -1]
            elapsed = float(sol.t[-1])
    complete = len(found) >= n_crossings
    return SurfaceOfSection(found, complete, elapsed, final_state=y[:4].copy(), final_action=float(y[4]))


def poincare_section(start, pes, mep, n_crossings, direction=1, tol=1e-10, t_max=None):
    """SOS points of one trajectory; partial results carry ``complete=False``."""
    section = crossings(start, pes, mep, n_crossings, direction=direction, tol=tol, t_max=t_max)
    if not section.complete:
        logger.warning(
            f"surface of section: {len(section)} of {n_crossings} crossings before t={section.elapsed:.1f}"
        )
    return section


def launch_from_section(psi, p_psi, energy, pes, mep, direction=1):
    """
    Phase point on rho = 0 with the given (psi, P_psi) and H = energy (hartree).

    P_rho = P_R solves a P^2 + b P + c = 0; the root with sign(d rho/dt) =
    direction is taken. Returns None when (psi, P_psi) is energetically
    forbidden.
    """
    masses = pes.masses
    R = mep.re(psi)
    slope = mep.dre(psi)
    g = masses.angular_coefficient(R)
    a = 0.5 / masses.mu1 + 0.5 * g * slope**2
    b = -g * p_psi * slope
    c = 0.5 * g * p_psi**2 + pes.potential(R, psi) - energy
    disc = b * b - 4.0 * a * c
    if disc < 0.0:
        return None
    p_r = (-b + direction * np.sqrt(disc)) / (2.0 * a)
    return PhasePoint(R, psi, p_r, p_psi - p_r * slope)


def allowed_angles(pes, mep, energy, n_samples=721):
    """theta in [0, pi] where the MEP lies below ``energy`` (hartree)."""
    theta = np.linspace(0.0, np.pi, n_samples)
    inside = np.asarray(pes.potential(mep.re(theta), theta)) < energy
    return theta[inside]


def sos_launches(pes, mep, energy_cm, n_launches, direction=1):
    """Launch points spread uniformly over the allowed psi range with P_psi = 0."""
    energy = from_cm(energy_cm)
    allowed = allowed_angles(pes, mep, energy)
    if allowed.size == 0:
        raise ConfigError(f"energy {energy_cm} cm-1 lies below the minimum energy path")
    psi_values = np.linspace(allowed[0], allowed[-1], n_launches + 2)[1:-1]
    launches = []
    for psi in psi_values:
        point = launch_from_section(psi, 0.0, energy, pes, mep, direction)
        if point is not None:
            launches.append(point)
    logger.info(f"{len(launches)} SOS launches at E={energy_cm:.1f} cm-1")
    return launches
