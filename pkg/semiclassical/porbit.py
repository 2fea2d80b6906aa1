"""
Periodic orbits of the frozen-bond Hamiltonian.

Three shooting strategies are used depending on where the seed sits:

- ``stretch``: seeds on a symmetry line (theta = 0 or pi) with P_theta = 0
  live in an invariant 1-DOF subspace; the orbit starts at the inner radial
  turning point and the period is the first return to it.
- ``symmetric``: seeds on a symmetry line with P_theta != 0. The orbit
  leaves the line perpendicularly (P_R = 0) and must meet the next line
  crossing perpendicularly too; the half period is shot with a secant
  solver in R0.
- ``section``: Newton iteration on the Poincare return map (psi, P_psi) of
  the minimum energy path section, with a finite-difference Jacobian.

Accepted orbits are characterised by integrating the variational equations
over one period: monodromy, transverse block, stability, winding number and
the running Gouy phase used by tube functions.
"""

from dataclasses import dataclass, field, replace
import logging

import numpy as np
from scipy import linalg, optimize
from scipy.integrate import solve_ivp, trapezoid
from scipy.interpolate import CubicHermiteSpline, interp1d

from semiclassical.dynamics import (
    PhasePoint,
    SYMPLECTIC_J,
    crossings,
    flow_derivative,
    flow_jacobian,
    hamiltonian,
    launch_from_section,
    section_coordinates,
    wrap_angle,
)
from semiclassical.exceptions import (
    ConfigError,
    IntegrationError,
    MonodromyError,
    PesDomainError,
    QuantizationError,
    ShootingError,
    SingularJacobianError,
    StabilityError,
    WindingNumberError,
)
from semiclassical.otel_tracing import traced_function
from semiclassical.units import HARTREE_TO_CM, HBAR, from_cm

logger = logging.getLogger(__name__)

DEFAULT_ALPHA = (16.114, 14.123)
EVENT_T_CAP = 2.0e5
WINDING_GUARD = 0.02
MAX_REFINEMENTS = 3


def _symmetry_line(theta, atol=1e-9):
    wrapped = abs(wrap_angle(theta))
    if wrapped < atol:
        return 0.0
    if wrapped > np.pi - atol:
        return float(np.pi)
    return None


def _line_symbol(line):
    return "0" if line == 0.0 else "π"


def symplectic_scaling(y0, pes):
    """diag(sqrt(mu1), 1/sqrt(G0), 1/sqrt(mu1), sqrt(G0)), a symplectic rescaling."""
    mu1 = pes.masses.mu1
    g0 = float(pes.masses.angular_coefficient(y0[0]))
    return np.diag([np.sqrt(mu1), 1.0 / np.sqrt(g0), 1.0 / np.sqrt(mu1), np.sqrt(g0)])


def scaled_distance(y1, y0, pes, energy):
    """Dimensionless phase-space distance with theta compared modulo 2 pi."""
    scale_e = max(energy - pes.potential(y0[0], y0[1]), abs(energy), from_cm(1.0))
    p_r = np.sqrt(2.0 * pes.masses.mu1 * scale_e)
    p_t = np.sqrt(2.0 * scale_e / float(pes.masses.angular_coefficient(y0[0])))
    delta = np.array(
        [
            (y1[0] - y0[0]) / y0[0],
            wrap_angle(y1[1] - y0[1]) / np.pi,
            (y1[2] - y0[2]) / p_r,
            (y1[3] - y0[3]) / p_t,
        ]
    )
    return float(np.linalg.norm(delta))


@dataclass
class PeriodicOrbit:
    initial: PhasePoint
    period: float
    energy: float  # cm-1
    action: float
    monodromy: np.ndarray = field(repr=False)
    transverse: np.ndarray = field(repr=False)
    stable: bool
    winding_number: int
    symmetry: str  # libration | rotation
    strategy: str  # stretch | symmetric | section
    stability_exponent: float = None
    stability_angle: float = None
    transverse_phase: float = 0.0
    gouy_total: float = 0.0
    label: str = ""
    line: float = None
    brake: bool = False
    crosses_line: bool = False
    closure: float = 0.0
    repetitions: int = 1
    parameter: tuple = ()
    n_returns: int = 1
    direction: int = 1

    @property
    def energy_hartree(self):
        return from_cm(self.energy)

    @property
    def trace(self):
        return float(np.trace(self.transverse))

    def repeated(self, k):
        """The orbit traversed k times."""
        if k < 1:
            raise ConfigError(f"repetition count must be >= 1, got {k}")
        return replace(
            self,
            period=self.period * k,
            action=self.action * k,
            monodromy=np.linalg.matrix_power(self.monodromy, k),
            transverse=np.linalg.matrix_power(self.transverse, k),
            winding_number=self.winding_number * k,
            gouy_total=self.gouy_total * k,
            transverse_phase=self.transverse_phase * k,
            repetitions=self.repetitions * k,
        )

    def to_dict(self):
        return {
            "label": self.label,
            "energy_cm": self.energy,
            "period": self.period,
            "action": self.action,
            "initial": self.initial.to_dict(),
            "monodromy": self.monodromy.tolist(),
            "transverse": self.transverse.tolist(),
            "stable": self.stable,
            "stability_exponent": self.stability_exponent,
            "stability_angle": self.stability_angle,
            "transverse_phase": self.transverse_phase,
            "gouy_total": self.gouy_total,
            "winding_number": self.winding_number,
            "symmetry": self.symmetry,
            "strategy": self.strategy,
            "line": self.line,
            "brake": self.brake,
            "crosses_line": self.crosses_line,
            "closure": self.closure,
            "repetitions": self.repetitions,
            "parameter": list(self.parameter),
            "n_returns": self.n_returns,
            "direction": self.direction,
        }

    @classmethod
    def from_dict(cls, data):
        initial = data["initial"]
        return cls(
            initial=PhasePoint(initial["R"], initial["theta"], initial["P_R"], initial["P_theta"]),
            period=data["period"],
            energy=data["energy_cm"],
            action=data["action"],
            monodromy=np.asarray(data["monodromy"], dtype=float),
            transverse=np.asarray(data["transverse"], dtype=float),
            stable=data["stable"],
            winding_number=data["winding_number"],
            symmetry=data["symmetry"],
            strategy=data["strategy"],
            stability_exponent=data.get("stability_exponent"),
            stability_angle=data.get("stability_angle"),
            transverse_phase=data.get("transverse_phase", 0.0),
            gouy_total=data.get("gouy_total", 0.0),
            label=data.get("label", ""),
            line=data.get("line"),
            brake=data.get("brake", False),
            crosses_line=data.get("crosses_line", False),
            closure=data.get("closure", 0.0),
            repetitions=data.get("repetitions", 1),
            parameter=tuple(data.get("parameter", ())),
            n_returns=data.get("n_returns", 1),
            direction=data.get("direction", 1),
        )


@dataclass
class BifurcationMarker:
    energy: float  # cm-1
    kind: str  # tangent | period-doubling | saddle-node

    def to_dict(self):
        return {"energy_cm": self.energy, "kind": self.kind}


@dataclass
class PoFamily:
    orbits: list
    markers: list = field(default_factory=list)
    label: str = ""
    strategy: str = ""
    line: float = None

    def __len__(self):
        return len(self.orbits)

    @property
    def energies(self):
        return np.array([po.energy for po in self.orbits])

    @property
    def actions(self):
        return np.array([po.action for po in self.orbits])

    @property
    def periods(self):
        return np.array([po.period for po in self.orbits])

    def nearest(self, energy_cm):
        return self.orbits[int(np.argmin(np.abs(self.energies - energy_cm)))]

    def to_dict(self):
        return {
            "label": self.label,
            "strategy": self.strategy,
            "line": self.line,
            "markers": [m.to_dict() for m in self.markers],
            "orbits": [po.to_dict() for po in self.orbits],
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            orbits=[PeriodicOrbit.from_dict(o) for o in data["orbits"]],
            markers=[BifurcationMarker(m["energy_cm"], m["kind"]) for m in data.get("markers", [])],
            label=data.get("label", ""),
            strategy=data.get("strategy", ""),
            line=data.get("line"),
        )


@dataclass
class BsLevel:
    family: str
    n: int
    energy: float  # cm-1
    mu: int
    action: float
    excitation: int
    orbit: PeriodicOrbit = field(default=None, repr=False)

    def to_dict(self):
        return {
            "family": self.family,
            "n": self.n,
            "energy_cm": self.energy,
            "mu": self.mu,
            "action": self.action,
            "excitation": self.excitation,
        }


def _first_event(pes, y0, event, tol, guard, t_cap=EVENT_T_CAP):
    """Integrate until ``event`` fires after ``guard``; returns (t, y)."""

    def guarded(t, y):
        return event(t, y) if t > guard else 1.0

    guarded.terminal = True
    guarded.direction = event.direction

    def rhs(t, y):
        return flow_derivative(y, pes)

    sol = solve_ivp(rhs, (0.0, t_cap), y0, method="DOP853", rtol=tol, atol=tol, events=guarded)
    if sol.status == -1:
        raise IntegrationError(sol.message, float(sol.t[-1]))
    if not sol.t_events[0].size:
        raise ShootingError(f"no return within t={t_cap:.0f}")
    return float(sol.t_events[0][0]), sol.y_events[0][0]


def _stretch_start(line, energy, pes):
    r_min, r_max = pes.r_bounds
    bottom = optimize.minimize_scalar(
        lambda r: pes.potential(r, line), bounds=(r_min, r_max), method="bounded"
    ).x
    if pes.potential(bottom, line) >= energy:
        raise ShootingError(f"E below the well bottom on theta={line:.3f}")
    if pes.potential(r_min, line) <= energy:
        raise ShootingError("inner turning point outside the radial domain")
    inner = optimize.brentq(lambda r: pes.potential(r, line) - energy, r_min, bottom, xtol=1e-14)
    return np.array([inner, line, 0.0, 0.0])


def _stretch_period(y0, pes, tol):
    def returned(t, y):
        return y[2]

    returned.direction = 1
    t_ret, _ = _first_event(pes, y0, returned, tol, guard=1.0)
    return t_ret


def _half_period(r0, line, energy, pes, tol):
    """Shoot perpendicularly off ``line``; returns (P_R at the next line crossing, t_half)."""
    kinetic = energy - pes.potential(r0, line)
    if kinetic <= 0.0:
        raise ShootingError(f"R0={r0:.6f} is energetically forbidden on theta={line:.3f}")
    g = float(pes.masses.angular_coefficient(r0))
    p_theta = np.sqrt(2.0 * kinetic / g)
    y0 = np.array([r0, line, 0.0, p_theta])
    sense = 1.0 if line == 0.0 else -1.0

    def crossed(t, y):
        return sense * np.sin(y[1])

    crossed.direction = -1
    guard = min(50.0, 1e-3 / (g * p_theta))
    t_half, y_half = _first_event(pes, y0, crossed, tol, guard=guard)
    return float(y_half[2]), t_half, y0


def _shoot_stretch(seed, energy, pes, tol, integ_tol):
    line = _symmetry_line(seed.theta)
    y0 = _stretch_start(line, energy, pes)
    period = _stretch_period(y0, pes, integ_tol)
    return y0, period, (float(y0[0]),)


def _shoot_symmetric(seed, energy, pes, tol, integ_tol):
    line = _symmetry_line(seed.theta)
    history = []
    scale = np.sqrt(pes.masses.mu1)

    def residual(r0):
        p_r, _, _ = _half_period(r0, line, energy, pes, integ_tol)
        history.append(p_r / scale)
        return p_r / scale

    try:
        sol = optimize.root_scalar(
            residual, x0=seed.R, x1=seed.R + 1e-3, method="secant", xtol=1e-13, maxiter=60
        )
    except (ShootingError, PesDomainError, IntegrationError) as exc:
        raise ShootingError(f"symmetric shooting failed: {exc}", history) from exc
    if not sol.converged or abs(residual(sol.root)) > tol:
        raise ShootingError("symmetric shooting did not converge", history)
    _, t_half, y0 = _half_period(sol.root, line, energy, pes, integ_tol)
    logger.debug(f"symmetric shooting: R0={sol.root:.8f} after {len(history)} evaluations")
    return y0, 2.0 * t_half, (float(sol.root),)


def _return_map(x, energy, pes, mep, n_returns, direction, integ_tol):
    psi, p_psi = x
    start = launch_from_section(psi, p_psi, energy, pes, mep, direction)
    if start is None:
        raise ShootingError(f"(psi, P_psi)=({psi:.6f}, {p_psi:.6f}) lies off the energy shell")
    section = crossings(
        start, pes, mep, n_returns, direction=direction, tol=integ_tol, include_start=False
    )
    if not section.complete:
        raise ShootingError(f"only {len(section)} of {n_returns} section returns")
    last = section.points[-1]
    residual = np.array([wrap_angle(last.psi - psi), last.p_psi - p_psi])
    return residual, last.time, start


def _shoot_section(seed, energy, pes, mep, tol, integ_tol, n_returns, direction):
    y_seed = seed.as_array()
    rho, psi, _, p_psi = section_coordinates(y_seed, mep)
    if abs(rho) > 1e-8:
        first = crossings(seed, pes, mep, 1, direction=direction, tol=integ_tol, include_start=False)
        if not first.complete:
            raise ShootingError("seed never reaches the section")
        psi, p_psi = first.points[0].psi, first.points[0].p_psi
    g0 = float(pes.masses.angular_coefficient(mep.re(psi)))
    weights = np.array([1.0 / np.pi, np.sqrt(g0 / max(energy, from_cm(1.0)))])
    x = np.array([psi, p_psi])
    history = []
    for iteration in range(40):
        f, period, start = _return_map(x, energy, pes, mep, n_returns, direction, integ_tol)
        norm = float(np.linalg.norm(f * weights))
        history.append(norm)
        logger.debug(f"section Newton iteration {iteration}: |F|={norm:.3e}")
        if norm < tol:
            return start.as_array(), period, tuple(float(v) for v in x)
        jac = np.empty((2, 2))
        steps = (1e-7, 1e-7 * max(1.0, abs(x[1])))
        for k in range(2):
            dx = np.zeros(2)
            dx[k] = steps[k]
            f_plus, _, _ = _return_map(x + dx, energy, pes, mep, n_returns, direction, integ_tol)
            f_minus, _, _ = _return_map(x - dx, energy, pes, mep, n_returns, direction, integ_tol)
            jac[:, k] = (f_plus - f_minus) / (2.0 * steps[k])
        cond = np.linalg.cond(jac)
        if not np.isfinite(cond) or cond > 1e10:
            raise SingularJacobianError(cond, history)
        step = np.linalg.solve(jac, -f)
        for _ in range(6):
            trial = x + step
            try:
                f_trial, _, _ = _return_map(trial, energy, pes, mep, n_returns, direction, integ_tol)
            except ShootingError:
                step *= 0.5
                continue
            if np.linalg.norm(f_trial * weights) < norm:
                break
            step *= 0.5
        x = x + step
    raise ShootingError("section Newton did not converge", history)


def _variational_rhs(pes):
    def rhs(t, z):
        y = z[:4]
        phi = z[4:20].reshape(4, 4)
        flow = flow_derivative(y, pes)
        jac = flow_jacobian(y, pes)
        return np.concatenate([flow, (jac @ phi).ravel(), [y[2] * flow[0] + y[3] * flow[1]]])

    return rhs


def _variational_solution(y0, pes, t_final, tol):
    z0 = np.concatenate([y0, np.eye(4).ravel(), [0.0]])
    sol = solve_ivp(
        _variational_rhs(pes),
        (0.0, t_final),
        z0,
        method="DOP853",
        rtol=tol,
        atol=tol,
        dense_output=True,
    )
    if sol.status == -1:
        raise MonodromyError(f"variational integration failed: {sol.message}")
    return sol


def transverse_block(matrix, y0, pes):
    """
    2x2 block of ``matrix`` on the plane symplectically transverse to the
    flow and energy directions at y0, in scaled coordinates.
    """
    scaling = symplectic_scaling(y0, pes)
    scaled = scaling @ matrix @ np.linalg.inv(scaling)
    flow = flow_derivative(y0, pes)
    grad = -SYMPLECTIC_J @ flow
    grad_s = np.linalg.solve(scaling, grad)
    flow_s = scaling @ flow
    plane = linalg.null_space(np.vstack([grad_s, flow_s]))
    if plane.shape[1] != 2:
        raise MonodromyError("degenerate flow at the orbit start")
    a, b = plane[:, 0], plane[:, 1]

    def omega(u, v):
        return float(u @ SYMPLECTIC_J @ v)

    w = omega(a, b)
    if abs(w) < 1e-12:
        raise MonodromyError("transverse plane is not symplectic")
    b = b / w
    ma, mb = scaled @ a, scaled @ b
    return np.array([[omega(ma, b), omega(mb, b)], [omega(a, ma), omega(a, mb)]])


def _gouy_angles(phi_stack, alpha):
    """arg det(Phi_qq + i Phi_qp 2 hbar A) for a stack of 4x4 matrices."""
    width = 2.0 * HBAR * np.diag(alpha)
    blocks = phi_stack[:, :2, :2] + 1j * phi_stack[:, :2, 2:] @ width
    return np.angle(np.linalg.det(blocks))


def _tracked_samples(sol, t_final, alpha, n_samples, extra_times=()):
    """Samples with a continuous Gouy phase, refined until no jump exceeds pi/2."""
    for attempt in range(MAX_REFINEMENTS + 1):
        times = np.union1d(np.linspace(0.0, t_final, n_samples * 2**attempt), np.asarray(extra_times))
        z = sol.sol(times)
        phi = z[4:20].T.reshape(-1, 4, 4)
        raw = _gouy_angles(phi, alpha)
        jumps = np.abs(np.angle(np.exp(1j * np.diff(raw))))
        if jumps.size == 0 or jumps.max() <= 0.5 * np.pi:
            return times, z, np.unwrap(raw)
        logger.debug(f"Gouy tracking jump {jumps.max():.3f} rad, refining samples")
    raise WindingNumberError(f"phase jump exceeds pi/2 after {MAX_REFINEMENTS} refinements")


def _count_sign_changes(values):
    signs = np.sign(values)
    signs = signs[signs != 0]
    return int(np.sum(signs[1:] != signs[:-1]))


def _half_turns(times, values, period):
    """
    Sign changes of ``values`` on (0, T], including a zero that lands on T.

    Samples run past T by WINDING_GUARD; only changes within a quarter of the
    smallest zero spacing beyond T are kept so fast transverse oscillations
    do not leak into the count.
    """
    keep = (times > 0.0) & (values != 0.0)
    times, signs = times[keep], np.sign(values[keep])
    changed = np.flatnonzero(signs[1:] != signs[:-1]) + 1
    if not changed.size:
        return 0
    at = 0.5 * (times[changed] + times[changed - 1])
    spacing = np.diff(np.concatenate([[0.0], at])).min()
    guard = min(WINDING_GUARD * period, 0.25 * spacing)
    return int(np.sum(at <= period + guard))


def _kinetic(states, pes):
    return 0.5 * states[2] ** 2 / pes.masses.mu1 + 0.5 * pes.masses.angular_coefficient(states[0]) * states[3] ** 2


def _kinetic_minimum(dense, t_end, pes, n_samples=4097):
    """(time, value) of the smallest kinetic energy along a dense trajectory."""
    times = np.linspace(0.0, t_end, n_samples)
    kinetic = _kinetic(dense(times), pes)
    k = int(np.argmin(kinetic))
    if k == 0:
        return 0.0, float(kinetic[0])
    lo, hi = times[k - 1], times[min(k + 1, n_samples - 1)]
    best = optimize.minimize_scalar(
        lambda t: float(_kinetic(dense(t), pes)), bounds=(lo, hi), method="bounded",
        options={"xatol": 1e-12},
    )
    return float(best.x), float(best.fun)


def _characterise(y0, period, energy, pes, integ_tol, alpha, n_samples=2048):
    t_end = period * (1.0 + WINDING_GUARD)
    sol = _variational_solution(y0, pes, t_end, integ_tol)
    z_period = sol.sol(period)
    y_period = z_period[:4]
    times, z, gouy = _tracked_samples(sol, t_end, alpha, n_samples, extra_times=(period,))
    phi = z[4:20].T.reshape(-1, 4, 4)
    det_qp = np.linalg.det(phi[:, :2, 2:])
    t_brake, kinetic_min = _kinetic_minimum(lambda t: sol.sol(t)[:4], period, pes)
    return {
        "monodromy": z_period[4:20].reshape(4, 4),
        "action": float(z_period[20]),
        "closure": scaled_distance(y_period, y0, pes, energy),
        "winding": _half_turns(times, det_qp, period),
        "gouy_total": float(gouy[np.searchsorted(times, period)] / np.pi),
        "rotation": abs(y_period[1] - y0[1]) > np.pi,
        "brake": kinetic_min < 1e-9 * max(abs(energy), from_cm(1.0)),
        "brake_state": sol.sol(t_brake)[:4],
    }


def _stability(transverse, period):
    trace = float(np.trace(transverse))
    if abs(trace) > 2.0:
        eig = np.linalg.eigvals(transverse)
        return False, float(np.log(np.max(np.abs(eig))) / period), None
    return True, None, float(np.arccos(np.clip(0.5 * trace, -1.0, 1.0)))


def _build_orbit(y0, period, energy, pes, strategy, parameter, integ_tol, alpha, line,
                 n_returns=1, direction=1, info=None):
    info = info or _characterise(y0, period, energy, pes, integ_tol, alpha)
    transverse = transverse_block(info["monodromy"], y0, pes)
    stable, exponent, angle = _stability(transverse, period)
    winding = info["winding"]
    transverse_phase = np.pi * info["gouy_total"] - np.pi * winding if stable else 0.0
    orbit = PeriodicOrbit(
        initial=PhasePoint.from_array(y0),
        period=float(period),
        energy=energy * HARTREE_TO_CM,
        action=info["action"],
        monodromy=info["monodromy"],
        transverse=transverse,
        stable=stable,
        winding_number=winding,
        symmetry="rotation" if info["rotation"] else "libration",
        strategy=strategy,
        stability_exponent=exponent,
        stability_angle=angle,
        transverse_phase=float(transverse_phase),
        gouy_total=info["gouy_total"],
        line=line,
        brake=info["brake"],
        crosses_line=strategy == "symmetric" and not info["rotation"],
        closure=info["closure"],
        parameter=parameter,
        n_returns=n_returns,
        direction=direction,
    )
    return orbit, info


@traced_function()
def find_po(seed, energy_cm, pes, mep, tol=1e-9, strategy="auto", n_returns=1, direction=1,
            integ_tol=1e-12, alpha=DEFAULT_ALPHA):
    """
    Converge a periodic orbit at ``energy_cm`` from ``seed``.

    ``strategy="auto"`` picks stretch, symmetric or section shooting from the
    seed's position; brake librations are re-anchored at a turning point.
    """
    energy = from_cm(energy_cm)
    line = _symmetry_line(seed.theta)
    if strategy == "auto":
        if line is not None and seed.p_theta == 0.0:
            strategy = "stretch"
        elif line is not None:
            strategy = "symmetric"
        else:
            strategy = "section"
    if strategy in ("stretch", "symmetric") and line is None:
        raise ConfigError(f"{strategy} shooting needs a seed on theta = 0 or pi")
    if strategy == "stretch":
        y0, period, parameter = _shoot_stretch(seed, energy, pes, tol, integ_tol)
    elif strategy == "symmetric":
        y0, period, parameter = _shoot_symmetric(seed, energy, pes, tol, integ_tol)
    elif strategy == "section":
        y0, period, parameter = _shoot_section(
            seed, energy, pes, mep, tol, integ_tol, n_returns, direction
        )
    else:
        raise ConfigError(f"unknown shooting strategy '{strategy}'")
    home = line if strategy != "section" else None
    po, info = _build_orbit(
        y0, period, energy, pes, strategy, parameter, integ_tol, alpha, home, n_returns, direction
    )
    if po.closure > 10.0 * tol:
        raise ShootingError(f"closure {po.closure:.3e} above tolerance", [po.closure])
    moving = abs(po.initial.p_r) + abs(po.initial.p_theta) > 0.0
    if po.symmetry == "libration" and po.brake and moving:
        # restart librations at a turning point so that det Phi_qp vanishes at T
        state = info["brake_state"]
        anchored = np.array([state[0], state[1], 0.0, 0.0])
        if abs(hamiltonian(anchored, pes) - energy) < 1e-8 * max(abs(energy), from_cm(1.0)):
            po, _ = _build_orbit(
                anchored, period, energy, pes, strategy, parameter, integ_tol, alpha, home,
                n_returns, direction,
            )
    logger.info(
        f"PO ({strategy}) at E={energy_cm:.2f} cm-1: T={po.period:.3f} S={po.action:.5f} "
        f"{'stable' if po.stable else 'unstable'} mu={po.winding_number}"
    )
    return po


def refine_po(po, energy_cm, pes, mep, tol=1e-9, integ_tol=1e-12, alpha=DEFAULT_ALPHA):
    """Reconverge ``po`` at a nearby energy using its own strategy."""
    if po.strategy == "stretch":
        seed = PhasePoint(po.initial.R, po.line)
    elif po.strategy == "symmetric":
        seed = PhasePoint(po.parameter[0], po.line, 0.0, 1.0)
    else:
        psi, p_psi = po.parameter
        seed = launch_from_section(psi, p_psi, from_cm(energy_cm), pes, mep, po.direction)
        if seed is None:
            raise ShootingError(f"previous section point is forbidden at E={energy_cm:.2f}")
    new = find_po(
        seed,
        energy_cm,
        pes,
        mep,
        tol=tol,
        strategy=po.strategy,
        n_returns=po.n_returns,
        direction=po.direction,
        integ_tol=integ_tol,
        alpha=alpha,
    )
    new.label = po.label
    return new


def monodromy(po, pes, integ_tol=1e-12):
    """Full 4x4 monodromy and its transverse 2x2 block, recomputed from the orbit start."""
    y0 = po.initial.as_array()
    sol = _variational_solution(y0, pes, po.period, integ_tol)
    mono = sol.y[4:20, -1].reshape(4, 4)
    return mono, transverse_block(mono, y0, pes)


def stability_exponent(po):
    """ln|largest transverse eigenvalue| / T for unstable orbits."""
    if abs(np.trace(po.transverse)) <= 2.0:
        raise StabilityError(f"orbit '{po.label}' is stable; it carries a stability angle instead")
    eig = np.linalg.eigvals(po.transverse)
    return float(np.log(np.max(np.abs(eig))) / po.period)


def winding_number(po, pes, integ_tol=1e-12, alpha=DEFAULT_ALPHA, n_samples=2048):
    """Half-turns of the transverse Lagrangian plane: zeros of det Phi_qp over one period."""
    t_end = po.period * (1.0 + WINDING_GUARD)
    sol = _variational_solution(po.initial.as_array(), pes, t_end, integ_tol)
    times, z, _ = _tracked_samples(sol, t_end, alpha, n_samples)
    phi = z[4:20].T.reshape(-1, 4, 4)
    return _half_turns(times, np.linalg.det(phi[:, :2, 2:]), po.period)


def turning_point_rule(po, pes, integ_tol=1e-12, n_samples=4096):
    """
    Turning points plus self-conjugate points for a brake libration.

    Starting at a brake point, the Jacobi field launched along the initial
    force is the time shift of the orbit itself, so det Phi_qp factorises
    into the velocity and a transverse field xi = Phi_qp e. Turning points
    are tangent reversals; self-conjugate points are zeros of tau x xi.
    """
    if po.symmetry != "libration" or not po.brake:
        raise WindingNumberError(f"turning-point rule applies to brake librations, not '{po.label}'")
    y0 = po.initial.as_array()
    t_end = po.period * (1.0 + WINDING_GUARD)
    sol = _variational_solution(y0, pes, t_end, integ_tol)
    times = np.linspace(0.0, t_end, n_samples)[1:]
    z = sol.sol(times)
    force = -np.array(pes.potential_gradient(y0[0], y0[1]))
    normal = np.array([-force[1], force[0]])
    velocities = np.array([flow_derivative(s, pes)[:2] for s in z[:4].T])
    phi = z[4:20].T.reshape(-1, 4, 4)
    xi = phi[:, :2, 2:] @ normal
    turning = 0
    orientation = 1.0
    previous = None
    cross = []
    for v, x in zip(velocities, xi):
        speed = np.linalg.norm(v)
        if speed == 0.0:
            continue
        direction = v / speed
        if previous is not None and direction @ previous < 0.0:
            turning += 1
            orientation = -orientation
        previous = direction
        tangent = orientation * direction
        cross.append(tangent[0] * x[1] - tangent[1] * x[0])
    return turning + _count_sign_changes(np.array(cross))


def _markers(orbits):
    markers = []
    for left, right in zip(orbits, orbits[1:]):
        a, b = abs(left.trace) - 2.0, abs(right.trace) - 2.0
        if a * b < 0.0:
            energy = left.energy + (right.energy - left.energy) * a / (a - b)
            crossing_trace = left.trace if abs(left.trace) > 2.0 else right.trace
            kind = "period-doubling" if crossing_trace < 0.0 else "tangent"
            markers.append(BifurcationMarker(float(energy), kind))
    return markers


def _parameter_jump(a, b):
    return float(np.max(np.abs(np.subtract(a.parameter, b.parameter)))) if a.parameter else 0.0


@traced_function()
def continue_family(po, e_range, step, pes, mep, tol=1e-9, min_step=None, max_jump=0.25,
                    integ_tol=1e-12, alpha=DEFAULT_ALPHA, max_orbits=400):
    """
    Natural-parameter continuation in energy with step halving; a failure
    below ``min_step`` ends the branch with a saddle-node marker.
    """
    e_low, e_high = e_range
    if not e_low <= po.energy <= e_high:
        raise ConfigError(f"orbit energy {po.energy:.2f} outside continuation range {e_range}")
    min_step = step / 64.0 if min_step is None else min_step
    orbits = [po]
    folds = []
    for sense in (1.0, -1.0):
        current = po
        delta = step
        limit = e_high if sense > 0 else e_low
        while len(orbits) < max_orbits and sense * (limit - current.energy) > 1e-9:
            target = current.energy + sense * min(delta, abs(limit - current.energy))
            try:
                candidate = refine_po(current, target, pes, mep, tol=tol, integ_tol=integ_tol, alpha=alpha)
                if _parameter_jump(candidate, current) > max_jump:
                    raise ShootingError(f"continuation jumped to another branch at E={target:.2f}")
            except (ShootingError, IntegrationError, PesDomainError, MonodromyError) as exc:
                delta *= 0.5
                logger.debug(f"continuation step failed at E={target:.2f}: {exc}; step -> {delta:.3f}")
                if delta < min_step:
                    folds.append(BifurcationMarker(float(current.energy), "saddle-node"))
                    logger.info(f"family ends at E={current.energy:.2f} cm-1 (fold)")
                    break
                continue
            orbits.append(candidate)
            current = candidate
            delta = min(step, 2.0 * delta)
    orbits.sort(key=lambda o: o.energy)
    family = PoFamily(orbits=orbits, markers=_markers(orbits) + folds, label=po.label,
                      strategy=po.strategy, line=po.line)
    logger.info(f"family '{po.label}': {len(orbits)} orbits, {len(family.markers)} markers")
    return family


def _nearest_line(theta):
    return 0.0 if abs(wrap_angle(theta)) < 0.5 * np.pi else float(np.pi)


def _home(po):
    return po.line if po.line is not None else _nearest_line(po.initial.theta)


def assign_labels(families, mep):
    """
    Deterministic labels from continuation order.

    Stretch families are S_Y, families preset to "TS" or "SN" keep that stem
    (SN gets ^s/^u per orbit), all others become N X_{Y-Z}^W with N counting
    families per well in the order given, X = A/B for librations starting
    above/below the MEP and AB for rotations, Z the number of bifurcations
    passed and W the stability of each orbit.
    """
    counters = {}
    for family in families:
        first = family.orbits[0]
        home = _home(first)
        symbol = _line_symbol(home)
        if first.strategy == "stretch":
            family.label = f"S_{symbol}"
            for po in family.orbits:
                po.label = family.label
            continue
        if family.label == "TS":
            for po in family.orbits:
                po.label = "TS"
            continue
        if family.label.startswith("SN"):
            family.label = "SN"
            for po in family.orbits:
                po.label = f"SN^{'s' if po.stable else 'u'}"
            continue
        index = counters.get(home, 0) + 1
        counters[home] = index
        if first.symmetry == "rotation":
            branch = "AB"
        else:
            branch = "A" if first.initial.R >= mep.re(first.initial.theta) else "B"
        family.label = f"{index}{branch}_{{{symbol}}}"
        for po in family.orbits:
            passed = sum(1 for m in family.markers if m.energy < po.energy and m.kind != "saddle-node")
            po.label = f"{index}{branch}_{{{symbol}-{passed}}}^{'s' if po.stable else 'u'}"
    return families


def _segments(family, zero_point):
    """Runs of consecutive orbits sharing mu (and stability when the zero-point term is on)."""
    runs = []
    for po in family.orbits:
        key = (po.winding_number, po.stable if zero_point else None)
        if runs and runs[-1][0] == key:
            runs[-1][1].append(po)
        else:
            runs.append((key, [po]))
    return runs


@traced_function()
def bs_quantize(family, hbar=HBAR, transverse_zero_point=False, half_excitation=None):
    """
    Bohr-Sommerfeld levels: S(E)/hbar - mu pi/2 [- nu/2] = 2 pi m.

    S(E) is a cubic Hermite interpolant using dS/dE = T. Orbits crossing a
    symmetry line keep only even m and report n = m/2.
    """
    levels = []
    runs = _segments(family, transverse_zero_point)
    if len(runs) > 1:
        logger.info(f"family '{family.label}': quantizing {len(runs)} constant-mu segments")
    for (mu, _), orbits in runs:
        if len(orbits) < 2:
            continue
        energies = np.array([from_cm(po.energy) for po in orbits])
        actions = np.array([po.action for po in orbits])
        periods = np.array([po.period for po in orbits])
        if np.any(np.diff(energies) <= 0.0):
            raise QuantizationError(f"family '{family.label}' energies are not strictly increasing")
        action_of = CubicHermiteSpline(energies, actions, periods)
        use_zero_point = transverse_zero_point and orbits[0].stable
        if use_zero_point:
            phases = np.array([po.transverse_phase for po in orbits])
            nu_of = interp1d(energies, phases, kind="cubic" if len(orbits) > 3 else "linear")
        halve = orbits[0].crosses_line if half_excitation is None else half_excitation

        def gamma(e):
            value = action_of(e) / hbar - mu * np.pi / 2.0
            if use_zero_point:
                value -= 0.5 * float(nu_of(e))
            return float(value)

        gammas = np.array([gamma(e) for e in energies])
        if np.any(np.diff(gammas) <= 0.0):
            raise QuantizationError(f"BS phase not monotone along '{family.label}'")
        m_low = int(np.ceil(gammas[0] / (2.0 * np.pi) - 1e-12))
        m_high = int(np.floor(gammas[-1] / (2.0 * np.pi) + 1e-12))
        for m in range(max(m_low, 0), m_high + 1):
            if halve and m % 2:
                continue
            target = 2.0 * np.pi * m
            idx = int(np.clip(np.searchsorted(gammas, target), 1, len(energies) - 1))
            lo, hi = energies[idx - 1], energies[idx]
            if abs(gamma(lo) - target) < 1e-13:
                root = lo
            elif abs(gamma(hi) - target) < 1e-13:
                root = hi
            else:
                root = optimize.brentq(lambda e: gamma(e) - target, lo, hi, xtol=1e-16, rtol=4e-16)
            # one Newton polish with dS/dE = T
            slope = float(action_of(root, 1)) / hbar
            if slope > 0.0:
                polished = root - (gamma(root) - target) / slope
                if lo <= polished <= hi and abs(gamma(polished) - target) < abs(gamma(root) - target):
                    root = polished
            levels.append(
                BsLevel(
                    family=family.label,
                    n=m // 2 if halve else m,
                    energy=float(root * HARTREE_TO_CM),
                    mu=int(mu),
                    action=float(action_of(root)),
                    excitation=m,
                )
            )
    logger.info(f"family '{family.label}': {len(levels)} BS levels")
    return levels


class OrbitTrack:
    """Dense record of one traversal: states, action S_t and running Gouy index mu_t."""

    def __init__(self, po, pes, integ_tol=1e-12, alpha=DEFAULT_ALPHA, n_reference=4096):
        self.po = po
        self.alpha = alpha
        self._sol = _variational_solution(po.initial.as_array(), pes, po.period, integ_tol)
        self._ref_times, _, gouy = _tracked_samples(self._sol, po.period, alpha, n_reference)
        self._ref_gouy = gouy

    def at(self, times):
        times = np.asarray(times, dtype=float)
        if np.any(times < 0.0) or np.any(times > self.po.period * (1.0 + 1e-12)):
            raise ConfigError("orbit samples must lie within one period")
        z = self._sol.sol(times)
        raw = _gouy_angles(z[4:20].T.reshape(-1, 4, 4), self.alpha)
        reference = np.interp(times, self._ref_times, self._ref_gouy)
        gouy = reference + np.angle(np.exp(1j * (raw - reference)))
        return z[:4].T, z[20], gouy / np.pi


def orbit_samples(po, pes, times, integ_tol=1e-12, alpha=DEFAULT_ALPHA):
    """States, action S_t and running Gouy index mu_t along ``po`` at ``times``."""
    return OrbitTrack(po, pes, integ_tol, alpha).at(times)


def line_action(po, pes, n_points=2001):
    """int P_R dR across the classically allowed segment of the orbit's home line."""
    line = po.line if po.line is not None else _nearest_line(po.initial.theta)
    energy = po.energy_hartree
    r_min, r_max = pes.r_bounds
    grid = np.linspace(r_min, r_max, n_points)
    kinetic = energy - np.asarray(pes.potential(grid, np.full_like(grid, line)))
    momentum = np.sqrt(2.0 * pes.masses.mu1 * np.clip(kinetic, 0.0, None))
    area = float(trapezoid(momentum, grid))
    if area <= 0.0:
        raise QuantizationError(f"home line of '{po.label}' is classically forbidden at E={po.energy:.2f}")
    return area
