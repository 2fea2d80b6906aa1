"""
Harmonic acceptance suite.

A separable oscillator (stiff stretch, soft bend, no centrifugal coupling)
has analytic levels and eigenfunctions, and every tube function built on its
two periodic orbit families is an exact eigenstate. The suite checks Bohr-
Sommerfeld levels, tube overlaps, the SGSM spectrum and the structural
invariants against those closed forms.
"""

from dataclasses import dataclass
from functools import cached_property
import logging
import operator
import time

import numpy as np
from scipy.special import eval_hermite

from semiclassical.dynamics import PhasePoint
from semiclassical.exceptions import AcceptanceError
from semiclassical.otel_tracing import traced_class
from semiclassical.pes import HarmonicPes, Masses, minimum_energy_path
from semiclassical.porbit import bs_quantize, continue_family, find_po, refine_po
from semiclassical.qgrid import (
    GridSpec,
    Wavefunction,
    frozen_gaussian,
    grid_hamiltonian,
    overlap,
    propagate,
    tube_function,
)
from semiclassical.sgsm import DensityOfStates, SelectionParams, assemble_and_diagonalize, select_basis
from semiclassical.units import LICN_RE, licn_reduced_masses

logger = logging.getLogger(__name__)

R0 = 4.35
OMEGA_R = 2500.0
OMEGA_THETA = 100.0
R_BOUNDS = (3.15, 5.55)


def harmonic_fixture():
    mu1, mu2 = licn_reduced_masses()
    return HarmonicPes(Masses(mu1, mu2, LICN_RE, centrifugal=False), R0, OMEGA_R, OMEGA_THETA, r_bounds=R_BOUNDS)


def exact_state(pes, grid, n_r, n_theta):
    """Product Hermite function (n_r stretch quanta, n_theta bend quanta) on ``grid``."""
    alpha_r, alpha_theta = pes.packet_widths()
    rr, tt = grid.mesh()
    x = rr - pes.r0
    y = tt - np.pi
    values = (
        eval_hermite(n_r, np.sqrt(2.0 * alpha_r) * x)
        * eval_hermite(n_theta, np.sqrt(2.0 * alpha_theta) * y)
        * np.exp(-alpha_r * x**2 - alpha_theta * y**2)
    )
    return Wavefunction(values.astype(complex), grid).normalized()


def exact_energy(n_r, n_theta):
    return OMEGA_R * (n_r + 0.5) + OMEGA_THETA * (n_theta + 0.5)


@dataclass
class Check:
    name: str
    value: float
    threshold: float
    passed: bool
    elapsed: float = 0.0

    def to_dict(self):
        return {
            "name": self.name,
            "value": float(self.value),
            "threshold": self.threshold,
            "passed": bool(self.passed),
            "elapsed_s": round(self.elapsed, 3),
        }


@traced_class
class HarmonicSuite:
    def __init__(self, n_r=64, n_theta=128, e_top=9000.0, step=250.0, tol=1e-9, integ_tol=1e-12,
                 e_ref=3200.0, c_b=6.0):
        self.pes = harmonic_fixture()
        self.alpha = self.pes.packet_widths()
        self.grid = GridSpec.for_pes(self.pes, n_r, n_theta)
        self.e_top = e_top
        self.step = step
        self.tol = tol
        self.integ_tol = integ_tol
        self.e_ref = e_ref
        self.c_b = c_b

    @cached_property
    def mep(self):
        return minimum_energy_path(self.pes)

    def _family(self, seed, strategy, label, e_top):
        po = find_po(seed, 1000.0, self.pes, self.mep, tol=self.tol, strategy=strategy,
                     integ_tol=self.integ_tol, alpha=self.alpha)
        po.label = label
        family = continue_family(po, (10.0, e_top), self.step, self.pes, self.mep, tol=self.tol,
                                 integ_tol=self.integ_tol, alpha=self.alpha)
        family.label = label
        return family

    @cached_property
    def stretch(self):
        return self._family(PhasePoint(self.pes.r0, np.pi), "stretch", "S_pi", self.e_top)

    @cached_property
    def bend(self):
        return self._family(PhasePoint(self.pes.r0, np.pi, 0.0, 1.0), "symmetric", "B_pi", 1.5 * self.e_ref)

    def _tube(self, family, level):
        po = refine_po(family.nearest(level.energy), level.energy, self.pes, self.mep, tol=self.tol,
                       integ_tol=self.integ_tol, alpha=self.alpha)
        return tube_function(po, level.n, level.energy, self.pes, self.grid, alpha=self.alpha,
                             integ_tol=self.integ_tol)

    # -- checks ---------------------------------------------------------

    def bs_levels(self):
        """
        Stretch n = 0..3 by the plain rule against hbar w_R (n + 1/2); the 10
        lowest bend levels with the transverse zero point against the product
        levels (0, m).
        """
        errors = []
        stretch = [lv for lv in bs_quantize(self.stretch) if lv.n <= 3]
        bend = sorted(bs_quantize(self.bend, transverse_zero_point=True), key=lambda lv: lv.energy)[:10]
        if len(stretch) < 4 or len(bend) < 10:
            return float("inf")
        for level in stretch:
            exact = OMEGA_R * (level.n + 0.5)
            errors.append(abs(level.energy - exact) / exact)
        for level in bend:
            exact = exact_energy(0, level.excitation)
            errors.append(abs(level.energy - exact) / exact)
        return max(errors)

    def tube_overlaps(self):
        """Stretch tubes n = 0..3 (transverse zero point on) against the exact (n, 0) eigenstates."""
        levels = [lv for lv in bs_quantize(self.stretch, transverse_zero_point=True) if lv.n <= 3]
        if len(levels) < 4:
            return 0.0
        overlaps = []
        for level in levels:
            tube = self._tube(self.stretch, level)
            exact = exact_state(self.pes, self.grid, level.n, 0)
            overlaps.append(abs(overlap(tube.wavefunction, exact)) ** 2)
            logger.info(f"stretch tube n={level.n}: |<tube|exact>|^2 = {overlaps[-1]:.6f}")
        return min(overlaps)

    def sgsm_spectrum(self):
        """Max |E - E_exact| (cm-1) over the 10 lowest SGSM eigenvalues; returns (error, gram deviation)."""
        e_pool = 1.25 * self.e_ref
        pool = []
        for family in (self.bend, self.stretch):
            for level in bs_quantize(family, transverse_zero_point=True):
                if level.energy <= e_pool:
                    pool.append(self._tube(family, level))
        density = DensityOfStates.fit(self.pes, 1.5 * e_pool, sector=self.grid.parity)
        params = SelectionParams(self.e_ref, self.c_b, density)
        selection = select_basis(pool, params, n_basis=10)
        eigen = assemble_and_diagonalize(selection, self.pes, density)
        exact = np.sort([exact_energy(0, 2 * k) for k in range(10)])
        if len(eigen) < 10:
            return float("inf"), float("inf")
        gram = np.abs(selection.gram() - np.eye(len(selection))).max()
        return float(np.abs(eigen.energies[:10] - exact).max()), float(gram)

    def symplecticity(self):
        po = self.stretch.nearest(2000.0)
        j = np.block([[np.zeros((2, 2)), np.eye(2)], [-np.eye(2), np.zeros((2, 2))]])
        m = po.monodromy
        return float(np.abs(m.T @ j @ m - j).max())

    def unitarity(self, n_steps=10000):
        grid = GridSpec.for_pes(self.pes, 32, 64)
        psi = frozen_gaussian(grid, PhasePoint(self.pes.r0 + 0.1, np.pi - 0.3, 2.0, 0.0), *self.alpha).normalized()
        dt = grid_hamiltonian(self.pes, grid).max_time_step()
        result = propagate(psi, self.pes, dt, n_steps)
        return abs(result.norm() - 1.0)

    def hermiticity(self):
        grid = GridSpec.for_pes(self.pes, 32, 32)
        ham = grid_hamiltonian(self.pes, grid)
        n = grid.n_r * grid.n_theta
        eye = np.eye(n).reshape(n, *grid.shape)
        columns = np.array([ham.apply(e).ravel() for e in eye])
        return float(np.abs(columns - columns.conj().T).max() / np.abs(columns).max())

    def run(self):
        checks = []

        def record(name, compute, threshold, passed):
            start = time.perf_counter()
            value = compute()
            check = Check(name, value, threshold, passed(value, threshold), time.perf_counter() - start)
            logger.info(f"selftest {name}: {value:.3e} ({'ok' if check.passed else 'FAILED'})")
            checks.append(check)
            return check

        record("bs_relative_error", self.bs_levels, 1e-8, operator.lt)
        record("tube_min_overlap", self.tube_overlaps, 0.999, operator.gt)
        sgsm = {}

        def spectrum():
            sgsm["error"], sgsm["gram"] = self.sgsm_spectrum()
            return sgsm["error"]

        record("sgsm_max_error_cm", spectrum, 0.01, operator.lt)
        record("gram_orthonormality", lambda: sgsm["gram"], 1e-10, operator.lt)
        record("monodromy_symplecticity", self.symplecticity, 1e-8, operator.lt)
        record("propagator_unitarity", self.unitarity, 1e-9, operator.lt)
        record("hamiltonian_hermiticity", self.hermiticity, 1e-10, operator.lt)
        return checks


def run_selftest(**kwargs):
    """Run the suite; raises AcceptanceError naming every failed check."""
    checks = HarmonicSuite(**kwargs).run()
    failed = [c.name for c in checks if not c.passed]
    if failed:
        raise AcceptanceError(f"harmonic acceptance failed: {', '.join(failed)}", failed)
    return checks


__all__ = ["Check", "HarmonicSuite", "exact_energy", "exact_state", "harmonic_fixture", "run_selftest"]
