"""
End-to-end run: surface -> periodic orbits -> BS levels -> tube/scar states
-> SGSM selection -> diagonalisation -> analysis -> reference comparison.

Every stage result is cached in the artifact store under a hash of its
configuration section and its upstream hashes; the manifest lists stage
timings, hashes and every file written with its sha256.
"""

from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from pathlib import Path
import logging
import re

import numpy as np

from semiclassical import artifacts
from semiclassical.analysis import analyze_states, error_bound_check, mobile_mean, spectrum_of_state
from semiclassical.dynamics import PhasePoint, launch_from_section, poincare_section, sos_launches
from semiclassical.exceptions import ConfigError, ConvergenceError, NumericalError, ShootingError
from semiclassical.otel_cache import RUN_ID
from semiclassical.otel_tracing import tracer
from semiclassical.pes import SurrogatePes, find_stationary_points, load_pes, minimum_energy_path
from semiclassical.porbit import assign_labels, bs_quantize, continue_family, find_po, refine_po
from semiclassical.qgrid import GridSpec, flag_dispersion
from semiclassical.refsolver import comparison_metrics, grid_basis_dispersion, reference_eigensolve
from semiclassical.sgsm import DensityOfStates, SelectionParams, assemble_and_diagonalize, select_basis
from semiclassical.tasks import build_states, state_record
from semiclassical.units import from_cm
from semiclassical.wavefile import write_wavefunction

logger = logging.getLogger(__name__)

LINE_TOLERANCE = 1e-6
DUPLICATE_TOLERANCE = 1e-6


@dataclass
class Surface:
    pes: object
    points: list
    mep: object
    digest: str


@dataclass
class Seed:
    point: PhasePoint
    energy: float
    strategy: str = "auto"
    label: str = ""
    e_low: float = None
    n_returns: int = 1
    direction: int = 1


@dataclass
class StatePool:
    states: list
    skipped: list = field(default_factory=list)


def build_pes(config):
    return load_pes(config.pes_path) if config.pes_path else SurrogatePes()


def grid_for(config, pes):
    g = config.grid
    return GridSpec.for_pes(pes, g.n_r, g.n_theta, g.r_min, g.r_max, parity=config.parity)


def continuation_ceiling(config):
    return config.po.e_max if config.po.e_max is not None else 1.25 * config.selection.e_ref


def _on_line(theta):
    for line in (0.0, float(np.pi)):
        if abs(theta - line) < LINE_TOLERANCE:
            return line
    return None


def default_seeds(surface, config):
    """Stretch and bend seeds at every well on a symmetry line, a TS seed per saddle, an SOS scan."""
    pes, mep = surface.pes, surface.mep
    e_top = continuation_ceiling(config)
    seeds = []
    for point in surface.points:
        e_low = point.energy + config.po.e_min
        start = point.energy + 0.25 * (e_top - point.energy)
        line = _on_line(point.theta)
        if point.classification == "minimum" and line is not None:
            seeds.append(Seed(PhasePoint(point.R, line), start, "stretch", e_low=e_low))
            seeds.append(Seed(PhasePoint(point.R, line, 0.0, 1.0), start, "symmetric", e_low=e_low))
        elif point.classification == "saddle" and point.energy + config.po.e_min < e_top:
            energy = point.energy + max(config.po.e_min, 0.05 * (e_top - point.energy))
            launch = launch_from_section(point.theta, 0.0, from_cm(energy), pes, mep, 1)
            if launch is not None:
                seeds.append(Seed(launch, energy, "section", label="TS", e_low=e_low))
    if config.po.section_scan:
        energy = config.selection.e_ref
        for launch in sos_launches(pes, mep, energy, config.po.section_scan):
            for returns in config.po.section_returns:
                seeds.append(Seed(launch, energy, "section", n_returns=returns))
    return seeds


def configured_seeds(config, pes, mep):
    seeds = []
    for entry in config.po.seeds:
        strategy = entry.get("strategy", "auto")
        energy = float(entry["energy"])
        if "psi" in entry:
            point = launch_from_section(entry["psi"], entry.get("p_psi", 0.0), from_cm(energy), pes, mep,
                                        entry.get("direction", 1))
            if point is None:
                raise ConfigError(f"seed {entry} is energetically forbidden")
        else:
            point = PhasePoint(entry.get("R", mep.re(entry["theta"])), entry["theta"],
                               entry.get("p_r", 0.0), entry.get("p_theta", 0.0))
        seeds.append(Seed(point, energy, strategy, entry.get("label", ""), entry.get("e_low"),
                          entry.get("n_returns", 1), entry.get("direction", 1)))
    return seeds


def _slug(label):
    return re.sub(r"[^\w.-]+", "_", label).strip("_") or "orbit"


def _signature(po):
    return np.array([po.period / po.repetitions, po.action / po.repetitions])


def _duplicate(po, known):
    """Same orbit or a repetition of a known one."""
    for other in known:
        if abs(po.energy - other.energy) > 1e-6:
            continue
        a, b = _signature(po), _signature(other)
        for k in range(1, 4):
            if np.allclose(a, k * b, rtol=DUPLICATE_TOLERANCE) or np.allclose(k * a, b, rtol=DUPLICATE_TOLERANCE):
                return True
    return False


class Pipeline:
    """Stage runner sharing one artifact store and one manifest."""

    def __init__(self, config, output_dir=None):
        self.config = config
        self.output = Path(output_dir or config.output_dir)
        self.run_id = config.section_hash("run")[:12]
        self.manifest = artifacts.Manifest(self.output, self.run_id, config.to_dict())
        self._memo = {}

    # -- plumbing -------------------------------------------------------

    @contextmanager
    def _stage(self, name, digest):
        token = RUN_ID.set(self.run_id)
        try:
            with tracer.start_as_current_span(f"pipeline.{name}") as span:
                span.set_attribute("scarbasis.stage_hash", digest)
                with self.manifest.stage(name, digest) as record:
                    yield record
        finally:
            RUN_ID.reset(token)

    def _cached(self, record, compute):
        value = artifacts.fetch(record.name, record.digest)
        if value is None:
            value = compute()
            artifacts.store(record.name, record.digest, value)
        else:
            record.cached = True
        return value

    def _json(self, record, name, document):
        return self.manifest.add_file(record, artifacts.write_json(self.output / name, document))

    def _csv(self, record, name, rows, columns=None):
        return self.manifest.add_file(record, artifacts.write_csv(self.output / name, rows, columns))

    def _memoised(self, name, build):
        if name not in self._memo:
            self._memo[name] = build()
        return self._memo[name]

    @property
    def grid(self):
        return self._memoised("grid", lambda: grid_for(self.config, self.surface().pes))

    # -- stages ---------------------------------------------------------

    def surface(self):
        return self._memoised("surface", self._surface)

    def _surface(self):
        pes = build_pes(self.config)
        digest = artifacts.digest_of(pes.to_dict())
        with self._stage("surface", digest) as record:
            points, mep = self._cached(record, lambda: (find_stationary_points(pes), minimum_energy_path(pes)))
            self._json(record, "stationary_points.json", [p.to_dict() for p in points])
            self._csv(record, "mep.csv", list(mep.rows()))
        logger.info(f"surface: {len(points)} stationary points")
        return Surface(pes, points, mep, digest)

    def seeds(self):
        surface = self.surface()
        if self.config.po.seeds:
            return configured_seeds(self.config, surface.pes, surface.mep)
        return default_seeds(surface, self.config)

    def section(self, energy_cm, n_launches=12, n_crossings=200, direction=1):
        """Surface of section on the MEP for launches spread over the allowed psi range."""
        surface = self.surface()
        digest = artifacts.digest_of(surface.digest, energy_cm, n_launches, n_crossings, direction)
        with self._stage("sos", digest) as record:
            rows = self._cached(record, lambda: self._section_rows(surface, energy_cm, n_launches, n_crossings,
                                                                   direction))
            self._csv(record, f"sos_{energy_cm:.0f}.csv", rows,
                      ["trajectory", "psi", "P_psi", "time", "direction", "complete"])
        return rows

    @staticmethod
    def _section_rows(surface, energy_cm, n_launches, n_crossings, direction):
        rows = []
        for i, launch in enumerate(sos_launches(surface.pes, surface.mep, energy_cm, n_launches, direction)):
            section = poincare_section(launch, surface.pes, surface.mep, n_crossings, direction)
            rows.extend(dict(p.to_dict(), trajectory=i, complete=section.complete) for p in section.points)
        return rows

    def orbit(self, seed):
        """Converge a single periodic orbit from ``seed``."""
        surface = self.surface()
        po_cfg = self.config.po
        digest = artifacts.digest_of(surface.digest, seed.point.to_dict(), seed.energy, seed.strategy,
                                     seed.n_returns, seed.direction, po_cfg.tol, po_cfg.integ_tol, po_cfg.alpha)
        with self._stage("po-find", digest) as record:
            po = self._cached(record, lambda: find_po(
                seed.point, seed.energy, surface.pes, surface.mep, tol=po_cfg.tol, strategy=seed.strategy,
                n_returns=seed.n_returns, direction=seed.direction, integ_tol=po_cfg.integ_tol,
                alpha=po_cfg.alpha))
            po.label = seed.label or po.label
            self._json(record, "po.json", po.to_dict())
        return po

    def families(self):
        return self._memoised("families", self._families)

    def _families(self):
        surface = self.surface()
        digest = self.config.section_hash("po", surface.digest, self.config.selection.e_ref)
        with self._stage("orbits", digest) as record:
            families = self._cached(record, lambda: self._continue_all(surface))
            self._json(record, "families.json", [f.to_dict() for f in families])
            self._csv(record, "continuation.csv", self._continuation_rows(families))
        self._memo["families_digest"] = digest
        return families

    def _continue_all(self, surface):
        po_cfg = self.config.po
        pes, mep = surface.pes, surface.mep
        e_top = continuation_ceiling(self.config)
        known, families = [], []
        for seed in self.seeds():
            try:
                po = find_po(seed.point, seed.energy, pes, mep, tol=po_cfg.tol, strategy=seed.strategy,
                             n_returns=seed.n_returns, direction=seed.direction,
                             integ_tol=po_cfg.integ_tol, alpha=po_cfg.alpha)
            except NumericalError as exc:
                logger.warning(f"seed {seed.strategy} at E={seed.energy:.1f} did not converge: {exc}")
                continue
            if _duplicate(po, known + self._at_energy(families, seed.energy, surface)):
                logger.debug(f"seed {seed.strategy} at E={seed.energy:.1f} repeats a known orbit")
                continue
            known.append(po)
            po.label = seed.label
            e_low = seed.e_low if seed.e_low is not None else po_cfg.e_min
            family = continue_family(po, (min(e_low, po.energy), max(e_top, po.energy)), po_cfg.step, pes, mep,
                                     tol=po_cfg.tol, max_jump=po_cfg.max_jump, integ_tol=po_cfg.integ_tol,
                                     alpha=po_cfg.alpha)
            families.append(family)
        if not families:
            raise ShootingError("no periodic orbit family converged; check the seeds")
        assign_labels(families, mep)
        logger.info(f"orbits: {len(families)} families, {sum(len(f) for f in families)} orbits")
        return families

    def _at_energy(self, families, energy, surface):
        orbits = []
        for family in families:
            if family.energies.min() <= energy <= family.energies.max():
                try:
                    orbits.append(refine_po(family.nearest(energy), energy, surface.pes, surface.mep,
                                            tol=self.config.po.tol, integ_tol=self.config.po.integ_tol,
                                            alpha=self.config.po.alpha))
                except NumericalError:
                    continue
        return orbits

    @staticmethod
    def _continuation_rows(families):
        rows = []
        for family in families:
            for po in family.orbits:
                rows.append({"family": family.label, "label": po.label, "energy_cm": po.energy,
                             "action": po.action, "period": po.period, "trace": po.trace,
                             "stable": po.stable, "mu": po.winding_number, "marker": ""})
            for marker in family.markers:
                rows.append({"family": family.label, "label": family.label, "energy_cm": marker.energy,
                             "marker": marker.kind})
        return rows

    def levels(self):
        return self._memoised("levels", self._levels)

    def _levels(self):
        families = self.families()
        e_top = continuation_ceiling(self.config)
        digest = artifacts.digest_of(self._memo["families_digest"], self.config.po.transverse_zero_point, e_top)
        with self._stage("quantize", digest) as record:
            levels = self._cached(record, lambda: self._quantize(families, e_top))
            self._csv(record, "levels.csv", [dict(lv.to_dict(), orbit=lv.orbit.label) for _, lv in levels])
        self._memo["levels_digest"] = digest
        return levels

    def _quantize(self, families, e_top):
        levels = []
        for family in families:
            try:
                found = bs_quantize(family, transverse_zero_point=self.config.po.transverse_zero_point)
            except NumericalError as exc:
                logger.warning(f"family '{family.label}' not quantized: {exc}")
                continue
            for level in found:
                if level.energy <= e_top:
                    level.orbit = family.nearest(level.energy)
                    levels.append((family.label, level))
        logger.info(f"quantize: {len(levels)} BS levels below {e_top:.1f} cm-1")
        return levels

    def states(self):
        return self._memoised("states", self._states)

    def _states(self):
        surface = self.surface()
        levels = self.levels()
        prop = self.config.propagation
        digest = self.config.section_hash("propagation", self._memo["levels_digest"],
                                          self.config.to_dict()["grid"], self.config.po.alpha)
        with self._stage("states", digest) as record:
            pool = self._cached(record, lambda: self._construct(surface, levels))
            density = self.density()
            for state in pool.states:
                if "high-dispersion" not in state.flags:
                    flag_dispersion(state, density(state.bs_energy), prop.sigma_cap)
            rows = [s.metadata() for s in pool.states] + pool.skipped
            self._csv(record, "states.csv", rows, ["kind", "label", "n", "bs_energy_cm", "mean_energy_cm",
                                                   "dispersion_cm", "raw_norm", "stable", "flags", "error"])
            for i, state in enumerate(pool.states):
                path = write_wavefunction(self.output / "states" / f"{i:04d}_{state.kind}.scwf",
                                          state.wavefunction, state.metadata())
                self.manifest.add_file(record, path)
                self.manifest.add_file(record, path.with_suffix(".json"))
        self._memo["states_digest"] = digest
        return pool.states

    def _construct(self, surface, levels):
        grid = self.grid
        grid.check_resolution(surface.pes, continuation_ceiling(self.config))
        po_settings = {"tol": self.config.po.tol, "integ_tol": self.config.po.integ_tol,
                       "alpha": self.config.po.alpha}
        propagation = self.config.to_dict()["propagation"]
        records = [state_record(level.orbit, level, surface.pes, grid, propagation, po_settings)
                   for _, level in levels]
        results = build_states(records)
        states, skipped = [], []
        for entry in results:
            if entry.get("key") is None:
                skipped.append(entry)
                continue
            states.append(artifacts.fetch_key(entry["key"]))
        logger.info(f"states: {len(states)} built, {len(skipped)} skipped")
        return StatePool(states, skipped)

    def localized(self, label, n=None):
        """Localized states (tubes on stable orbits, scars on unstable ones) of one family or orbit label."""
        surface = self.surface()
        chosen = [(family, level) for family, level in self.levels()
                  if label in (family, level.orbit.label) and (n is None or level.n == n)]
        if not chosen:
            raise ConfigError(f"no BS level for '{label}'" + (f" with n={n}" if n is not None else ""))
        digest = self.config.section_hash("propagation", self._memo["levels_digest"],
                                          self.config.to_dict()["grid"], self.config.po.alpha, label, n)
        with self._stage("states", digest) as record:
            pool = self._cached(record, lambda: self._construct(surface, chosen))
            for state in pool.states:
                name = f"{_slug(state.label)}_{state.n}_{state.kind}.scwf"
                path = write_wavefunction(self.output / "states" / name, state.wavefunction, state.metadata())
                self.manifest.add_file(record, path)
                self.manifest.add_file(record, path.with_suffix(".json"))
        return pool

    def density(self):
        def build():
            e_top = max(continuation_ceiling(self.config), self.config.selection.e_ref) * 1.5
            return DensityOfStates.fit(self.surface().pes, e_top, sector=self.config.parity,
                                       n_nodes=self.config.selection.density_nodes)

        return self._memoised("density", build)

    def selection(self):
        return self._memoised("selection", self._selection)

    def _selection(self):
        pool = self.states()
        cfg = self.config.selection
        params = SelectionParams(cfg.e_ref, cfg.c_b, self.density(), cfg.sigma_sc)
        digest = self.config.section_hash("selection", self._memo["states_digest"])
        with self._stage("select", digest) as record:
            selection = self._cached(record, lambda: select_basis(pool, params, n_basis=cfg.n_basis))
            self._json(record, "selection.json", {"early_stop": selection.early_stop,
                                                  "ledger": selection.ledger()})
            self._csv(record, "density.csv", self.density().to_rows())
            self._csv(record, "bs_orbits.csv", self._bs_rows(selection))
        self._memo["selection_digest"] = digest
        return selection

    def _bs_rows(self, selection):
        chosen = {(selection.pool[j].label, selection.pool[j].n, selection.pool[j].kind) for j in selection.selected}
        rows = []
        for family, level in self.levels():
            rows.append({"family": family, "label": level.orbit.label, "n": level.n, "energy_cm": level.energy,
                         "action": level.action, "mu": level.mu,
                         "selected_tube": (level.orbit.label, level.n, "tube") in chosen,
                         "selected_scar": (level.orbit.label, level.n, "scar") in chosen})
        return rows

    def eigen(self):
        return self._memoised("eigen", self._eigen)

    def _eigen(self):
        selection = self.selection()
        pes = self.surface().pes
        digest = artifacts.digest_of(self._memo["selection_digest"], "solve")
        with self._stage("solve", digest) as record:
            eigen = self._cached(record, lambda: assemble_and_diagonalize(selection, pes, self.density()))
            self._csv(record, "spectrum.csv", eigen.to_rows())
        return eigen

    def analysis(self):
        return self._memoised("analysis", self._analysis)

    def _analysis(self):
        eigen = self.eigen()
        pool = self.states()
        cfg = self.config.analysis
        digest = self.config.section_hash("analysis", self._memo["selection_digest"])
        with self._stage("analyze", digest) as record:
            metrics, rows = analyze_states(eigen, pool, cfg.k_max, cfg.window)
            self._csv(record, "analysis.csv", rows)
            self._json(record, "reconstructions.json", [m.representation.to_dict() for m in metrics])
            sticks = []
            density = self.density()
            for index in range(len(eigen)):
                for offset, weight in spectrum_of_state(index, eigen, pool, density):
                    if weight > 1e-4:
                        sticks.append({"N": index, "offset_spacings": offset, "weight": weight})
            self._csv(record, "sticks.csv", sticks, ["N", "offset_spacings", "weight"])
        return metrics, rows

    def reference(self):
        return self._memoised("reference", self._reference)

    def _reference(self):
        surface = self.surface()
        cfg = self.config.analysis
        digest = self.config.section_hash("analysis", surface.digest, self.config.to_dict()["grid"], "reference")
        with self._stage("reference", digest) as record:
            spectrum = self._cached(record, lambda: reference_eigensolve(
                surface.pes, self.grid, cfg.reference_states, certify=cfg.certify,
                shift_tol=cfg.shift_tol, max_doublings=cfg.max_doublings))
            self._csv(record, "reference.csv", spectrum.to_rows())
            self._json(record, "reference.json", spectrum.metadata())
            for i in range(len(spectrum)):
                path = write_wavefunction(self.output / "reference" / f"{i:04d}.scwf", spectrum.wavefunction(i))
                self.manifest.add_file(record, path)
        return spectrum

    def compare(self):
        return self._memoised("compare", self._compare)

    def _compare(self):
        eigen = self.eigen()
        metrics, _ = self.analysis()
        reference = self.reference()
        density = self.density()
        digest = artifacts.digest_of(self._memo["selection_digest"], reference.metadata())
        with self._stage("compare", digest) as record:
            if reference.grid.shape != self.grid.shape:
                raise ConvergenceError(f"reference converges only on grid {reference.grid.shape}; "
                                       f"raise grid.n_r and grid.n_theta to compare on {self.grid.shape}")
            report = error_bound_check(eigen, reference, density, self.config.analysis.match_threshold)
            grid_rows = comparison_metrics(reference, None, grid_basis_dispersion(self.surface().pes, reference.grid),
                                           density)
            basis_rows = comparison_metrics(reference, eigen.selection.auxiliary, eigen.basis_dispersion, density)
            self._csv(record, "error_envelope.csv", report["states"])
            self._csv(record, "basis_comparison.csv", [
                {"N": g["N"], "energy_cm": g["energy_cm"], "sigma_r_sgsm": b["sigma_r"], "sigma_r_grid": g["sigma_r"],
                 "R_N_sgsm": b["R_N"], "R_N_grid": g["R_N"]}
                for g, b in zip(grid_rows, basis_rows)
            ])
            self._json(record, "error_report.json", {k: v for k, v in report.items() if k != "states"})
            self.manifest.checks.update(self._checks(metrics, report, grid_rows, basis_rows))
        return report

    @staticmethod
    def _checks(metrics, report, grid_rows, basis_rows):
        lowest = metrics[:5]
        trend = mobile_mean([m.participation for m in metrics])
        sigma_sgsm = np.mean([b["sigma_r"] for b in basis_rows])
        sigma_grid = np.mean([g["sigma_r"] for g in grid_rows])
        r_sgsm = np.mean([b["R_N"] for b in basis_rows])
        r_grid = np.mean([g["R_N"] for g in grid_rows])
        deltas = [s["delta_e_r"] for s in report["states"]]
        return {
            "matched_states": report["matched"],
            "envelope_pass_fraction": report["pass_fraction"],
            "energy_within_0.3_spacings": float(np.mean(np.array(deltas) < 0.3)) if deltas else 0.0,
            "min_overlap": report["min_overlap"],
            "lowest_five_localized": all(m.participation < 1.5 and m.x1 > 0.9 for m in lowest),
            "participation_trend_nondecreasing": bool(np.all(np.diff(trend) >= -1e-9)),
            "sigma_r_ratio_grid_over_sgsm": float(sigma_grid / sigma_sgsm) if sigma_sgsm > 0 else float("inf"),
            "participation_ratio_grid_over_sgsm": float(r_grid / r_sgsm),
        }

    def run(self):
        """Execute every stage; returns the manifest."""
        if self.config.analysis.compare:
            self.compare()
        else:
            self.analysis()
        self.manifest.write()
        logger.info(f"run {self.run_id} complete: {len(self.manifest.files())} files in {self.output}")
        return self.manifest


def with_output(config, output_dir):
    return replace(config, output_dir=str(output_dir)) if output_dir else config


def run_pipeline(config, output_dir=None):
    """Every stage for ``config``; returns the written manifest."""
    return Pipeline(with_output(config, output_dir)).run()
