import json
import logging
from functools import lru_cache

from celery import group, shared_task

from semiclassical.artifacts import digest_of, fetch_key, store_key
from semiclassical.exceptions import ConfigError, NumericalError
from semiclassical.otel_tracing import traced_function
from semiclassical.pes import minimum_energy_path, pes_from_dict
from semiclassical.porbit import PeriodicOrbit, refine_po
from semiclassical.qgrid import GridSpec, ScarParams, scar_function, tube_function

logger = logging.getLogger(__name__)


@lru_cache(maxsize=4)
def _surface(pes_text):
    pes = pes_from_dict(json.loads(pes_text))
    return pes, minimum_energy_path(pes)


def state_record(po, level, pes, grid, propagation, po_settings):
    """JSON-serialisable description of one (orbit, BS level) construction job."""
    return {
        "pes": pes.to_dict(),
        "grid": grid.to_dict(),
        "orbit": po.to_dict(),
        "n": level.n,
        "bs_energy": level.energy,
        "propagation": dict(propagation),
        "po": {
            "tol": po_settings["tol"],
            "integ_tol": po_settings["integ_tol"],
            "alpha": list(po_settings["alpha"]),
        },
    }


def record_key(record, kind):
    return f"scarbasis:state:{kind}:{digest_of(record)}"


def _grid(record, pes):
    g = record["grid"]
    return GridSpec(g["n_r"], g["n_theta"], g["r_min"], g["r_max"], pes.masses, g["hbar"], g["parity"])


def _build_tube(record, pes, mep, grid):
    prop = record["propagation"]
    settings = record["po"]
    alpha = tuple(settings["alpha"])
    po = PeriodicOrbit.from_dict(record["orbit"])
    po = refine_po(po, record["bs_energy"], pes, mep, tol=settings["tol"],
                   integ_tol=settings["integ_tol"], alpha=alpha)
    return tube_function(
        po,
        record["n"],
        record["bs_energy"],
        pes,
        grid,
        alpha=alpha,
        min_samples=prop["tube_min_samples"],
        max_samples=prop["tube_max_samples"],
        tol=prop["tube_tol"],
        periods=prop["coherence_periods"],
        integ_tol=settings["integ_tol"],
    )


def _skipped(record, kind, exc):
    label = record["orbit"]["label"]
    logger.warning(f"{kind} '{label}' n={record['n']} skipped: {exc}")
    return {"key": None, "kind": kind, "label": label, "n": record["n"], "error": str(exc)}


@shared_task
@traced_function()
def build_localized_state(record):
    """
    Build the localized state of one BS level: the tube for a stable orbit,
    the scar for an unstable one. The tube of an unstable orbit is cached as
    the scar's starting point and only enters the pool when the scar cannot
    be built (or scars are switched off). States go to the artifact store;
    the task returns their keys and metadata. Numerical failures are
    reported per state.
    """
    pes, mep = _surface(json.dumps(record["pes"], sort_keys=True))
    grid = _grid(record, pes)
    prop = record["propagation"]

    tube_key = record_key(record, "tube")
    tube = fetch_key(tube_key)
    if tube is None:
        try:
            tube = _build_tube(record, pes, mep, grid)
        except NumericalError as exc:
            return [_skipped(record, "tube", exc)]
        store_key(tube_key, tube)
    else:
        logger.debug(f"tube {tube.key()} from cache")
    tube_entry = {"key": tube_key, **tube.metadata()}
    if tube.stable or not prop.get("scars", True):
        return [tube_entry]

    scar_key = record_key(record, "scar")
    scar = fetch_key(scar_key)
    if scar is None:
        try:
            scarp = ScarParams.for_orbit(tube.orbit, pes, grid.hbar)
            scar = scar_function(tube, scarp, pes, dt=prop.get("dt"))
        except (NumericalError, ConfigError) as exc:
            logger.warning(f"falling back to the tube of unstable '{tube.label}' n={tube.n}")
            return [_skipped(record, "scar", exc), tube_entry]
        store_key(scar_key, scar)
    return [{"key": scar_key, **scar.metadata()}]


def build_states(records):
    """Run build_localized_state over ``records`` as a Celery group; flattened results."""
    if not records:
        return []
    job = group(build_localized_state.s(record) for record in records)
    batches = job.apply_async().get(disable_sync_subtasks=False)
    logger.info(f"built states for {len(records)} BS levels")
    return [entry for batch in batches for entry in batch]
