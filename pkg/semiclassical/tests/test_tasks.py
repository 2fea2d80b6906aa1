from dataclasses import asdict, replace
import logging

import pytest

from semiclassical import tasks
from semiclassical.artifacts import fetch_key
from semiclassical.config import PropagationSettings
from semiclassical.exceptions import ConstructionError
from semiclassical.porbit import bs_quantize
from semiclassical.qgrid import LocalizedState, ScarParams
from semiclassical.tasks import build_states, record_key, state_record


@pytest.fixture
def ground_record(harmonic_suite):
    level = bs_quantize(harmonic_suite.stretch, transverse_zero_point=True)[0]
    po = harmonic_suite.stretch.nearest(level.energy)
    settings = {"tol": harmonic_suite.tol, "integ_tol": harmonic_suite.integ_tol, "alpha": harmonic_suite.alpha}
    propagation = asdict(PropagationSettings())
    return state_record(po, level, harmonic_suite.pes, harmonic_suite.grid, propagation, settings)


class TestBuildStates:
    def test_tube_built_and_stored(self, ground_record):
        [entry] = build_states([ground_record])
        assert entry["kind"] == "tube"
        assert entry["key"] == record_key(ground_record, "tube")
        assert entry["n"] == 0
        state = fetch_key(entry["key"])
        assert isinstance(state, LocalizedState)
        assert state.wavefunction.norm() == pytest.approx(1.0)

    def test_stable_orbit_has_no_scar(self, ground_record):
        assert [e["kind"] for e in build_states([ground_record])] == ["tube"]

    def test_second_run_reads_the_store(self, ground_record, monkeypatch):
        build_states([ground_record])

        def rebuild(*args):
            raise AssertionError("tube rebuilt despite a cached copy")

        monkeypatch.setattr("semiclassical.tasks._build_tube", rebuild)
        [entry] = build_states([ground_record])
        assert entry["key"] is not None

    def test_numerical_failure_is_reported_per_state(self, ground_record):
        broken = dict(ground_record, bs_energy=-100.0)
        [entry] = build_states([broken])
        assert entry["key"] is None
        assert entry["kind"] == "tube"
        assert entry["error"]

    def test_no_records(self):
        assert build_states([]) == []


class TestUnstableOrbitPool:
    @pytest.fixture
    def unstable(self, ground_record, harmonic_suite, monkeypatch):
        """The ground tube relabelled as an unstable orbit; scars are built by a stub."""
        tube = tasks._build_tube(ground_record, harmonic_suite.pes, harmonic_suite.mep, harmonic_suite.grid)
        tube = replace(tube, stable=False)
        monkeypatch.setattr(tasks, "_build_tube", lambda *args: tube)
        params = ScarParams(1e-3, 10.0, 50.0)
        monkeypatch.setattr(ScarParams, "for_orbit", classmethod(lambda cls, po, pes, hbar: params))
        return tube

    def test_only_the_scar_enters_the_pool(self, ground_record, unstable, monkeypatch):
        scar = replace(unstable, kind="scar", dispersion=0.5)
        monkeypatch.setattr(tasks, "scar_function", lambda *args, **kw: scar)
        entries = build_states([ground_record])
        assert [e["kind"] for e in entries] == ["scar"]
        assert entries[0]["key"] == record_key(ground_record, "scar")
        assert fetch_key(record_key(ground_record, "tube")).kind == "tube"

    def test_failed_scar_falls_back_to_the_tube(self, ground_record, unstable, monkeypatch, caplog):
        def fail(*args, **kw):
            raise ConstructionError("scar vanished")

        monkeypatch.setattr(tasks, "scar_function", fail)
        monkeypatch.setattr(logging.getLogger("semiclassical"), "propagate", True)
        skipped, kept = build_states([ground_record])
        assert (skipped["kind"], skipped["key"]) == ("scar", None)
        assert (kept["kind"], kept["key"]) == ("tube", record_key(ground_record, "tube"))
        assert "falling back to the tube" in caplog.text

    def test_scars_switched_off(self, ground_record, unstable):
        record = dict(ground_record, propagation=dict(ground_record["propagation"], scars=False))
        assert [e["kind"] for e in build_states([record])] == ["tube"]
