import numpy as np
import pytest
from opentelemetry.sdk.trace import TracerProvider
from opentelemetry.sdk.trace.export import SimpleSpanProcessor
from opentelemetry.sdk.trace.export.in_memory_span_exporter import InMemorySpanExporter
from opentelemetry.trace import StatusCode

from semiclassical import otel_cache, otel_tracing
from semiclassical.artifacts import digest_of, store
from semiclassical.exceptions import ShootingError
from semiclassical.otel_cache import RUN_ID, patch_artifact_cache, setup_pipeline_otel
from semiclassical.otel_tracing import traced_class, traced_function


@pytest.fixture
def spans(monkeypatch):
    """Spans recorded by a private SDK provider with the pipeline processor attached."""
    exporter = InMemorySpanExporter()
    provider = TracerProvider()
    setup_pipeline_otel(provider)
    provider.add_span_processor(SimpleSpanProcessor(exporter))
    monkeypatch.setattr(otel_tracing, "tracer", provider.get_tracer("test"))
    yield exporter
    provider.shutdown()


@traced_function()
def _quantize(values, energy_cm=0.0):
    return float(np.sum(values)) + energy_cm


@traced_function("orbit.shoot")
def _shoot():
    raise ShootingError("no return to the section")


@traced_class
class _Continuation:
    def step(self, energy_cm):
        return energy_cm + 50.0

    def _private(self):
        return None


class TestTracedFunction:
    def test_attributes_and_status(self, spans):
        assert _quantize(np.ones((4, 8)), energy_cm=1300.0) == 1332.0
        [span] = spans.get_finished_spans()
        assert span.name == "_quantize"
        assert span.attributes["code.namespace"] == __name__
        assert span.attributes["scarbasis.args"] == "ndarray(shape=(4, 8), dtype=float64)"
        assert span.attributes["scarbasis.energy_cm"] == 1300.0
        assert span.attributes["scarbasis.return_type"] == "float"
        assert span.status.status_code == StatusCode.OK

    def test_error_recorded_and_reraised(self, spans):
        with pytest.raises(ShootingError):
            _shoot()
        [span] = spans.get_finished_spans()
        assert span.name == "orbit.shoot"
        assert span.status.status_code == StatusCode.ERROR
        assert [e.name for e in span.events] == ["exception"]

    def test_class_methods(self, spans):
        assert _Continuation().step(1000.0) == 1050.0
        _Continuation()._private()
        assert [s.name for s in spans.get_finished_spans()] == ["_Continuation.step"]


class TestPipelineSpans:
    def test_run_id_and_stage_event(self, spans):
        token = RUN_ID.set("abc123")
        try:
            with otel_tracing.tracer.start_as_current_span("pipeline.quantize"):
                _quantize(np.zeros(3))
        finally:
            RUN_ID.reset(token)
        inner, stage = spans.get_finished_spans()
        assert inner.attributes["scarbasis.run_id"] == "abc123"
        assert stage.attributes["scarbasis.run_id"] == "abc123"
        assert [e.name for e in stage.events] == ["pipeline stage"]
        assert stage.events[0].attributes["stage"] == "quantize"

    def test_outside_a_run(self, spans):
        _quantize(np.zeros(3))
        [span] = spans.get_finished_spans()
        assert "scarbasis.run_id" not in span.attributes

    def test_cache_calls_tag_the_current_span(self, spans, monkeypatch):
        monkeypatch.setattr(otel_cache, "_patched", False)
        patch_artifact_cache()
        with otel_tracing.tracer.start_as_current_span("pipeline.select"):
            store("select", digest_of("x"), [1, 2])
        [span] = spans.get_finished_spans()
        assert ":select:" in span.attributes["scarbasis.cache.set_key"]
        assert span.attributes["scarbasis.cache.caller_function"]
