"""
OpenTelemetry enhancements for pipeline runs.

- PipelineSpanProcessor: tags every span with the active run id and adds a
  summary event to pipeline stage spans (name prefix ``pipeline.``).
- patch_artifact_cache(): wraps the artifact cache ``get``/``set``/``delete``
  so the current span records the calling function, file and line.
- setup_pipeline_otel(provider): registers the processor. Called from
  settings once the tracer provider exists; the cache patch is applied from
  the app's ready() because caches are not configured yet at that point.
"""

from contextvars import ContextVar
import inspect
import logging

from opentelemetry import trace
from opentelemetry.sdk.trace import SpanProcessor

logger = logging.getLogger(__name__)

RUN_ID = ContextVar("scarbasis_run_id", default=None)
STAGE_PREFIX = "pipeline."

_patched = False


class PipelineSpanProcessor(SpanProcessor):
    """
    SpanProcessor that ties spans to the pipeline run that opened them.

    Spans started while RUN_ID is set get a ``scarbasis.run_id`` attribute.
    Stage spans (names starting with ``pipeline.``) also get a
    ``pipeline stage`` event naming the stage. Enrichment errors are recorded
    as a span attribute instead of being raised.
    """

    def on_start(self, span, parent_context=None):
        """
        Tag ``span`` with the active run id and, for stage spans, add the
        stage event.

        Args:
            span: The span being started.
            parent_context: Context of the parent span, unused.
        """
        run_id = RUN_ID.get()
        if run_id is None:
            return
        try:
            span.set_attribute("scarbasis.run_id", run_id)
            if span.name.startswith(STAGE_PREFIX):
                span.add_event(
                    "pipeline stage",
                    {"stage": span.name[len(STAGE_PREFIX):], "run_id": run_id},
                )
        except Exception as e:
            span.set_attribute("scarbasis.spanprocessor_error", str(e))

    def on_end(self, span):
        """Log the duration and status of finished stage spans at DEBUG."""
        if span.name.startswith(STAGE_PREFIX):
            duration = (span.end_time - span.start_time) / 1e9 if span.end_time else 0.0
            logger.debug(f"span {span.name} closed after {duration:.3f}s ({span.status.status_code.name})")


def enrich_span_with_caller(span):
    """
    Record the function, file and line that called the artifact cache on
    ``span``. The caller sits two frames up: this function is called from
    the cache wrapper, which is called from the caller.

    Args:
        span: The current recording span.
    """
    frame = inspect.currentframe()
    outer = frame.f_back.f_back if frame is not None and frame.f_back is not None else None
    if outer is not None:
        span.set_attribute("scarbasis.cache.caller_function", outer.f_code.co_name)
        span.set_attribute("scarbasis.cache.caller_file", outer.f_code.co_filename)
        span.set_attribute("scarbasis.cache.caller_line", outer.f_lineno)


def _patch_method(cache, method_name):
    """
    Replace ``cache.<method_name>`` with a wrapper that enriches the current
    span with the caller and the cache key before delegating.

    Args:
        cache: The artifact cache backend instance.
        method_name (str): One of ``get``, ``set`` or ``delete``.
    """
    original = getattr(cache, method_name)

    def wrapper(*args, **kwargs):
        span = trace.get_current_span()
        if span and span.is_recording():
            enrich_span_with_caller(span)
            if args:
                span.set_attribute(f"scarbasis.cache.{method_name}_key", str(args[0]))
        return original(*args, **kwargs)

    setattr(cache, method_name, wrapper)


def patch_artifact_cache():
    """
    Monkey-patch get, set and delete of the artifact cache so cache calls
    made inside a span are attributed to their caller. Applied once per
    process; later calls are no-ops.
    """
    global _patched
    if _patched:
        return
    from semiclassical.artifacts import artifact_cache

    cache = artifact_cache()
    for method in ("get", "set", "delete"):
        _patch_method(cache, method)
    _patched = True


def setup_pipeline_otel(provider):
    """
    Register PipelineSpanProcessor on ``provider``. Call this from settings
    after the tracer provider is created.

    Args:
        provider: An SDK TracerProvider.
    """
    provider.add_span_processor(PipelineSpanProcessor())
