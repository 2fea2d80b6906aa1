"""
Span decorators for the numerical entry points.

``traced_function`` wraps one callable in a span carrying ``code.*``
attributes, a compact rendering of its arguments and an OK/ERROR status;
``traced_class`` applies it to every public method of a class. Arrays are
rendered by shape and dtype, never by value, so tracing a grid-sized
wavefunction costs nothing and the recorded spans stay small.
"""

from functools import wraps
import inspect

import numpy as np
from opentelemetry import trace
from opentelemetry.trace.status import Status, StatusCode

tracer = trace.get_tracer("scarbasis")

ARGUMENT_CHARS = 512
SCALAR_ATTRIBUTES = ("energy_cm", "n", "n_states", "n_basis", "strategy")


def _summarise(value):
    if isinstance(value, np.ndarray):
        return f"ndarray(shape={value.shape}, dtype={value.dtype})"
    if isinstance(value, (list, tuple)) and len(value) > 8:
        return f"{type(value).__name__}(len={len(value)})"
    text = repr(value)
    return text if len(text) <= 80 else f"{type(value).__name__}(...)"


def _describe(args, kwargs):
    positional = ", ".join(_summarise(a) for a in args)
    keywords = ", ".join(f"{k}={_summarise(v)}" for k, v in kwargs.items())
    return positional[:ARGUMENT_CHARS], keywords[:ARGUMENT_CHARS]


def _span_name(func, args, span_name):
    """
    Span name for one call: the explicit name if given, else Class.method
    when ``func`` is a method called on an instance, else the function name.

    Args:
        func: The function or method being wrapped.
        args: Positional arguments of the call; ``args[0]`` is the instance
            for bound calls.
        span_name: Optional explicit name.

    Returns:
        str: The span name.
    """
    if span_name:
        return span_name
    bound = "." in func.__qualname__ and "<locals>" not in func.__qualname__
    if bound and args and not isinstance(args[0], (np.ndarray, float, int)):
        return f"{type(args[0]).__name__}.{func.__name__}"
    return func.__name__


def _annotate(span, func, name, args, kwargs):
    """
    Set ``code.*`` attributes, the summarised arguments and any scalar
    keyword listed in SCALAR_ATTRIBUTES (as ``scarbasis.<name>``).
    """
    code = func.__code__
    span.set_attribute("code.function", name)
    span.set_attribute("code.namespace", func.__module__)
    span.set_attribute("code.filepath", code.co_filename)
    span.set_attribute("code.lineno", code.co_firstlineno)
    positional, keywords = _describe(args, kwargs)
    span.set_attribute("scarbasis.args", positional)
    span.set_attribute("scarbasis.kwargs", keywords)
    for key in SCALAR_ATTRIBUTES:
        value = kwargs.get(key)
        if isinstance(value, (int, float, str)) and not isinstance(value, bool):
            span.set_attribute(f"scarbasis.{key}", value)


def traced_function(span_name=None):
    """
    Decorator to run a synchronous callable inside an OpenTelemetry span.

    The span carries ``code.*`` attributes, the summarised arguments and the
    return type, and is marked OK. Exceptions are recorded as one
    ``exception`` event, the status is set to ERROR and the exception is
    re-raised unchanged.

    Args:
        span_name (str, optional): Custom span name. Defaults to Class.method
            or the function name.

    Returns:
        function: A decorator applying the tracing wrapper.
    """

    def decorator(func):
        @wraps(func)
        def wrapper(*args, **kwargs):
            name = _span_name(func, args, span_name)
            with tracer.start_as_current_span(name, record_exception=False,
                                              set_status_on_exception=False) as span:
                if span.is_recording():
                    _annotate(span, func, name, args, kwargs)
                try:
                    result = func(*args, **kwargs)
                except Exception as exc:
                    span.record_exception(exc)
                    span.set_status(Status(StatusCode.ERROR, str(exc)))
                    raise
                span.set_attribute("scarbasis.return_type", type(result).__name__)
                span.set_status(Status(StatusCode.OK))
                return result

        return wrapper

    return decorator


def traced_class(cls):
    """
    Class decorator applying traced_function to every public method.

    - Names starting with an underscore are skipped, dunders included.
    - Properties, static methods and class methods are left alone.
    - Spans are named ``Class.method``.

    Usage:
        @traced_class
        class FamilyWalker:
            def step(self, energy_cm):
                ...
    """
    for name, attr in list(vars(cls).items()):
        if inspect.isfunction(attr) and not name.startswith("_"):
            setattr(cls, name, traced_function()(attr))
    return cls
