"""
Django settings for the scarbasis project.

The project has no models, views or URL routes: it is a batch computation
driven by management commands and Celery workers. Everything here is read
from the environment with defaults.
"""

from pathlib import Path
import os

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

SECRET_KEY = os.environ.get("DJANGO_SECRET_KEY", "scarbasis-batch-only-not-served")

DEBUG = os.environ.get("DJANGO_DEBUG", "0") == "1"

ALLOWED_HOSTS = []

INSTALLED_APPS = [
    "semiclassical",
]

DATABASES = {}

LANGUAGE_CODE = "en-us"

TIME_ZONE = "UTC"

USE_TZ = True

DEFAULT_AUTO_FIELD = "django.db.models.BigAutoField"

REDIS_HOST = os.environ.get("REDIS_HOST", "localhost")
REDIS_PORT = os.environ.get("REDIS_PORT", "6379")
REDIS_URL = f"redis://{REDIS_HOST}:{REDIS_PORT}/0"

# Celery configuration; eager by default so a single process runs everything
CELERY_BROKER_URL = REDIS_URL
CELERY_RESULT_BACKEND = REDIS_URL
CELERY_TASK_ALWAYS_EAGER = os.environ.get("CELERY_TASK_ALWAYS_EAGER", "1") == "1"
CELERY_TASK_EAGER_PROPAGATES = True
CELERY_TASK_SERIALIZER = "json"
CELERY_RESULT_SERIALIZER = "json"
CELERY_ACCEPT_CONTENT = ["json"]

# Artifact store: file cache by default, redis for shared worker pools
SCARBASIS_CACHE = os.environ.get("SCARBASIS_CACHE", "file")
SCARBASIS_CACHE_DIR = os.environ.get("SCARBASIS_CACHE_DIR", str(BASE_DIR / ".scarbasis-cache"))
SCARBASIS_OUTPUT_DIR = os.environ.get("SCARBASIS_OUTPUT_DIR", str(BASE_DIR / "runs"))

_ARTIFACT_BACKENDS = {
    "file": {
        "BACKEND": "django.core.cache.backends.filebased.FileBasedCache",
        "LOCATION": SCARBASIS_CACHE_DIR,
        "TIMEOUT": None,
        "OPTIONS": {"MAX_ENTRIES": 100000},
    },
    "redis": {
        "BACKEND": "django_redis.cache.RedisCache",
        "LOCATION": f"redis://{REDIS_HOST}:{REDIS_PORT}/1",
        "TIMEOUT": None,
        "OPTIONS": {
            "CLIENT_CLASS": "django_redis.client.DefaultClient",
        },
    },
    "locmem": {
        "BACKEND": "django.core.cache.backends.locmem.LocMemCache",
        "LOCATION": "scarbasis-artifacts",
        "TIMEOUT": None,
        "OPTIONS": {"MAX_ENTRIES": 100000},
    },
}

if SCARBASIS_CACHE not in _ARTIFACT_BACKENDS:
    raise ValueError(f"SCARBASIS_CACHE must be one of {sorted(_ARTIFACT_BACKENDS)}, got {SCARBASIS_CACHE!r}")

CACHES = {
    "default": {
        "BACKEND": "django.core.cache.backends.locmem.LocMemCache",
    },
    "artifacts": _ARTIFACT_BACKENDS[SCARBASIS_CACHE],
}

SCARBASIS_LOG_LEVEL = os.environ.get("SCARBASIS_LOG_LEVEL", "INFO").upper()

LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "plain": {"format": "%(asctime)s %(levelname)s %(name)s: %(message)s"},
    },
    "handlers": {
        "console": {"class": "logging.StreamHandler", "formatter": "plain"},
    },
    "loggers": {
        "semiclassical": {"handlers": ["console"], "level": SCARBASIS_LOG_LEVEL, "propagate": False},
        "scarbasis": {"handlers": ["console"], "level": SCARBASIS_LOG_LEVEL, "propagate": False},
    },
    "root": {"handlers": ["console"], "level": "WARNING"},
}

# Default run configuration (see semiclassical.config.RunConfig)
SCARBASIS_DEFAULTS = {
    "pes_path": os.environ.get("SCARBASIS_PES") or None,
    "parity": "even",
    "seed": 0,
    "output_dir": str(Path(SCARBASIS_OUTPUT_DIR) / "default"),
    "grid": {"n_r": 128, "n_theta": 128, "r_min": None, "r_max": None},
    "po": {
        "seeds": [],
        "e_min": 10.0,
        "e_max": None,
        "step": 50.0,
        "tol": 1e-9,
        "integ_tol": 1e-12,
        "max_jump": 0.25,
        "transverse_zero_point": True,
        "alpha": [16.114, 14.123],
        "section_scan": 6,
        "section_returns": [1, 2],
    },
    "selection": {"e_ref": 3100.0, "c_b": 6.0, "sigma_sc": None, "n_basis": None, "density_nodes": 128},
    "propagation": {
        "dt": None,
        "tube_tol": 1e-6,
        "tube_min_samples": 128,
        "tube_max_samples": 8192,
        "coherence_periods": 8,
        "sigma_cap": 5.0,
        "scars": True,
    },
    "analysis": {
        "k_max": 10,
        "window": 5,
        "reference_states": 60,
        "certify": True,
        "shift_tol": 0.1,
        "max_doublings": 2,
        "match_threshold": 0.5,
        "compare": True,
    },
}

# --- OpenTelemetry Instrumentation ---
ENABLE_OTEL = os.getenv("ENABLE_OTEL", "0") == "1"

if ENABLE_OTEL:
    from opentelemetry.sdk.resources import Resource
    from opentelemetry.sdk.trace import TracerProvider
    from opentelemetry.sdk.trace.export import BatchSpanProcessor
    from opentelemetry.exporter.otlp.proto.http.trace_exporter import OTLPSpanExporter
    from opentelemetry.instrumentation.celery import CeleryInstrumentor
    from opentelemetry.instrumentation.redis import RedisInstrumentor
    from opentelemetry import trace

    resource = Resource.create(
        {
            "service.name": os.getenv("OTEL_SERVICE_NAME", "scarbasis"),
        }
    )
    provider = TracerProvider(resource=resource)
    trace.set_tracer_provider(provider)
    otlp_exporter = OTLPSpanExporter(
        endpoint=os.getenv("OTEL_EXPORTER_OTLP_ENDPOINT", "http://localhost:4318/v1/traces"),
    )
    provider.add_span_processor(BatchSpanProcessor(otlp_exporter))
    RedisInstrumentor().instrument()
    CeleryInstrumentor().instrument()

    # Run-id tagging of spans; the artifact cache patch follows in AppConfig.ready()
    from semiclassical.otel_cache import setup_pipeline_otel

    setup_pipeline_otel(provider)
