import logging
import os

from celery import Celery
from celery.signals import worker_process_init

os.environ.setdefault("DJANGO_SETTINGS_MODULE", "scarbasis.settings")

logger = logging.getLogger(__name__)

app = Celery("scarbasis")
app.config_from_object("django.conf:settings", namespace="CELERY")
app.autodiscover_tasks(["semiclassical"])


@worker_process_init.connect(weak=False)
def instrument_worker(**kwargs):
    """Prefork children need their own Celery instrumentation; the provider comes from settings."""
    if os.getenv("ENABLE_OTEL", "0") != "1":
        return
    try:
        from opentelemetry.instrumentation.celery import CeleryInstrumentor
    except ImportError:
        logger.warning("ENABLE_OTEL=1 but opentelemetry-instrumentation-celery is not installed")
        return
    CeleryInstrumentor().instrument()
