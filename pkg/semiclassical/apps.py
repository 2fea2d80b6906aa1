import logging

from django.apps import AppConfig

logger = logging.getLogger(__name__)


class SemiclassicalConfig(AppConfig):
    default_auto_field = "django.db.models.BigAutoField"
    name = "semiclassical"
    verbose_name = "Semiclassical localized-basis eigensolver"

    def ready(self):
        # Patch the artifact cache once Django's cache framework is configured.
        from django.conf import settings

        if getattr(settings, "ENABLE_OTEL", False):
            from semiclassical.otel_cache import patch_artifact_cache

            patch_artifact_cache()
