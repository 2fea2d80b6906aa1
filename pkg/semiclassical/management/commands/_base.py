import csv
import json
import logging

from django.core.management.base import BaseCommand, CommandError

from semiclassical.config import load_config
from semiclassical.exceptions import ScarbasisError
from semiclassical.pipeline import Pipeline, with_output

logger = logging.getLogger(__name__)


class PipelineCommand(BaseCommand):
    """
    Shared options (--config, --set, --output) and the mapping of library
    errors to exit codes. Subclasses implement ``run(pipeline, options)``.
    """

    def add_arguments(self, parser):
        parser.add_argument("--config", help="JSON or TOML run configuration")
        parser.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="dotted override, value parsed as JSON (repeatable)",
        )
        parser.add_argument("--output", help="output directory (overrides output_dir)")
        parser.add_argument("--pes", help="PES JSON document (overrides pes_path)")
        self.add_command_arguments(parser)

    def add_command_arguments(self, parser):
        pass

    def overrides(self, options):
        pes = [f"pes_path={json.dumps(options['pes'])}"] if options.get("pes") else []
        return list(options["overrides"]) + pes

    def handle(self, *args, **options):
        pipeline = None
        try:
            config = with_output(load_config(options["config"], self.overrides(options)), options["output"])
            pipeline = Pipeline(config)
            self.run(pipeline, options)
        except ScarbasisError as exc:
            logger.error(f"{self.__module__.rsplit('.', 1)[-1]}: {exc}")
            raise CommandError(str(exc), returncode=exc.exit_code) from exc
        finally:
            if pipeline is not None and pipeline.manifest.stages:
                pipeline.manifest.write()

    def run(self, pipeline, options):
        raise NotImplementedError

    # -- output helpers -------------------------------------------------

    def emit_json(self, document):
        self.stdout.write(json.dumps(document, indent=2, default=float))

    def emit_csv(self, rows, columns=None):
        if not rows:
            return
        writer = csv.DictWriter(self.stdout, fieldnames=columns or list(rows[0]), extrasaction="ignore",
                                lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
