from semiclassical.artifacts import write_json
from semiclassical.exceptions import AcceptanceError
from semiclassical.management.commands._base import PipelineCommand
from semiclassical.selftest import HarmonicSuite


class Command(PipelineCommand):
    help = "Harmonic acceptance suite: BS levels, tube overlaps, SGSM spectrum and invariants"

    def add_command_arguments(self, parser):
        parser.add_argument("--n-r", type=int, default=64)
        parser.add_argument("--n-theta", type=int, default=128)

    def run(self, pipeline, options):
        manifest = pipeline.manifest
        with manifest.stage("selftest") as record:
            checks = HarmonicSuite(n_r=options["n_r"], n_theta=options["n_theta"]).run()
            path = write_json(pipeline.output / "selftest.json", [c.to_dict() for c in checks])
            manifest.add_file(record, path)
            manifest.checks.update({c.name: c.passed for c in checks})
        for check in checks:
            status = "ok" if check.passed else "FAILED"
            self.stdout.write(f"{check.name:<28} {check.value:12.4e}  (limit {check.threshold:g})  {status}")
        failed = [c.name for c in checks if not c.passed]
        if failed:
            raise AcceptanceError(f"harmonic acceptance failed: {', '.join(failed)}", failed)
