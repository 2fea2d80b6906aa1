from semiclassical.management.commands._base import PipelineCommand


class Command(PipelineCommand):
    help = "Poincare surface of section on the minimum energy path at one energy"

    def add_command_arguments(self, parser):
        parser.add_argument("--energy", type=float, required=True, help="energy in cm-1")
        parser.add_argument("--launches", type=int, default=12)
        parser.add_argument("--crossings", type=int, default=200)
        parser.add_argument("--direction", type=int, choices=(1, -1), default=1)

    def run(self, pipeline, options):
        rows = pipeline.section(options["energy"], options["launches"], options["crossings"], options["direction"])
        partial = {row["trajectory"] for row in rows if not row["complete"]}
        self.stdout.write(f"{len(rows)} section points written to {pipeline.output}")
        if partial:
            self.stderr.write(f"{len(partial)} trajectories stopped before {options['crossings']} crossings")
