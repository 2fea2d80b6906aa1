from semiclassical.management.commands._base import PipelineCommand


class Command(PipelineCommand):
    help = "Locate stationary points and the minimum energy path; prints them as CSV"

    def add_command_arguments(self, parser):
        parser.add_argument("--mep", action="store_true", help="print the MEP instead of the stationary points")

    def run(self, pipeline, options):
        surface = pipeline.surface()
        if options["mep"]:
            self.emit_csv(list(surface.mep.rows()))
        else:
            self.emit_csv([p.to_dict() for p in surface.points])
