from semiclassical.management.commands._base import PipelineCommand


class Command(PipelineCommand):
    help = "Grid reference eigenstates, certified by grid doubling"

    def add_command_arguments(self, parser):
        parser.add_argument("--states", type=int, help="number of states (overrides analysis.reference_states)")
        parser.add_argument("--no-certify", action="store_true")

    def overrides(self, options):
        extra = []
        if options["states"] is not None:
            extra.append(f"analysis.reference_states={options['states']}")
        if options["no_certify"]:
            extra.append("analysis.certify=false")
        return super().overrides(options) + extra

    def run(self, pipeline, options):
        spectrum = pipeline.reference()
        self.emit_csv(spectrum.to_rows())
        if not spectrum.certified:
            self.stderr.write("reference spectrum not certified (certification disabled)")
