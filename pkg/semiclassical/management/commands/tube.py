from semiclassical.management.commands._base import PipelineCommand


class Command(PipelineCommand):
    help = "Tube functions at the BS levels; writes .scwf files with JSON metadata"
    kind = "tube"

    def add_command_arguments(self, parser):
        parser.add_argument("--family", help="family or orbit label (default: every level)")
        parser.add_argument("--n", type=int, help="BS quantum number within --family")

    def overrides(self, options):
        scars = "true" if self.kind == "scar" else "false"
        return super().overrides(options) + [f"propagation.scars={scars}"]

    def run(self, pipeline, options):
        if options["family"]:
            pool = pipeline.localized(options["family"], options["n"])
            states, skipped = pool.states, pool.skipped
        else:
            states, skipped = pipeline.states(), []
        self.emit_csv([s.metadata() for s in states if s.kind == self.kind])
        for entry in skipped:
            self.stderr.write(f"skipped {entry['kind']} '{entry['label']}' n={entry['n']}: {entry['error']}")
