from semiclassical.management.commands._base import PipelineCommand


class Command(PipelineCommand):
    help = "Selective Gram-Schmidt choice of the localized basis"

    def run(self, pipeline, options):
        selection = pipeline.selection()
        self.emit_csv(selection.ledger())
        if selection.early_stop:
            self.stderr.write(f"selection stopped early at {len(selection)} functions")
