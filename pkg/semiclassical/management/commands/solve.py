from semiclassical.management.commands._base import PipelineCommand


class Command(PipelineCommand):
    help = "Diagonalise H in the selected basis; prints energies and dispersions"

    def run(self, pipeline, options):
        self.emit_csv(pipeline.eigen().to_rows())
