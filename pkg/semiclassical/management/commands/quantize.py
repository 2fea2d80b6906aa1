from semiclassical.management.commands._base import PipelineCommand


class Command(PipelineCommand):
    help = "Bohr-Sommerfeld levels of every continued family"

    def run(self, pipeline, options):
        levels = pipeline.levels()
        self.emit_csv([dict(level.to_dict(), orbit=level.orbit.label) for _, level in levels])
