from semiclassical.management.commands._base import PipelineCommand


class Command(PipelineCommand):
    help = "Full pipeline: surface, orbits, levels, states, selection, spectrum, analysis, comparison"

    def run(self, pipeline, options):
        manifest = pipeline.run()
        self.emit_json({"run_id": manifest.run_id, "manifest": str(manifest.path), "checks": manifest.checks})
