from semiclassical.management.commands._base import PipelineCommand


class Command(PipelineCommand):
    help = "Local representations, participation ratios and (optionally) the reference comparison"

    def run(self, pipeline, options):
        _, rows = pipeline.analysis()
        if pipeline.config.analysis.compare:
            report = pipeline.compare()
            self.stdout.write(
                f"matched {report['matched']} states, envelope pass fraction {report['pass_fraction']:.3f}"
            )
        self.emit_csv(rows)
