from semiclassical.management.commands._base import PipelineCommand


class Command(PipelineCommand):
    help = "Seed, converge and continue every periodic orbit family up to the continuation ceiling"

    def run(self, pipeline, options):
        families = pipeline.families()
        self.emit_csv(
            [
                {
                    "family": f.label,
                    "orbits": len(f),
                    "e_min_cm": float(f.energies.min()),
                    "e_max_cm": float(f.energies.max()),
                    "stable_fraction": sum(po.stable for po in f.orbits) / len(f),
                    "markers": ";".join(f"{m.kind}@{m.energy:.1f}" for m in f.markers),
                }
                for f in families
            ]
        )
