from semiclassical.dynamics import PhasePoint, launch_from_section
from semiclassical.exceptions import ConfigError
from semiclassical.management.commands._base import PipelineCommand
from semiclassical.pipeline import Seed
from semiclassical.units import from_cm


class Command(PipelineCommand):
    help = "Converge one periodic orbit from a phase-space or section seed"

    def add_command_arguments(self, parser):
        parser.add_argument("--energy", type=float, required=True, help="energy in cm-1")
        parser.add_argument("--theta", type=float, help="configuration-space seed angle")
        parser.add_argument("--R", dest="r", type=float, help="seed radius (default: on the MEP)")
        parser.add_argument("--p-r", type=float, default=0.0)
        parser.add_argument("--p-theta", type=float, default=0.0)
        parser.add_argument("--psi", type=float, help="section seed angle (P_rho from H = E)")
        parser.add_argument("--p-psi", type=float, default=0.0)
        parser.add_argument("--strategy", choices=("auto", "stretch", "symmetric", "section"), default="auto")
        parser.add_argument("--returns", type=int, default=1, help="section returns per period")
        parser.add_argument("--direction", type=int, choices=(1, -1), default=1)
        parser.add_argument("--label", default="")

    def run(self, pipeline, options):
        surface = pipeline.surface()
        energy = options["energy"]
        if options["psi"] is not None:
            point = launch_from_section(options["psi"], options["p_psi"], from_cm(energy), surface.pes,
                                        surface.mep, options["direction"])
            if point is None:
                raise ConfigError(f"section point psi={options['psi']} is forbidden at {energy} cm-1")
        elif options["theta"] is not None:
            theta = options["theta"]
            r = options["r"] if options["r"] is not None else surface.mep.re(theta)
            point = PhasePoint(r, theta, options["p_r"], options["p_theta"])
        else:
            raise ConfigError("po-find needs --theta or --psi")
        seed = Seed(point, energy, options["strategy"], options["label"], n_returns=options["returns"],
                    direction=options["direction"])
        po = pipeline.orbit(seed)
        self.emit_json(po.to_dict())
