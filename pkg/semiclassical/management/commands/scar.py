from semiclassical.management.commands import tube


class Command(tube.Command):
    help = "Scar functions (Ehrenfest-time filtered tubes) on the unstable-orbit BS levels"
    kind = "scar"
