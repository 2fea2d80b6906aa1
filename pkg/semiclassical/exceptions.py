"""
Exception hierarchy for the semiclassical eigensolver.

Every error carries an ``exit_code`` used by the management commands:
2 for configuration problems, 3 for numerical failures and 4 for failed
acceptance checks.
"""


class ScarbasisError(Exception):
    exit_code = 1


class ConfigError(ScarbasisError):
    exit_code = 2


class NumericalError(ScarbasisError):
    exit_code = 3


class AcceptanceError(ScarbasisError):
    exit_code = 4

    def __init__(self, message, failed_checks=None):
        super().__init__(message)
        self.failed_checks = list(failed_checks or [])


class PesDomainError(NumericalError):
    def __init__(self, coordinate, value, bounds):
        self.coordinate = coordinate
        self.value = value
        self.bounds = bounds
        super().__init__(
            f"{coordinate}={value!r} outside the PES domain {bounds}"
        )


class StationaryPointError(NumericalError):
    def __init__(self, message, seeds=()):
        self.seeds = list(seeds)
        super().__init__(f"{message}; seeds tried: {self.seeds}")


class MepError(NumericalError):
    def __init__(self, theta, reason):
        self.theta = theta
        super().__init__(f"radial minimization failed at theta={theta:.6f}: {reason}")


class IntegrationError(NumericalError):
    def __init__(self, message, last_time=None):
        self.last_time = last_time
        super().__init__(f"{message} (last good time {last_time})")


class ShootingError(NumericalError):
    def __init__(self, message, residuals=()):
        self.residuals = list(residuals)
        super().__init__(f"{message}; residual history: {self.residuals}")


class SingularJacobianError(ShootingError):
    def __init__(self, condition_number, residuals=()):
        self.condition_number = condition_number
        super().__init__(
            f"shooting Jacobian singular (cond={condition_number:.3e})", residuals
        )


class MonodromyError(NumericalError):
    pass


class StabilityError(NumericalError):
    pass


class WindingNumberError(NumericalError):
    pass


class QuantizationError(NumericalError):
    pass


class GridError(NumericalError):
    pass


class PropagationError(NumericalError):
    def __init__(self, message, step=None):
        self.step = step
        super().__init__(f"{message} (step {step})")


class ConstructionError(NumericalError):
    pass


class SelectionError(NumericalError):
    pass


class DiagonalizationError(NumericalError):
    pass


class ConvergenceError(NumericalError):
    def __init__(self, message, shifts=()):
        self.shifts = list(shifts)
        super().__init__(f"{message}; shift history (cm-1): {self.shifts}")


class MatchingError(NumericalError):
    pass


class StageError(ScarbasisError):
    """A pipeline stage failed; wraps the original error."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 3)
        super().__init__(f"stage '{stage}' failed: {cause}")
