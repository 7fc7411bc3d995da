"""Exception taxonomy; each class carries the CLI exit status it maps to."""


class MfgError(Exception):
    exit_code = 1


class ConfigError(MfgError):
    exit_code = 2

    def __init__(self, message: str, path: str | None = None):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class AdmissibilityError(MfgError):
    """An initial density outside the admissible set: ``m0 >= 0`` with mass
    ``0 <= a <= 1``."""

    exit_code = 3


class NonConvergenceError(MfgError):
    exit_code = 4

    def __init__(self, message: str, iterations: int, residual: float):
        self.iterations = iterations
        self.residual = residual
        super().__init__(f"{message} (iterations={iterations}, residual={residual:.3e})")


class DegenerateProbeError(MfgError):
    exit_code = 5


class NegativeDensityWarning(RuntimeWarning):
    pass
