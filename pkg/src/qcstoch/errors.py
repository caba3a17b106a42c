"""Exception hierarchy shared by all modules."""


class QCStochError(Exception):
    """Base class for every error raised by this package."""


class InvalidParameterError(QCStochError, ValueError):
    pass


class PreconditionError(QCStochError, ValueError):
    pass


class SpanError(PreconditionError):
    """A grid does not cover the support of the object being tabulated."""

    def __init__(self, message, leakage=None):
        super().__init__(message)
        self.leakage = leakage


class ResolutionError(PreconditionError):
    pass


class LocalizationResolutionError(ResolutionError):
    pass


class StepResolutionError(ResolutionError):
    def __init__(self, message, suggested_dt=None):
        super().__init__(message)
        self.suggested_dt = suggested_dt


class TruncationError(QCStochError, ValueError):
    def __init__(self, message, captured_norm=None):
        super().__init__(message)
        self.captured_norm = captured_norm


class NotAProbabilityError(QCStochError, ValueError):
    pass


class InfiniteSmearingError(QCStochError, ValueError):
    pass


class CostGuardError(QCStochError, ValueError):
    pass


class LeakageError(QCStochError, RuntimeError):
    def __init__(self, message, leakage=None, step=None):
        super().__init__(message)
        self.leakage = leakage
        self.step = step


class ConfigError(QCStochError, ValueError):
    def __init__(self, message, line=None):
        super().__init__(message)
        self.line = line


class RunFailure(QCStochError, RuntimeError):
    """A single ensemble member failed; carries what is needed to replay it."""

    def __init__(self, message, run_index=None, seed=None):
        super().__init__(message)
        self.run_index = run_index
        self.seed = seed
