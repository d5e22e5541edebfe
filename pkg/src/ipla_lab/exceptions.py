"""Exception types raised by ipla_lab."""


class IPLAError(Exception):
    """Base class for all library errors."""


class NonFiniteEvaluation(IPLAError, ArithmeticError):
    """A model callable returned NaN or inf at a finite probe point."""


class DegenerateProbe(IPLAError, ValueError):
    """Every sampled pair in a convexity probe was coincident."""


class DivergedState(IPLAError, ArithmeticError):
    """A chain produced a non-finite coordinate.

    ``particle`` is the index of the first offending particle, or ``None``
    when the parameter component blew up. ``replicate`` and ``step`` locate
    the failure inside a run.
    """

    def __init__(self, message, particle=None, step=None, replicate=None):
        super().__init__(message)
        self.particle = particle
        self.step = step
        self.replicate = replicate


class UnsupportedModel(IPLAError, TypeError):
    """The requested operation needs analytic structure the model lacks."""


class EmptySample(IPLAError, ValueError):
    pass


class SizeMismatch(IPLAError, ValueError):
    pass


class GammaOutOfRange(IPLAError, ValueError):
    """Step size outside the stability window ``(0, min(1/L, 2/mu))``."""


class DomainError(IPLAError, ValueError):
    pass


class ConfigError(IPLAError, ValueError):
    """Malformed experiment configuration; ``field`` names the culprit."""

    def __init__(self, message, field=None, line=None):
        super().__init__(message)
        self.field = field
        self.line = line
