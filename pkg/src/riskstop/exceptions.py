"""Exception types raised by riskstop."""


class RiskStopError(Exception):
    """Base class for all library errors."""


class InvalidParams(RiskStopError, ValueError):
    pass


class TailUndecidable(RiskStopError):
    """A tail descriptor can neither sum the series nor certify divergence."""


class MaxIterExceeded(RiskStopError):
    pass


class BadCandidate(RiskStopError, ValueError):
    pass


class ModelMismatch(RiskStopError, ValueError):
    pass


class WrongRegime(RiskStopError, ValueError):
    pass


class AnalyticUnavailable(RiskStopError):
    pass


class BudgetExceeded(RiskStopError):
    """Poisson truncation error exceeds the requested accuracy."""
