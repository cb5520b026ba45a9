# Exception hierarchy shared by the algebra, solvers, verification and pipeline packages.
from typing import Any, Dict, Optional


class PropagatorError(Exception):
    """Base class for every error raised by this project."""


class RejectedInputError(PropagatorError, ValueError):
    """Invalid arguments: dimension mismatch, t outside the interval, bad generator..."""


class ConfigurationError(PropagatorError, ValueError):
    """Malformed scenario or settings, or a solver constant that cannot be obtained."""


class NumericalError(PropagatorError, RuntimeError):
    def __init__(self, message: str, residual: float = float("nan"), context: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.residual = residual
        self.context = dict(context or {})


class ConvergenceError(NumericalError):
    """An iteration ran out of budget before reaching its tolerance."""


class NumericalInconsistencyError(NumericalError):
    """A proven bound or identity was violated beyond tolerance (signals a bug)."""
