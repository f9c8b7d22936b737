"""Exception hierarchy shared by all modules."""


class MTLLError(Exception):
    """Base class for errors raised by this package."""

    kind = "error"

    def record(self):
        """Machine-readable form used by the CLI."""
        return {"error": self.kind, "message": str(self)}


class InvalidParameterError(MTLLError, ValueError):
    kind = "invalid-parameter"


class InvalidArgumentError(MTLLError, ValueError):
    kind = "invalid-argument"


class NumericalOverflowError(MTLLError, ArithmeticError):
    kind = "numerical-overflow"

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class CausalityViolationError(MTLLError, IndexError):
    kind = "causality-violation"


class DegenerateEnsembleError(MTLLError):
    kind = "degenerate-ensemble"


class InvalidInitializationError(MTLLError, ValueError):
    kind = "invalid-initialization"


class ConfigurationError(MTLLError, ValueError):
    kind = "configuration"


class NoFeasiblePathError(MTLLError):
    kind = "no-feasible-path"


class DivergenceError(MTLLError, ArithmeticError):
    kind = "divergence"


class CampaignError(MTLLError):
    kind = "campaign"

    def __init__(self, message, partial_path=None):
        super().__init__(message)
        self.partial_path = partial_path

    def record(self):
        rec = super().record()
        rec["partial_results"] = None if self.partial_path is None else str(self.partial_path)
        return rec
