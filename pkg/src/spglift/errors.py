"""Exception hierarchy shared by all spglift modules."""


class SpgliftError(Exception):
    """Base class for all errors raised by this package."""


class ShapeMismatchError(SpgliftError):
    """Tensor operation received incompatibly shaped operands."""

    def __init__(self, op: str, shape_a, shape_b, detail: str = ""):
        self.op = op
        self.shape_a = tuple(shape_a)
        self.shape_b = tuple(shape_b)
        msg = f"{op}: incompatible shapes {self.shape_a} and {self.shape_b}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class DomainError(SpgliftError):
    """Input value outside the mathematical domain of an operation."""


class ContractError(SpgliftError):
    """Caller violated a documented precondition."""


class ConfigError(SpgliftError):
    """Invalid or inconsistent configuration."""


class FormatError(SpgliftError):
    """Malformed container file."""


class GenerationError(SpgliftError):
    """Synthetic data generation could not satisfy its constraints."""


class AlignmentError(SpgliftError):
    """Degenerate point configuration; similarity alignment undefined."""


class NumericalAbort(SpgliftError):
    """Training hit a non-finite value and stopped."""
