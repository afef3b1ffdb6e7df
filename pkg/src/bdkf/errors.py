"""Exception hierarchy for the bdkf package.

Configuration and shape problems derive from ``ValueError`` so they read
naturally at call sites; numerical failures derive from ``ArithmeticError``
so callers can distinguish "you passed garbage" from "the computation broke".
"""


class BdkfError(Exception):
    """Base class for all bdkf errors."""


class ShapeError(BdkfError, ValueError):
    """Operands have incompatible or malformed shapes."""


class ValidationError(BdkfError, ValueError):
    """An input value violates a documented precondition."""


class ConfigError(BdkfError, ValueError):
    """A run configuration is missing fields or contains unknown ones."""


class NumericalError(BdkfError, ArithmeticError):
    """Base class for runtime numerical failures."""


class SingularBlockError(NumericalError):
    """A per-block symmetric factorization failed (block not positive definite)."""

    def __init__(self, block_index: int, message: str = "block not positive definite"):
        self.block_index = block_index
        super().__init__(f"block {block_index}: {message}")


class SingularMatrixError(NumericalError):
    """A dense symmetric factorization or solve failed."""


class NonConvergenceError(NumericalError):
    """A fixed-point iteration exhausted its iteration budget.

    Carries the final relative residual and the tail of the residual history
    for diagnosis.
    """

    def __init__(self, message: str, residual: float, history: list[float]):
        self.residual = residual
        self.history = list(history)
        super().__init__(
            f"{message} (last residual {residual:.3e}, history tail {self.history})"
        )


class UnstableClosedLoopError(NumericalError):
    """The closed-loop transition matrix has spectral radius >= 1."""


class DefectiveMatrixError(NumericalError):
    """A matrix is numerically non-diagonalizable where diagonalizability is required."""
