"""Exception hierarchy. Every error the toolkit raises derives from CodedKFError."""


class CodedKFError(Exception):
    pass


class ShapeError(CodedKFError, ValueError):
    """Dimension mismatch or non-square input."""


class ModelError(CodedKFError, ValueError):
    """Malformed source, channel or control model."""


class AssumptionViolation(ModelError):
    """Source violates the distinct, strictly-unstable, real-spectrum requirements."""


class IllConditioned(CodedKFError, ArithmeticError):
    """A matrix that must be inverted is numerically singular."""


class UnstableMap(CodedKFError, ArithmeticError):
    """Lyapunov solve requested for a map with spectral radius >= 1."""


class PartitionError(CodedKFError, ValueError):
    """Index sets do not form a partition of the modes."""


class InfeasiblePartition(CodedKFError):
    pass


class ConstructionFailed(CodedKFError):
    pass


class BudgetExceeded(CodedKFError):
    """Exhaustive enumeration would exceed the configured budget."""


class NotStabilizable(CodedKFError):
    pass


class InsufficientData(CodedKFError, ValueError):
    pass


class Infeasible(CodedKFError):
    """No feasible point was found by the search."""
