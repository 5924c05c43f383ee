"""Exception types shared across the package."""


class RegmechError(Exception):
    """Base class for all package errors."""


class DomainError(RegmechError):
    """An input lies outside the mathematical domain of an operation."""


class ContractError(RegmechError):
    """A precondition of an operation is violated."""


class AssumptionError(RegmechError):
    """A market environment violates the maintained assumptions."""


class InternalCheckError(RegmechError):
    """Two independent computations of the same quantity disagree."""
