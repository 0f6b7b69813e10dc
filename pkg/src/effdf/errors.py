"""Exception types raised across the package."""

from __future__ import annotations


class EffDfError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(EffDfError, ValueError):
    pass


class RankDeficient(EffDfError, ValueError):
    """Design (or sub-design) has numerical rank below its column count."""

    def __init__(self, rank: int, ncols: int, message: str | None = None):
        self.rank = rank
        self.ncols = ncols
        super().__init__(message or f"rank-deficient design: numerical rank {rank} < {ncols} columns")


class InfeasibleSubset(EffDfError, ValueError):
    """Every candidate subset of the requested size is rank-deficient."""


class SubsetTooLarge(EffDfError, ValueError):
    pass


class NonFiniteStatistic(EffDfError, ArithmeticError):
    pass


class ReplicateError(EffDfError, RuntimeError):
    """A fitter failed on a simulated replicate; carries the replicate index."""

    def __init__(self, index: int, cause: BaseException):
        self.index = index
        self.cause = cause
        super().__init__(f"replicate {index}: {cause}")


class NotLinear(EffDfError, TypeError):
    pass


class DimensionTooLarge(EffDfError, ValueError):
    pass


class IncompleteGrid(EffDfError, ValueError):
    pass
