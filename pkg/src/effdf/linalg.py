"""Dense least-squares and projection primitives shared by the fitters."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular
from numpy.typing import ArrayLike, NDArray

from .errors import DimensionMismatch, RankDeficient

RANK_TOL = 1e-10


def numerical_rank(X, tol: float = RANK_TOL) -> int:
    """Number of singular values larger than ``tol`` times the largest one."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    A = X.entries if isinstance(X, DesignMatrix) else np.asarray(X, dtype=float)
    if A.size == 0:
        return 0
    s = np.linalg.svd(A, compute_uv=False)
    if s[0] == 0.0:
        return 0
    return int(np.count_nonzero(s > tol * s[0]))


@dataclass(frozen=True)
class DesignMatrix:
    """Immutable n x p design with its numerical rank cached at construction."""

    entries: NDArray[np.float64]
    rank: int = field(init=False)

    def __post_init__(self):
        A = np.array(self.entries, dtype=float, copy=True)
        if A.ndim == 1:
            A = A[:, None]
        if A.ndim != 2 or A.shape[0] < 1 or A.shape[1] < 1:
            raise ValueError(f"design must be a non-empty 2-D array, got shape {A.shape}")
        if not np.all(np.isfinite(A)):
            raise ValueError("design has non-finite entries")
        A.setflags(write=False)
        object.__setattr__(self, "entries", A)
        object.__setattr__(self, "rank", numerical_rank(A))

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    @property
    def p(self) -> int:
        return self.entries.shape[1]

    @property
    def full_rank(self) -> bool:
        return self.rank == self.p

    def columns(self, idx) -> "DesignMatrix":
        return DesignMatrix(self.entries[:, list(idx)])

    @classmethod
    def identity(cls, n: int) -> "DesignMatrix":
        return cls(np.eye(n))

    def __eq__(self, other):
        return isinstance(other, DesignMatrix) and np.array_equal(self.entries, other.entries)

    def __hash__(self):
        return hash((self.entries.shape, self.entries.tobytes()))


@dataclass(frozen=True)
class Subspace:
    """Linear subspace of R^n stored as an orthonormal basis (n x dim)."""

    basis: NDArray[np.float64]

    def __post_init__(self):
        B = np.array(self.basis, dtype=float, copy=True)
        if B.ndim != 2:
            raise ValueError("basis must be 2-D (n x dim)")
        if B.shape[1] > B.shape[0]:
            raise ValueError("subspace dimension exceeds ambient dimension")
        if B.shape[1] and not np.allclose(B.T @ B, np.eye(B.shape[1]), rtol=0, atol=1e-10):
            raise ValueError("basis columns are not orthonormal")
        B.setflags(write=False)
        object.__setattr__(self, "basis", B)

    @property
    def n(self) -> int:
        return self.basis.shape[0]

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    @classmethod
    def span(cls, X: ArrayLike, tol: float = RANK_TOL) -> "Subspace":
        """Orthonormal basis of the column space of ``X`` (rank-revealing via SVD)."""
        A = np.asarray(X.entries if isinstance(X, DesignMatrix) else X, dtype=float)
        if A.ndim == 1:
            A = A[:, None]
        if A.shape[1] == 0:
            return cls(np.zeros((A.shape[0], 0)))
        U, s, _ = np.linalg.svd(A, full_matrices=False)
        r = int(np.count_nonzero(s > tol * s[0])) if s[0] > 0 else 0
        return cls(U[:, :r])

    @classmethod
    def zero(cls, n: int) -> "Subspace":
        return cls(np.zeros((n, 0)))

    @classmethod
    def full(cls, n: int) -> "Subspace":
        return cls(np.eye(n))


def project_subspace(S: Subspace, y: ArrayLike) -> NDArray[np.float64]:
    y = np.asarray(y, dtype=float)
    if y.shape[-1] != S.n:
        raise DimensionMismatch(f"vector of length {y.shape[-1]} does not live in R^{S.n}")
    B = S.basis
    return (y @ B) @ B.T


def least_squares(X: DesignMatrix, y: ArrayLike):
    """Solve min ||y - X beta||^2 by Householder QR.

    Returns
    -------
    beta : ndarray, shape (p,)
    fitted : ndarray, shape (n,)
    rss : float

    Raises
    ------
    RankDeficient
        If the numerical rank of ``X`` is below ``p``.
    """
    if not isinstance(X, DesignMatrix):
        X = DesignMatrix(X)
    y = np.asarray(y, dtype=float)
    if y.shape != (X.n,):
        raise DimensionMismatch(f"y has shape {y.shape}, design has {X.n} rows")
    if X.rank < X.p:
        raise RankDeficient(X.rank, X.p)
    Q, R = np.linalg.qr(X.entries, mode="reduced")
    qty = Q.T @ y
    beta = solve_triangular(R, qty)
    fitted = Q @ qty
    r = y - fitted
    return beta, fitted, float(r @ r)
