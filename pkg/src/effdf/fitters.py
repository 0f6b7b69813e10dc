"""Fitting procedures y -> y_hat behind one interface.

Every fitter exposes ``fit(y)`` returning a :class:`FitResult` and
``fit_many(Y)`` mapping a (B, n) block of responses to a (B, n) block of
fitted values. ``fit`` is the straightforward reference route; ``fit_many``
is the vectorized route used by the Monte Carlo engine. For best-subset and
forward-stepwise the two routes are computed independently and the test
suite checks that they agree.

Nothing here fits an intercept.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from itertools import combinations
from math import comb

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.linalg import solve_triangular

from .errors import DimensionMismatch, InfeasibleSubset, RankDeficient, SubsetTooLarge
from .linalg import RANK_TOL, DesignMatrix, least_squares

MAX_SUBSET_P = 25
# Above this many tree nodes the batched best-subset route falls back to per-row enumeration.
_MAX_TREE_NODES = 1 << 17
# Cap on B * nodes elements held in memory at once by the subset tree.
_TREE_CHUNK_ELEMS = 1 << 22


@dataclass(frozen=True)
class FitResult:
    fitted: NDArray[np.float64]
    support: tuple
    rss: float


def _as_vector(y: ArrayLike, n: int | None = None) -> NDArray[np.float64]:
    y = np.asarray(y, dtype=float)
    if y.ndim != 1:
        raise DimensionMismatch(f"expected a vector, got shape {y.shape}")
    if n is not None and y.shape[0] != n:
        raise DimensionMismatch(f"expected length {n}, got {y.shape[0]}")
    return y


def _result(y, fitted, support) -> FitResult:
    r = y - fitted
    return FitResult(fitted=fitted, support=tuple(int(i) for i in support), rss=float(r @ r))


def _check_k(k: int, p: int):
    if not (0 <= k <= p):
        raise ValueError(f"k={k} outside 0..{p}")


# --------------------------------------------------------------------------
# Reference routes: one response vector at a time.


def fit_ols(design: DesignMatrix, y: ArrayLike) -> FitResult:
    y = _as_vector(y, design.n)
    _, fitted, _ = least_squares(design, y)
    return _result(y, fitted, range(design.p))


def fit_best_subset(design: DesignMatrix, k: int, y: ArrayLike) -> FitResult:
    """Exhaustive best-subset regression of size ``k``.

    Subsets are visited in lexicographic order and only a strictly smaller
    RSS replaces the incumbent, so ties go to the lexicographically smallest
    index set. Rank-deficient subsets are skipped.
    """
    if design.p > MAX_SUBSET_P:
        raise SubsetTooLarge(f"p={design.p} exceeds exhaustive limit {MAX_SUBSET_P}")
    _check_k(k, design.p)
    y = _as_vector(y, design.n)
    if k == 0:
        return _result(y, np.zeros_like(y), ())
    X = design.entries
    best_rss, best_fit, best_S = np.inf, None, None
    for S in combinations(range(design.p), k):
        try:
            _, fitted, rss = least_squares(DesignMatrix(X[:, S]), y)
        except RankDeficient:
            continue
        if rss < best_rss:
            best_rss, best_fit, best_S = rss, fitted, S
    if best_fit is None:
        raise InfeasibleSubset(f"every size-{k} subset of the design is rank-deficient")
    return _result(y, best_fit, best_S)


def fit_forward_stepwise(design: DesignMatrix, k: int, y: ArrayLike) -> FitResult:
    """Greedy forward selection from the empty model, refitting OLS per candidate."""
    _check_k(k, design.p)
    y = _as_vector(y, design.n)
    X = design.entries
    support: list[int] = []
    fitted = np.zeros_like(y)
    for _ in range(k):
        best_rss, best = np.inf, None
        for j in range(design.p):
            if j in support:
                continue
            try:
                _, f, rss = least_squares(DesignMatrix(X[:, support + [j]]), y)
            except RankDeficient:
                continue
            if rss < best_rss:
                best_rss, best = rss, (j, f)
        if best is None:
            raise RankDeficient(len(support), len(support) + 1,
                                f"no remaining column can extend support {support} at full rank")
        support.append(best[0])
        fitted = best[1]
    return _result(y, fitted, support)


def fit_axis_subset(k: int, y: ArrayLike) -> FitResult:
    """Keep the ``k`` largest-magnitude coordinates of ``y`` and zero the rest."""
    y = _as_vector(y)
    _check_k(k, y.shape[0])
    keep = np.sort(np.argsort(-np.abs(y), kind="stable")[:k])
    fitted = np.zeros_like(y)
    fitted[keep] = y[keep]
    return _result(y, fitted, keep)


def fit_point_set(points: ArrayLike, y: ArrayLike) -> FitResult:
    P = np.atleast_2d(np.asarray(points, dtype=float))
    y = _as_vector(y, P.shape[1])
    d = ((P - y) ** 2).sum(axis=1)
    i = int(np.argmin(d))
    return _result(y, P[i].copy(), (i,))


def fit_ridge(design: DesignMatrix, lam: float, y: ArrayLike) -> FitResult:
    if lam < 0:
        raise ValueError("ridge penalty must be non-negative")
    y = _as_vector(y, design.n)
    if lam == 0:
        return fit_ols(design, y)
    R = _ridge_r(design.entries, lam)
    beta = solve_triangular(R, solve_triangular(R, design.entries.T @ y, trans="T"))
    return _result(y, design.entries @ beta, range(design.p))


def _ridge_r(X: NDArray, lam: float) -> NDArray:
    # R factor of the augmented system [X; sqrt(lam) I], so R^T R = X^T X + lam I.
    aug = np.vstack([X, np.sqrt(lam) * np.eye(X.shape[1])])
    return np.linalg.qr(aug, mode="r")


# --------------------------------------------------------------------------
# Batched machinery.


class _SubsetTree:
    """Gram-Schmidt directions for every column subset up to size ``kmax``.

    Subset S (sorted) hangs off parent S[:-1]; its direction is the unit
    residual of column S[-1] against span(parent). Squared projections of a
    response onto span(S) are then cumulative sums of squared coefficients
    along the chain, so all subsets are scored with one matrix product.
    """

    def __init__(self, X: NDArray, kmax: int, tol: float = RANK_TOL):
        n, p = X.shape
        self.kmax = kmax
        self.levels: list[NDArray] = []      # node ids per level, lexicographic order
        self.parent: list[NDArray] = []      # parent node id per level node
        self.chains: list[NDArray] = []      # (m, level) ancestor ids incl. self
        self.subsets: list[list[tuple]] = []
        dirs: list[NDArray] = []
        ok: list[NDArray] = []
        col_norm = np.linalg.norm(X, axis=0)
        index: dict[tuple, int] = {(): -1}
        next_id = 0
        for level in range(1, kmax + 1):
            subs = list(combinations(range(p), level))
            m = len(subs)
            ids = np.arange(next_id, next_id + m)
            par = np.array([index[S[:-1]] for S in subs], dtype=np.int64)
            last = np.array([S[-1] for S in subs], dtype=np.int64)
            if level == 1:
                chains = ids[:, None]
            else:
                prev_chain = self.chains[-1]
                prev_first = self.levels[-1][0]
                chains = np.hstack([prev_chain[par - prev_first], ids[:, None]])
            x = X[:, last].T.copy()
            if level > 1:
                Q = np.concatenate(dirs)
                A = Q[chains[:, :-1]]                      # (m, level-1, n)
                for _ in range(2):                         # twice is enough
                    c = np.einsum("mln,mn->ml", A, x)
                    x -= np.einsum("mln,ml->mn", A, c)
            nrm = np.linalg.norm(x, axis=1)
            good = nrm > tol * np.maximum(col_norm[last], np.finfo(float).tiny)
            if level > 1:
                good &= np.concatenate(ok)[par]
            x[good] /= nrm[good, None]
            x[~good] = 0.0
            dirs.append(x)
            ok.append(good)
            for j, S in enumerate(subs):
                index[S] = next_id + j
            self.levels.append(ids)
            self.parent.append(par)
            self.chains.append(chains)
            self.subsets.append(subs)
            next_id += m
        self.mask = np.array([sum(1 << j for j in S) for subs in self.subsets for S in subs],
                             dtype=np.int64)
        self.Q = np.concatenate(dirs) if dirs else np.zeros((0, n))
        self.ok = np.concatenate(ok) if ok else np.zeros(0, bool)
        self.n = n

    @staticmethod
    def node_count(p: int, kmax: int) -> int:
        return sum(comb(p, j) for j in range(1, kmax + 1))

    def fit_many(self, Y: NDArray, ks) -> NDArray:
        """Best-subset fitted values for each k in ``ks``; shape (len(ks), B, n)."""
        B = Y.shape[0]
        out = np.zeros((len(ks), B, self.n))
        step = max(1, _TREE_CHUNK_ELEMS // max(1, self.Q.shape[0]))
        for lo in range(0, B, step):
            out[:, lo:lo + step] = self._fit_chunk(Y[lo:lo + step], ks)
        return out

    def regions(self, Y: NDArray, k: int) -> NDArray:
        """Bitmask of the winning size-k subset for each row."""
        if k == 0:
            return np.zeros(Y.shape[0], dtype=np.int64)
        _, score = self._scores(Y)
        return self.mask[self.levels[k - 1][self._best(score, k)]]

    def _scores(self, Y):
        C = Y @ self.Q.T                                   # (B, nodes)
        score = C * C
        score[:, ~self.ok] = -np.inf
        for level in range(2, self.kmax + 1):
            ids = self.levels[level - 1]
            score[:, ids] += score[:, self.parent[level - 1]]
        return C, score

    def _best(self, score, k):
        lvl = score[:, self.levels[k - 1]]
        best = np.argmax(lvl, axis=1)
        if np.any(np.isneginf(lvl[np.arange(len(best)), best])):
            raise InfeasibleSubset(f"every size-{k} subset of the design is rank-deficient")
        return best

    def _fit_chunk(self, Y, ks):
        B = Y.shape[0]
        C, score = self._scores(Y)
        out = np.zeros((len(ks), B, self.n))
        rows = np.arange(B)
        for i, k in enumerate(ks):
            if k == 0:
                continue
            chain = self.chains[k - 1][self._best(score, k)]    # (B, k)
            out[i] = np.einsum("bkn,bk->bn", self.Q[chain], C[rows[:, None], chain])
        return out


def _forward_path(X: NDArray, Y: NDArray, kmax: int, tol: float = RANK_TOL):
    """Vectorized forward stepwise over rows of ``Y``.

    Returns fitted values after each step, shape (kmax + 1, B, n), and the
    selected columns, shape (B, kmax).
    """
    B, n = Y.shape
    p = X.shape[1]
    Xt = np.broadcast_to(X.T, (B, p, n)).copy()            # columns orthogonalized per row
    col_norm = np.linalg.norm(X, axis=0)
    r = Y.copy()
    fitted = np.zeros((kmax + 1, B, n))
    chosen = np.zeros((B, kmax), dtype=np.int64)
    active = np.zeros((B, p), dtype=bool)
    rows = np.arange(B)
    for step in range(kmax):
        nrm2 = np.einsum("bpn,bpn->bp", Xt, Xt)
        feasible = ~active & (np.sqrt(nrm2) > tol * col_norm)
        with np.errstate(divide="ignore", invalid="ignore"):
            gain = np.einsum("bpn,bn->bp", Xt, r) ** 2 / nrm2
        gain = np.where(feasible, gain, -np.inf)
        j = np.argmax(gain, axis=1)
        if not feasible[rows, j].all():
            raise RankDeficient(step, step + 1, "no remaining column can extend the forward path at full rank")
        q = Xt[rows, j] / np.sqrt(nrm2[rows, j])[:, None]
        coef = np.einsum("bn,bn->b", q, r)
        r = r - coef[:, None] * q
        fitted[step + 1] = Y - r
        Xt -= np.einsum("bpn,bn->bp", Xt, q)[:, :, None] * q[:, None, :]
        active[rows, j] = True
        chosen[:, step] = j
    return fitted, chosen


# --------------------------------------------------------------------------
# Fitter objects.


class Fitter:
    """Deterministic map y -> y_hat."""

    linear = False
    kind = "fitter"

    @property
    def n(self) -> int | None:
        """Response dimension, or None if any dimension is accepted."""
        return None

    def fit(self, y: ArrayLike) -> FitResult:
        raise NotImplementedError

    def fit_many(self, Y: NDArray) -> NDArray:
        Y = np.asarray(Y, dtype=float)
        return np.stack([self.fit(row).fitted for row in Y]) if len(Y) else np.zeros_like(Y)

    def regions_many(self, Y: NDArray) -> NDArray | None:
        """Integer label of the smooth piece of the fit containing each row.

        Within one label the map y -> y_hat is smooth (here: affine), so
        quadrature can split panels where labels change. None if unknown.
        """
        return None

    def __call__(self, y):
        return self.fit(y).fitted


def _support_mask(support) -> int:
    return sum(1 << int(j) for j in support)


class _DesignFitter(Fitter):
    design: DesignMatrix

    @property
    def n(self):
        return self.design.n


@dataclass(frozen=True, eq=False)
class OLS(_DesignFitter):
    design: DesignMatrix
    linear = True
    kind = "ols"

    def __post_init__(self):
        if not self.design.full_rank:
            raise RankDeficient(self.design.rank, self.design.p)

    @cached_property
    def _basis(self):
        Q, _ = np.linalg.qr(self.design.entries, mode="reduced")
        return Q

    def hat_matrix(self) -> NDArray:
        Q = self._basis
        return Q @ Q.T

    def fit(self, y):
        return fit_ols(self.design, y)

    def fit_many(self, Y):
        Q = self._basis
        return (np.asarray(Y, dtype=float) @ Q) @ Q.T

    def regions_many(self, Y):
        return np.zeros(len(Y), dtype=np.int64)


@dataclass(frozen=True, eq=False)
class Ridge(_DesignFitter):
    design: DesignMatrix
    lam: float
    linear = True
    kind = "ridge"

    def __post_init__(self):
        if not (self.lam >= 0):
            raise ValueError("ridge penalty must be non-negative")
        if self.lam == 0 and not self.design.full_rank:
            raise RankDeficient(self.design.rank, self.design.p)

    @cached_property
    def _factor(self):
        X = self.design.entries
        if self.lam == 0:
            Q, _ = np.linalg.qr(X, mode="reduced")
            return Q
        # H = X (R^T R)^-1 X^T = Z Z^T with Z = X R^-1
        R = _ridge_r(X, self.lam)
        return solve_triangular(R, X.T, trans="T").T

    def hat_matrix(self):
        Z = self._factor
        return Z @ Z.T

    def fit(self, y):
        return fit_ridge(self.design, self.lam, y)

    def fit_many(self, Y):
        Z = self._factor
        return (np.asarray(Y, dtype=float) @ Z) @ Z.T

    def regions_many(self, Y):
        return np.zeros(len(Y), dtype=np.int64)


@dataclass(frozen=True, eq=False)
class BestSubset(_DesignFitter):
    design: DesignMatrix
    k: int
    kind = "bsr"

    def __post_init__(self):
        if self.design.p > MAX_SUBSET_P:
            raise SubsetTooLarge(f"p={self.design.p} exceeds exhaustive limit {MAX_SUBSET_P}")
        _check_k(self.k, self.design.p)

    def fit(self, y):
        return fit_best_subset(self.design, self.k, y)

    @cached_property
    def _path(self):
        return BestSubsetPath(self.design, (self.k,))

    def fit_many(self, Y):
        return self._path.fit_many(Y)[0]

    def regions_many(self, Y):
        Y = np.asarray(Y, dtype=float)
        tree = self._path._tree
        if tree is None:
            return np.array([_support_mask(self.fit(y).support) for y in Y], dtype=np.int64)
        return tree.regions(Y, self.k)


@dataclass(frozen=True, eq=False)
class ForwardStepwise(_DesignFitter):
    design: DesignMatrix
    k: int
    kind = "fsr"

    def __post_init__(self):
        _check_k(self.k, self.design.p)

    def fit(self, y):
        return fit_forward_stepwise(self.design, self.k, y)

    def fit_many(self, Y):
        return ForwardStepwisePath(self.design, (self.k,)).fit_many(Y)[0]

    def regions_many(self, Y):
        _, chosen = _forward_path(self.design.entries, np.asarray(Y, dtype=float), self.k)
        return (np.int64(1) << chosen).sum(axis=1)


@dataclass(frozen=True, eq=False)
class AxisSubset(Fitter):
    """Best subset of size k on the identity design (any response dimension >= k)."""

    k: int
    kind = "axis"

    def __post_init__(self):
        if self.k < 0:
            raise ValueError("k must be non-negative")

    def fit(self, y):
        return fit_axis_subset(self.k, y)

    def fit_many(self, Y):
        Y = np.asarray(Y, dtype=float)
        _check_k(self.k, Y.shape[1])
        out = np.zeros_like(Y)
        if self.k == 0:
            return out
        rows = np.arange(Y.shape[0])[:, None]
        if self.k == 1:
            keep = np.argmax(np.abs(Y), axis=1)[:, None]
        else:
            keep = np.argsort(-np.abs(Y), axis=1, kind="stable")[:, : self.k]
        out[rows, keep] = Y[rows, keep]
        return out

    def regions_many(self, Y):
        Y = np.asarray(Y, dtype=float)
        if self.k == 0:
            return np.zeros(Y.shape[0], dtype=np.int64)
        keep = np.argsort(-np.abs(Y), axis=1, kind="stable")[:, : self.k]
        return (np.int64(1) << keep).sum(axis=1)


@dataclass(frozen=True, eq=False)
class PointSet(Fitter):
    """Projection onto a finite set of points; ties go to the earliest point."""

    points: NDArray[np.float64]
    kind = "points"

    def __post_init__(self):
        P = np.array(self.points, dtype=float, copy=True)
        if P.ndim == 1:
            P = P[:, None]
        if P.ndim != 2 or P.shape[0] == 0:
            raise ValueError("point set must be a non-empty list of vectors")
        if not np.all(np.isfinite(P)):
            raise ValueError("point set has non-finite coordinates")
        if len(np.unique(P, axis=0)) != len(P):
            raise ValueError("point set contains duplicate points")
        P.setflags(write=False)
        object.__setattr__(self, "points", P)

    @property
    def n(self):
        return self.points.shape[1]

    def fit(self, y):
        return fit_point_set(self.points, y)

    def fit_many(self, Y):
        Y = np.asarray(Y, dtype=float)
        P = self.points
        return P[self.regions_many(Y)]

    def regions_many(self, Y):
        Y = np.asarray(Y, dtype=float)
        d = ((Y[:, None, :] - self.points[None, :, :]) ** 2).sum(axis=2)
        return np.argmin(d, axis=1)


@dataclass(frozen=True, eq=False)
class Constant(Fitter):
    """Ignores the data; zero degrees of freedom."""

    value: NDArray[np.float64]
    linear = True
    kind = "constant"

    def __post_init__(self):
        object.__setattr__(self, "value", np.atleast_1d(np.asarray(self.value, dtype=float)).copy())

    @property
    def n(self):
        return self.value.shape[0]

    def hat_matrix(self):
        return np.zeros((self.n, self.n))

    def fit(self, y):
        y = _as_vector(y, self.n)
        return _result(y, self.value.copy(), ())

    def fit_many(self, Y):
        return np.broadcast_to(self.value, np.shape(Y)).copy()

    def regions_many(self, Y):
        return np.zeros(len(Y), dtype=np.int64)


# Path fitters return a stack of fitted blocks, one per tuning value, from a
# single pass over the data.


@dataclass(frozen=True, eq=False)
class BestSubsetPath(_DesignFitter):
    design: DesignMatrix
    ks: tuple
    kind = "bsr-path"

    def __post_init__(self):
        if self.design.p > MAX_SUBSET_P:
            raise SubsetTooLarge(f"p={self.design.p} exceeds exhaustive limit {MAX_SUBSET_P}")
        object.__setattr__(self, "ks", tuple(int(k) for k in self.ks))
        for k in self.ks:
            _check_k(k, self.design.p)

    @cached_property
    def _tree(self):
        kmax = max(self.ks, default=0)
        if _SubsetTree.node_count(self.design.p, kmax) > _MAX_TREE_NODES:
            return None
        return _SubsetTree(self.design.entries, kmax)

    def fit_many(self, Y):
        Y = np.asarray(Y, dtype=float)
        tree = self._tree
        if tree is not None:
            return tree.fit_many(Y, self.ks)
        return np.stack([
            np.stack([fit_best_subset(self.design, k, y).fitted for y in Y]) for k in self.ks
        ])


@dataclass(frozen=True, eq=False)
class ForwardStepwisePath(_DesignFitter):
    design: DesignMatrix
    ks: tuple
    kind = "fsr-path"

    def __post_init__(self):
        object.__setattr__(self, "ks", tuple(int(k) for k in self.ks))
        for k in self.ks:
            _check_k(k, self.design.p)

    def fit_many(self, Y):
        Y = np.asarray(Y, dtype=float)
        fitted, _ = _forward_path(self.design.entries, Y, max(self.ks, default=0))
        return fitted[list(self.ks)]


def is_path(fitter: Fitter) -> bool:
    return isinstance(fitter, (BestSubsetPath, ForwardStepwisePath))
