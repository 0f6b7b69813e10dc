"""Exact and deterministic DF values used to check the Monte Carlo engine.

Three routes, from most to least trusted: closed forms, numerical
integration of E[eps . y_hat(mu + sigma eps)] / sigma, and (in the tests)
large Monte Carlo runs.

The fitters of interest are piecewise constant or piecewise linear in y,
so the integrand jumps across decision boundaries. A plain tensor
Gauss-Hermite rule converges only like 1/N there, so the default route is
iterated adaptive Gauss-Legendre on a truncated cube, which bisects panels
until each jump is pinned to a sliver. Tensor Gauss-Hermite remains
available as ``method="hermite"`` and is exact for polynomial fitters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray
from scipy.special import roots_hermitenorm

from .engine import DataModel
from .errors import DimensionTooLarge, NotLinear
from .fitters import OLS, AxisSubset, Constant, Fitter, Ridge

MAX_QUAD_DIM = 3
TRUNCATE = 10.0          # standard-normal mass outside [-10, 10] is ~1.5e-23
CONVERGED_RTOL = 1e-6
_GL_ORDER = 8
_MAX_DEPTH = 45
# Each nested level integrates this much more tightly than the level around it,
# so inner rounding does not masquerade as outer discretization error.
_INNER_TIGHTEN = 1e-3
_PANEL_FLOOR = 1e-3
_OUTER_MIN_WIDTH = 1e-6
_MAX_ACTIVE = 4096


@dataclass(frozen=True)
class QuadratureRule:
    """Gauss-Hermite rule for E[f(Z)], Z ~ N(0, 1); weights sum to one."""

    nodes: NDArray[np.float64]
    weights: NDArray[np.float64]
    kind: str = "gauss-hermite"

    def expect(self, f) -> float:
        return float(np.dot(self.weights, f(self.nodes)))


def gauss_hermite_rule(n_nodes: int) -> QuadratureRule:
    if n_nodes < 1:
        raise ValueError("need at least one node")
    x, w = roots_hermitenorm(n_nodes)
    return QuadratureRule(x, w / w.sum())


@dataclass(frozen=True)
class QuadratureResult:
    """Value at 2N nodes per dimension and at N, for the caller's convergence check."""

    value: float
    coarse: float
    nodes_per_dim: int
    method: str

    @property
    def discrepancy(self) -> float:
        return abs(self.value - self.coarse)

    @property
    def converged(self) -> bool:
        return self.discrepancy <= CONVERGED_RTOL * max(1.0, abs(self.value))


# --------------------------------------------------------------------------
# Closed forms.


def df_trace_linear(fitter: Fitter) -> float:
    """tr(H) for a linear fitter, from the singular values of the design."""
    if isinstance(fitter, OLS):
        return float(fitter.design.rank)
    if isinstance(fitter, Ridge):
        d = np.linalg.svd(fitter.design.entries, compute_uv=False)
        if fitter.lam == 0:
            return float(fitter.design.rank)
        return float(np.sum(d ** 2 / (d ** 2 + fitter.lam)))
    if isinstance(fitter, Constant):
        return 0.0
    raise NotLinear(f"{type(fitter).__name__} has no hat matrix")


def df_two_point_closed_form(sigma: float, half_gap: float = 1.0) -> float:
    """DF of projecting y = sigma*eps onto {-a, +a} (Gaussian noise, mu = 0): a sqrt(2/pi) / sigma."""
    return half_gap * math.sqrt(2.0 / math.pi) / sigma


def df_axis_origin_closed_form() -> float:
    """DF of 1-best-subset on the 2x2 identity design at mu = 0: E[max(z1^2, z2^2)] = 1 + 2/pi."""
    return 1.0 + 2.0 / math.pi


# --------------------------------------------------------------------------
# Numerical integration against the standard normal density.


def _phi(x):
    return np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)


def _adaptive_batch(f, owners: int, lo: float, hi: float, panels: int, tol: float) -> NDArray:
    """Integrate f over x in [lo, hi] separately for every owner.

    ``f(owner_ids, x)`` returns either values or ``(values, labels)``. Labels
    mark the smooth piece the point belongs to: a panel whose nodes carry
    more than one label is cut at the label change, located by bisection to
    machine precision, so jumps never sit inside a panel. Label-uniform
    panels are compared against their two halves and split until the
    difference is below ``tol`` scaled by relative panel width.
    """
    gx, gw = np.polynomial.legendre.leggauss(_GL_ORDER)
    span = hi - lo

    def evaluate(owner, x):
        out = f(owner, x)
        return out if isinstance(out, tuple) else (out, None)

    def rule(owner, a, b):
        half = 0.5 * (b - a)
        x = 0.5 * (a + b)[:, None] + half[:, None] * gx[None, :]
        vals, labels = evaluate(np.repeat(owner, _GL_ORDER), x.ravel())
        est = half * (vals.reshape(x.shape) @ gw)
        return est, x, (None if labels is None else labels.reshape(x.shape))

    def boundary(owner, xl, xr, label_left):
        # Bisect between two nodes with different labels.
        for _ in range(64):
            m = 0.5 * (xl + xr)
            settled = (m <= xl) | (m >= xr)
            if settled.all():
                break
            _, lab = evaluate(owner, m)
            left = (lab == label_left) & ~settled
            xl = np.where(left, m, xl)
            xr = np.where(~left & ~settled, m, xr)
        return 0.5 * (xl + xr)

    edges = np.linspace(lo, hi, panels + 1)
    owner = np.repeat(np.arange(owners), panels)
    a = np.tile(edges[:-1], owners)
    b = np.tile(edges[1:], owners)
    whole, _, _ = rule(owner, a, b)
    total = np.zeros(owners)
    # Absolute per-panel floor: an outer integrand built from inner integrals
    # carries erratic errors of this order (slivers between nodes), and
    # chasing them would split panels without bound.
    floor = tol * _PANEL_FLOOR
    for depth in range(_MAX_DEPTH):
        if owner.size == 0:
            break
        k = owner.size
        m = 0.5 * (a + b)
        both, x, labels = rule(np.concatenate([owner, owner]), np.concatenate([a, m]),
                               np.concatenate([m, b]))
        left, right = both[:k], both[k:]
        width = b - a
        err = np.abs(whole - (left + right))
        done = (err <= np.maximum(tol * width / span, floor)) | (depth == _MAX_DEPTH - 1)
        cut = np.zeros(k, dtype=bool)
        if labels is not None:
            _, ends = evaluate(np.concatenate([owner, owner]), np.concatenate([a, b]))
            lab = np.column_stack([ends[:k], labels[:k], labels[k:], ends[k:]])   # ascending x
            xs = np.column_stack([a, x[:k], x[k:], b])
            mixed = (lab != lab[:, :1]).any(axis=1)
            cut = mixed & (depth < _MAX_DEPTH - 1)
            done &= ~mixed
            if cut.any():
                idx = np.flatnonzero(cut)
                j = np.argmax(lab[idx] != lab[idx, :1], axis=1)
                rows = np.arange(idx.size)
                t = boundary(owner[idx], xs[idx][rows, j - 1], xs[idx][rows, j], lab[idx, 0])
                # a boundary sitting exactly on a panel edge needs no cut
                on_edge = (t <= a[idx]) | (t >= b[idx])
                cut[idx[on_edge]] = False
                done[idx[on_edge]] = err[idx[on_edge]] <= np.maximum(tol * width[idx[on_edge]] / span, floor)
                t_cut, idx = t[~on_edge], idx[~on_edge]
        # Outer levels integrate inner integrals whose error is erratic on
        # tiny scales; refining below a fixed relative width only chases it.
        min_width = 1e-12 if labels is not None else _OUTER_MIN_WIDTH
        done |= (width <= min_width * span) & ~cut
        if depth == _MAX_DEPTH - 1 or owner.size > _MAX_ACTIVE * owners:
            done[:], cut[:] = True, False
        np.add.at(total, owner[done], (left + right)[done])
        keep = ~done & ~cut
        na, nb = [a[keep], m[keep]], [m[keep], b[keep]]
        nwhole = [left[keep], right[keep]]
        nowner = [owner[keep], owner[keep]]
        if cut.any():
            pa, pb = np.concatenate([a[idx], t_cut]), np.concatenate([t_cut, b[idx]])
            po = np.concatenate([owner[idx], owner[idx]])
            pw, _, _ = rule(po, pa, pb)
            na.append(pa)
            nb.append(pb)
            nwhole.append(pw)
            nowner.append(po)
        a, b = np.concatenate(na), np.concatenate(nb)
        whole, owner = np.concatenate(nwhole), np.concatenate(nowner)
    return total


def gaussian_expectation(g, n: int, nodes_per_dim: int = 64, method: str = "adaptive",
                         tol: float = 1e-10) -> float:
    """E[g(eps)] for eps ~ N(0, I_n).

    ``g`` maps an (m, n) array to (m,) values, or to ``(values, labels)``
    where integer labels identify smooth pieces of ``g`` (see
    :func:`_adaptive_batch`). Labels are used only by the adaptive method.
    """
    if n > MAX_QUAD_DIM:
        raise DimensionTooLarge(f"quadrature supports n <= {MAX_QUAD_DIM}, got {n}")
    if method == "hermite":
        rule = gauss_hermite_rule(nodes_per_dim)
        grids = np.meshgrid(*([rule.nodes] * n), indexing="ij")
        pts = np.stack([gr.ravel() for gr in grids], axis=1)
        w = np.ones(1)
        for _ in range(n):
            w = np.multiply.outer(w, rule.weights).ravel()
        vals = g(pts)
        vals = vals[0] if isinstance(vals, tuple) else vals
        return float(math.fsum(w * vals))
    if method != "adaptive":
        raise ValueError(f"unknown quadrature method {method!r}")
    panels = max(1, nodes_per_dim // _GL_ORDER)

    def level(prefix: NDArray, d: int, tol: float) -> NDArray:
        # prefix: (m, n - d) fixed leading coordinates; integrate the remaining d.
        def f(owner, x):
            pts = np.column_stack([prefix[owner], x])
            dens = _phi(x)
            if d > 1:
                return level(pts, d - 1, tol * _INNER_TIGHTEN) * dens
            out = g(pts)
            if isinstance(out, tuple):
                return out[0] * dens, out[1]
            return out * dens
        return _adaptive_batch(f, prefix.shape[0], -TRUNCATE, TRUNCATE, panels, tol)

    return float(level(np.zeros((1, 0)), n, tol)[0])


def df_quadrature(model: DataModel, fitter: Fitter, nodes_per_dim: int = 64,
                  method: str = "auto") -> QuadratureResult:
    """Deterministic DF = E[eps . y_hat(mu + sigma eps)] / sigma under Gaussian noise.

    Evaluated at ``nodes_per_dim`` and twice that; ``QuadratureResult.converged``
    reports whether the pair agrees to 1e-6 relative. ``method="auto"`` uses the
    adaptive route for n <= 2 and tensor Gauss-Hermite for n = 3.
    """
    if model.noise != "gaussian":
        raise ValueError("quadrature oracle assumes Gaussian noise")
    n = model.n
    if n > MAX_QUAD_DIM:
        raise DimensionTooLarge(f"quadrature supports n <= {MAX_QUAD_DIM}, got {n}")
    if fitter.n is not None and fitter.n != n:
        raise ValueError(f"fitter expects n={fitter.n}, data model has n={n}")
    if method == "auto":
        method = "adaptive" if n <= 2 else "hermite"
    mu, sigma = model.mu, model.sigma
    scale = 1.0 + float(np.max(np.abs(mu))) + sigma

    def g(eps):
        Y = mu + sigma * eps
        vals = np.einsum("mn,mn->m", eps, fitter.fit_many(Y))
        labels = fitter.regions_many(Y)
        return vals if labels is None else (vals, labels)

    def run(N):
        return gaussian_expectation(g, n, N, method, tol=1e-10 * scale) / sigma

    return QuadratureResult(run(2 * nodes_per_dim), run(nodes_per_dim), nodes_per_dim, method)


def df_heatmap_reference(mu, nodes_per_dim: int = 64) -> float:
    """DF of 1-best-subset on the 2x2 identity design at mean ``mu`` (sigma = 1)."""
    mu = np.asarray(mu, dtype=float)
    if mu.shape != (2,):
        raise ValueError("heatmap reference is defined on R^2")
    return df_quadrature(DataModel(mu, 1.0), AxisSubset(1), nodes_per_dim).value


def expected_max_two_normals_quadrature() -> float:
    return gaussian_expectation(lambda e: (e.max(axis=1), e.argmax(axis=1)), 2, tol=1e-12)


def df_scaling_limit() -> float:
    """Limit of DF / A for the diagonal-mean example: E[max(z1, z2)] = 1 / sqrt(pi)."""
    closed = 1.0 / math.sqrt(math.pi)
    quad = expected_max_two_normals_quadrature()
    if abs(closed - quad) > 1e-10:
        raise ArithmeticError(f"closed form {closed!r} disagrees with quadrature {quad!r}")
    return closed


def df_axis_line_integral(mu) -> float:
    """DF of AxisSubset(1) on R^2 (sigma = 1) reduced to two 1-D integrals.

    Coordinate 1 is kept when |y2| < |y1|, an event with probability
    Phi(|y1| - mu2) - Phi(-|y1| - mu2) given y1, so
    E[eps1 y1 1{kept}] is a single integral over eps1 with one kink.
    Independent of :func:`df_quadrature`; used to cross-check it.
    """
    from scipy.integrate import quad
    from scipy.special import ndtr

    m = np.asarray(mu, dtype=float)
    if m.shape != (2,):
        raise ValueError("mu must have two coordinates")

    def part(a, b):
        def f(e):
            y = abs(a + e)
            return e * (a + e) * (ndtr(y - b) - ndtr(-y - b)) * _phi(e)
        val, _ = quad(f, -TRUNCATE, TRUNCATE, points=[-a] if abs(a) < TRUNCATE else None,
                      epsabs=1e-14, epsrel=1e-13, limit=500)
        return val

    return part(m[0], m[1]) + part(m[1], m[0])
