"""Parameter sweeps that reproduce the DF experiments.

Each driver returns a list of :class:`ExperimentRow` in sweep order. Rows
carry the Monte Carlo estimate, an oracle value where one is available,
and the distance between the two in standard errors.

Seeding: unless a driver uses common random numbers, point ``i`` of a sweep
with base seed ``s`` is simulated with the seed derived from
``SeedSequence([s, i])``.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .engine import DataModel, DfEstimate, Estimator, estimate_df, estimate_df_both, resolve_workers
from .fitters import AxisSubset, BestSubsetPath, Fitter, ForwardStepwisePath, PointSet
from .linalg import DesignMatrix
from . import oracles

HEATMAP_RANGE = (-5.0, 5.0)
HEATMAP_STEP = 0.25
HEATMAP_REPLICATES = 20_000
CURVE_REPLICATES = 100_000
SEARCH_REPLICATES = 4_000
MAX_DESIGN_SEEDS = 20
SPOT_CHECK_FRACTION = 0.05
MEAN_SD = 7.0


@dataclass(frozen=True)
class ExperimentGrid:
    """A sweep: the points, replicates per point, base seed and estimator."""

    kind: str
    sweep: tuple
    replicates_per_point: int
    base_seed: int
    estimator: str = "cov"
    common_random_numbers: bool = False

    def __post_init__(self):
        if self.kind not in ("heatmap", "subset-curve", "scaling", "divergence", "custom"):
            raise ValueError(f"unknown experiment kind {self.kind!r}")
        if len(self.sweep) == 0:
            raise ValueError("sweep is empty")
        if self.replicates_per_point < 2:
            raise ValueError("need at least 2 replicates per point")
        if self.estimator not in ("cov", "opt", "both"):
            raise ValueError(f"unknown estimator {self.estimator!r}")
        object.__setattr__(self, "sweep", tuple(self.sweep))

    def seed_for(self, index: int) -> int:
        if self.common_random_numbers:
            return self.base_seed
        return point_seed(self.base_seed, index)


def point_seed(base_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([base_seed, index]).generate_state(1, np.uint64)[0])


@dataclass
class ExperimentRow:
    """One sweep point.

    ``df`` is a :class:`DfEstimate`, or a (covariance, optimism) pair when
    both estimators were run. ``extras`` holds driver-specific columns.
    """

    point: dict
    df: DfEstimate | tuple
    oracle: float | None = None
    wallclock: float = 0.0
    extras: dict = field(default_factory=dict)

    @property
    def primary(self) -> DfEstimate:
        return self.df[0] if isinstance(self.df, tuple) else self.df

    @property
    def z(self) -> float | None:
        """|df - oracle| / se, or None without an oracle."""
        if self.oracle is None:
            return None
        return self.primary.z(self.oracle)


def _estimate(model, fitter, R, seed, estimator, workers):
    if estimator == "both":
        return estimate_df_both(model, fitter, R, seed, workers)
    return estimate_df(model, fitter, R, seed, Estimator(estimator).value, workers)


def _agreement(pair) -> float:
    c, o = pair
    s = math.hypot(c.std_error, o.std_error)
    return abs(c.value - o.value) / s if s > 0 else 0.0


def _row(point, est, oracle, wallclock, **extras):
    row = ExperimentRow(point, est, oracle, wallclock, dict(extras))
    if isinstance(est, tuple):
        row.extras["agreement_z"] = _agreement(est)
    return row


# --------------------------------------------------------------------------
# Heatmap.


def heatmap_axis(lo: float, hi: float, step: float) -> NDArray:
    if not step > 0:
        raise ValueError("grid step must be positive")
    if not hi >= lo:
        raise ValueError("grid range must satisfy lo <= hi")
    count = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return lo + step * np.arange(count)


def _canonical(mu) -> tuple:
    # DF is invariant under sign flips and the coordinate swap.
    a, b = abs(float(mu[0])), abs(float(mu[1]))
    return (max(a, b), min(a, b))


def _heatmap_point(args):
    mu, R, seed, estimator, with_oracle = args
    t0 = time.perf_counter()
    est = _estimate(DataModel(mu, 1.0), AxisSubset(1), R, seed, estimator, 1)
    oracle = oracles.df_heatmap_reference(mu) if with_oracle else None
    return est, oracle, time.perf_counter() - t0


def _map(func, items, workers):
    workers = min(resolve_workers(workers), max(1, len(items)))
    if workers == 1:
        return [func(x) for x in items]
    with ProcessPoolExecutor(workers) as pool:
        return list(pool.map(func, items))


def run_heatmap(grid_range=HEATMAP_RANGE, step: float = HEATMAP_STEP,
                R: int = HEATMAP_REPLICATES, seed: int = 0, estimator: str = "cov",
                workers: int = 1, points=None, oracle: bool = True,
                spot_fraction: float = SPOT_CHECK_FRACTION):
    """DF of 1-best-subset on the 2x2 identity design over a grid of means.

    All pixels share one noise stream (common random numbers). Only one
    representative per symmetry class is simulated and its value is copied
    to the mirror images; a random ``spot_fraction`` of the mirrored pixels
    is simulated directly and the difference is stored as
    ``symmetry_residual``.

    Parameters
    ----------
    points : sequence of (mu1, mu2), optional
        Restrict the run to these means instead of the full grid.
    oracle : bool
        Attach the quadrature reference to every row.
    """
    lo, hi = grid_range
    if points is None:
        xs = heatmap_axis(lo, hi, step)
        points = [(float(x), float(y)) for y in xs for x in xs]
    else:
        points = [(float(p[0]), float(p[1])) for p in points]
    if not points:
        raise ValueError("no heatmap points")
    grid = ExperimentGrid("heatmap", points, R, seed, estimator, common_random_numbers=True)

    reps = sorted({_canonical(p) for p in grid.sweep})
    results = _map(_heatmap_point, [(r, R, seed, estimator, oracle) for r in reps], workers)
    by_rep = dict(zip(reps, results))

    mirrored = [i for i, p in enumerate(grid.sweep) if _canonical(p) != p]
    rng = np.random.default_rng(point_seed(seed, len(grid.sweep)))
    n_spot = min(len(mirrored), int(math.ceil(spot_fraction * len(mirrored)))) if mirrored else 0
    spot = sorted(rng.choice(mirrored, size=n_spot, replace=False).tolist()) if n_spot else []
    spot_res = _map(_heatmap_point, [(grid.sweep[i], R, seed, estimator, False) for i in spot], workers)
    spot_by_index = dict(zip(spot, spot_res))

    rows = []
    for i, mu in enumerate(grid.sweep):
        est, orc, wall = by_rep[_canonical(mu)]
        extras = {"mirrored": int(_canonical(mu) != mu), "symmetry_residual": math.nan}
        if i in spot_by_index:
            direct = spot_by_index[i][0]
            d = direct[0] if isinstance(direct, tuple) else direct
            extras["symmetry_residual"] = d.value - (est[0] if isinstance(est, tuple) else est).value
        rows.append(_row({"mu1": mu[0], "mu2": mu[1]}, est, orc, wall, **extras))
    return rows


# --------------------------------------------------------------------------
# Subset-size curve.


def gaussian_design(n: int = 50, p: int = 15, seed: int = 0) -> DesignMatrix:
    rng = np.random.default_rng(seed)
    return DesignMatrix(rng.standard_normal((n, p)))


def standardized_mean(design: DesignMatrix, sd: float = MEAN_SD) -> NDArray:
    """X @ ones rescaled to sample mean zero and sample sd ``sd`` (n - 1 divisor)."""
    v = design.entries @ np.ones(design.p)
    s = np.std(v, ddof=1)
    if s == 0:
        raise ValueError("X @ 1 is constant; cannot standardize")
    return (v - v.mean()) / s * sd


def _path_fitter(design, method, ks):
    if method == "bsr":
        return BestSubsetPath(design, ks)
    if method == "fsr":
        return ForwardStepwisePath(design, ks)
    raise ValueError(f"method must be 'bsr' or 'fsr', got {method!r}")


def run_subset_curve(design: DesignMatrix, method: str = "bsr", ks=None,
                     R: int = CURVE_REPLICATES, seed: int = 0, estimator: str = "cov",
                     workers: int = 1, mu=None):
    """Monte Carlo DF against subset size for BSR or FSR.

    All subset sizes share the same noise draws. Rows carry a +-2 SE band;
    k = 0 and k = p have exact oracles 0 and p.
    """
    ks = tuple(range(design.p + 1)) if ks is None else tuple(int(k) for k in ks)
    if not ks:
        raise ValueError("no subset sizes requested")
    mu = standardized_mean(design) if mu is None else np.asarray(mu, dtype=float)
    model = DataModel(mu, 1.0)
    fitter = _path_fitter(design, method, ks)
    t0 = time.perf_counter()
    ests = _estimate(model, fitter, R, seed, estimator, workers)
    wall = (time.perf_counter() - t0) / len(ks)
    rows = []
    for k, est in zip(ks, ests):
        e = est[0] if isinstance(est, tuple) else est
        oracle = float(k) if k in (0, design.p) and design.full_rank else None
        rows.append(_row({"k": k}, est, oracle, wall,
                         band_lo=e.value - 2 * e.std_error, band_hi=e.value + 2 * e.std_error))
    return rows


def exceeds_full(rows, p: int, n_se: float = 2.0) -> list:
    """Subset sizes k < p whose DF exceeds p by more than ``n_se`` standard errors."""
    out = []
    for r in rows:
        e = r.primary
        if r.point["k"] < p and e.value - p > n_se * e.std_error:
            out.append(r.point["k"])
    return out


@dataclass(frozen=True)
class DesignSearch:
    design_seed: int | None
    tried: tuple
    hits: tuple


def search_design_seed(n: int = 50, p: int = 15, start: int = 0,
                       max_seeds: int = MAX_DESIGN_SEEDS, R: int = SEARCH_REPLICATES,
                       seed: int = 0, method: str = "bsr", workers: int = 1) -> DesignSearch:
    """Scan design seeds until some k < p shows DF above p by 2 SE.

    Returns the first such seed (None if none found within ``max_seeds``)
    and the offending subset sizes.
    """
    tried = []
    for s in range(start, start + max_seeds):
        design = gaussian_design(n, p, s)
        tried.append(s)
        if not design.full_rank:
            continue
        rows = run_subset_curve(design, method, range(1, p + 1), R, seed, "cov", workers)
        hits = exceeds_full(rows, p)
        if hits:
            return DesignSearch(s, tuple(tried), tuple(hits))
    return DesignSearch(None, tuple(tried), ())


# --------------------------------------------------------------------------
# Scaling and divergence.


def run_scaling(A_values, R: int = CURVE_REPLICATES, seed: int = 0, estimator: str = "cov",
                workers: int = 1, oracle: bool = True):
    """1-best-subset on the identity design with mu = (A, A), sigma = 1.

    Rows report DF / A next to its limit 1/sqrt(pi). The oracle column is
    the quadrature value of DF at that mean.
    """
    A_values = [float(a) for a in A_values]
    grid = ExperimentGrid("scaling", A_values, R, seed, estimator)
    limit = 1.0 / math.sqrt(math.pi)
    rows = []
    for i, A in enumerate(grid.sweep):
        model = DataModel((A, A), 1.0)
        t0 = time.perf_counter()
        est = _estimate(model, AxisSubset(1), R, grid.seed_for(i), estimator, workers)
        wall = time.perf_counter() - t0
        orc = oracles.df_quadrature(model, AxisSubset(1)).value if oracle else None
        e = est[0] if isinstance(est, tuple) else est
        ratio = e.value / A if A != 0 else math.nan
        ratio_se = e.std_error / abs(A) if A != 0 else math.nan
        rows.append(_row({"A": A}, est, orc, wall,
                         df_over_A=ratio, se_over_A=ratio_se, limit=limit))
    return rows


def scaling_errors(rows):
    """(|DF/A - 1/sqrt(pi)|, SE/A) for each row with A != 0."""
    return [(abs(r.extras["df_over_A"] - r.extras["limit"]), r.extras["se_over_A"])
            for r in rows if r.point["A"] != 0]


def _divergence_oracle(points, mu, sigma):
    P = np.asarray(points, dtype=float)
    mu = np.asarray(mu, dtype=float)
    if P.shape == (2, 1) and np.all(mu == 0) and P[0, 0] == -P[1, 0]:
        return oracles.df_two_point_closed_form(sigma, abs(P[0, 0]))
    if P.shape[1] <= 2:
        return oracles.df_quadrature(DataModel(mu, sigma), PointSet(P)).value
    return None


def run_divergence(sigma_values, points=((-1.0,), (1.0,)), mu=(0.0,), R: int = CURVE_REPLICATES,
                   seed: int = 0, estimator: str = "cov", workers: int = 1):
    """Projection onto a finite point set as sigma shrinks.

    For the default set {-1, +1} with mu = 0, DF = sqrt(2/pi) / sigma, so the
    ``df_times_sigma`` column should stay flat.
    """
    sigmas = [float(s) for s in sigma_values]
    if any(not s > 0 for s in sigmas):
        raise ValueError("sigma values must be positive")
    fitter = PointSet(points)
    grid = ExperimentGrid("divergence", sigmas, R, seed, estimator)
    rows = []
    for i, s in enumerate(grid.sweep):
        model = DataModel(mu, s)
        t0 = time.perf_counter()
        est = _estimate(model, fitter, R, grid.seed_for(i), estimator, workers)
        wall = time.perf_counter() - t0
        e = est[0] if isinstance(est, tuple) else est
        rows.append(_row({"sigma": s}, est, _divergence_oracle(fitter.points, mu, s), wall,
                         df_times_sigma=e.value * s, se_times_sigma=e.std_error * s))
    return rows


def run_estimate(model: DataModel, fitter: Fitter, R: int, seed: int, estimator: str = "cov",
                 workers: int = 1, oracle: bool = True):
    """Single-point estimate with the best available oracle."""
    t0 = time.perf_counter()
    est = _estimate(model, fitter, R, seed, estimator, workers)
    wall = time.perf_counter() - t0
    return [_row({"sigma": model.sigma}, est, reference_df(model, fitter) if oracle else None, wall)]


def reference_df(model: DataModel, fitter: Fitter) -> float | None:
    """Trace formula for linear fitters, quadrature for n <= 2 under Gaussian noise."""
    try:
        return oracles.df_trace_linear(fitter)
    except oracles.NotLinear:
        pass
    if model.noise == "gaussian" and model.n <= 2:
        return oracles.df_quadrature(model, fitter).value
    return None
