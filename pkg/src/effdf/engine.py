"""Monte Carlo estimation of effective degrees of freedom.

Replicates are grouped in fixed blocks of ``BLOCK`` draws. Block ``b`` of a
run with seed ``s`` draws its noise from a Philox generator keyed by
``SeedSequence(s, spawn_key=(b,))``, so replicate ``i`` always sees the same
noise no matter how blocks are spread over workers. Per-replicate statistics
are reduced with ``math.fsum`` (correctly rounded, order independent).
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from enum import Enum

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import DimensionMismatch, NonFiniteStatistic, ReplicateError
from .fitters import Fitter, is_path

BLOCK = 1024


class Estimator(str, Enum):
    COVARIANCE = "cov"
    OPTIMISM = "opt"


# --------------------------------------------------------------------------
# Noise laws: mean zero, unit variance.


def _gaussian(rng, shape):
    return rng.standard_normal(shape)


def _rademacher(rng, shape):
    return rng.integers(0, 2, size=shape) * 2.0 - 1.0


def _uniform(rng, shape):
    return rng.uniform(-math.sqrt(3.0), math.sqrt(3.0), size=shape)


def _laplace(rng, shape):
    return rng.laplace(0.0, 1.0 / math.sqrt(2.0), size=shape)


NOISE_LAWS = {
    "gaussian": _gaussian,
    "rademacher": _rademacher,
    "uniform": _uniform,
    "laplace": _laplace,
}


@dataclass(frozen=True, eq=False)
class DataModel:
    """y = mu + sigma * eps with eps i.i.d. from a standardized noise law."""

    mu: NDArray[np.float64]
    sigma: float = 1.0
    noise: str = "gaussian"

    def __post_init__(self):
        mu = np.atleast_1d(np.array(self.mu, dtype=float))
        if mu.ndim != 1 or not np.all(np.isfinite(mu)):
            raise ValueError("mu must be a finite vector")
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise ValueError("sigma must be positive and finite")
        if self.noise not in NOISE_LAWS:
            raise ValueError(f"unknown noise law {self.noise!r}; choose from {sorted(NOISE_LAWS)}")
        mu.setflags(write=False)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", float(self.sigma))

    @property
    def n(self) -> int:
        return self.mu.shape[0]

    def draw(self, rng: np.random.Generator, size=None) -> NDArray:
        shape = (self.n,) if size is None else (size, self.n)
        return NOISE_LAWS[self.noise](rng, shape)


def block_rng(seed: int, block: int) -> np.random.Generator:
    ss = np.random.SeedSequence(seed, spawn_key=(block,))
    return np.random.Generator(np.random.Philox(key=ss.generate_state(2, np.uint64)))


def block_noise(model: DataModel, seed: int, block: int, need_star: bool = False):
    """Standardized noise for one block: ``(eps, eps_star)``; ``eps`` never depends on ``need_star``."""
    rng = block_rng(seed, block)
    eps = model.draw(rng, BLOCK)
    eps_star = model.draw(rng, BLOCK) if need_star else None
    return eps, eps_star


def replicate_rng(seed: int, index: int) -> np.random.Generator:
    """Stream for a single stand-alone replicate (used by :func:`draw_replicate`)."""
    ss = np.random.SeedSequence(seed, spawn_key=(index, 1))
    return np.random.Generator(np.random.Philox(key=ss.generate_state(2, np.uint64)))


# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ReplicateDraw:
    epsilon: NDArray[np.float64]
    y: NDArray[np.float64]
    fitted: NDArray[np.float64]
    epsilon_star: NDArray[np.float64] | None
    stat_cov: float
    stat_opt: float | None


@dataclass(frozen=True)
class DfEstimate:
    value: float
    std_error: float
    replicates: int
    estimator: str

    def z(self, reference: float) -> float:
        """Distance to a reference value in standard errors."""
        if self.std_error == 0:
            return 0.0 if self.value == reference else math.inf
        return abs(self.value - reference) / self.std_error


def _check_dims(model: DataModel, fitter: Fitter):
    if fitter.n is not None and fitter.n != model.n:
        raise DimensionMismatch(f"fitter expects n={fitter.n}, data model has n={model.n}")


def draw_replicate(model: DataModel, fitter: Fitter, rng: np.random.Generator,
                   need_star: bool = False, index: int = 0) -> ReplicateDraw:
    """One simulated dataset and its DF statistics.

    ``stat_cov`` is eps . y_hat with eps the standardized noise, so its mean
    divided by sigma estimates the DF. ``stat_opt`` is
    ||y* - y_hat||^2 - ||y - y_hat||^2, whose mean over 2 sigma^2 does too.
    """
    _check_dims(model, fitter)
    eps = model.draw(rng)
    eps_star = model.draw(rng) if need_star else None
    y = model.mu + model.sigma * eps
    try:
        fitted = np.asarray(fitter.fit(y).fitted, dtype=float)
    except Exception as exc:
        raise ReplicateError(index, exc) from exc
    stat_opt = None
    if need_star:
        y_star = model.mu + model.sigma * eps_star
        stat_opt = float(np.sum((y_star - fitted) ** 2) - np.sum((y - fitted) ** 2))
    return ReplicateDraw(eps, y, fitted, eps_star, float(eps @ fitted), stat_opt)


def _block_stats(model: DataModel, fitter: Fitter, seed: int, block: int, need_star: bool):
    eps, eps_star = block_noise(model, seed, block, need_star)
    Y = model.mu + model.sigma * eps
    try:
        F = np.asarray(fitter.fit_many(Y), dtype=float)
    except Exception as exc:
        raise ReplicateError(block * BLOCK, exc) from exc
    if F.ndim == 2:
        F = F[None]
    cov = np.einsum("bn,kbn->kb", eps, F)
    opt = None
    if need_star:
        Ys = model.mu + model.sigma * eps_star
        # ||y*-f||^2 - ||y-f||^2 = ||y*||^2 - ||y||^2 - 2 (y*-y).f
        opt = (np.einsum("bn,bn->b", Ys, Ys) - np.einsum("bn,bn->b", Y, Y))[None, :] \
            - 2.0 * np.einsum("bn,kbn->kb", Ys - Y, F)
    return cov, opt


_WORKER_STATE = None


def _init_worker(model, fitter, seed, need_star):
    global _WORKER_STATE
    _WORKER_STATE = (model, fitter, seed, need_star)


def _worker_blocks(blocks):
    model, fitter, seed, need_star = _WORKER_STATE
    return [_block_stats(model, fitter, seed, b, need_star) for b in blocks]


def resolve_workers(workers: int) -> int:
    if workers < 0:
        raise ValueError("workers must be >= 0")
    return workers or (os.cpu_count() or 1)


def simulate(model: DataModel, fitter: Fitter, R: int, seed: int,
             need_star: bool = False, workers: int = 1):
    """Per-replicate statistics in replicate order.

    Returns ``(cov, opt)``, each of shape (K, R) where K is 1 for ordinary
    fitters and the number of tuning values for path fitters; ``opt`` is
    None unless ``need_star``.
    """
    if R < 2:
        raise ValueError("need at least 2 replicates")
    _check_dims(model, fitter)
    nblocks = -(-R // BLOCK)
    workers = min(resolve_workers(workers), nblocks)
    if workers == 1:
        parts = [_block_stats(model, fitter, seed, b, need_star) for b in range(nblocks)]
    else:
        chunks = [list(range(nblocks))[w::workers] for w in range(workers)]
        with ProcessPoolExecutor(workers, initializer=_init_worker,
                                 initargs=(model, fitter, seed, need_star)) as pool:
            results = list(pool.map(_worker_blocks, chunks))
        parts = [None] * nblocks
        for chunk, res in zip(chunks, results):
            for b, r in zip(chunk, res):
                parts[b] = r
    cov = np.concatenate([c for c, _ in parts], axis=1)[:, :R]
    opt = np.concatenate([o for _, o in parts], axis=1)[:, :R] if need_star else None
    return cov, opt


def summarize(stats: ArrayLike, scale: float, estimator: str) -> DfEstimate:
    """Mean and Monte Carlo standard error of ``stats / scale``."""
    s = np.asarray(stats, dtype=float)
    if not np.all(np.isfinite(s)):
        bad = int(np.flatnonzero(~np.isfinite(s))[0])
        raise NonFiniteStatistic(f"non-finite statistic at replicate {bad}")
    R = s.shape[0]
    mean = math.fsum(s) / R
    var = math.fsum((s - mean) ** 2) / (R - 1)
    return DfEstimate(mean / scale, math.sqrt(var / R) / scale, R, estimator)


def _estimates(model, cov, opt, estimator):
    est = Estimator(estimator)
    if est is Estimator.COVARIANCE:
        return [summarize(row, model.sigma, est.value) for row in cov]
    return [summarize(row, 2.0 * model.sigma ** 2, est.value) for row in opt]


def estimate_df(model: DataModel, fitter: Fitter, R: int, seed: int,
                estimator: str = "cov", workers: int = 1):
    """Monte Carlo DF estimate.

    For path fitters a list with one :class:`DfEstimate` per tuning value is
    returned (all computed from the same noise draws).
    """
    need_star = Estimator(estimator) is Estimator.OPTIMISM
    cov, opt = simulate(model, fitter, R, seed, need_star, workers)
    out = _estimates(model, cov, opt, estimator)
    return out if is_path(fitter) else out[0]


def estimate_df_both(model: DataModel, fitter: Fitter, R: int, seed: int, workers: int = 1):
    """Covariance and optimism estimates from common random numbers."""
    cov, opt = simulate(model, fitter, R, seed, True, workers)
    c = _estimates(model, cov, opt, "cov")
    o = _estimates(model, cov, opt, "opt")
    if is_path(fitter):
        return list(zip(c, o))
    return c[0], o[0]
