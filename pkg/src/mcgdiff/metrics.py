"""Evaluation utilities: sliced Wasserstein distance, effective sample size,
and the replicate-based bias experiment driver."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.special import logsumexp

from .sampleset import SampleSet
from .util import loglog_slope


def _as_rows(x) -> np.ndarray:
    if isinstance(x, SampleSet):
        return x.rows
    return np.atleast_2d(np.asarray(x, dtype=float))


def sliced_wasserstein(
    X,
    Y,
    n_proj: int = 128,
    order: int = 2,
    rng: np.random.Generator | None = None,
) -> float:
    """Sliced Wasserstein distance between two sample sets.

    Averages the 1-D order-p Wasserstein distance (sorted-sample formula)
    over n_proj uniform directions on the sphere, then takes the p-th root.
    Unequal sample counts are handled by uniformly subsampling the larger
    set with the same generator, so the estimate is deterministic given rng.
    """
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    if n_proj < 1:
        raise ValueError("need n_proj >= 1")
    if rng is None:
        rng = np.random.default_rng(0)
    xr = _as_rows(X)
    yr = _as_rows(Y)
    if xr.shape[1] != yr.shape[1]:
        raise ValueError("sample sets must share their dimension")
    n = min(xr.shape[0], yr.shape[0])
    if xr.shape[0] > n:
        xr = xr[rng.choice(xr.shape[0], size=n, replace=False)]
    if yr.shape[0] > n:
        yr = yr[rng.choice(yr.shape[0], size=n, replace=False)]
    theta = rng.standard_normal((xr.shape[1], n_proj))
    theta /= np.linalg.norm(theta, axis=0, keepdims=True)
    px = np.sort(xr @ theta, axis=0)
    py = np.sort(yr @ theta, axis=0)
    gaps = np.abs(px - py) ** order
    return float(np.mean(gaps) ** (1.0 / order))


def ess(log_weights) -> float:
    """Effective sample size (sum w)^2 / sum w^2 of an importance cloud."""
    lw = np.asarray(log_weights, dtype=float)
    if not np.any(np.isfinite(lw)):
        raise ValueError("all weights are zero")
    return float(np.exp(2.0 * logsumexp(lw) - logsumexp(2.0 * lw)))


@dataclass(frozen=True)
class BiasRow:
    fn: str
    n_particles: int
    bias: float
    se: float


def bias_sweep(
    run_sampler: Callable[[int, int, np.random.Generator], np.ndarray],
    exact: Mapping[str, float],
    test_fns: Mapping[str, Callable[[np.ndarray], np.ndarray]],
    n_particles: Sequence[int],
    replicates: int,
    rng: np.random.Generator,
) -> tuple[list[BiasRow], dict[str, float]]:
    """Estimate the estimator bias of each test function against its exact
    posterior expectation, replicated over independent runs per particle
    count, and fit the log-log decay slope.

    run_sampler(N, replicates, rng) must return (replicates, M, d) samples
    (M = samples per run). Each test function maps (..., d) rows to scalars
    per row; per-run estimates are its row means.
    """
    rows: list[BiasRow] = []
    for N in n_particles:
        samples = run_sampler(int(N), int(replicates), rng)
        for name, h in test_fns.items():
            per_run = np.mean(h(samples), axis=-1)
            err = per_run - exact[name]
            rows.append(
                BiasRow(
                    fn=name,
                    n_particles=int(N),
                    bias=float(np.mean(err)),
                    se=float(np.std(err, ddof=1) / np.sqrt(replicates)),
                )
            )
    slopes = {
        name: loglog_slope(
            [r.n_particles for r in rows if r.fn == name],
            [r.bias for r in rows if r.fn == name],
        )
        for name in test_fns
    }
    return rows, slopes
