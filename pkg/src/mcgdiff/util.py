"""Shared numerical helpers: counter-based RNG stream derivation, isotropic
Gaussian log-densities, and log-weight utilities."""

from __future__ import annotations

import zlib

import numpy as np

LOG_2PI = float(np.log(2.0 * np.pi))


def _key_word(key) -> int:
    if isinstance(key, (int, np.integer)):
        return int(key) & 0xFFFFFFFF
    return zlib.crc32(str(key).encode("utf-8"))


def derive_rng(seed: int, *key) -> np.random.Generator:
    """Derive an independent Philox stream keyed by (seed, *key).

    Philox is counter-based, so streams derived from the same seed with
    distinct keys are reproducible regardless of how work is scheduled
    across threads or processes. Keys may be ints or short strings.
    """
    ss = np.random.SeedSequence(
        entropy=int(seed) & 0xFFFFFFFFFFFFFFFF,
        spawn_key=tuple(_key_word(k) for k in key),
    )
    return np.random.Generator(np.random.Philox(ss))


def norm_logpdf_1d(x, mean, var):
    """Elementwise log N(x; mean, var) for scalar variance(s)."""
    x = np.asarray(x, dtype=float)
    var = np.asarray(var, dtype=float)
    return -0.5 * (LOG_2PI + np.log(var) + (x - mean) ** 2 / var)


def iso_norm_logpdf(x, mean, var):
    """Log density of N(mean, var * I) at x, summed over the last axis.

    `var` is a scalar or broadcasts against the last axis of `x`.
    """
    return np.sum(norm_logpdf_1d(x, mean, var), axis=-1)


def log_normalize(log_w):
    """Normalized probabilities from unnormalized log weights (LSE-safe)."""
    log_w = np.asarray(log_w, dtype=float)
    m = np.max(log_w, axis=-1, keepdims=True)
    if not np.all(np.isfinite(m)):
        raise ValueError("degenerate cloud: all log weights are -inf")
    w = np.exp(log_w - m)
    return w / np.sum(w, axis=-1, keepdims=True)


def loglog_slope(x, y):
    """Least-squares slope of log|y| against log(x)."""
    x = np.asarray(x, dtype=float)
    y = np.abs(np.asarray(y, dtype=float))
    if np.any(y <= 0):
        y = np.maximum(y, np.finfo(float).tiny)
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])
