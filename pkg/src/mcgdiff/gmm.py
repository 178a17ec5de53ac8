"""Analytic Gaussian-mixture prior: diffused marginals, score and optimal
noise predictor, the exact linear-Gaussian posterior, and samplers.

Component covariances of the prior are hard-fixed to the identity, which
keeps every diffused marginal a unit-variance mixture (scale^2 + 1 - ab_t = 1)
and the posterior algebra in closed form. All mixture computations run in log
space; responsibilities use max-subtracted softmax.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .sampleset import SampleSet
from .schedule import DiffusionSchedule
from .util import LOG_2PI, iso_norm_logpdf

GRID_CELLS: tuple[tuple[int, int], ...] = tuple(
    (i, j) for i in range(-2, 3) for j in range(-2, 3)
)


@dataclass(frozen=True)
class GaussianMixturePrior:
    """Mixture of M unit-covariance Gaussians in R^d."""

    d: int
    weights: np.ndarray
    means: np.ndarray
    chi2_df: float = float("nan")  # dof used to draw raw weights, if drawn

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        mu = np.asarray(self.means, dtype=float)
        if w.ndim != 1 or mu.shape != (len(w), self.d):
            raise ValueError("weights must be (M,) and means (M, d)")
        if np.any(w <= 0.0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be strictly positive and sum to 1")
        if not np.all(np.isfinite(mu)):
            raise ValueError("means must be finite")
        w.flags.writeable = False
        mu.flags.writeable = False
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)


@dataclass(frozen=True)
class GaussianMixturePosterior:
    """Mixture with one shared full covariance, as produced by Bayes' rule."""

    weights: np.ndarray
    means: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        mu = np.asarray(self.means, dtype=float)
        cov = np.asarray(self.covariance, dtype=float)
        d = mu.shape[1]
        if w.ndim != 1 or mu.shape != (len(w), d) or cov.shape != (d, d):
            raise ValueError("inconsistent mixture shapes")
        if abs(w.sum() - 1.0) > 1e-12 or np.any(w < 0.0):
            raise ValueError("weights must be a probability vector")
        if not np.allclose(cov, cov.T, atol=1e-10):
            raise ValueError("covariance must be symmetric")
        np.linalg.cholesky(cov)  # raises LinAlgError if not PD
        for arr in (w, mu, cov):
            arr.flags.writeable = False
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "covariance", cov)

    @property
    def d(self) -> int:
        return self.means.shape[1]


def gmm_grid_prior(d: int, rng: np.random.Generator, chi2_df: float = 1.0) -> GaussianMixturePrior:
    """25-component grid prior: component (i, j) has mean (8i, 8j, 8i, 8j, ...)
    for (i, j) in {-2..2}^2; weights are normalized chi-square draws."""
    if d < 2 or d % 2 != 0:
        raise ValueError("grid prior needs an even dimension d >= 2")
    means = np.empty((len(GRID_CELLS), d))
    for k, (i, j) in enumerate(GRID_CELLS):
        means[k, 0::2] = 8.0 * i
        means[k, 1::2] = 8.0 * j
    raw = rng.chisquare(chi2_df, size=len(GRID_CELLS))
    return GaussianMixturePrior(d=d, weights=raw / raw.sum(), means=means, chi2_df=chi2_df)


def diffused_marginal(prior: GaussianMixturePrior, sched: DiffusionSchedule, t: int) -> GaussianMixturePrior:
    """Marginal of the forward process at step t: means shrink by sqrt(ab_t),
    component covariance stays the identity, weights are unchanged."""
    if not 0 <= t <= sched.n:
        raise ValueError(f"step t={t} outside [0:{sched.n}]")
    scale = np.sqrt(sched.alpha_bar[t])
    return GaussianMixturePrior(
        d=prior.d, weights=prior.weights, means=scale * prior.means, chi2_df=prior.chi2_df
    )


def _component_logliks(prior, sched, x, t):
    scale = np.sqrt(sched.alpha_bar[t])
    diffs = np.asarray(x, dtype=float)[..., None, :] - scale * prior.means
    return np.log(prior.weights) - 0.5 * np.sum(diffs**2, axis=-1), diffs


def log_density(prior: GaussianMixturePrior, sched: DiffusionSchedule, x, t: int = 0):
    """Log density of the step-t diffused mixture at x (t=0 is the prior)."""
    logits, _ = _component_logliks(prior, sched, x, t)
    return logsumexp(logits, axis=-1) - 0.5 * prior.d * LOG_2PI


def score(prior: GaussianMixturePrior, sched: DiffusionSchedule, x, t: int):
    """Gradient of the log diffused density: sum_i r_i(x) (sqrt(ab_t) mu_i - x)."""
    if not 0 <= t <= sched.n:
        raise ValueError(f"step t={t} outside [0:{sched.n}]")
    logits, diffs = _component_logliks(prior, sched, x, t)
    resp = np.exp(logits - logsumexp(logits, axis=-1, keepdims=True))
    return -np.sum(resp[..., None] * diffs, axis=-2)


def eps_star(prior: GaussianMixturePrior, sched: DiffusionSchedule, x, t: int):
    """Optimal noise predictor eps*(x, t) = -sqrt(1 - ab_t) * score(x, t)."""
    if not 1 <= t <= sched.n:
        raise ValueError(f"step t={t} outside [1:{sched.n}]")
    return -np.sqrt(1.0 - sched.alpha_bar[t]) * score(prior, sched, x, t)


def make_eps_fn(prior: GaussianMixturePrior, sched: DiffusionSchedule):
    """Bind eps_star to (prior, schedule) as the callback form eps(x, t)."""

    def eps(x, t):
        return eps_star(prior, sched, x, t)

    return eps


def _mvn_logpdf(y, means, cov):
    """Log N(y; mean, cov) with full covariance, batched over means (..., k)."""
    diff = np.asarray(y, dtype=float) - np.asarray(means, dtype=float)
    chol = np.linalg.cholesky(cov)
    z = np.linalg.solve(chol, diff[..., None])[..., 0]
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    return -0.5 * (cov.shape[0] * LOG_2PI + logdet + np.sum(z**2, axis=-1))


def exact_posterior(prior: GaussianMixturePrior, A, sigma_y: float, y) -> GaussianMixturePosterior:
    """Exact posterior of x given y = A x + sigma_y * eps under the mixture prior.

    Shared covariance Sigma = (I + A^T A / sigma_y^2)^{-1}; component means
    Sigma (A^T y / sigma_y^2 + mu_i); weights proportional to
    w_i * N(y; A mu_i, sigma_y^2 I + A A^T).
    """
    if sigma_y <= 0.0:
        raise ValueError("exact_posterior needs sigma_y > 0; use pinned_posterior for sigma_y = 0")
    A = np.asarray(A, dtype=float)
    y = np.asarray(y, dtype=float)
    d_y, d = A.shape
    prec = np.eye(d) + A.T @ A / sigma_y**2
    cov = np.linalg.inv(prec)
    cov = 0.5 * (cov + cov.T)
    try:
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as err:
        raise ValueError("posterior covariance is not positive definite") from err
    means = (A.T @ y / sigma_y**2 + prior.means) @ cov.T
    w_cov = sigma_y**2 * np.eye(d_y) + A @ A.T
    log_w = np.log(prior.weights) + _mvn_logpdf(prior.means @ A.T, y, w_cov)
    weights = np.exp(log_w - logsumexp(log_w))
    weights = weights / weights.sum()
    return GaussianMixturePosterior(weights=weights, means=means, covariance=cov)


def pinned_posterior(prior: GaussianMixturePrior, d_y: int, y) -> GaussianMixturePrior:
    """Conditional of the mixture on its first d_y coordinates equalling y.

    This is the exact noiseless-inpainting posterior over the unobserved
    block: unit-covariance mixture with means mu_i[d_y:] and weights
    proportional to w_i * N(y; mu_i[:d_y], I).
    """
    if not 1 <= d_y < prior.d:
        raise ValueError("need 1 <= d_y < d")
    y = np.asarray(y, dtype=float)
    log_w = np.log(prior.weights) + iso_norm_logpdf(y, prior.means[:, :d_y], 1.0)
    weights = np.exp(log_w - logsumexp(log_w))
    return GaussianMixturePrior(
        d=prior.d - d_y, weights=weights / weights.sum(), means=prior.means[:, d_y:]
    )


def rotate_prior(prior: GaussianMixturePrior, Q) -> GaussianMixturePrior:
    """Prior of Q x for orthogonal Q (unit covariance is rotation invariant)."""
    return GaussianMixturePrior(
        d=prior.d, weights=prior.weights, means=prior.means @ np.asarray(Q, float).T, chi2_df=prior.chi2_df
    )


def sample_mixture(mixture, count: int, rng: np.random.Generator, label: str = "") -> SampleSet:
    """Draw i.i.d. samples: component chosen categorically, then Gaussian."""
    if count < 1:
        raise ValueError("need count >= 1")
    weights = mixture.weights
    means = mixture.means
    comp = rng.choice(len(weights), size=count, p=weights)
    z = rng.standard_normal((count, means.shape[1]))
    cov = getattr(mixture, "covariance", None)
    if cov is None:
        rows = means[comp] + z
    else:
        rows = means[comp] + z @ np.linalg.cholesky(cov).T
    return SampleSet(rows=rows, label=label)


# -- serialization -------------------------------------------------------------


def mixture_to_json(mixture) -> str:
    cov = getattr(mixture, "covariance", None)
    payload = {
        "weights": mixture.weights.tolist(),
        "means": mixture.means.tolist(),
        "covariance": None if cov is None else cov.tolist(),
    }
    return json.dumps(payload, indent=1)


def mixture_from_json(text: str):
    payload = json.loads(text)
    weights = np.asarray(payload["weights"], dtype=float)
    means = np.asarray(payload["means"], dtype=float)
    if payload.get("covariance") is None:
        return GaussianMixturePrior(d=means.shape[1], weights=weights, means=means)
    return GaussianMixturePosterior(
        weights=weights, means=means, covariance=np.asarray(payload["covariance"], dtype=float)
    )


def save_mixture(mixture, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(mixture_to_json(mixture))


def load_mixture(path):
    with open(path, "r", encoding="utf-8") as fh:
        return mixture_from_json(fh.read())
