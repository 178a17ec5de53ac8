"""Diffusion time axis: the beta / cumulative-alpha / sigma sequences and the
closed-form Gaussian kernels of the forward, bridge, and backward processes.

Arrays are indexed by diffusion step ``t`` in ``[0:n]``: ``alpha_bar[0] = 1``
and ``beta[0]``/``sigma[0]`` are NaN padding so that ``beta[t]`` is the step-t
coefficient without off-by-one bookkeeping. A schedule is immutable after
construction and safe to share across threads; every operation here is a pure
function of (schedule, inputs).

Kernel conventions, for state dimension d:

* forward:   f_{t|s}(x_s -> x_t) = N(sqrt(ab_t/ab_s) x_s, (1 - ab_t/ab_s) I)
* bridge:    q(x_{t-1} | x_t, x_0) = N(mu_t(x_0, x_t), sigma_t^2 I) with
  mu_t = sqrt(ab_{t-1}) x_0 + sqrt(1 - ab_{t-1} - sigma_t^2)
  (x_t - sqrt(ab_t) x_0) / sqrt(1 - ab_t)
* backward:  p_{t-1}(x_t -> .) = N(m_t(x_t), sigma_t^2 I) where
  m_t(x_t) = mu_t(predict_x0(x_t), x_t) for t >= 2 and m_1 = predict_x0(x_1).

The terminal scale sigma[1] parameterizes only the last generative kernel
(the bridge product never reaches t=1), so it is not bound by the bridge
constraint; ``build_schedule`` sets sigma[1] = eta * sqrt(beta[1]), which is
the exact reverse-kernel scale for a unit Gaussian prior.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

_REL_TOL = 1e-12


@dataclass(frozen=True)
class DiffusionSchedule:
    """Noise schedule on a dense or re-indexed grid of n diffusion steps.

    Attributes
    ----------
    n : number of steps.
    beta : (n+1,) per-step noise coefficients, each in (0, 1); index 0 is NaN.
    alpha_bar : (n+1,) cumulative products of (1 - beta), alpha_bar[0] = 1,
        strictly decreasing and strictly positive.
    sigma : (n+1,) bridge/backward noise scales; index 0 is NaN;
        sigma[t]^2 <= 1 - alpha_bar[t-1] for t >= 2 and sigma[1]^2 <= beta[1].
    eta : scalar in [0, 1] the sigmas were derived from (recorded for
        provenance; direct construction with custom sigmas is allowed).
    """

    n: int
    beta: np.ndarray
    alpha_bar: np.ndarray
    sigma: np.ndarray
    eta: float

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("schedule needs n >= 1 steps")
        beta = np.asarray(self.beta, dtype=float)
        ab = np.asarray(self.alpha_bar, dtype=float)
        sigma = np.asarray(self.sigma, dtype=float)
        if beta.shape != (self.n + 1,) or ab.shape != (self.n + 1,) or sigma.shape != (self.n + 1,):
            raise ValueError("beta, alpha_bar, sigma must have shape (n+1,)")
        if np.any(beta[1:] <= 0.0) or np.any(beta[1:] >= 1.0):
            raise ValueError("beta values must lie in (0, 1)")
        if ab[0] != 1.0:
            raise ValueError("alpha_bar[0] must be 1")
        if np.any(ab <= 0.0) or np.any(np.diff(ab) >= 0.0):
            raise ValueError("alpha_bar must be strictly positive and strictly decreasing")
        # alpha_bar is authoritative; betas must agree with consecutive ratios
        # to within accumulated rounding (deep tails can underflow 1 - beta).
        if np.any(np.abs((1.0 - beta[1:]) - ab[1:] / ab[:-1]) > _REL_TOL * self.n):
            raise ValueError("alpha_bar inconsistent with the cumulative product of (1 - beta)")
        if np.any(sigma[1:] < 0.0):
            raise ValueError("sigma must be nonnegative")
        cap = np.concatenate(([beta[1]], 1.0 - ab[1:-1]))
        if np.any(sigma[1:] ** 2 > cap * (1.0 + 1e-12) + 1e-300):
            raise ValueError("sigma[t]^2 exceeds its admissible bound")
        for arr in (beta, ab, sigma):
            arr.flags.writeable = False
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "alpha_bar", ab)
        object.__setattr__(self, "sigma", sigma)


def _sigma_from_eta(beta: np.ndarray, alpha_bar: np.ndarray, eta: float) -> np.ndarray:
    n = len(beta) - 1
    sigma = np.full(n + 1, np.nan)
    sigma[1] = eta * np.sqrt(beta[1])
    if n >= 2:
        t = np.arange(2, n + 1)
        sigma[t] = eta * np.sqrt(
            (1.0 - alpha_bar[t - 1]) / (1.0 - alpha_bar[t]) * (1.0 - alpha_bar[t] / alpha_bar[t - 1])
        )
    return sigma


def build_schedule(n: int, beta_start: float, beta_end: float, eta: float = 1.0) -> DiffusionSchedule:
    """Linear beta schedule from beta_start (t=1) to beta_end (t=n).

    sigma follows the DDIM family
    sigma_t = eta * sqrt((1-ab_{t-1})/(1-ab_t)) * sqrt(1 - ab_t/ab_{t-1})
    for t >= 2, with the terminal scale sigma_1 = eta * sqrt(beta_1).
    """
    if n < 1:
        raise ValueError("schedule needs n >= 1 steps")
    for name, value in (("beta_start", beta_start), ("beta_end", beta_end)):
        if not 0.0 < value < 1.0:
            raise ValueError(f"{name} must lie in (0, 1), got {value}")
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"eta must lie in [0, 1], got {eta}")
    beta = np.full(n + 1, np.nan)
    beta[1:] = np.linspace(beta_start, beta_end, n)
    alpha_bar = np.ones(n + 1)
    alpha_bar[1:] = np.cumprod(1.0 - beta[1:])
    return DiffusionSchedule(
        n=n, beta=beta, alpha_bar=alpha_bar, sigma=_sigma_from_eta(beta, alpha_bar, eta), eta=float(eta)
    )


def restrict_schedule(sched: DiffusionSchedule, steps) -> DiffusionSchedule:
    """Re-index a dense schedule onto a strictly increasing subset of steps.

    The returned schedule has one step per entry of ``steps`` with the same
    alpha_bar values; beta and sigma are rebuilt for the coarser grid (sigma
    from the schedule's eta, same terminal rule as build_schedule).
    """
    steps = np.asarray(steps, dtype=int)
    if steps.ndim != 1 or len(steps) < 1:
        raise ValueError("steps must be a non-empty 1-D index list")
    if steps[0] < 1 or steps[-1] > sched.n or np.any(np.diff(steps) <= 0):
        raise ValueError("steps must be strictly increasing within [1:n]")
    r = len(steps)
    alpha_bar = np.ones(r + 1)
    alpha_bar[1:] = sched.alpha_bar[steps]
    beta = np.full(r + 1, np.nan)
    # clamp: 1 - ratio can round to exactly 1.0 deep in the alpha_bar tail
    beta[1:] = np.minimum(1.0 - alpha_bar[1:] / alpha_bar[:-1], np.nextafter(1.0, 0.0))
    return DiffusionSchedule(
        n=r, beta=beta, alpha_bar=alpha_bar, sigma=_sigma_from_eta(beta, alpha_bar, sched.eta), eta=sched.eta
    )


def forward_params(sched: DiffusionSchedule, s: int, t: int) -> tuple[float, float]:
    """Mean scale and variance of the forward kernel f_{t|s}(x_s -> x_t)."""
    if not 0 <= s < t <= sched.n:
        raise ValueError(f"need 0 <= s < t <= n, got s={s}, t={t}")
    ratio = sched.alpha_bar[t] / sched.alpha_bar[s]
    return float(np.sqrt(ratio)), float(1.0 - ratio)


def bridge_mean(sched: DiffusionSchedule, x0, xt, t: int):
    """Mean mu_t(x0, xt) of the bridge kernel q(x_{t-1} | x_t, x_0)."""
    if not 1 <= t <= sched.n:
        raise ValueError(f"step t={t} outside [1:{sched.n}]")
    x0 = np.asarray(x0, dtype=float)
    xt = np.asarray(xt, dtype=float)
    if x0.shape[-1] != xt.shape[-1]:
        raise ValueError("x0 and xt must share their last dimension")
    ab_prev = sched.alpha_bar[t - 1]
    ab_t = sched.alpha_bar[t]
    gap = 1.0 - ab_prev - sched.sigma[t] ** 2
    if gap < -1e-12:
        raise ValueError(f"sigma[{t}]^2 exceeds 1 - alpha_bar[{t - 1}]; no bridge at this step")
    coeff = np.sqrt(max(gap, 0.0)) / np.sqrt(1.0 - ab_t)
    return np.sqrt(ab_prev) * x0 + coeff * (xt - np.sqrt(ab_t) * x0)


def predict_x0(sched: DiffusionSchedule, xt, t: int, eps):
    """Denoised state prediction (x_t - sqrt(1-ab_t) eps) / sqrt(ab_t)."""
    if not 1 <= t <= sched.n:
        raise ValueError(f"step t={t} outside [1:{sched.n}]")
    ab_t = sched.alpha_bar[t]
    return (np.asarray(xt, dtype=float) - np.sqrt(1.0 - ab_t) * np.asarray(eps, dtype=float)) / np.sqrt(ab_t)


def backward_mean(sched: DiffusionSchedule, xt, t: int, eps_fn):
    """Mean of the backward kernel p_{t-1}(. | x_t).

    ``eps_fn(x, t)`` is the noise predictor, vectorized over leading axes.
    At t=1 the kernel is N(predict_x0(x_1), sigma_1^2 I), so the mean is the
    denoised prediction itself.
    """
    if not 1 <= t <= sched.n:
        raise ValueError(f"step t={t} outside [1:{sched.n}]")
    xt = np.asarray(xt, dtype=float)
    x0_hat = predict_x0(sched, xt, t, eps_fn(xt, t))
    if t == 1:
        return x0_hat
    return bridge_mean(sched, x0_hat, xt, t)


# -- CSV serialization --------------------------------------------------------


def schedule_to_csv(sched: DiffusionSchedule) -> str:
    """Render as CSV with header ``t,beta,alpha_bar,sigma``; row t=0 carries
    alpha_bar only."""
    buf = io.StringIO()
    buf.write("t,beta,alpha_bar,sigma\n")
    buf.write(f"0,,{sched.alpha_bar[0]!r},\n")
    for t in range(1, sched.n + 1):
        buf.write(f"{t},{sched.beta[t]!r},{sched.alpha_bar[t]!r},{sched.sigma[t]!r}\n")
    return buf.getvalue()


def schedule_from_csv(text: str, eta: float = float("nan")) -> DiffusionSchedule:
    lines = [ln for ln in text.strip().splitlines() if ln.strip()]
    if lines[0].strip() != "t,beta,alpha_bar,sigma":
        raise ValueError("unexpected schedule CSV header")
    rows = [ln.split(",") for ln in lines[1:]]
    n = len(rows) - 1
    beta = np.full(n + 1, np.nan)
    alpha_bar = np.empty(n + 1)
    sigma = np.full(n + 1, np.nan)
    for row in rows:
        t = int(row[0])
        alpha_bar[t] = float(row[2])
        if t > 0:
            beta[t] = float(row[1])
            sigma[t] = float(row[3])
    return DiffusionSchedule(n=n, beta=beta, alpha_bar=alpha_bar, sigma=sigma, eta=eta)


def save_schedule(sched: DiffusionSchedule, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(schedule_to_csv(sched))


def load_schedule(path, eta: float = float("nan")) -> DiffusionSchedule:
    with open(path, "r", encoding="utf-8") as fh:
        return schedule_from_csv(fh.read(), eta=eta)


def paper_gmm_schedule(eta: float = 1.0) -> DiffusionSchedule:
    """The 1000-step GMM-bed schedule: beta linear from 0.2 down to 1e-4."""
    return build_schedule(1000, 0.2, 1e-4, eta)
