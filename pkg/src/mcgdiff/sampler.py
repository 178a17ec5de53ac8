"""Sequential Monte Carlo cores for posterior sampling under a diffusion
prior: the noiseless guided filter, the noisy tau/kappa-potential filter with
final likelihood correction, the general linear path through the SVD basis,
the bounded-weight (delta) variant, and the trajectory-conditioned baseline.

Conventions: particles are rows; the observed (guided) block occupies the
first d_y coordinates of the working basis. Weights live in log space
throughout; resampling is multinomial at every step (the consistency results
assume multinomial). All randomness flows through the single Generator handed
to a driver, drawn in a fixed order, so a (seed, config) pair reproduces a
run bitwise regardless of how callers schedule work across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .gmm import GaussianMixturePrior, make_eps_fn
from .problem import LinearInverseProblem, SpectralProblem, decompose, remap_to_subset
from .sampleset import SampleSet
from .schedule import DiffusionSchedule, backward_mean, restrict_schedule
from .util import iso_norm_logpdf, log_normalize, norm_logpdf_1d

EpsFn = Callable[[np.ndarray, int], np.ndarray]


@dataclass(frozen=True)
class GuidanceConfig:
    """Sampler parameters: state split, particle count, and potentials.

    kappa is the variance floor of the noisy potentials (mimics the Dirac
    pin at the matched step while keeping densities proper); delta > 0
    switches the noiseless filter to the bounded-weight mixture proposal
    (0 disables it).
    """

    d_x: int
    d_y: int
    N: int
    kappa: float = 1e-4
    delta: float = 0.0

    def __post_init__(self):
        if not 1 <= self.d_y < self.d_x:
            raise ValueError("need 1 <= d_y < d_x")
        if self.N < 1:
            raise ValueError("need N >= 1 particles")
        if self.kappa <= 0.0:
            raise ValueError("kappa must be positive")
        if self.delta < 0.0:
            raise ValueError("delta must be nonnegative")


@dataclass(frozen=True)
class ParticleCloud:
    """Snapshot of the filter state at one diffusion step.

    log_weights are the selection weights computed at this step (before
    normalization); ancestors are the indices drawn from them, so the
    propagated cloud is equally weighted. rng_state is the bit-generator
    state right before this step's draws, enough to replay the transition.
    """

    t: int
    particles: np.ndarray
    log_weights: np.ndarray
    ancestors: np.ndarray
    rng_state: dict | None = None


def k_coeff(sched: DiffusionSchedule, t: int) -> float:
    """Blending coefficient of the guided proposal,
    K_t = sigma_{t+1}^2 / (sigma_{t+1}^2 + 1 - ab_t); at t=n the implicit
    unit prior variance stands in for sigma_{n+1}^2, K_n = 1/(2 - ab_n)."""
    if not 1 <= t <= sched.n:
        raise ValueError(f"step t={t} outside [1:{sched.n}]")
    if t == sched.n:
        return float(1.0 / (2.0 - sched.alpha_bar[sched.n]))
    s2 = sched.sigma[t + 1] ** 2
    return float(s2 / (s2 + 1.0 - sched.alpha_bar[t]))


def resample_multinomial(log_weights, rng: np.random.Generator) -> np.ndarray:
    """N i.i.d. categorical ancestor draws from softmax(log_weights)."""
    lw = np.asarray(log_weights, dtype=float)
    if lw.ndim != 1:
        raise ValueError("log_weights must be 1-D")
    p = log_normalize(lw)
    cdf = np.cumsum(p)
    cdf[-1] = 1.0
    return np.searchsorted(cdf, rng.random(len(p)), side="right").astype(np.intp)


def _resample_rows(log_w: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Row-wise multinomial resampling for (B, N) log weights."""
    p = log_normalize(log_w)
    cdf = np.cumsum(p, axis=-1)
    cdf[..., -1] = 1.0
    u = rng.random(log_w.shape)
    out = np.empty(log_w.shape, dtype=np.intp)
    for b in range(log_w.shape[0]):
        out[b] = np.searchsorted(cdf[b], u[b], side="right")
    return out


# -- noiseless weights and proposals -------------------------------------------


def _weight_noiseless_from_mean(sched, m_top, x_top, t, y):
    """Log selection weight at step t from the backward mean's guided block.

    t in [1:n-2]: N(sqrt(ab_t) y; m_top, sigma_{t+1}^2 + 1 - ab_t)
                  / N(sqrt(ab_{t+1}) y; x_top, 1 - ab_{t+1});
    t = n-1: numerator only (the conjugated initialization absorbed the
             level-n potential);
    t = 0:   N(y; m_top, sigma_1^2) / N(sqrt(ab_1) y; x_top, 1 - ab_1);
             with a deterministic terminal kernel (sigma_1 = 0) the final
             density degenerates, so the reweight is skipped (uniform).
    """
    ab = sched.alpha_bar
    sig = sched.sigma
    if t == 0:
        if sig[1] == 0.0:
            return np.zeros(m_top.shape[:-1])
        return iso_norm_logpdf(y, m_top, sig[1] ** 2) - iso_norm_logpdf(
            np.sqrt(ab[1]) * y, x_top, 1.0 - ab[1]
        )
    num = iso_norm_logpdf(np.sqrt(ab[t]) * y, m_top, sig[t + 1] ** 2 + 1.0 - ab[t])
    if t == sched.n - 1:
        return num
    return num - iso_norm_logpdf(np.sqrt(ab[t + 1]) * y, x_top, 1.0 - ab[t + 1])


def weight_noiseless(sched: DiffusionSchedule, eps_fn: EpsFn, x_next, t: int, y):
    """Log weight hat-w_t evaluated on particles at step t+1 (vectorized)."""
    if not 0 <= t <= sched.n - 1:
        raise ValueError(f"step t={t} outside [0:{sched.n - 1}]")
    y = np.asarray(y, dtype=float)
    x_next = np.asarray(x_next, dtype=float)
    d_y = y.shape[-1]
    m = backward_mean(sched, x_next, t + 1, eps_fn)
    return _weight_noiseless_from_mean(sched, m[..., :d_y], x_next[..., :d_y], t, y)


def _propose_noiseless_from_mean(sched, m_top, m_under, t, y, rng):
    ab = sched.alpha_bar
    sig = sched.sigma
    shape_top = m_top.shape
    under = m_under + sig[t + 1] * rng.standard_normal(m_under.shape)
    if t == 0:
        top = np.broadcast_to(y, shape_top).copy()
    else:
        K = k_coeff(sched, t)
        top = (
            K * np.sqrt(ab[t]) * y
            + (1.0 - K) * m_top
            + np.sqrt((1.0 - ab[t]) * K) * rng.standard_normal(shape_top)
        )
    return np.concatenate([top, under], axis=-1)


def proposal_noiseless(sched: DiffusionSchedule, eps_fn: EpsFn, x_next, t: int, y, rng):
    """One draw of the guided proposal kernel for step t given x_{t+1}.

    Guided block: N(K_t sqrt(ab_t) y + (1-K_t) m_top, (1-ab_t) K_t I);
    free block: N(m_under, sigma_{t+1}^2 I). At t=0 the guided block is
    pinned to y and only the free block is drawn.
    """
    if not 0 <= t <= sched.n - 1:
        raise ValueError(f"step t={t} outside [0:{sched.n - 1}]")
    y = np.asarray(y, dtype=float)
    x_next = np.asarray(x_next, dtype=float)
    d_y = y.shape[-1]
    m = backward_mean(sched, x_next, t + 1, eps_fn)
    return _propose_noiseless_from_mean(sched, m[..., :d_y], m[..., d_y:], t, y, rng)


# -- bounded-weight (delta) variant --------------------------------------------


def _bounded_weight_from_mean(sched, m_top, x_top, t, y, delta):
    """Log weight and guided-mixture responsibility for the delta variant.

    gamma_t(y | x_{t+1}) = N(sqrt(ab_t) y; m_top, sigma_{t+1}^2 + 1 - ab_t);
    weight = (gamma_t + delta) / (f_{t+1|0}(y, x_top) + delta), bounded by
    (sup gamma + delta)/delta. The proposal mixes the guided kernel (mass
    gamma/(gamma+delta)) with the plain backward kernel.
    """
    ab = sched.alpha_bar
    sig = sched.sigma
    log_delta = np.log(delta)
    if t == 0:
        num = iso_norm_logpdf(y, m_top, sig[1] ** 2)
        den = np.logaddexp(iso_norm_logpdf(np.sqrt(ab[1]) * y, x_top, 1.0 - ab[1]), log_delta)
        return num - den, None
    log_gamma = iso_norm_logpdf(np.sqrt(ab[t]) * y, m_top, sig[t + 1] ** 2 + 1.0 - ab[t])
    num = np.logaddexp(log_gamma, log_delta)
    den = np.logaddexp(iso_norm_logpdf(np.sqrt(ab[t + 1]) * y, x_top, 1.0 - ab[t + 1]), log_delta)
    return num - den, np.exp(log_gamma - num)


def weight_bounded_variant(sched: DiffusionSchedule, eps_fn: EpsFn, x_next, t: int, y, delta: float):
    """Bounded log weight plus the responsibility gamma/(gamma+delta) of the
    guided component in the two-part mixture proposal (None at t=0, where the
    transition is the plain free-block kernel with the guided block pinned)."""
    if delta <= 0.0:
        raise ValueError("bounded-weight variant needs delta > 0")
    if not 0 <= t <= sched.n - 1:
        raise ValueError(f"step t={t} outside [0:{sched.n - 1}]")
    y = np.asarray(y, dtype=float)
    x_next = np.asarray(x_next, dtype=float)
    d_y = y.shape[-1]
    m = backward_mean(sched, x_next, t + 1, eps_fn)
    return _bounded_weight_from_mean(sched, m[..., :d_y], x_next[..., :d_y], t, y, delta)


# -- noiseless driver -----------------------------------------------------------


def _noiseless_core(sched, eps_fn, y, cfg, rng, batch, trace=None):
    """Run `batch` independent noiseless filters; returns (batch, N, d_x)."""
    n = sched.n
    d_y = cfg.d_y
    d_b = cfg.d_x - d_y
    N = cfg.N
    ab = sched.alpha_bar
    sig = sched.sigma
    y = np.asarray(y, dtype=float)
    delta = cfg.delta

    if delta > 0.0:
        log_zf = iso_norm_logpdf(np.sqrt(ab[n]) * y, np.zeros(d_y), 2.0 - ab[n])
        p_guided0 = float(np.exp(log_zf - np.logaddexp(log_zf, np.log(delta))))
        pick = rng.random((batch, N)) < p_guided0
        z = rng.standard_normal((batch, N, d_y))
        Kn = k_coeff(sched, n)
        guided = Kn * np.sqrt(ab[n]) * y + np.sqrt((1.0 - ab[n]) * Kn) * z
        top = np.where(pick[..., None], guided, z)
    else:
        Kn = k_coeff(sched, n)
        top = Kn * np.sqrt(ab[n]) * y + np.sqrt((1.0 - ab[n]) * Kn) * rng.standard_normal(
            (batch, N, d_y)
        )
    x = np.concatenate([top, rng.standard_normal((batch, N, d_b))], axis=-1)

    for t in range(n - 1, -1, -1):
        state = rng.bit_generator.state if trace is not None else None
        m = backward_mean(sched, x, t + 1, eps_fn)
        m_top, m_under = m[..., :d_y], m[..., d_y:]
        if delta > 0.0:
            lw, p_guided = _bounded_weight_from_mean(sched, m_top, x[..., :d_y], t, y, delta)
        else:
            lw = _weight_noiseless_from_mean(sched, m_top, x[..., :d_y], t, y)
        anc = _resample_rows(lw, rng)
        if trace is not None:
            trace.append(
                ParticleCloud(
                    t=t + 1,
                    particles=x[0].copy(),
                    log_weights=lw[0].copy(),
                    ancestors=anc[0].copy(),
                    rng_state=state,
                )
            )
        m_top = np.take_along_axis(m_top, anc[..., None], axis=1)
        m_under = np.take_along_axis(m_under, anc[..., None], axis=1)
        under = m_under + sig[t + 1] * rng.standard_normal(m_under.shape)
        if t == 0:
            top = np.broadcast_to(y, m_top.shape).copy()
        else:
            z = rng.standard_normal(m_top.shape)
            K = k_coeff(sched, t)
            guided = K * np.sqrt(ab[t]) * y + (1.0 - K) * m_top + np.sqrt((1.0 - ab[t]) * K) * z
            if delta > 0.0:
                p_g = np.take_along_axis(p_guided, anc, axis=1)
                pick = rng.random(p_g.shape) < p_g
                top = np.where(pick[..., None], guided, m_top + sig[t + 1] * z)
            else:
                top = guided
        x = np.concatenate([top, under], axis=-1)
    return x


def mcgdiff_noiseless(
    sched: DiffusionSchedule,
    eps_fn: EpsFn,
    y,
    cfg: GuidanceConfig,
    rng: np.random.Generator,
    trace: list | None = None,
    label: str = "mcgdiff-noiseless",
) -> SampleSet:
    """Posterior sampler for a noiseless observation of the first d_y
    coordinates: guided auxiliary particle filter from step n down to 0.

    The output's guided block equals y exactly; the free block approximates
    the posterior of the unobserved coordinates.
    """
    y = np.asarray(y, dtype=float)
    if y.shape != (cfg.d_y,):
        raise ValueError("y must have shape (d_y,)")
    x = _noiseless_core(sched, eps_fn, y, cfg, rng, batch=1, trace=trace)
    return SampleSet(rows=x[0], label=label)


def mcgdiff_noiseless_batch(
    sched: DiffusionSchedule,
    eps_fn: EpsFn,
    y,
    cfg: GuidanceConfig,
    rng: np.random.Generator,
    replicates: int,
) -> np.ndarray:
    """Run `replicates` independent filters at once; returns (replicates, N, d_x).

    Used by the replicate-heavy bias and consistency experiments; each
    replicate has its own weights and ancestry.
    """
    return _noiseless_core(sched, eps_fn, np.asarray(y, dtype=float), cfg, rng, batch=replicates)


# -- noisy case ------------------------------------------------------------------


def _noisy_params(sched, spec, kappa, t):
    """Per-coordinate potential parameters at step t: active mask, tether
    mean sqrt(ab_t/ab_tau) y_tilde, and variance 1 - (1-kappa) ab_t/ab_tau.
    Inactive coordinates get placeholder variance 1 (they are masked out)."""
    tau = spec.tau
    active = tau <= t
    ratio = np.where(active, sched.alpha_bar[t] / sched.alpha_bar[tau], 1.0)
    var = np.where(active, 1.0 - (1.0 - kappa) * ratio, 1.0)
    mean = np.where(active, np.sqrt(ratio) * spec.y_tilde, 0.0)
    return active, mean, var


def potential_noisy(sched: DiffusionSchedule, x, t: int, spec: SpectralProblem, kappa: float):
    """Log potential at step t: product over coordinates with tau_i <= t of
    N(x_i; sqrt(ab_t/ab_tau_i) y_tilde_i, 1 - (1-kappa) ab_t/ab_tau_i)."""
    if spec.tau is None:
        raise ValueError("potential undefined: problem has no matched tau (sigma_y = 0)")
    if t < int(np.min(spec.tau)):
        raise ValueError("potential undefined below the smallest tau")
    active, mean, var = _noisy_params(sched, spec, kappa, t)
    lp = norm_logpdf_1d(np.asarray(x, dtype=float)[..., : spec.d_y], mean, var)
    return np.sum(lp * active, axis=-1)


def mcgdiff_noisy(
    sched: DiffusionSchedule,
    eps_fn: EpsFn,
    spec: SpectralProblem,
    cfg: GuidanceConfig,
    rng: np.random.Generator,
    label: str = "mcgdiff-noisy",
) -> SampleSet:
    """Noisy-observation sampler in the spectral basis.

    SMC with per-coordinate conjugate guided proposals runs from n down to
    the smallest matched step tau_1; the surviving cloud is then propagated
    to 0 through the plain backward kernels and reweighted by the exact
    likelihood prod_i N(y_i; x_{0,i}, (sigma_y/s_i)^2), with one final
    multinomial resampling to an unweighted SampleSet in the original basis.
    """
    if spec.tau is None or spec.sigma_y <= 0.0:
        raise ValueError("noisy sampler needs sigma_y > 0 with matched tau")
    if cfg.d_y != spec.d_y or cfg.d_x != spec.d_x:
        raise ValueError("config dimensions disagree with the problem")
    n = sched.n
    d_y = spec.d_y
    N = cfg.N
    ab = sched.alpha_bar
    sig = sched.sigma
    kappa = cfg.kappa
    t1 = int(np.min(spec.tau))

    _, mean_n, var_n = _noisy_params(sched, spec, kappa, n)
    K_init = 1.0 / (1.0 + var_n)
    top = K_init * mean_n + np.sqrt(var_n * K_init) * rng.standard_normal((N, d_y))
    x = np.concatenate([top, rng.standard_normal((N, cfg.d_x - d_y))], axis=-1)

    act_next, mean_next, var_next = _noisy_params(sched, spec, kappa, n)
    for t in range(n - 1, t1 - 1, -1):
        m = backward_mean(sched, x, t + 1, eps_fn)
        act, mean_t, var_t = _noisy_params(sched, spec, kappa, t)
        s2 = sig[t + 1] ** 2
        num = norm_logpdf_1d(mean_t, m[..., :d_y], s2 + var_t)
        den = norm_logpdf_1d(x[..., :d_y], mean_next, var_next)
        lw = np.sum(num * act, axis=-1) - np.sum(den * act_next, axis=-1)
        anc = resample_multinomial(lw, rng)
        m = m[anc]
        z = rng.standard_normal((N, cfg.d_x))
        K = s2 / (s2 + var_t)
        guided = K * mean_t + (1.0 - K) * m[:, :d_y] + np.sqrt(var_t * K) * z[:, :d_y]
        top = np.where(act, guided, m[:, :d_y] + sig[t + 1] * z[:, :d_y])
        x = np.concatenate([top, m[:, d_y:] + sig[t + 1] * z[:, d_y:]], axis=-1)
        act_next, mean_next, var_next = act, mean_t, var_t

    # The cloud targets p_{t1} * g_{t1}; divide the pin potential back out,
    # propagate to 0 through the plain backward kernels, and reweight by the
    # exact likelihood -- unbiased for any kappa > 0.
    lw_fin = -potential_noisy(sched, x, t1, spec, kappa)
    for t in range(t1 - 1, -1, -1):
        m = backward_mean(sched, x, t + 1, eps_fn)
        x = m + sig[t + 1] * rng.standard_normal(x.shape)

    lw_fin = lw_fin + np.sum(norm_logpdf_1d(spec.y_spec, x[:, :d_y], spec.coord_noise**2), axis=-1)
    x = x[resample_multinomial(lw_fin, rng)]
    return SampleSet(rows=spec.from_spectral(x), label=label)


# -- general linear problems -----------------------------------------------------


def _spectral_eps(prior_or_eps, sched: DiffusionSchedule, V: np.ndarray) -> EpsFn:
    """Noise predictor conjugated into the V basis: eps_V(x, t) = V^T eps(V x, t)."""
    if isinstance(prior_or_eps, GaussianMixturePrior):
        base = make_eps_fn(prior_or_eps, sched)
    else:
        base = prior_or_eps

    def eps_v(xs, t):
        return base(np.asarray(xs, dtype=float) @ V.T, t) @ V

    return eps_v


def mcgdiff_general(
    prior_or_eps,
    prob: LinearInverseProblem,
    sched: DiffusionSchedule,
    cfg: GuidanceConfig,
    rng: np.random.Generator,
    timesteps=None,
    label: str = "mcgdiff",
) -> SampleSet:
    """Posterior sampler for y = A x + sigma_y eps with general full-row-rank A.

    Diagonalizes the problem through its SVD, conjugates the noise predictor
    into the spectral basis, dispatches to the noiseless or noisy core, and
    maps samples back to the original basis. `timesteps` (from
    select_timesteps) re-indexes the schedule for accelerated sampling; the
    matched steps are preserved by construction.
    """
    spec = decompose(prob, sched)
    if cfg.d_y != spec.d_y or cfg.d_x != spec.d_x:
        raise ValueError("config dimensions disagree with the problem")
    run_sched = sched
    run_spec = spec
    if timesteps is not None:
        run_sched = restrict_schedule(sched, timesteps)
        run_spec = remap_to_subset(spec, timesteps)
        if not isinstance(prior_or_eps, GaussianMixturePrior):
            steps = np.asarray(timesteps, dtype=int)
            dense = prior_or_eps
            prior_or_eps = lambda x, t: dense(x, int(steps[t - 1]))  # noqa: E731
    eps_v = _spectral_eps(prior_or_eps, run_sched, spec.V)
    if prob.sigma_y == 0.0:
        x = _noiseless_core(run_sched, eps_v, spec.y_spec, cfg, rng, batch=1)[0]
        return SampleSet(rows=spec.from_spectral(x), label=label)
    return mcgdiff_noisy(run_sched, eps_v, run_spec, cfg, rng, label=label)


# -- trajectory-conditioned baseline ---------------------------------------------


def smcdiff_extended(
    sched: DiffusionSchedule,
    eps_fn: EpsFn,
    spec: SpectralProblem,
    cfg: GuidanceConfig,
    rng: np.random.Generator,
    label: str = "smcdiff",
) -> SampleSet:
    """Baseline that conditions on one forward-diffused observation path.

    Requires all observed coordinates to share a single matched step tau
    (tau = 0 for sigma_y = 0): (1) diffuse y_tilde forward from tau to n;
    (2) particle-filter the unobserved block downward with the plain
    backward transition and the one-step-lookahead likelihood of the fixed
    diffused observation as potential; (3) propagate the pinned state to 0
    through the plain backward kernels.
    """
    if cfg.d_y != spec.d_y or cfg.d_x != spec.d_x:
        raise ValueError("config dimensions disagree with the problem")
    n = sched.n
    d_y = spec.d_y
    d_b = spec.d_x - d_y
    N = cfg.N
    ab = sched.alpha_bar
    sig = sched.sigma
    if spec.sigma_y > 0.0:
        if spec.tau is None or len(set(int(t) for t in spec.tau)) != 1:
            raise ValueError("baseline needs a single shared tau across coordinates")
        tau = int(spec.tau[0])
        y_pin = spec.y_tilde
    else:
        tau = 0
        y_pin = spec.y_spec

    y_bar = np.empty((n + 1, d_y))
    y_bar[tau] = y_pin
    for s in range(tau + 1, n + 1):
        ratio = ab[s] / ab[s - 1]
        y_bar[s] = np.sqrt(ratio) * y_bar[s - 1] + np.sqrt(1.0 - ratio) * rng.standard_normal(d_y)

    xu = rng.standard_normal((N, d_b))
    for s in range(n, tau, -1):
        comp = np.concatenate([np.broadcast_to(y_bar[s], (N, d_y)), xu], axis=-1)
        m = backward_mean(sched, comp, s, eps_fn)
        if sig[s] > 0.0:
            lw = iso_norm_logpdf(y_bar[s - 1], m[:, :d_y], sig[s] ** 2)
        else:
            lw = np.zeros(N)
        anc = resample_multinomial(lw, rng)
        xu = m[anc, d_y:] + sig[s] * rng.standard_normal((N, d_b))

    x = np.concatenate([np.broadcast_to(y_pin, (N, d_y)), xu], axis=-1)
    for t in range(tau - 1, -1, -1):
        m = backward_mean(sched, x, t + 1, eps_fn)
        x = m + sig[t + 1] * rng.standard_normal(x.shape)
    return SampleSet(rows=spec.from_spectral(x), label=label)
