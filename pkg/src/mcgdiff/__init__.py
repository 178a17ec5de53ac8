"""Sequential Monte Carlo posterior sampling for linear Gaussian inverse
problems under denoising-diffusion priors, with an analytic Gaussian-mixture
test bed."""

from .gmm import (
    GaussianMixturePosterior,
    GaussianMixturePrior,
    diffused_marginal,
    eps_star,
    exact_posterior,
    gmm_grid_prior,
    make_eps_fn,
    pinned_posterior,
    sample_mixture,
    score,
)
from .metrics import bias_sweep, ess, sliced_wasserstein
from .problem import (
    LinearInverseProblem,
    SpectralProblem,
    decompose,
    match_tau,
    random_problem,
    select_timesteps,
)
from .sampler import (
    GuidanceConfig,
    ParticleCloud,
    k_coeff,
    mcgdiff_general,
    mcgdiff_noiseless,
    mcgdiff_noiseless_batch,
    mcgdiff_noisy,
    potential_noisy,
    proposal_noiseless,
    resample_multinomial,
    smcdiff_extended,
    weight_bounded_variant,
    weight_noiseless,
)
from .sampleset import SampleSet, load_samples, save_samples
from .schedule import (
    DiffusionSchedule,
    backward_mean,
    bridge_mean,
    build_schedule,
    forward_params,
    load_schedule,
    paper_gmm_schedule,
    predict_x0,
    restrict_schedule,
    save_schedule,
)
from .util import derive_rng

__all__ = [name for name in dir() if not name.startswith("_")]
