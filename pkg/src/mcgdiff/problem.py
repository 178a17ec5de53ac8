"""Linear inverse problems: the SVD change of basis that diagonalizes the
observation operator, noise-level-to-diffusion-time matching (tau), and
measurement-aware DDIM timestep selection."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .gmm import GaussianMixturePrior, sample_mixture
from .schedule import DiffusionSchedule

_SV_TIE_REL = 1e-8


@dataclass(frozen=True)
class LinearInverseProblem:
    """Observation y = A x + sigma_y * eps with A of full row rank."""

    A: np.ndarray
    sigma_y: float
    y: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        y = np.atleast_1d(np.asarray(self.y, dtype=float))
        if self.sigma_y < 0.0:
            raise ValueError("sigma_y must be nonnegative")
        if y.shape != (A.shape[0],):
            raise ValueError("y must have one entry per row of A")
        s = np.linalg.svd(A, compute_uv=False)
        if s[-1] <= max(A.shape) * np.finfo(float).eps * s[0]:
            raise ValueError("A must have full row rank")
        A.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "y", y)

    @property
    def d_y(self) -> int:
        return self.A.shape[0]

    @property
    def d_x(self) -> int:
        return self.A.shape[1]


@dataclass(frozen=True)
class SpectralProblem:
    """The problem rotated into the SVD basis V = [Vbar | Vunder].

    In this basis the observation reads Y = X[:d_y] + sigma_y S^{-1} eps:
    coordinate i carries independent noise of scale sigma_y / s_i. ``tau``
    holds the matched diffusion step per coordinate (None when sigma_y = 0)
    and ``y_tilde[i] = sqrt(alpha_bar[tau_i]) * y_spec[i]``.
    """

    U: np.ndarray
    S: np.ndarray
    V: np.ndarray
    y_spec: np.ndarray
    sigma_y: float
    coord_noise: np.ndarray
    tau: np.ndarray | None
    y_tilde: np.ndarray | None

    @property
    def d_y(self) -> int:
        return len(self.S)

    @property
    def d_x(self) -> int:
        return self.V.shape[0]

    @property
    def V_bar(self) -> np.ndarray:
        return self.V[:, : self.d_y]

    @property
    def V_under(self) -> np.ndarray:
        return self.V[:, self.d_y :]

    def to_spectral(self, x):
        """Coordinates of x in the V basis (rows of x are states)."""
        return np.asarray(x, dtype=float) @ self.V

    def from_spectral(self, xs):
        """Map spectral coordinates back to the original basis."""
        return np.asarray(xs, dtype=float) @ self.V.T


def match_tau(sched: DiffusionSchedule, sigma_y: float, s: float) -> int:
    """Diffusion step whose signal-to-noise ratio matches the measurement's:
    argmin over l in [1:n] of |sigma_y sqrt(ab_l) - sqrt(1-ab_l) s|, ties
    broken toward the smaller step."""
    if sigma_y <= 0.0 or s <= 0.0:
        raise ValueError("match_tau needs sigma_y > 0 and s > 0")
    ab = sched.alpha_bar[1:]
    resid = np.abs(sigma_y * np.sqrt(ab) - np.sqrt(1.0 - ab) * s)
    return int(np.argmin(resid)) + 1


def decompose(prob: LinearInverseProblem, sched: DiffusionSchedule) -> SpectralProblem:
    """SVD-diagonalize the problem and match per-coordinate noise to steps.

    V is completed deterministically from the full SVD (any orthonormal
    completion is equivalent: only the span of the trailing columns enters
    the algorithms, and determinism is required for manifest replay).
    """
    U, S, Vh = np.linalg.svd(prob.A, full_matrices=True)
    if np.any(np.diff(S) > -_SV_TIE_REL * S[0]):
        warnings.warn("near-duplicate singular values; tau matching assumes they are distinct")
    V = Vh.T
    y_spec = (prob.y @ U) / S
    coord_noise = prob.sigma_y / S
    tau = None
    y_tilde = None
    if prob.sigma_y > 0.0:
        tau = np.array([match_tau(sched, prob.sigma_y, s) for s in S], dtype=int)
        y_tilde = np.sqrt(sched.alpha_bar[tau]) * y_spec
    return SpectralProblem(
        U=U,
        S=S,
        V=V,
        y_spec=y_spec,
        sigma_y=float(prob.sigma_y),
        coord_noise=coord_noise,
        tau=tau,
        y_tilde=y_tilde,
    )


def remap_to_subset(spec: SpectralProblem, steps) -> SpectralProblem:
    """Re-express tau as positions on a timestep subset (1-based).

    ``steps`` must contain every tau (select_timesteps guarantees this);
    y_tilde is unchanged because the subset preserves alpha_bar values.
    """
    if spec.tau is None:
        return spec
    steps = np.asarray(steps, dtype=int)
    positions = np.searchsorted(steps, spec.tau) + 1
    if np.any(steps[positions - 1] != spec.tau):
        raise ValueError("timestep subset must contain every matched tau")
    return replace(spec, tau=positions)


def select_timesteps(sched: DiffusionSchedule, R: int, sigma_y: float, S) -> np.ndarray:
    """Choose ~R DDIM steps: every matched tau is included, and between
    insertions the sqrt(alpha_bar) decrement is kept near
    delta = (sqrt(ab_1) - sqrt(ab_n)) / (R - #tau - 1).

    Follows the measurement-aware selection loop: walk l = 2..n and emit a
    step when the accumulated sqrt(ab) gap reaches delta or l is a tau; the
    final step is pinned to n.
    """
    S = np.atleast_1d(np.asarray(S, dtype=float))
    taus: list[int] = []
    if sigma_y > 0.0:
        for s in S:
            t = match_tau(sched, sigma_y, s)
            if t not in taus:
                taus.append(t)
    if R < len(taus) + 2:
        raise ValueError(f"R={R} too small: need at least #tau + 2 = {len(taus) + 2}")
    n_m = R - len(taus) - 1
    sq = np.sqrt(sched.alpha_bar)
    delta = (sq[1] - sq[sched.n]) / n_m
    tau_set = set(taus)
    steps = [1]
    e = 1
    for ell in range(2, sched.n + 1):
        if sq[e] - sq[ell] >= delta or ell in tau_set:
            steps.append(ell)
            e = ell
    if steps[-1] != sched.n:
        steps.append(sched.n)
    return np.asarray(steps, dtype=int)


def random_problem(
    prior: GaussianMixturePrior, d_y: int, rng: np.random.Generator
) -> tuple[LinearInverseProblem, np.ndarray]:
    """Draw a measurement model and its hidden ground truth.

    A is a Gaussian matrix with its singular values replaced by sorted
    U[0,1] draws; sigma_y ~ U[0, max s]; x* ~ prior; y = A x* + sigma_y eps.
    Returns (problem, x*).
    """
    d = prior.d
    if not 1 <= d_y < d:
        raise ValueError("need 1 <= d_y < d")
    A_tilde = rng.standard_normal((d_y, d))
    U, _, Vh = np.linalg.svd(A_tilde, full_matrices=False)
    s = np.sort(rng.uniform(0.0, 1.0, size=d_y))[::-1]
    A = (U * s) @ Vh
    sigma_y = rng.uniform(0.0, s[0])
    x_star = sample_mixture(prior, 1, rng).rows[0]
    y = A @ x_star + sigma_y * rng.standard_normal(d_y)
    return LinearInverseProblem(A=A, sigma_y=sigma_y, y=y), x_star


# -- serialization -------------------------------------------------------------


def problem_to_json(prob: LinearInverseProblem, seed: int | None = None) -> str:
    payload = {
        "A": prob.A.tolist(),
        "sigma_y": prob.sigma_y,
        "y": prob.y.tolist(),
        "seed": seed,
    }
    return json.dumps(payload, indent=1)


def problem_from_json(text: str) -> LinearInverseProblem:
    payload = json.loads(text)
    return LinearInverseProblem(
        A=np.asarray(payload["A"], dtype=float),
        sigma_y=float(payload["sigma_y"]),
        y=np.asarray(payload["y"], dtype=float),
    )


def save_problem(prob: LinearInverseProblem, path, seed: int | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(problem_to_json(prob, seed=seed))


def load_problem(path) -> LinearInverseProblem:
    with open(path, "r", encoding="utf-8") as fh:
        return problem_from_json(fh.read())
