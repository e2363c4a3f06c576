"""Gibbs sampler for the Probit variant of the pairwise preference model.

The logistic link is swapped for a Probit one and the model is augmented
with a latent score z_uij = x_uij + eps, eps ~ N(0, 1), whose sign equals
the observed direction. Conditioned on Z, every factor column is a Bayesian
linear regression with spherical Gaussian prior, so the sweep alternates

    z  | rest   truncated normal around the current x
    xi | rest   k-variate Gaussian
    eta| rest   k-variate Gaussian
    tau| rest   k-variate Gaussian restricted to the non-negative orthant

Only observed pairs contribute regression rows. Whenever a conditional
needs a pair in the (j, i) orientation it uses z_uji = -z_uij.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import ndtr, ndtri

from .errors import ContractViolationError, DivergedChainError, SadrecError
from .model import FactorModel, Observations, batch_scores, coerce_observations
from .seeding import substream

_TINY = np.finfo(np.float64).tiny

# Above this truncation point the inverse-CDF map loses resolution; switch
# to an exponential-proposal rejection sampler (Robert-style).
_TAIL_SWITCH = 3.0


@dataclass
class GibbsConfig:
    n_factors: int = 5
    seed: int = 0
    n_sweeps: int = 1000
    burn_in: int = 200
    thin: int = 1
    prior_variance: float = 1.0
    orthant_passes: int = 2  # inner coordinate passes for the tau draw

    def __post_init__(self):
        if self.n_sweeps <= self.burn_in or self.burn_in < 0:
            raise ContractViolationError("need n_sweeps > burn_in >= 0")
        if self.thin < 1:
            raise ContractViolationError("thin must be at least 1")
        if self.prior_variance <= 0:
            raise ContractViolationError("prior_variance must be positive")
        if self.n_factors < 1 or self.orthant_passes < 1:
            raise ContractViolationError("n_factors and orthant_passes must be >= 1")


# ---------------------------------------------------------------------------
# truncated normal draws


def _std_lower_tail(lower: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draws of t ~ N(0, 1) conditioned on t >= lower, elementwise."""
    lower = np.atleast_1d(np.asarray(lower, dtype=np.float64))
    out = np.empty_like(lower)
    easy = lower <= _TAIL_SWITCH
    if easy.any():
        a = lower[easy]
        u = 1.0 - rng.random(a.size)  # in (0, 1]: keeps the quantile finite
        out[easy] = -ndtri(u * ndtr(-a))
    hard = ~easy
    if hard.any():
        a = lower[hard]
        lam = 0.5 * (a + np.sqrt(a * a + 4.0))
        draws = np.empty(a.size)
        pending = np.ones(a.size, dtype=bool)
        while pending.any():
            idx = np.nonzero(pending)[0]
            x = a[idx] + rng.exponential(size=idx.size) / lam[idx]
            accept = rng.random(idx.size) <= np.exp(-0.5 * (x - lam[idx]) ** 2)
            draws[idx[accept]] = x[accept]
            pending[idx[accept]] = False
        out[hard] = draws
    return out


def sample_truncated_normal(mean, sign: int, rng: np.random.Generator):
    """Draw from N(mean, 1) restricted to (0, inf) for sign +1, (-inf, 0] for -1.

    Accepts a scalar or an array mean; arrays come back elementwise. Both
    branches route through the same lower-tail primitive.
    """
    if sign not in (1, -1):
        raise ContractViolationError("sign must be +1 or -1")
    mean_arr = np.atleast_1d(np.asarray(mean, dtype=np.float64))
    if sign == 1:
        draws = np.maximum(mean_arr + _std_lower_tail(-mean_arr, rng), _TINY)
    else:
        draws = np.minimum(mean_arr - _std_lower_tail(mean_arr, rng), 0.0)
    if np.isscalar(mean) or np.ndim(mean) == 0:
        return float(draws[0])
    return draws


def _truncnorm_lower_zero(mean: float, sd: float, rng: np.random.Generator) -> float:
    """One draw from N(mean, sd^2) restricted to [0, inf)."""
    t = _std_lower_tail(np.asarray([-mean / sd]), rng)[0]
    return max(mean + sd * t, _TINY)


# ---------------------------------------------------------------------------
# state


class ProbitState:
    """Factor model plus latent scores aligned with the observation arrays."""

    def __init__(
        self,
        model: FactorModel,
        observations: Observations,
        z: np.ndarray,
        rng: np.random.Generator,
        prior_variance: float = 1.0,
        orthant_passes: int = 2,
    ):
        obs = coerce_observations(observations)
        if np.any(obs.preferred >= obs.other):
            raise ContractViolationError("observations must be stored with i < j")
        self.model = model
        self.observations = obs
        self.z = np.asarray(z, dtype=np.float64)
        if self.z.shape != (len(obs),):
            raise ContractViolationError("z must align with the observation list")
        self.rng = rng
        self.prior_variance = float(prior_variance)
        self.orthant_passes = int(orthant_passes)
        self._index()

    def _index(self) -> None:
        obs = self.observations
        n, m = self.model.n_users, self.model.n_items
        self.rows_by_user = [
            np.nonzero(obs.user == u)[0] for u in range(n)
        ]
        self.rows_item_first = [np.nonzero(obs.preferred == i)[0] for i in range(m)]
        self.rows_item_second = [np.nonzero(obs.other == i)[0] for i in range(m)]


def initialize_state(
    observations, n_users: int, n_items: int, config: GibbsConfig
) -> ProbitState:
    """Prior draws for the factors, then one z refresh for sign consistency."""
    rng = substream(config.seed, "gibbs")
    k = config.n_factors
    sd = math.sqrt(config.prior_variance)
    xi = sd * rng.standard_normal((k, n_users))
    eta = sd * rng.standard_normal((k, n_items))
    tau = np.abs(sd * rng.standard_normal((k, n_items)))  # half-normal: orthant prior
    model = FactorModel(xi, eta, tau)
    obs = coerce_observations(observations)
    state = ProbitState(
        model,
        obs,
        np.zeros(len(obs)),
        rng,
        prior_variance=config.prior_variance,
        orthant_passes=config.orthant_passes,
    )
    sample_z(state)
    return state


# ---------------------------------------------------------------------------
# conditionals
#
# Each builder returns the regression design and response implied by the
# observed pairs that involve the target column; the posterior is then
# N(solve(P, Psi^T zbar), P^{-1}) with P = Psi^T Psi + I / prior_variance.


def _user_design(state: ProbitState, u: int):
    obs = state.observations
    rows = state.rows_by_user[u]
    i = obs.preferred[rows]
    j = obs.other[rows]
    eta = state.model.left_item_factors
    tau = state.model.right_item_factors
    psi = (eta[:, i] * tau[:, j] - eta[:, j] * tau[:, i]).T
    return psi, state.z[rows]


def _left_item_design(state: ProbitState, i: int):
    obs = state.observations
    rows_f = state.rows_item_first[i]
    rows_s = state.rows_item_second[i]
    users = np.concatenate([obs.user[rows_f], obs.user[rows_s]])
    rivals = np.concatenate([obs.other[rows_f], obs.preferred[rows_s]])
    z_signed = np.concatenate([state.z[rows_f], -state.z[rows_s]])
    xi = state.model.user_factors[:, users]
    tau = state.model.right_item_factors
    psi = (xi * tau[:, rivals]).T
    carried = np.sum(
        xi * tau[:, i][:, None] * state.model.left_item_factors[:, rivals], axis=0
    )
    return psi, z_signed + carried


def _right_item_design(state: ProbitState, j: int):
    obs = state.observations
    rows_s = state.rows_item_second[j]  # pairs (i, j): z enters positively
    rows_f = state.rows_item_first[j]  # pairs (j, i): z enters negated
    users = np.concatenate([obs.user[rows_s], obs.user[rows_f]])
    rivals = np.concatenate([obs.preferred[rows_s], obs.other[rows_f]])
    z_signed = np.concatenate([state.z[rows_s], -state.z[rows_f]])
    xi = state.model.user_factors[:, users]
    eta = state.model.left_item_factors
    psi = (xi * eta[:, rivals]).T
    carried = np.sum(
        xi * state.model.right_item_factors[:, rivals] * eta[:, j][:, None], axis=0
    )
    return psi, z_signed + carried


def _posterior(psi: np.ndarray, zbar: np.ndarray, k: int, prior_variance: float):
    precision = psi.T @ psi + np.eye(k) / prior_variance
    if psi.shape[0]:
        mean = np.linalg.solve(precision, psi.T @ zbar)
    else:
        mean = np.zeros(k)
    return mean, precision


def user_conditional(state: ProbitState, u: int):
    psi, zbar = _user_design(state, u)
    return _posterior(psi, zbar, state.model.n_factors, state.prior_variance)


def left_item_conditional(state: ProbitState, i: int):
    psi, zbar = _left_item_design(state, i)
    return _posterior(psi, zbar, state.model.n_factors, state.prior_variance)


def right_item_conditional(state: ProbitState, j: int):
    psi, zbar = _right_item_design(state, j)
    return _posterior(psi, zbar, state.model.n_factors, state.prior_variance)


def _draw_gaussian(mean: np.ndarray, precision: np.ndarray, rng) -> np.ndarray:
    try:
        chol = np.linalg.cholesky(precision)
    except np.linalg.LinAlgError as exc:  # Gram + I is SPD; only NaNs get here
        raise SadrecError("posterior precision not SPD: state is contaminated") from exc
    eps = rng.standard_normal(mean.shape[0])
    return mean + solve_triangular(chol.T, eps, lower=False)


def sample_z(state: ProbitState) -> None:
    """Refresh every latent score from its truncated-normal conditional."""
    obs = state.observations
    x = batch_scores(state.model, obs.user, obs.preferred, obs.other)
    pos = obs.direction == 1
    z = np.empty(len(obs))
    if pos.any():
        z[pos] = np.maximum(
            x[pos] + _std_lower_tail(-x[pos], state.rng), _TINY
        )
    neg = ~pos
    if neg.any():
        z[neg] = np.minimum(x[neg] - _std_lower_tail(x[neg], state.rng), 0.0)
    state.z = z


def sample_user_factor(state: ProbitState, u: int) -> None:
    mean, precision = user_conditional(state, u)
    state.model.user_factors[:, u] = _draw_gaussian(mean, precision, state.rng)


def sample_left_item_factor(state: ProbitState, i: int) -> None:
    mean, precision = left_item_conditional(state, i)
    state.model.left_item_factors[:, i] = _draw_gaussian(mean, precision, state.rng)


def sample_right_item_factor(state: ProbitState, j: int) -> None:
    """Orthant-truncated Gaussian draw via inner coordinate-wise Gibbs."""
    mean, precision = right_item_conditional(state, j)
    k = mean.shape[0]
    tau = state.model.right_item_factors[:, j].copy()
    for _ in range(state.orthant_passes):
        for c in range(k):
            pcc = precision[c, c]
            resid = float(precision[c] @ (tau - mean)) - pcc * (tau[c] - mean[c])
            cond_mean = mean[c] - resid / pcc
            cond_sd = 1.0 / math.sqrt(pcc)
            tau[c] = _truncnorm_lower_zero(cond_mean, cond_sd, state.rng)
    state.model.right_item_factors[:, j] = tau


# ---------------------------------------------------------------------------
# joint density (oracle surface) and the chain driver


def log_joint(state: ProbitState) -> float:
    """Log density of (Z, factors) given the observed directions, up to nothing:
    all constants included so ratios agree with the conditionals exactly."""
    obs = state.observations
    x = batch_scores(state.model, obs.user, obs.preferred, obs.other)
    z = state.z
    if np.any((obs.direction == 1) & (z <= 0)) or np.any(
        (obs.direction == -1) & (z > 0)
    ):
        return -np.inf
    if np.any(state.model.right_item_factors < 0):
        return -np.inf
    resid = z - x
    n_obs = len(obs)
    out = -0.5 * float(resid @ resid) - 0.5 * n_obs * math.log(2 * math.pi)
    v = state.prior_variance
    for mat in (
        state.model.user_factors,
        state.model.left_item_factors,
        state.model.right_item_factors,
    ):
        out += -0.5 * float(np.sum(mat * mat)) / v - 0.5 * mat.size * math.log(
            2 * math.pi * v
        )
    return out


@dataclass
class ChainResult:
    samples: list[FactorModel]
    log_density: np.ndarray
    mean_model: FactorModel
    sd_user: np.ndarray
    sd_left: np.ndarray
    sd_right: np.ndarray
    config: GibbsConfig


def run_chain(
    observations, n_users: int, n_items: int, config: GibbsConfig
) -> ChainResult:
    """Full sweep order z -> all users -> all left items -> all right items.

    Keeps thinned post-burn-in snapshots and the per-sweep joint log density.
    Deterministic per config.seed.
    """
    state = initialize_state(observations, n_users, n_items, config)
    samples: list[FactorModel] = []
    trace = np.empty(config.n_sweeps)
    for sweep in range(1, config.n_sweeps + 1):
        sample_z(state)
        for u in range(n_users):
            sample_user_factor(state, u)
        for i in range(n_items):
            sample_left_item_factor(state, i)
        for j in range(n_items):
            sample_right_item_factor(state, j)
        density = log_joint(state)
        if not np.isfinite(density):
            raise DivergedChainError(sweep)
        trace[sweep - 1] = density
        if sweep > config.burn_in and (sweep - config.burn_in) % config.thin == 0:
            samples.append(state.model.copy())
    if not samples:
        raise ContractViolationError("thinning left no post-burn-in samples")
    user_stack = np.stack([s.user_factors for s in samples])
    left_stack = np.stack([s.left_item_factors for s in samples])
    right_stack = np.stack([s.right_item_factors for s in samples])
    mean_model = FactorModel(
        user_stack.mean(axis=0),
        left_stack.mean(axis=0),
        right_stack.mean(axis=0),
    )
    return ChainResult(
        samples=samples,
        log_density=trace,
        mean_model=mean_model,
        sd_user=user_stack.std(axis=0),
        sd_left=left_stack.std(axis=0),
        sd_right=right_stack.std(axis=0),
        config=config,
    )


def write_posterior_summary(result: ChainResult, path) -> None:
    """Per-parameter mean and standard deviation as delimited text."""
    lines = ["matrix,factor,index,mean,sd"]
    for tag, mean, sd in (
        ("XI", result.mean_model.user_factors, result.sd_user),
        ("H", result.mean_model.left_item_factors, result.sd_left),
        ("T", result.mean_model.right_item_factors, result.sd_right),
    ):
        for h in range(mean.shape[0]):
            for c in range(mean.shape[1]):
                lines.append(f"{tag},{h},{c},{mean[h, c]:.17g},{sd[h, c]:.17g}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
