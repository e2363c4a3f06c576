"""Plain stochastic gradient ascent on the pairwise log likelihood.

Two data regimes share one update rule. Implicit datasets are walked the
classic way: every (user, interacted item) gets one freshly sampled
non-interacted rival per epoch and counts as a positive observation.
Explicit observation lists (as produced by the simulation harness) are
replayed in order with their stored directions.

Updates are true SGD: each observation's five factor columns are updated
immediately, all gradients taken at pre-update values. The right factors
get an l1 pull toward 1 applied proximally, so a pure regularizer step can
never cross 1; it snaps there exactly. Entries are clamped at 0 from below
after every update.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from .data import as_implicit, sample_negative
from .errors import ContractViolationError, DataError, DivergedTrainingError
from .model import (
    FactorModel,
    Observations,
    coerce_observations,
    log_sigmoid_scalar,
    sigmoid_scalar,
    sparsity,
)
from .seeding import substream


@dataclass
class TrainConfig:
    learning_rate: float = 0.05
    l1_weight: float = 0.01
    l2_weight: float = 0.005
    epochs: int = 20
    n_factors: int = 5
    seed: int = 0
    convergence_rel_tol: float = 0.0  # 0 disables early stopping
    freeze_right_factors: bool = False  # classic dot-product mode
    shuffle: bool = False

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ContractViolationError("learning_rate must be positive")
        if self.epochs < 1:
            raise ContractViolationError("epochs must be at least 1")
        if self.n_factors < 1:
            raise ContractViolationError("n_factors must be at least 1")
        if self.l1_weight < 0 or self.l2_weight < 0:
            raise ContractViolationError("regularizer weights must be non-negative")
        if self.convergence_rel_tol < 0:
            raise ContractViolationError("convergence_rel_tol must be non-negative")


@dataclass
class GradientBundle:
    """Per-observation partials of the log Bernoulli term, length k each."""

    d_xi_u: np.ndarray
    d_eta_i: np.ndarray
    d_eta_j: np.ndarray
    d_tau_i: np.ndarray
    d_tau_j: np.ndarray
    weight: float


@dataclass
class EpochRecord:
    epoch: int
    mean_loglik: float
    t_sparsity: float
    seconds: float
    n_updates: int
    n_skipped_users: int


@dataclass
class TrainingLog:
    """One record per completed epoch plus the pre-training likelihood."""

    records: list[EpochRecord]
    initial_loglik: float
    initial_sparsity: float


def observation_gradients(
    model: FactorModel, u: int, i: int, j: int, direction: int = 1
) -> GradientBundle:
    """Gradients of log p(d | x_uij) w.r.t. the five factor columns involved.

    weight = sigmoid(-x) - 1[d = -1]; the remaining partials are that weight
    times elementwise products of the other columns.
    """
    if i == j:
        raise ContractViolationError("gradient needs two distinct items")
    xi = model.user_factors[:, u]
    hi = model.left_item_factors[:, i]
    hj = model.left_item_factors[:, j]
    ti = model.right_item_factors[:, i]
    tj = model.right_item_factors[:, j]
    e = hi * tj - hj * ti
    x = float(xi @ e)
    w = sigmoid_scalar(-x) - (1.0 if direction == -1 else 0.0)
    return GradientBundle(
        d_xi_u=w * e,
        d_eta_i=w * (xi * tj),
        d_eta_j=-w * (xi * ti),
        d_tau_i=-w * (xi * hj),
        d_tau_j=w * (xi * hi),
        weight=w,
    )


def init_model(n_users: int, n_items: int, config: TrainConfig) -> FactorModel:
    """Standard-normal user/left factors; right factors start at the prior center 1."""
    rng = substream(config.seed, "init")
    k = config.n_factors
    xi = rng.standard_normal((k, n_users))
    eta = rng.standard_normal((k, n_items))
    tau = np.ones((k, n_items))
    return FactorModel(xi, eta, tau)


def _prox_toward_one(v: np.ndarray, step: float) -> np.ndarray:
    """Move each entry toward 1 by `step` without crossing; clamp at 0."""
    d = v - 1.0
    out = np.where(np.abs(d) <= step, 1.0, v - np.sign(d) * step)
    return np.maximum(out, 0.0)


def _apply_update(
    xi_mat, eta_mat, tau_mat, u, i, j, direction, rho, w1, w2, freeze
) -> float:
    """One SGD step; returns the observation's log likelihood before the step."""
    xi = xi_mat[:, u]
    hi = eta_mat[:, i]
    hj = eta_mat[:, j]
    ti = tau_mat[:, i]
    tj = tau_mat[:, j]
    e = hi * tj - hj * ti
    x = float(xi @ e)
    w = sigmoid_scalar(-x) - (1.0 if direction == -1 else 0.0)
    wxi = w * xi
    new_xi = xi + rho * (w * e - (2.0 * w2) * xi)
    new_hi = hi + rho * (wxi * tj - (2.0 * w2) * hi)
    new_hj = hj + rho * (-wxi * ti - (2.0 * w2) * hj)
    if not freeze:
        step = rho * w1
        new_ti = _prox_toward_one(ti + rho * (-wxi * hj), step)
        new_tj = _prox_toward_one(tj + rho * (wxi * hi), step)
        tau_mat[:, i] = new_ti
        tau_mat[:, j] = new_tj
    xi_mat[:, u] = new_xi
    eta_mat[:, i] = new_hi
    eta_mat[:, j] = new_hj
    return log_sigmoid_scalar(direction * x)


def sgd_epoch(model, data, config: TrainConfig, rng: np.random.Generator) -> EpochRecord:
    """One pass over an implicit dataset with per-interaction negative sampling.

    Users lacking either an interacted or a non-interacted item are skipped
    and counted. Returns the epoch summary; `epoch` is filled by train().
    """
    view = as_implicit(data)
    xi_mat = model.user_factors
    eta_mat = model.left_item_factors
    tau_mat = model.right_item_factors
    rho, w1, w2 = config.learning_rate, config.l1_weight, config.l2_weight
    freeze = config.freeze_right_factors
    total = 0.0
    n_updates = 0
    n_skipped = 0
    t0 = time.perf_counter()
    user_order = np.arange(view.n_users)
    if config.shuffle:
        user_order = rng.permutation(user_order)
    for u in user_order:
        u = int(u)
        items = view.items_of(u)
        if items.size == 0 or items.size >= view.n_items:
            n_skipped += 1
            continue
        if config.shuffle:
            items = rng.permutation(items)
        for i in items.tolist():
            j = sample_negative(view, u, rng)
            total += _apply_update(
                xi_mat, eta_mat, tau_mat, u, i, j, 1, rho, w1, w2, freeze
            )
            n_updates += 1
    if n_updates == 0:
        raise DataError("no user has both an interacted and a non-interacted item")
    return EpochRecord(
        epoch=0,
        mean_loglik=total / n_updates,
        t_sparsity=sparsity(tau_mat),
        seconds=time.perf_counter() - t0,
        n_updates=n_updates,
        n_skipped_users=n_skipped,
    )


def sgd_epoch_observations(
    model, observations: Observations, config: TrainConfig
) -> EpochRecord:
    """One in-order pass over an explicit observation list (both signs occur)."""
    obs = coerce_observations(observations)
    if len(obs) == 0:
        raise DataError("cannot train on an empty observation list")
    xi_mat = model.user_factors
    eta_mat = model.left_item_factors
    tau_mat = model.right_item_factors
    rho, w1, w2 = config.learning_rate, config.l1_weight, config.l2_weight
    freeze = config.freeze_right_factors
    users = obs.user.tolist()
    firsts = obs.preferred.tolist()
    seconds = obs.other.tolist()
    dirs = obs.direction.tolist()
    total = 0.0
    t0 = time.perf_counter()
    for u, i, j, d in zip(users, firsts, seconds, dirs):
        total += _apply_update(xi_mat, eta_mat, tau_mat, u, i, j, d, rho, w1, w2, freeze)
    return EpochRecord(
        epoch=0,
        mean_loglik=total / len(obs),
        t_sparsity=sparsity(tau_mat),
        seconds=time.perf_counter() - t0,
        n_updates=len(obs),
        n_skipped_users=0,
    )


def _initial_alg_loglik(model, view, config: TrainConfig) -> float:
    """Mean log likelihood of one sampled pass, without updating anything."""
    from .model import log_likelihood  # local import to keep module load light

    rng = substream(config.seed, "eval")
    users, firsts, seconds, dirs = [], [], [], []
    for u in range(view.n_users):
        items = view.items_of(u)
        if items.size == 0 or items.size >= view.n_items:
            continue
        for i in items.tolist():
            j = sample_negative(view, u, rng)
            lo, hi = (i, j) if i < j else (j, i)
            users.append(u)
            firsts.append(lo)
            seconds.append(hi)
            dirs.append(1 if i < j else -1)
    if not users:
        raise DataError("no user has both an interacted and a non-interacted item")
    obs = Observations(users, firsts, seconds, dirs)
    return log_likelihood(model, obs) / len(obs)


def _finite(model: FactorModel) -> bool:
    return (
        np.all(np.isfinite(model.user_factors))
        and np.all(np.isfinite(model.left_item_factors))
        and np.all(np.isfinite(model.right_item_factors))
    )


def _run_epochs(model, config: TrainConfig, run_one, initial_loglik: float):
    records: list[EpochRecord] = []
    log = TrainingLog(
        records=records,
        initial_loglik=initial_loglik,
        initial_sparsity=sparsity(model.right_item_factors),
    )
    prev = None
    for epoch in range(1, config.epochs + 1):
        rec = run_one()
        rec.epoch = epoch
        records.append(rec)
        if not _finite(model):
            raise DivergedTrainingError(epoch)
        if prev is not None and config.convergence_rel_tol > 0:
            denom = max(abs(prev), 1e-300)
            if abs(rec.mean_loglik - prev) / denom < config.convergence_rel_tol:
                break
        prev = rec.mean_loglik
    return model, log


def train(data, config: TrainConfig) -> tuple[FactorModel, TrainingLog]:
    """Fit a model on implicit data; deterministic given config.seed."""
    view = as_implicit(data)
    if view.n_interactions == 0:
        raise DataError("dataset has no interactions")
    model = init_model(view.n_users, view.n_items, config)
    initial = _initial_alg_loglik(model, view, config)
    rng = substream(config.seed, "negative")
    return _run_epochs(
        model, config, lambda: sgd_epoch(model, view, config, rng), initial
    )


def train_on_observations(
    observations, n_users: int, n_items: int, config: TrainConfig
) -> tuple[FactorModel, TrainingLog]:
    """Fit on an explicit observation list (simulation-study regime)."""
    from .model import log_likelihood

    obs = coerce_observations(observations)
    if len(obs) == 0:
        raise DataError("cannot train on an empty observation list")
    model = init_model(n_users, n_items, config)
    initial = log_likelihood(model, obs) / len(obs)
    return _run_epochs(
        model, config, lambda: sgd_epoch_observations(model, obs, config), initial
    )


def train_bpr(data, config: TrainConfig) -> tuple[FactorModel, TrainingLog]:
    """Classic-mode fit: right factors frozen at all-ones."""
    return train(data, replace(config, freeze_right_factors=True))


# ---------------------------------------------------------------------------
# log / config text formats


def write_training_log(log: TrainingLog, path) -> None:
    """`epoch, mean_loglik, t_sparsity, seconds` rows; epoch 0 is pre-training."""
    lines = ["epoch,mean_loglik,t_sparsity,seconds"]
    lines.append(f"0,{log.initial_loglik:.17g},{log.initial_sparsity:.17g},0")
    for rec in log.records:
        lines.append(
            f"{rec.epoch},{rec.mean_loglik:.17g},{rec.t_sparsity:.17g},{rec.seconds:.6g}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_train_config(path, base: TrainConfig | None = None) -> TrainConfig:
    """Flat key=value file; keys are TrainConfig field names."""
    base = base or TrainConfig()
    known = {f.name: f.type for f in fields(TrainConfig)}
    overrides = {}
    path = Path(path)
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DataError(f"{path}:{lineno}: expected key=value")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in known:
            raise DataError(f"{path}:{lineno}: unknown config key {key!r}")
        try:
            if key in ("epochs", "n_factors", "seed"):
                overrides[key] = int(value)
            elif key in ("freeze_right_factors", "shuffle"):
                if value.lower() not in ("true", "false", "0", "1"):
                    raise ValueError(value)
                overrides[key] = value.lower() in ("true", "1")
            else:
                overrides[key] = float(value)
        except ValueError:
            raise DataError(f"{path}:{lineno}: bad value for {key!r}")
    return replace(base, **overrides)
