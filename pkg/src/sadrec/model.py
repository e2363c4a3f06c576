"""Core factor model: pairwise preferences, likelihood, and diagnostics.

The learned state is three dense matrices: user factors (k x n), left item
factors (k x m), and non-negative right item factors (k x m). The relative
preference of user u between items i and j is

    x_uij = sum_h  xi_hu * (eta_hi * tau_hj - eta_hj * tau_hi),

which makes every per-user preference matrix anti-symmetric. With the right
factors frozen at all-ones this collapses to the classic dot-product
difference <xi_u, eta_i> - <xi_u, eta_j>.

Pairs are always scored in a canonical low-index-first orientation and
negated back, so swapping the two items flips the sign bit-for-bit and the
diagonal is exactly zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import (
    CheckpointError,
    ContractViolationError,
    DiagnosticLimitError,
)

# Dense per-user slices are O(m^2); refuse beyond this unless overridden.
DIAGNOSTIC_ITEM_LIMIT = 2048

CHECKPOINT_MAGIC = "sad-v1"


class FactorModel:
    """The three factor matrices; immutable by convention outside trainers."""

    __slots__ = ("user_factors", "left_item_factors", "right_item_factors")

    def __init__(self, user_factors, left_item_factors, right_item_factors):
        self.user_factors = np.ascontiguousarray(user_factors, dtype=np.float64)
        self.left_item_factors = np.ascontiguousarray(
            left_item_factors, dtype=np.float64
        )
        self.right_item_factors = np.ascontiguousarray(
            right_item_factors, dtype=np.float64
        )
        self.validate()

    @property
    def n_factors(self) -> int:
        return self.user_factors.shape[0]

    @property
    def n_users(self) -> int:
        return self.user_factors.shape[1]

    @property
    def n_items(self) -> int:
        return self.left_item_factors.shape[1]

    def validate(self) -> None:
        k = self.user_factors.shape[0]
        if self.user_factors.ndim != 2:
            raise ContractViolationError("user factors must be a k x n matrix")
        if self.left_item_factors.shape != (k, self.left_item_factors.shape[1]):
            raise ContractViolationError("left item factors must be k x m")
        if self.right_item_factors.shape != self.left_item_factors.shape:
            raise ContractViolationError(
                "left and right item factor shapes differ: "
                f"{self.left_item_factors.shape} vs {self.right_item_factors.shape}"
            )
        if self.left_item_factors.shape[0] != k:
            raise ContractViolationError(
                "item factor rows disagree with the user factor row count"
            )
        for name, mat in (
            ("user", self.user_factors),
            ("left item", self.left_item_factors),
            ("right item", self.right_item_factors),
        ):
            if not np.all(np.isfinite(mat)):
                raise ContractViolationError(f"{name} factors contain non-finite values")
        if np.any(self.right_item_factors < 0):
            raise ContractViolationError("right item factors must be non-negative")

    def copy(self) -> "FactorModel":
        return FactorModel(
            self.user_factors.copy(),
            self.left_item_factors.copy(),
            self.right_item_factors.copy(),
        )

    def __repr__(self) -> str:
        return (
            f"FactorModel(k={self.n_factors}, n_users={self.n_users}, "
            f"n_items={self.n_items})"
        )


@dataclass(frozen=True)
class Observation:
    """One observed pairwise preference.

    `direction` is +1 when `preferred` actually beats `other`, -1 when the
    label points the other way.
    """

    user: int
    preferred: int
    other: int
    direction: int


class Observations:
    """Column-oriented batch of observations."""

    __slots__ = ("user", "preferred", "other", "direction")

    def __init__(self, user, preferred, other, direction):
        self.user = np.ascontiguousarray(user, dtype=np.int64)
        self.preferred = np.ascontiguousarray(preferred, dtype=np.int64)
        self.other = np.ascontiguousarray(other, dtype=np.int64)
        self.direction = np.ascontiguousarray(direction, dtype=np.int64)
        n = len(self.user)
        if not (
            len(self.preferred) == len(self.other) == len(self.direction) == n
        ):
            raise ContractViolationError("observation columns have unequal lengths")
        if n and not np.all(np.abs(self.direction) == 1):
            raise ContractViolationError("directions must be +1 or -1")
        if n and np.any(self.preferred == self.other):
            raise ContractViolationError("an observation cannot compare an item to itself")

    @classmethod
    def from_list(cls, observations: Iterable[Observation]) -> "Observations":
        obs = list(observations)
        return cls(
            [o.user for o in obs],
            [o.preferred for o in obs],
            [o.other for o in obs],
            [o.direction for o in obs],
        )

    def __len__(self) -> int:
        return len(self.user)

    def __iter__(self) -> Iterator[Observation]:
        for row in range(len(self)):
            yield Observation(
                int(self.user[row]),
                int(self.preferred[row]),
                int(self.other[row]),
                int(self.direction[row]),
            )

    def subset(self, index) -> "Observations":
        return Observations(
            self.user[index],
            self.preferred[index],
            self.other[index],
            self.direction[index],
        )


def coerce_observations(observations) -> Observations:
    if isinstance(observations, Observations):
        return observations
    return Observations.from_list(observations)


# ---------------------------------------------------------------------------
# numerics


def sigmoid(x):
    """Stable logistic function, elementwise; exact complement under negation."""
    x = np.asarray(x, dtype=np.float64)
    t = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + t), t / (1.0 + t))


def log_sigmoid(x):
    """log(sigmoid(x)) without overflow for |x| in the hundreds."""
    x = np.asarray(x, dtype=np.float64)
    return np.minimum(x, 0.0) - np.log1p(np.exp(-np.abs(x)))


def sigmoid_scalar(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    t = math.exp(x)
    return t / (1.0 + t)


def log_sigmoid_scalar(x: float) -> float:
    if x >= 0:
        return -math.log1p(math.exp(-x))
    return x - math.log1p(math.exp(x))


# ---------------------------------------------------------------------------
# preference computations


def _check_user(model: FactorModel, u: int) -> None:
    if not 0 <= u < model.n_users:
        raise IndexError(f"user index {u} out of range [0, {model.n_users})")


def _check_items(model: FactorModel, idx: np.ndarray) -> None:
    if idx.size and (idx.min() < 0 or idx.max() >= model.n_items):
        raise IndexError(f"item index out of range [0, {model.n_items})")


def pair_scores(model: FactorModel, u: int, preferred, other) -> np.ndarray:
    """Preference log-odds x_u,i,j for arrays of item pairs of one user.

    The per-factor accumulation order is fixed, so a pair scores to the same
    bits whether it is evaluated alone or inside a batch.
    """
    _check_user(model, u)
    i = np.atleast_1d(np.asarray(preferred, dtype=np.intp))
    j = np.atleast_1d(np.asarray(other, dtype=np.intp))
    if i.shape != j.shape:
        raise ContractViolationError("preferred/other index arrays differ in shape")
    _check_items(model, i)
    _check_items(model, j)
    lo = np.minimum(i, j)
    hi = np.maximum(i, j)
    eta = model.left_item_factors
    tau = model.right_item_factors
    terms = eta[:, lo] * tau[:, hi] - eta[:, hi] * tau[:, lo]
    xi = model.user_factors[:, u]
    x = np.zeros(lo.shape[0], dtype=np.float64)
    for h in range(model.n_factors):
        x += xi[h] * terms[h]
    swapped = i > j
    if swapped.any():
        x[swapped] = -x[swapped]
    return x


def batch_scores(model: FactorModel, users, preferred, other) -> np.ndarray:
    """pair_scores across observations that may mix users."""
    users = np.asarray(users, dtype=np.intp)
    preferred = np.asarray(preferred, dtype=np.intp)
    other = np.asarray(other, dtype=np.intp)
    out = np.empty(users.shape[0], dtype=np.float64)
    for u in np.unique(users):
        sel = users == u
        out[sel] = pair_scores(model, int(u), preferred[sel], other[sel])
    return out


def preference(model: FactorModel, u: int, i: int, j: int) -> float:
    """Relative preference x_uij; anti-symmetric in (i, j) bit-for-bit."""
    return float(pair_scores(model, u, i, j)[0])


def prob_prefer(model: FactorModel, u: int, i: int, j: int) -> float:
    """P(user u prefers item i over item j); complement-exact under swap."""
    return sigmoid_scalar(preference(model, u, i, j))


def user_slice(
    model: FactorModel, u: int, max_items: int = DIAGNOSTIC_ITEM_LIMIT
) -> np.ndarray:
    """Dense m x m preference matrix of one user. Diagnostics only: O(m^2)."""
    m = model.n_items
    if m > max_items:
        raise DiagnosticLimitError(
            f"dense slice of {m} items exceeds the diagnostic limit {max_items}"
        )
    iu, ju = np.triu_indices(m, k=1)
    x = pair_scores(model, u, iu, ju)
    out = np.zeros((m, m), dtype=np.float64)
    out[iu, ju] = x
    out[ju, iu] = -x
    return out


def log_likelihood(model: FactorModel, observations) -> float:
    """Sum of log Bernoulli terms over observations; always <= 0.

    Every observation must be stored with preferred < other; the direction
    label carries the outcome. Deduplication is the caller's responsibility.
    """
    obs = coerce_observations(observations)
    if len(obs) == 0:
        return 0.0
    if np.any(obs.preferred >= obs.other):
        bad = int(np.argmax(obs.preferred >= obs.other))
        raise ContractViolationError(
            f"observation {bad} has preferred >= other; store pairs with i < j"
        )
    x = batch_scores(model, obs.user, obs.preferred, obs.other)
    return float(np.sum(log_sigmoid(obs.direction * x)))


def transitivity_residual(model: FactorModel, u: int, i: int, t: int, j: int) -> float:
    """x_uij - x_uit - x_utj; zero means the ternary is additively transitive."""
    if i == t or t == j or i == j:
        raise ContractViolationError("transitivity needs three pairwise distinct items")
    return (
        preference(model, u, i, j)
        - preference(model, u, i, t)
        - preference(model, u, t, j)
    )


def find_preference_cycles(
    model: FactorModel,
    u: int,
    items: Sequence[int],
    max_items: int = DIAGNOSTIC_ITEM_LIMIT,
) -> list[tuple[int, int, int]]:
    """Ordered triples (i, j, t) in the subset with x_uij, x_ujt, x_uti all > 0.

    Each directed cycle shows up once per rotation. Intended for small
    subsets; the scan is cubic in the subset size.
    """
    items = np.asarray(items, dtype=np.intp)
    if items.size > max_items:
        raise DiagnosticLimitError(
            f"cycle scan over {items.size} items exceeds the limit {max_items}"
        )
    if len(np.unique(items)) != items.size:
        raise ContractViolationError("item subset contains duplicates")
    L = items.size
    if L < 3:
        return []
    a_idx, b_idx = np.meshgrid(np.arange(L), np.arange(L), indexing="ij")
    x = pair_scores(model, u, items[a_idx.ravel()], items[b_idx.ravel()])
    pos = (x > 0).reshape(L, L)
    cycles: list[tuple[int, int, int]] = []
    for a in range(L):
        row_a = pos[a]
        col_a = pos[:, a]
        for b in range(L):
            if not row_a[b]:
                continue
            for t in np.nonzero(pos[b] & col_a)[0]:
                cycles.append((int(items[a]), int(items[b]), int(items[t])))
    return cycles


def sparsity(right_item_factors, tol: float = 0.05) -> float:
    """Fraction of right-factor entries inside the dead zone around 1."""
    if tol <= 0:
        raise ContractViolationError("tolerance must be positive")
    t = np.asarray(right_item_factors, dtype=np.float64)
    return float(np.mean(np.abs(t - 1.0) < tol))


# ---------------------------------------------------------------------------
# checkpoint format
#
# Line-oriented text: a 4-line header (magic, n, m, k) followed by the three
# matrices row-major, one row per line, space-delimited, preceded by the
# section markers #XI, #H, #T. Values carry 17 significant digits so a
# round-trip reproduces every float64 bit.


def save_checkpoint(model: FactorModel, path) -> None:
    lines = [
        CHECKPOINT_MAGIC,
        str(model.n_users),
        str(model.n_items),
        str(model.n_factors),
    ]
    for tag, mat in (
        ("#XI", model.user_factors),
        ("#H", model.left_item_factors),
        ("#T", model.right_item_factors),
    ):
        lines.append(tag)
        for row in mat:
            lines.append(" ".join(f"{v:.17g}" for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_checkpoint(path) -> FactorModel:
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if len(lines) < 4 or lines[0] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a {CHECKPOINT_MAGIC} checkpoint")
    try:
        n, m, k = int(lines[1]), int(lines[2]), int(lines[3])
    except ValueError as exc:
        raise CheckpointError(f"{path}: malformed header dimensions") from exc
    cursor = 4
    mats = {}
    for tag, rows, cols in (("#XI", k, n), ("#H", k, m), ("#T", k, m)):
        if cursor >= len(lines) or lines[cursor] != tag:
            raise CheckpointError(f"{path}: expected section {tag} at line {cursor + 1}")
        cursor += 1
        block = np.empty((rows, cols), dtype=np.float64)
        for r in range(rows):
            if cursor >= len(lines):
                raise CheckpointError(f"{path}: truncated section {tag}")
            parts = lines[cursor].split()
            if len(parts) != cols:
                raise CheckpointError(
                    f"{path}:{cursor + 1}: expected {cols} values, got {len(parts)}"
                )
            try:
                block[r] = [float(p) for p in parts]
            except ValueError as exc:
                raise CheckpointError(f"{path}:{cursor + 1}: bad float") from exc
            cursor += 1
        mats[tag] = block
    if cursor != len(lines):
        raise CheckpointError(f"{path}: trailing content after #T section")
    try:
        return FactorModel(mats["#XI"], mats["#H"], mats["#T"])
    except ContractViolationError as exc:
        raise CheckpointError(f"{path}: {exc}") from exc
