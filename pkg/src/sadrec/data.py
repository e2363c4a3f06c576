"""Dataset ingestion, implicit views, LOO splitting, and negative sampling.

Ratings are parsed and retained for evaluation, but trainers only ever see
an `ImplicitInteractions` view that exposes membership of (user, item) and
nothing else. That type separation is the binarization firewall.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractViolationError, DataError, EmptyDatasetError
from .model import Observations
from .seeding import substream


class ImplicitInteractions:
    """Trainer-facing view of a dataset: membership only."""

    __slots__ = ("n_items", "_items_by_user", "_sets_by_user")

    def __init__(self, n_items: int, items_by_user):
        self.n_items = int(n_items)
        self._items_by_user = [
            np.ascontiguousarray(items, dtype=np.int64) for items in items_by_user
        ]
        self._sets_by_user = [frozenset(int(i) for i in a) for a in self._items_by_user]

    @property
    def n_users(self) -> int:
        return len(self._items_by_user)

    @property
    def n_interactions(self) -> int:
        return sum(a.size for a in self._items_by_user)

    def items_of(self, u: int) -> np.ndarray:
        return self._items_by_user[u]

    def interacted_set(self, u: int) -> frozenset:
        return self._sets_by_user[u]


class InteractionDataset:
    """Per-user interactions with external id maps and evaluation-only ratings."""

    def __init__(
        self,
        user_ids: list[str],
        item_ids: list[str],
        items_by_user: list[list[int]],
        ratings_by_user: list[list[int | None]],
        timestamps_by_user: list[list[int | None]] | None = None,
    ):
        self.user_ids = list(user_ids)
        self.item_ids = list(item_ids)
        self.user_index = {uid: k for k, uid in enumerate(self.user_ids)}
        self.item_index = {iid: k for k, iid in enumerate(self.item_ids)}
        self._items_by_user = [list(map(int, row)) for row in items_by_user]
        self._ratings_by_user = [list(row) for row in ratings_by_user]
        if timestamps_by_user is None:
            timestamps_by_user = [[None] * len(row) for row in items_by_user]
        self._timestamps_by_user = [list(row) for row in timestamps_by_user]
        self._rating_maps = [
            dict(zip(items, ratings))
            for items, ratings in zip(self._items_by_user, self._ratings_by_user)
        ]
        self._check()

    def _check(self) -> None:
        n = len(self.user_ids)
        if not (
            len(self._items_by_user)
            == len(self._ratings_by_user)
            == len(self._timestamps_by_user)
            == n
        ):
            raise ContractViolationError("per-user columns disagree with user count")
        m = len(self.item_ids)
        for u, items in enumerate(self._items_by_user):
            if len(set(items)) != len(items):
                raise ContractViolationError(f"user {u} has duplicate interactions")
            if items and (min(items) < 0 or max(items) >= m):
                raise ContractViolationError(f"user {u} has an out-of-range item index")

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    @property
    def n_items(self) -> int:
        return len(self.item_ids)

    @property
    def n_interactions(self) -> int:
        return sum(len(row) for row in self._items_by_user)

    @property
    def has_timestamps(self) -> bool:
        return all(
            ts is not None for row in self._timestamps_by_user for ts in row
        ) and self.n_interactions > 0

    def items_of(self, u: int) -> np.ndarray:
        return np.asarray(self._items_by_user[u], dtype=np.int64)

    def rating_of(self, u: int, item: int) -> int | None:
        return self._rating_maps[u].get(int(item))

    def timestamp_of(self, u: int, pos: int) -> int | None:
        return self._timestamps_by_user[u][pos]

    def implicit(self) -> ImplicitInteractions:
        return ImplicitInteractions(self.n_items, self._items_by_user)

    def rows(self):
        """(user idx, item idx, rating, timestamp) in storage order."""
        for u, items in enumerate(self._items_by_user):
            for pos, item in enumerate(items):
                yield (
                    u,
                    item,
                    self._ratings_by_user[u][pos],
                    self._timestamps_by_user[u][pos],
                )

    def __eq__(self, other) -> bool:
        if not isinstance(other, InteractionDataset):
            return NotImplemented
        return (
            self.user_ids == other.user_ids
            and self.item_ids == other.item_ids
            and self._items_by_user == other._items_by_user
            and self._ratings_by_user == other._ratings_by_user
            and self._timestamps_by_user == other._timestamps_by_user
        )

    def __repr__(self) -> str:
        return (
            f"InteractionDataset(users={self.n_users}, items={self.n_items}, "
            f"interactions={self.n_interactions})"
        )


def as_implicit(data) -> ImplicitInteractions:
    if isinstance(data, ImplicitInteractions):
        return data
    if isinstance(data, InteractionDataset):
        return data.implicit()
    raise ContractViolationError(f"cannot view {type(data).__name__} as implicit data")


# ---------------------------------------------------------------------------
# loading and writing


def _parse_lines(path: Path, fmt: str):
    """Yield (lineno, user_id, item_id, rating, timestamp) rows."""
    text = path.read_text(encoding="utf-8")
    lines = text.splitlines()
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        if fmt == "csv":
            parts = line.split(",")
            if len(parts) not in (3, 4):
                raise DataError(f"{path}:{lineno}: expected 3 or 4 comma fields")
        elif fmt == "movielens":
            parts = line.split("::")
            if len(parts) != 4:
                raise DataError(f"{path}:{lineno}: expected 4 '::' fields")
        else:
            raise ContractViolationError(f"unknown format {fmt!r}")
        user_id, item_id = parts[0], parts[1]
        try:
            rating = int(parts[2])
            timestamp = int(parts[3]) if len(parts) == 4 else None
        except ValueError:
            if lineno == 1 and fmt == "csv":
                continue  # optional header line
            raise DataError(f"{path}:{lineno}: non-integer rating or timestamp")
        if not user_id or not item_id:
            raise DataError(f"{path}:{lineno}: empty user or item id")
        yield lineno, user_id, item_id, rating, timestamp


def load_interactions(
    path,
    format: str = "csv",
    min_item_count: int = 0,
    top_users: int | None = None,
) -> InteractionDataset:
    """Load a ratings file into a dense-indexed dataset.

    Filtering order follows the usual preparation recipe: keep the
    `top_users` most active users first, then drop items interacted fewer
    than `min_item_count` times, then remove users left with zero activity.
    Dense indices are assigned by first appearance in the surviving rows,
    duplicates of a (user, item) pair keep the first occurrence.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    rows = list(_parse_lines(path, format))
    if top_users is not None:
        counts: dict[str, int] = {}
        first_seen: dict[str, int] = {}
        for pos, (_, uid, _, _, _) in enumerate(rows):
            counts[uid] = counts.get(uid, 0) + 1
            first_seen.setdefault(uid, pos)
        ranked = sorted(counts, key=lambda uid: (-counts[uid], first_seen[uid]))
        keep = set(ranked[: int(top_users)])
        rows = [r for r in rows if r[1] in keep]
    if min_item_count > 0:
        item_counts: dict[str, int] = {}
        for _, _, iid, _, _ in rows:
            item_counts[iid] = item_counts.get(iid, 0) + 1
        rows = [r for r in rows if item_counts[r[2]] >= min_item_count]
    # users with zero activity disappear simply by never being indexed
    if not rows:
        raise EmptyDatasetError(f"{path}: no interactions survive filtering")

    user_ids: list[str] = []
    item_ids: list[str] = []
    user_index: dict[str, int] = {}
    item_index: dict[str, int] = {}
    items_by_user: list[list[int]] = []
    ratings_by_user: list[list[int | None]] = []
    ts_by_user: list[list[int | None]] = []
    seen_pairs: set[tuple[int, int]] = set()
    for _, uid, iid, rating, timestamp in rows:
        if uid not in user_index:
            user_index[uid] = len(user_ids)
            user_ids.append(uid)
            items_by_user.append([])
            ratings_by_user.append([])
            ts_by_user.append([])
        if iid not in item_index:
            item_index[iid] = len(item_ids)
            item_ids.append(iid)
        u, i = user_index[uid], item_index[iid]
        if (u, i) in seen_pairs:
            continue
        seen_pairs.add((u, i))
        items_by_user[u].append(i)
        ratings_by_user[u].append(rating)
        ts_by_user[u].append(timestamp)
    return InteractionDataset(
        user_ids, item_ids, items_by_user, ratings_by_user, ts_by_user
    )


def write_interactions(dataset: InteractionDataset, path) -> None:
    """Canonical comma dump, sorted by (user index, item index)."""
    with_ts = dataset.has_timestamps
    lines = []
    for u in range(dataset.n_users):
        order = np.argsort(dataset.items_of(u), kind="stable")
        items = dataset.items_of(u)
        for pos in order:
            item = int(items[pos])
            rating = dataset._ratings_by_user[u][pos]
            if rating is None:
                raise DataError("cannot dump a dataset with missing ratings")
            cols = [dataset.user_ids[u], dataset.item_ids[item], str(rating)]
            if with_ts:
                cols.append(str(dataset._timestamps_by_user[u][pos]))
            lines.append(",".join(cols))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# splitting and sampling


@dataclass
class LooSplit:
    """Training data plus one held-out item and sampled negatives per user."""

    train: InteractionDataset
    holdout: dict[int, int]
    test_negatives: dict[int, np.ndarray]
    seed: int
    n_negatives: int = 100


def loo_split(dataset: InteractionDataset, seed: int, n_negatives: int = 100) -> LooSplit:
    """Hold out one interaction per user with at least two.

    Single-interaction users keep their row in train and get no holdout.
    Negatives are drawn uniformly without replacement from items the user
    never interacted with; a user without enough of them is an error.
    """
    rng = substream(seed, "split")
    holdout: dict[int, int] = {}
    negatives: dict[int, np.ndarray] = {}
    items_by_user: list[list[int]] = []
    ratings_by_user: list[list[int | None]] = []
    ts_by_user: list[list[int | None]] = []
    all_items = np.arange(dataset.n_items, dtype=np.int64)
    for u in range(dataset.n_users):
        items = dataset._items_by_user[u]
        ratings = dataset._ratings_by_user[u]
        stamps = dataset._timestamps_by_user[u]
        if len(items) < 2:
            items_by_user.append(list(items))
            ratings_by_user.append(list(ratings))
            ts_by_user.append(list(stamps))
            continue
        drop = int(rng.integers(len(items)))
        holdout[u] = items[drop]
        items_by_user.append([v for p, v in enumerate(items) if p != drop])
        ratings_by_user.append([v for p, v in enumerate(ratings) if p != drop])
        ts_by_user.append([v for p, v in enumerate(stamps) if p != drop])
        interacted = np.zeros(dataset.n_items, dtype=bool)
        interacted[np.asarray(items, dtype=np.int64)] = True
        pool = all_items[~interacted]
        if pool.size < n_negatives:
            raise DataError(
                f"user {dataset.user_ids[u]!r} has only {pool.size} non-interacted "
                f"items; cannot sample {n_negatives} test negatives"
            )
        negatives[u] = np.sort(rng.choice(pool, size=n_negatives, replace=False))
    train = InteractionDataset(
        dataset.user_ids,
        dataset.item_ids,
        items_by_user,
        ratings_by_user,
        ts_by_user,
    )
    return LooSplit(train, holdout, negatives, seed, n_negatives)


def validate_split(split: LooSplit, full: InteractionDataset) -> None:
    """Check the split invariants; raises on any breach. Test/debug helper."""
    for u, o in split.holdout.items():
        train_items = set(int(v) for v in split.train.items_of(u))
        full_items = set(int(v) for v in full.items_of(u))
        if o in train_items:
            raise ContractViolationError(f"user {u}: holdout item {o} still in train")
        if o not in full_items:
            raise ContractViolationError(f"user {u}: holdout item {o} not interacted")
        if train_items | {o} != full_items:
            raise ContractViolationError(f"user {u}: train+holdout != full interactions")
        negs = split.test_negatives[u]
        if len(negs) != split.n_negatives:
            raise ContractViolationError(f"user {u}: wrong negative count")
        if len(set(int(v) for v in negs)) != len(negs):
            raise ContractViolationError(f"user {u}: duplicate negatives")
        if set(int(v) for v in negs) & full_items:
            raise ContractViolationError(f"user {u}: negative overlaps interactions")
    for u in range(full.n_users):
        if u not in split.holdout and len(full._items_by_user[u]) >= 2:
            raise ContractViolationError(f"user {u}: eligible but has no holdout")


def sample_negative(data, u: int, rng: np.random.Generator) -> int:
    """Uniform draw from the user's non-interacted items.

    Rejection against the full item range; O(1) expected when interactions
    are sparse.
    """
    view = as_implicit(data)
    interacted = view.interacted_set(u)
    m = view.n_items
    if len(interacted) >= m:
        raise DataError(f"user {u} has no non-interacted item to sample")
    while True:
        j = int(rng.integers(m))
        if j not in interacted:
            return j


def mask_missing(
    observations: Observations, fraction: float, rng: np.random.Generator
) -> Observations:
    """Uniformly drop round(fraction * N) observations, keeping order."""
    if not 0 <= fraction < 1:
        raise ContractViolationError("missing fraction must lie in [0, 1)")
    n = len(observations)
    n_drop = int(round(fraction * n))
    if n_drop == 0:
        return observations
    drop = rng.choice(n, size=n_drop, replace=False)
    keep = np.ones(n, dtype=bool)
    keep[drop] = False
    return observations.subset(keep)


def observations_from_implicit(data) -> Observations:
    """All (interacted, non-interacted) pairs as canonical i < j observations.

    This is the dense pairwise view of implicit feedback: within one user a
    preference is observed exactly between an interacted and a
    non-interacted item. Quadratic per user; meant for small problems such
    as the Gibbs sampler's scale.
    """
    view = as_implicit(data)
    users, firsts, seconds, directions = [], [], [], []
    for u in range(view.n_users):
        inter = view.items_of(u)
        if inter.size == 0 or inter.size >= view.n_items:
            continue
        mask = np.zeros(view.n_items, dtype=bool)
        mask[inter] = True
        non = np.nonzero(~mask)[0]
        a = np.repeat(inter, non.size)
        b = np.tile(non, inter.size)
        lo = np.minimum(a, b)
        hi = np.maximum(a, b)
        d = np.where(a < b, 1, -1)
        users.append(np.full(lo.size, u, dtype=np.int64))
        firsts.append(lo)
        seconds.append(hi)
        directions.append(d)
    if not users:
        raise EmptyDatasetError("no user contributes any observed pair")
    return Observations(
        np.concatenate(users),
        np.concatenate(firsts),
        np.concatenate(seconds),
        np.concatenate(directions),
    )
