"""Leave-one-out evaluation: rating-consistency statistics and hit ratios.

Consistency compares the sign of predicted pairwise preferences against the
order implied by actual ratings between each user's held-out item and their
remaining training items. Pairs with tied ratings carry no ground truth and
are excluded from both numerator and denominator (the skipped count is
reported).

Recommendation quality ranks the held-out item inside its 101-item test set
two ways: by how many sampled negatives beat it head-to-head, and by a
proportion-of-training-items-beaten score. Ties never hurt the holdout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import InteractionDataset, LooSplit
from .errors import ContractViolationError, DataError
from .model import FactorModel, pair_scores


@dataclass
class ConsistencyStats:
    mean_preference: float
    match_fraction: float
    per_user_match_median: float
    users_evaluated: int
    users_excluded: int
    pairs_evaluated: int
    pairs_skipped: int


@dataclass
class EvalReport:
    split_seed: int
    mean_preference: float
    match_fraction: float
    per_user_match_median: float
    hit_ratio_m1: float
    hit_ratio_m2: float
    users_evaluated: int
    users_excluded: int
    pairs_evaluated: int
    pairs_skipped: int
    n_holdouts: int


def _oriented_pairs(u: int, holdout: int, train_items, ratings: InteractionDataset):
    """Rating-ordered (first, second) pairs between the holdout and train items.

    The higher-rated item comes first. Returns (firsts, seconds, skipped).
    """
    r_o = ratings.rating_of(u, holdout)
    if r_o is None:
        raise DataError(f"user {u}: holdout item {holdout} has no rating")
    firsts, seconds = [], []
    skipped = 0
    for j in train_items:
        j = int(j)
        r_j = ratings.rating_of(u, j)
        if r_j is None:
            raise DataError(f"user {u}: train item {j} has no rating")
        if r_j == r_o:
            skipped += 1
        elif r_o > r_j:
            firsts.append(holdout)
            seconds.append(j)
        else:
            firsts.append(j)
            seconds.append(holdout)
    return firsts, seconds, skipped


def consistency_report(
    model: FactorModel, split: LooSplit, ratings: InteractionDataset
) -> ConsistencyStats:
    """Pooled and per-user agreement between predicted signs and rating order."""
    total_x = 0.0
    total_hits = 0
    total_pairs = 0
    total_skipped = 0
    per_user: list[float] = []
    excluded = 0
    for u in sorted(split.holdout):
        firsts, seconds, skipped = _oriented_pairs(
            u, split.holdout[u], split.train.items_of(u), ratings
        )
        total_skipped += skipped
        if not firsts:
            excluded += 1
            continue
        x = pair_scores(model, u, firsts, seconds)
        # sequential accumulation keeps the pooled mean bit-identical to a
        # scalar reference loop over the same enumeration
        for value in x:
            total_x += float(value)
        hits = int(np.sum(x > 0))
        total_hits += hits
        total_pairs += len(firsts)
        per_user.append(hits / len(firsts))
    if total_pairs == 0:
        return ConsistencyStats(0.0, 0.0, 0.0, 0, excluded, 0, total_skipped)
    return ConsistencyStats(
        mean_preference=total_x / total_pairs,
        match_fraction=total_hits / total_pairs,
        per_user_match_median=float(np.median(per_user)),
        users_evaluated=len(per_user),
        users_excluded=excluded,
        pairs_evaluated=total_pairs,
        pairs_skipped=total_skipped,
    )


def rank_m1(model: FactorModel, u: int, holdout: int, negatives) -> int:
    """Number of sampled negatives strictly preferred over the holdout."""
    negatives = np.asarray(negatives, dtype=np.int64)
    x = pair_scores(model, u, negatives, np.full(negatives.shape, holdout))
    return int(np.sum(x > 0))


def score_m2(model: FactorModel, u: int, test_item: int, train_items) -> float:
    """Proportion of the user's training items the test item strictly beats."""
    train_items = np.asarray(train_items, dtype=np.int64)
    if train_items.size == 0:
        raise DataError(f"user {u} has no training interactions to score against")
    x = pair_scores(model, u, np.full(train_items.shape, test_item), train_items)
    return float(np.mean(x > 0))


def _m2_scores(model, u, test_items, train_items) -> np.ndarray:
    test_items = np.asarray(test_items, dtype=np.int64)
    train_items = np.asarray(train_items, dtype=np.int64)
    t = np.repeat(test_items, train_items.size)
    i = np.tile(train_items, test_items.size)
    x = pair_scores(model, u, t, i).reshape(test_items.size, train_items.size)
    return np.mean(x > 0, axis=1)


def rank_m2(model: FactorModel, u: int, holdout: int, negatives, train_items) -> int:
    """Holdout's rank when the test set is ordered by descending M2 score."""
    scores = _m2_scores(model, u, np.concatenate(([holdout], negatives)), train_items)
    return int(np.sum(scores[1:] > scores[0]))


def hit_ratio(ranks, threshold: int = 20) -> float:
    """Fraction of holdouts landing inside the top `threshold` of their test set."""
    ranks = np.asarray(ranks)
    if ranks.size == 0:
        raise DataError("hit ratio of an empty rank list is undefined")
    return float(np.mean(ranks < threshold))


def evaluate_split(
    model: FactorModel,
    split: LooSplit,
    ratings: InteractionDataset,
    threshold: int = 20,
) -> EvalReport:
    """Full per-split report: consistency plus both hit ratios."""
    stats = consistency_report(model, split, ratings)
    ranks1, ranks2 = [], []
    for u in sorted(split.holdout):
        o = split.holdout[u]
        negatives = split.test_negatives[u]
        train_items = split.train.items_of(u)
        ranks1.append(rank_m1(model, u, o, negatives))
        ranks2.append(rank_m2(model, u, o, negatives, train_items))
    return EvalReport(
        split_seed=split.seed,
        mean_preference=stats.mean_preference,
        match_fraction=stats.match_fraction,
        per_user_match_median=stats.per_user_match_median,
        hit_ratio_m1=hit_ratio(ranks1, threshold),
        hit_ratio_m2=hit_ratio(ranks2, threshold),
        users_evaluated=stats.users_evaluated,
        users_excluded=stats.users_excluded,
        pairs_evaluated=stats.pairs_evaluated,
        pairs_skipped=stats.pairs_skipped,
        n_holdouts=len(split.holdout),
    )


MACHINE_HEADER = (
    "split_seed,mean_x,match,per_user_median,hr_m1,hr_m2,users,pairs,skipped"
)


def machine_row(report: EvalReport) -> str:
    return (
        f"{report.split_seed},{report.mean_preference:.17g},"
        f"{report.match_fraction:.17g},{report.per_user_match_median:.17g},"
        f"{report.hit_ratio_m1:.17g},{report.hit_ratio_m2:.17g},"
        f"{report.users_evaluated},{report.pairs_evaluated},{report.pairs_skipped}"
    )


_METRICS = (
    ("mean_preference", "mean x"),
    ("match_fraction", "match %"),
    ("per_user_match_median", "per user %"),
    ("hit_ratio_m1", "M1 %"),
    ("hit_ratio_m2", "M2 %"),
)


def aggregate_reports(reports: list[EvalReport]) -> dict[str, tuple[float, float]]:
    """Mean and sample standard deviation of each metric across splits."""
    if not reports:
        raise ContractViolationError("nothing to aggregate")
    out = {}
    for attr, _ in _METRICS:
        values = np.asarray([getattr(r, attr) for r in reports], dtype=np.float64)
        std = float(values.std(ddof=1)) if values.size > 1 else 0.0
        out[attr] = (float(values.mean()), std)
    return out


def format_table(model_name: str, reports: list[EvalReport]) -> str:
    """Human-readable summary shaped like the usual consistency table:
    fractions reported as percentages, mean +/- sd across splits."""
    agg = aggregate_reports(reports)
    header = f"{'model':<10}" + "".join(f"{label:>18}" for _, label in _METRICS)
    cells = []
    for attr, _ in _METRICS:
        mean, std = agg[attr]
        if attr == "mean_preference":
            cells.append(f"{mean:.3f} +/- {std:.3f}")
        else:
            cells.append(f"{100 * mean:.1f} +/- {100 * std:.1f}")
    row = f"{model_name:<10}" + "".join(f"{c:>18}" for c in cells)
    return "\n".join(
        [header, row, "", f"splits: {len(reports)}"]
    )
