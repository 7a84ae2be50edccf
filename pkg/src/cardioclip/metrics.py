"""Ranking metrics: AUROC (Mann-Whitney with tie credit), Recall@K,
Precision@K, and ordinal AUROC over graded labels."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)


class UndefinedMetricError(ValueError):
    """Metric has no value for this input (e.g. single-class AUROC)."""


@dataclass(frozen=True)
class ScoredCase:
    case_id: str
    score: float
    label: object

    def __post_init__(self):
        if not np.isfinite(self.score):
            raise ValueError(f"score for {self.case_id!r} is non-finite")


@dataclass(frozen=True)
class RankedList:
    query_id: str
    ranked_ids: tuple[str, ...]
    scores: tuple[float, ...]

    def __post_init__(self):
        if len(self.ranked_ids) != len(self.scores):
            raise ValueError("ranked_ids and scores must have equal length")
        if len(set(self.ranked_ids)) != len(self.ranked_ids):
            raise ValueError("ranked ids must be distinct")
        if any(a < b for a, b in zip(self.scores, self.scores[1:])):
            raise ValueError("scores must be non-increasing")


@dataclass(frozen=True)
class GradeSet:
    """Cases with ordinal grades in [1, n_grades] and continuous scores."""

    cases: tuple
    n_grades: int = 5

    def __post_init__(self):
        for cid, grade, score in self.cases:
            if not 1 <= grade <= self.n_grades:
                raise ValueError(f"grade {grade} for {cid!r} outside [1, {self.n_grades}]")
            if not np.isfinite(score):
                raise ValueError(f"score for {cid!r} is non-finite")


@dataclass(frozen=True)
class MetricReport:
    metric: str
    values: dict
    n_cases: int
    seed: int | None = None
    config_digest: str | None = None
    k: int | None = None
    threshold: int | None = None

    def to_dict(self) -> dict:
        out = {"metric": self.metric, "values": self.values, "n_cases": self.n_cases}
        for key in ("seed", "config_digest", "k", "threshold"):
            val = getattr(self, key)
            if val is not None:
                out[key] = val
        return out


def auroc(cases) -> float:
    """Fraction of (positive, negative) pairs ranked correctly; ties count 1/2.

    Computed via the rank-sum form of the Mann-Whitney U statistic, which is
    exactly the pair-counting definition.
    """
    scores = np.asarray([c.score for c in cases], dtype=np.float64)
    labels = np.asarray([bool(c.label) for c in cases])
    n_pos = int(labels.sum())
    n_neg = int(len(labels) - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError(
            f"AUROC undefined: {n_pos} positives and {n_neg} negatives"
        )
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores), dtype=np.float64)
    ranks[order] = np.arange(1, len(scores) + 1)
    # average ranks across tied scores
    sorted_scores = scores[order]
    i = 0
    while i < len(sorted_scores):
        j = i
        while j + 1 < len(sorted_scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        if j > i:
            ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def _effective_k(k: int, pool_size: int) -> int:
    if k < 1:
        raise ValueError(f"K must be >= 1, got {k}")
    if k > pool_size:
        logger.warning("K=%d exceeds pool size %d; clamping", k, pool_size)
        return pool_size
    return k


def recall_at_k(ranked: RankedList, relevant_id: str, k: int) -> int:
    """1 iff the relevant id appears in the top K."""
    if relevant_id not in ranked.ranked_ids:
        raise ValueError(f"relevant id {relevant_id!r} not in the candidate pool")
    k = _effective_k(k, len(ranked.ranked_ids))
    return int(relevant_id in ranked.ranked_ids[:k])


def mean_recall_at_k(ranked_lists, relevant_ids, k: int) -> float:
    hits = [recall_at_k(r, rid, k) for r, rid in zip(ranked_lists, relevant_ids)]
    return float(np.mean(hits))


def precision_at_k(ranked: RankedList, positive_ids, k: int) -> float:
    """Fraction of the top K that is relevant."""
    k = _effective_k(k, len(ranked.ranked_ids))
    positive_ids = set(positive_ids)
    return sum(rid in positive_ids for rid in ranked.ranked_ids[:k]) / k


def ordinal_auroc(g: GradeSet) -> list[tuple[int, float | None]]:
    """AUROC of (grade > t) at every cut t in 1..n_grades-1.

    A threshold where one side is empty is reported as (t, None).
    """
    grades = [grade for _, grade, _ in g.cases]
    if len(set(grades)) < 2:
        raise UndefinedMetricError("grades must span at least two distinct values")
    out = []
    for t in range(1, g.n_grades):
        relabeled = [ScoredCase(cid, score, grade > t) for cid, grade, score in g.cases]
        try:
            out.append((t, auroc(relabeled)))
        except UndefinedMetricError:
            logger.warning("ordinal AUROC undefined at threshold %d (single class)", t)
            out.append((t, None))
    return out


def rank_pool(scores: np.ndarray, pool_ids, query_id: str) -> RankedList:
    """Descending ranking with deterministic ties: equal scores keep pool order."""
    scores = np.asarray(scores, dtype=np.float64)
    order = np.argsort(-scores, kind="stable")
    return RankedList(
        query_id=query_id,
        ranked_ids=tuple(pool_ids[i] for i in order),
        scores=tuple(float(scores[i]) for i in order),
    )
