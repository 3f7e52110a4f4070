"""Graded-relevance ranking metrics: NDCG@k, ERR, ROC AUC, precision/recall."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import rankdata


class RelevanceGrade(IntEnum):
    NONRELEVANT = 0
    RELEVANT = 1
    VITAL = 2


G_MAX = int(RelevanceGrade.VITAL)


def dcg_at_k(grades: Sequence[int], k: int) -> float:
    g = np.asarray(grades, dtype=np.float64)[:k]
    return float(np.sum((2.0 ** g - 1.0) / np.log2(np.arange(2, g.size + 2))))


def ndcg_at_k(ranked_grades: Sequence[int], k: int) -> float:
    """DCG@k / ideal DCG@k, exponential gain, log2 discount.

    Returns nan when every grade is zero; such queries are excluded from means.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    ideal = dcg_at_k(sorted(ranked_grades, reverse=True), k)
    if ideal == 0.0:
        return math.nan
    return dcg_at_k(ranked_grades, k) / ideal


def err(ranked_grades: Sequence[int], g_max: int = G_MAX) -> float:
    """Expected reciprocal rank under the cascade model."""
    if len(ranked_grades) == 0:
        raise ValueError("err needs at least one result")
    r = (2.0 ** np.asarray(ranked_grades, dtype=np.float64) - 1.0) / 2.0 ** g_max
    not_stopped = np.concatenate([[1.0], np.cumprod(1.0 - r)[:-1]])
    return float(np.sum(r * not_stopped / np.arange(1, r.size + 1)))


def roc_auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """P(random positive outscores random negative), ties counted one half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("roc_auc needs at least one positive and one negative")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def pr_curve(scores: Sequence[float], labels: Sequence[int]) -> list[tuple[float, float, float]]:
    """(threshold, precision, recall) at every distinct score, highest threshold first."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], labels[order]
    tp = np.cumsum(y)
    k = np.arange(1, s.size + 1)
    last = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    total = max(int(y.sum()), 1)
    return [(float(s[i]), float(tp[i] / k[i]), float(tp[i] / total)) for i in last]


def rank_by_score(scores: Sequence[float], grades: Sequence[int]) -> list[int]:
    """Grades reordered by descending score; ties keep input order."""
    order = np.argsort(-np.asarray(scores, dtype=np.float64), kind="mergesort")
    return [int(grades[i]) for i in order]


@dataclass
class MetricsReport:
    ndcg1: float
    ndcg3: float
    ndcg10: float
    err: float
    auc: float
    loss: float = math.nan
    n_queries: int = 0
    n_flagged: int = 0
    per_query: dict = field(default_factory=dict)
    pr: list = field(default_factory=list)

    def summary(self) -> dict:
        return {k: getattr(self, k) for k in ("loss", "ndcg1", "ndcg3", "ndcg10", "err", "auc", "n_queries", "n_flagged")}


def evaluate_scores(
    query_ids: Sequence,
    scores: Sequence[float],
    grades: Sequence[int],
    loss: float = math.nan,
) -> MetricsReport:
    """Per-query NDCG@{1,3,10} and ERR, global AUC (positive = grade >= RELEVANT) and PR points."""
    groups: dict = {}
    for qid, s, g in zip(query_ids, scores, grades):
        groups.setdefault(qid, ([], []))
        groups[qid][0].append(s)
        groups[qid][1].append(int(g))
    per_query: dict = {}
    flagged = 0
    for qid, (s, g) in groups.items():
        ranked = rank_by_score(s, g)
        row = {"ndcg1": ndcg_at_k(ranked, 1), "ndcg3": ndcg_at_k(ranked, 3), "ndcg10": ndcg_at_k(ranked, 10),
               "err": err(ranked)}
        if math.isnan(row["ndcg1"]):
            flagged += 1
        per_query[qid] = row
    scored = [r for r in per_query.values() if not math.isnan(r["ndcg1"])]

    def mean(key: str) -> float:
        return float(np.mean([r[key] for r in scored])) if scored else math.nan

    labels = np.asarray(grades) >= RelevanceGrade.RELEVANT
    auc = roc_auc(scores, labels) if 0 < labels.sum() < labels.size else math.nan
    return MetricsReport(
        ndcg1=mean("ndcg1"), ndcg3=mean("ndcg3"), ndcg10=mean("ndcg10"), err=mean("err"), auc=auc,
        loss=loss, n_queries=len(groups), n_flagged=flagged, per_query=per_query,
        pr=pr_curve(scores, labels),
    )


def relative_deltas(baseline: Mapping[str, float], candidate: Mapping[str, float],
                    keys: Sequence[str] = ("ndcg1", "ndcg3", "ndcg10", "err", "auc")) -> dict:
    """Percent change of each candidate metric relative to the baseline value."""
    return {k: 100.0 * (candidate[k] - baseline[k]) / baseline[k] if baseline[k] else math.nan for k in keys}
