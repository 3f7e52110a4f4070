"""Glue shared by the CLI and the acceptance suite: BM25 over records and score fusion."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .baselines import Bm25Params, BoostConfig, BoostedEnsemble, CorpusStats, bm25_score, train_boosted_ensemble
from .metrics import MetricsReport, RelevanceGrade, evaluate_scores
from .text import tokenize


def bm25_scores(records: Sequence, params: Bm25Params = Bm25Params()) -> np.ndarray:
    """BM25 of every record, with corpus statistics taken over the records themselves."""
    docs = [tokenize(r.text) for r in records]
    stats = CorpusStats.from_documents(docs)
    return np.array([bm25_score(tokenize(r.query), d, stats, params) for r, d in zip(records, docs)])


def report_for(records: Sequence, scores: np.ndarray, loss: float = float("nan")) -> MetricsReport:
    return evaluate_scores([r.query for r in records], scores, [int(r.grade) for r in records], loss=loss)


def binary_labels(records: Sequence) -> np.ndarray:
    return np.array([1 if r.grade >= RelevanceGrade.RELEVANT else 0 for r in records])


@dataclass
class FusionResult:
    ensemble: BoostedEnsemble
    alone: MetricsReport
    fused: MetricsReport

    @property
    def auc_gain(self) -> float:
        return self.fused.auc - self.alone.auc


def fuse_with_bm25(
    name: str,
    fit_records: Sequence,
    fit_scores: np.ndarray,
    fit_bm25: np.ndarray,
    test_records: Sequence,
    test_scores: np.ndarray,
    test_bm25: np.ndarray,
    config: BoostConfig = BoostConfig(),
) -> FusionResult:
    """Boost (model score, BM25) on one split, then compare fused and single-model test metrics."""
    X = np.column_stack([fit_scores, fit_bm25])
    ens = train_boosted_ensemble(X, binary_labels(fit_records), [name, "bm25"], config)
    fused = ens.predict(np.column_stack([test_scores, test_bm25]))
    return FusionResult(ens, report_for(test_records, test_scores), report_for(test_records, fused))
