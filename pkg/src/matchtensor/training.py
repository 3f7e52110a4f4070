"""Mini-batch training with Adam, evaluation, random search and training-size sweeps."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from . import tensor as T
from .metrics import MetricsReport, RelevanceGrade, evaluate_scores
from .models import ModelConfig, PairBatch, RankingModel, build_model
from .text import EmbeddingTable, ProcessedText, Vocabulary, assemble_document, process_query

log = logging.getLogger(__name__)

SOFT_TARGETS = {RelevanceGrade.NONRELEVANT: 0.0, RelevanceGrade.RELEVANT: 0.5, RelevanceGrade.VITAL: 1.0}


@dataclass
class TrainingConfig:
    learning_rate: float = 0.001
    batch_size: int = 200
    epochs: float = 1.0
    dropout: Optional[float] = 0.2
    seed: int = 0
    subsample: float = 1.0
    binary_targets: bool = False
    eval_every: float = 0.25  # epochs between validation passes
    keep_best: bool = False
    bucket: bool = True

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0.0 < self.subsample <= 1.0:
            raise ValueError("subsample must lie in (0, 1]")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


@dataclass
class Example:
    query_text: str
    query: ProcessedText
    doc: ProcessedText
    grade: RelevanceGrade
    doc_tokens: list = field(default_factory=list)


def prepare(records, vocab: Vocabulary) -> list[Example]:
    out = []
    for r in records:
        d = assemble_document(r.fields, vocab)
        out.append(Example(r.query, process_query(r.query, vocab), d, r.grade))
    return out


def targets_for(grades: Sequence[int], binary: bool = False) -> np.ndarray:
    if binary:
        return np.array([1.0 if g >= RelevanceGrade.RELEVANT else 0.0 for g in grades])
    return np.array([SOFT_TARGETS[RelevanceGrade(g)] for g in grades])


def bce_loss(p: float, t: float, eps: float = 1e-12) -> float:
    """-(t ln p + (1-t) ln(1-p)) with p clamped into [eps, 1-eps]."""
    if not (0.0 <= p <= 1.0) or not math.isfinite(p):
        raise ValueError(f"prediction must be a probability, got {p}")
    p = min(max(p, eps), 1.0 - eps)
    return -(t * math.log(p) + (1.0 - t) * math.log(1.0 - p))


def bce_grad(p: float, t: float) -> float:
    """d bce / d p."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"gradient needs p strictly inside (0, 1), got {p}")
    return -t / p + (1.0 - t) / (1.0 - p)


class Adam:
    def __init__(self, params: Mapping[str, T.Parameter], lr: float = 0.001,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = {n: p for n, p in params.items() if p.trainable}
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {n: np.zeros_like(p.data) for n, p in self.params.items()}
        self.v = {n: np.zeros_like(p.data) for n, p in self.params.items()}
        self.t = 0

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = np.zeros_like(p.data)

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for n, p in self.params.items():
            g = p.grad
            m, v = self.m[n], self.v[n]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _batches(examples: Sequence[Example], size: int, rng: Optional[np.random.Generator], bucket: bool) -> list[list[int]]:
    n = len(examples)
    order = rng.permutation(n) if rng is not None else np.arange(n)
    if not bucket:
        return [list(order[s:s + size]) for s in range(0, n, size)]
    # sort within chunks of several batches by document length to cut padding
    chunk = size * 16
    out = []
    for s in range(0, n, chunk):
        part = sorted(order[s:s + chunk], key=lambda i: len(examples[i].doc))
        out.extend(part[k:k + size] for k in range(0, len(part), size))
    if rng is not None:
        out = [out[i] for i in rng.permutation(len(out))]
    return out


def make_batch(model: RankingModel, examples: Sequence[Example], idx) -> PairBatch:
    return PairBatch.from_pairs([(examples[i].query, examples[i].doc) for i in idx], model.vocab)


def predict(model: RankingModel, examples: Sequence[Example], batch_size: int = 256) -> np.ndarray:
    scores = np.empty(len(examples))
    for idx in _batches(examples, batch_size, None, bucket=True):
        scores[idx] = model.score(make_batch(model, examples, idx))
    return scores


def evaluate_model(model: RankingModel, examples: Sequence[Example], binary_targets: bool = False) -> MetricsReport:
    scores = predict(model, examples)
    return evaluate_predictions(examples, scores, binary_targets)


def evaluate_predictions(examples: Sequence[Example], scores: np.ndarray, binary_targets: bool = False) -> MetricsReport:
    grades = [int(e.grade) for e in examples]
    t = targets_for(grades, binary_targets)
    p = np.clip(scores, 1e-12, 1 - 1e-12)
    loss = float(np.mean(-(t * np.log(p) + (1 - t) * np.log(1 - p))))
    return evaluate_scores([e.query_text for e in examples], scores, grades, loss=loss)


@dataclass
class TrainResult:
    model: RankingModel
    curve: list
    steps: int
    best_epoch: float = math.nan
    best_loss: float = math.nan
    seconds: float = 0.0


def train(
    model: RankingModel,
    train_examples: Sequence[Example],
    config: TrainingConfig,
    validation: Optional[Sequence[Example]] = None,
    on_eval: Optional[Callable[[dict], None]] = None,
) -> TrainResult:
    """Adam over shuffled mini-batches for ``config.epochs`` (fractional allowed)."""
    if not train_examples:
        raise ValueError("training set is empty")
    started = time.perf_counter()
    if config.dropout is not None:
        model.set_dropout(config.dropout)
    rng = np.random.default_rng(config.seed)
    params = model.trainable_parameters()
    opt = Adam(params, lr=config.learning_rate)
    per_epoch = math.ceil(len(train_examples) / config.batch_size)
    total = int(round(config.epochs * per_epoch))
    every = max(1, int(round(config.eval_every * per_epoch)))
    curve: list[dict] = []
    best = (math.inf, math.nan, None)

    def checkpoint(step: int) -> None:
        nonlocal best
        if not validation:
            return
        rep = evaluate_model(model, validation, config.binary_targets)
        row = {"epoch": step / per_epoch, "split": "validation", "loss": rep.loss, "auc": rep.auc,
               "ndcg1": rep.ndcg1, "ndcg3": rep.ndcg3, "ndcg10": rep.ndcg10, "err": rep.err}
        curve.append(row)
        if on_eval:
            on_eval(row)
        log.info("epoch %.2f validation loss %.4f auc %.4f", row["epoch"], rep.loss, rep.auc)
        if rep.loss < best[0]:
            snap = {n: p.data.copy() for n, p in params.items()} if config.keep_best else None
            best = (rep.loss, row["epoch"], snap)

    step = 0
    if total > 0:
        checkpoint(0)
    batches: list = []
    while step < total:
        if not batches:
            batches = _batches(train_examples, config.batch_size, rng, config.bucket)
        idx = batches.pop(0)
        batch = make_batch(model, train_examples, idx)
        target = targets_for([train_examples[i].grade for i in idx], config.binary_targets)
        opt.zero_grad()
        with T.Tape() as tape:
            loss = T.sigmoid_bce(model.logits(batch, train=True, rng=rng), target)
        T.backward(tape, loss)
        opt.step()
        step += 1
        curve.append({"epoch": step / per_epoch, "split": "train", "loss": loss.item()})
        if step % every == 0 or step == total:
            checkpoint(step)
    if config.keep_best and best[2] is not None:
        for n, p in params.items():
            p.data[...] = best[2][n]
    return TrainResult(model, curve, step, best[1], best[0], time.perf_counter() - started)


# ---------------------------------------------------------------------------
# Random search and training-size sweeps
# ---------------------------------------------------------------------------


@dataclass
class Trial:
    run_id: int
    config: dict
    seed: int
    loss: float
    auc: float
    epoch: float = math.nan
    metrics: dict = field(default_factory=dict)

    def record(self) -> dict:
        m = self.metrics
        return {"run_id": self.run_id, "config": self.config, "epoch": self.epoch, "split": "validation",
                "loss": self.loss, "ndcg1": m.get("ndcg1"), "ndcg3": m.get("ndcg3"),
                "ndcg10": m.get("ndcg10"), "err": m.get("err"), "auc": self.auc}


def sample_config(space: Mapping[str, Sequence], rng: np.random.Generator) -> dict:
    out = {}
    for name, values in space.items():
        options = list(values) if isinstance(values, (list, tuple)) else [values]
        if not options:
            raise ValueError(f"hyperparameter {name!r} has no candidate values")
        out[name] = options[int(rng.integers(len(options)))]
    return out


def random_search(
    space: Mapping[str, Sequence],
    n_runs: int,
    objective: Callable[[dict, int], dict],
    seed: int = 0,
    budget: Optional[float] = None,
    log_path: Optional[str | Path] = None,
) -> tuple[Trial, list[Trial]]:
    """Sample ``n_runs`` configurations from the grid, keep the lowest validation loss.

    ``objective(config, seed)`` returns at least ``loss`` and ``auc``. ``budget``
    caps wall-clock seconds; trials already started always finish.
    """
    if not space:
        raise ValueError("search space is empty")
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    rng = np.random.default_rng(seed)
    started = time.perf_counter()
    trials: list[Trial] = []
    fh = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        for run in range(n_runs):
            if budget is not None and trials and time.perf_counter() - started > budget:
                break
            cfg = sample_config(space, rng)
            trial_seed = int(rng.integers(2 ** 31))
            res = objective(cfg, trial_seed)
            trial = Trial(run, cfg, trial_seed, float(res["loss"]), float(res.get("auc", math.nan)),
                          float(res.get("epoch", math.nan)), dict(res))
            trials.append(trial)
            if fh:
                fh.write(json.dumps(trial.record(), default=float) + "\n")
                fh.flush()
    finally:
        if fh:
            fh.close()
    best = min(trials, key=lambda t: (t.loss, t.run_id))
    return best, trials


def split_overrides(overrides: Mapping, model_cfg: ModelConfig, train_cfg: TrainingConfig) -> tuple[ModelConfig, TrainingConfig]:
    mkeys = {f.name for f in fields(ModelConfig)}
    tkeys = {f.name for f in fields(TrainingConfig)}
    unknown = set(overrides) - mkeys - tkeys
    if unknown:
        raise ValueError(f"unknown hyperparameters: {sorted(unknown)}")
    m = replace(model_cfg, **{k: v for k, v in overrides.items() if k in mkeys})
    t = replace(train_cfg, **{k: v for k, v in overrides.items() if k in tkeys and k not in mkeys})
    if "seed" in overrides:
        t = replace(t, seed=overrides["seed"])
    return m, t


def model_objective(train_ex, val_ex, vocab, table, model_cfg: ModelConfig, train_cfg: TrainingConfig):
    """Objective for :func:`random_search` that trains one model per sampled configuration."""

    def run(cfg: dict, seed: int) -> dict:
        m, t = split_overrides(cfg, model_cfg, train_cfg)
        m, t = replace(m, seed=seed), replace(t, seed=seed, keep_best=True)
        res = train(build_model(m, vocab, table), train_ex, t, validation=val_ex)
        rep = evaluate_model(res.model, val_ex, t.binary_targets)
        return {"loss": rep.loss, "auc": rep.auc, "epoch": res.best_epoch, "ndcg1": rep.ndcg1,
                "ndcg3": rep.ndcg3, "ndcg10": rep.ndcg10, "err": rep.err}

    return run


def subsample_by_query(examples: Sequence[Example], fraction: float, seed: int) -> list[Example]:
    """Keep every triplet of a seeded ``fraction`` of the queries, preserving input order."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must lie in (0, 1]")
    queries = list(dict.fromkeys(e.query_text for e in examples))
    n = int(math.floor(fraction * len(queries) + 1e-9))
    if n == 0:
        raise ValueError(f"fraction {fraction} keeps no training queries")
    if n == len(queries):
        return list(examples)
    keep = set(queries[i] for i in np.random.default_rng(seed).permutation(len(queries))[:n])
    return [e for e in examples if e.query_text in keep]


def training_size_sweep(
    model_cfg: ModelConfig,
    train_cfg: TrainingConfig,
    vocab: Vocabulary,
    table: EmbeddingTable,
    train_ex: Sequence[Example],
    test_ex: Sequence[Example],
    fractions: Sequence[float],
    validation: Optional[Sequence[Example]] = None,
) -> list[dict]:
    """Retrain with fixed hyperparameters on query-level subsamples; report test loss and metrics."""
    rows = []
    for f in fractions:
        subset = subsample_by_query(train_ex, f, train_cfg.seed)
        res = train(build_model(model_cfg, vocab, table), subset, train_cfg, validation=validation)
        rep = evaluate_model(res.model, test_ex, train_cfg.binary_targets)
        rows.append({"fraction": f, "n_train": len(subset),
                     "n_queries": len({e.query_text for e in subset}), "test_loss": rep.loss,
                     "auc": rep.auc, "ndcg1": rep.ndcg1, "ndcg3": rep.ndcg3, "ndcg10": rep.ndcg10,
                     "err": rep.err, "model": res.model})
    return rows
