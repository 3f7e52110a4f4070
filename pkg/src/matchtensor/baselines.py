"""BM25 and a small gradient-boosted tree ensemble for fusing scores."""

from __future__ import annotations

import math
import warnings
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np


@dataclass(frozen=True)
class Bm25Params:
    k1: float = 1.2
    b: float = 0.75

    def __post_init__(self):
        if self.k1 < 0 or not 0.0 <= self.b <= 1.0:
            raise ValueError(f"need k1 >= 0 and 0 <= b <= 1, got k1={self.k1}, b={self.b}")


@dataclass
class CorpusStats:
    df: dict
    n_docs: int
    avgdl: float

    @classmethod
    def from_documents(cls, docs: Iterable[Sequence[str]]) -> "CorpusStats":
        df: Counter = Counter()
        n, total = 0, 0
        for d in docs:
            df.update(set(d))
            n += 1
            total += len(d)
        if n == 0:
            raise ValueError("corpus is empty")
        return cls(dict(df), n, total / n if total else 1.0)

    def idf(self, term: str) -> float:
        df = self.df.get(term, 0)
        return math.log((self.n_docs - df + 0.5) / (df + 0.5) + 1.0)


def bm25_score(query: Sequence[str], doc: Sequence[str], stats: CorpusStats, params: Bm25Params = Bm25Params()) -> float:
    if stats.n_docs == 0:
        raise ValueError("corpus is empty")
    tf = Counter(doc)
    norm = params.k1 * (1.0 - params.b + params.b * len(doc) / stats.avgdl)
    score = 0.0
    for term in dict.fromkeys(query):
        f = tf.get(term, 0)
        if f:
            score += stats.idf(term) * f * (params.k1 + 1.0) / (f + norm)
    return score


# ---------------------------------------------------------------------------
# Boosted trees
# ---------------------------------------------------------------------------


@dataclass
class Node:
    feature: int = -1
    threshold: float = 0.0
    left: Optional["Node"] = None
    right: Optional["Node"] = None
    value: float = 0.0

    @property
    def is_leaf(self) -> bool:
        return self.left is None

    def to_dict(self) -> dict:
        if self.is_leaf:
            return {"value": self.value}
        return {"feature": self.feature, "threshold": self.threshold,
                "left": self.left.to_dict(), "right": self.right.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "Node":
        if "value" in d:
            return cls(value=float(d["value"]))
        return cls(int(d["feature"]), float(d["threshold"]), cls.from_dict(d["left"]), cls.from_dict(d["right"]))


def tree_predict(node: Node, X: np.ndarray) -> np.ndarray:
    if node.is_leaf:
        return np.full(X.shape[0], node.value)
    go_left = X[:, node.feature] <= node.threshold
    out = np.empty(X.shape[0])
    out[go_left] = tree_predict(node.left, X[go_left])
    out[~go_left] = tree_predict(node.right, X[~go_left])
    return out


@dataclass
class BoostConfig:
    max_depth: int = 2
    shrinkage: float = 0.1
    max_rounds: int = 200
    folds: int = 5
    reg_lambda: float = 1.0
    min_samples_leaf: int = 5
    seed: int = 0


@dataclass
class BoostedEnsemble:
    trees: list
    shrinkage: float
    base_score: float
    feature_names: list
    train_loss: list = field(default_factory=list)
    cv_loss: list = field(default_factory=list)

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != len(self.feature_names):
            raise ValueError(f"expected {len(self.feature_names)} features, got {X.shape[1]}")
        out = np.full(X.shape[0], self.base_score)
        for t in self.trees:
            out += self.shrinkage * tree_predict(t, X)
        return out

    def to_dict(self) -> dict:
        return {"trees": [t.to_dict() for t in self.trees], "shrinkage": self.shrinkage,
                "base_score": self.base_score, "feature_names": list(self.feature_names)}

    @classmethod
    def from_dict(cls, d: dict) -> "BoostedEnsemble":
        return cls([Node.from_dict(t) for t in d["trees"]], d["shrinkage"], d["base_score"], d["feature_names"])


def ensemble_score(model: BoostedEnsemble, features: Sequence[float]) -> float:
    return float(model.predict(np.asarray(features, dtype=np.float64)[None, :])[0])


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def _logloss(y: np.ndarray, z: np.ndarray) -> float:
    return float(np.mean(np.logaddexp(0.0, z) - y * z))


def _best_split(X, g, h, idx, cfg: BoostConfig):
    """Highest-gain (feature, threshold) over idx; earlier features win exact ties."""
    G, H = g[idx].sum(), h[idx].sum()
    parent = G * G / (H + cfg.reg_lambda)
    best = (0.0, -1, 0.0)
    n = idx.size
    lo = cfg.min_samples_leaf
    if n < 2 * lo:
        return best
    for f in range(X.shape[1]):
        order = idx[np.argsort(X[idx, f], kind="mergesort")]
        xs = X[order, f]
        gl = np.cumsum(g[order])[:-1]
        hl = np.cumsum(h[order])[:-1]
        valid = xs[1:] > xs[:-1]
        counts = np.arange(1, n)
        valid &= (counts >= lo) & (n - counts >= lo)
        if not valid.any():
            continue
        gain = gl ** 2 / (hl + cfg.reg_lambda) + (G - gl) ** 2 / (H - hl + cfg.reg_lambda) - parent
        gain = np.where(valid, gain, -np.inf)
        pos = int(np.argmax(gain))
        if gain[pos] > best[0] + 1e-12:
            best = (float(gain[pos]), f, 0.5 * (xs[pos] + xs[pos + 1]))
    return best


def _grow(X, g, h, idx, depth, cfg: BoostConfig) -> Node:
    leaf = Node(value=-g[idx].sum() / (h[idx].sum() + cfg.reg_lambda))
    if depth >= cfg.max_depth:
        return leaf
    gain, f, thr = _best_split(X, g, h, idx, cfg)
    if f < 0:
        return leaf
    left = idx[X[idx, f] <= thr]
    right = idx[X[idx, f] > thr]
    return Node(f, thr, _grow(X, g, h, left, depth + 1, cfg), _grow(X, g, h, right, depth + 1, cfg))


def _boost(X, y, rounds, cfg: BoostConfig, X_eval=None, y_eval=None):
    base = math.log(y.mean() / (1.0 - y.mean()))
    z = np.full(y.size, base)
    ze = None if X_eval is None else np.full(X_eval.shape[0], base)
    trees, train_loss, eval_loss = [], [_logloss(y, z)], []
    if ze is not None:
        eval_loss.append(_logloss(y_eval, ze))
    idx = np.arange(y.size)
    for _ in range(rounds):
        p = _sigmoid(z)
        tree = _grow(X, p - y, p * (1.0 - p), idx, 0, cfg)
        trees.append(tree)
        z = z + cfg.shrinkage * tree_predict(tree, X)
        train_loss.append(_logloss(y, z))
        if ze is not None:
            ze = ze + cfg.shrinkage * tree_predict(tree, X_eval)
            eval_loss.append(_logloss(y_eval, ze))
    return base, trees, train_loss, eval_loss


def train_boosted_ensemble(
    features: np.ndarray,
    targets: Sequence[float],
    feature_names: Optional[Sequence[str]] = None,
    config: BoostConfig = BoostConfig(),
) -> BoostedEnsemble:
    """Logistic-loss boosting on targets in [0, 1]; k-fold CV picks the round count, then refits on everything."""
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] < 2:
        raise ValueError("need a 2-D feature matrix with at least two columns")
    if config.folds < 2:
        raise ValueError("fold count must be >= 2")
    names = list(feature_names) if feature_names is not None else [f"f{i}" for i in range(X.shape[1])]
    if y.min() == y.max():
        warnings.warn("single-class targets: returning a constant ensemble", RuntimeWarning, stacklevel=2)
        prior = min(max(y.mean(), 1e-6), 1.0 - 1e-6)
        return BoostedEnsemble([], config.shrinkage, math.log(prior / (1.0 - prior)), names)
    perm = np.random.default_rng(config.seed).permutation(y.size)
    folds = np.array_split(perm, config.folds)
    curves = []
    for k, held in enumerate(folds):
        train_idx = np.concatenate([f for j, f in enumerate(folds) if j != k])
        ytr = y[train_idx]
        if ytr.min() == ytr.max() or held.size == 0:
            continue
        _, _, _, ev = _boost(X[train_idx], ytr, config.max_rounds, config, X[held], y[held])
        curves.append(ev)
    cv = np.mean(curves, axis=0) if curves else np.zeros(config.max_rounds + 1)
    rounds = int(np.argmin(cv))
    base, trees, train_loss, _ = _boost(X, y, rounds, config)
    return BoostedEnsemble(trees, config.shrinkage, base, names, train_loss, list(map(float, cv)))
