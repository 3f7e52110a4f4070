import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from matchtensor.baselines import (
    Bm25Params,
    BoostConfig,
    BoostedEnsemble,
    CorpusStats,
    Node,
    bm25_score,
    ensemble_score,
    train_boosted_ensemble,
    tree_predict,
)
from matchtensor.metrics import roc_auc


def test_bm25_no_overlap_is_zero():
    stats = CorpusStats.from_documents([["a", "b"], ["c"]])
    assert bm25_score(["z"], ["a", "b"], stats) == 0.0


def test_bm25_single_doc_hand_value():
    stats = CorpusStats.from_documents([["a"]])
    assert bm25_score(["a"], ["a"], stats) == pytest.approx(math.log(4 / 3), abs=1e-15)
    assert round(bm25_score(["a"], ["a"], stats), 4) == 0.2877


def test_bm25_order_invariance_low_fat_high_carb():
    docs = [["low", "fat", "high", "carb"], ["low", "carb", "high", "fat"], ["recipe"]]
    stats = CorpusStats.from_documents(docs)
    q = ["low", "fat", "high", "carb"]
    assert bm25_score(q, docs[0], stats) == bm25_score(q, docs[1], stats)


def test_bm25_empty_corpus_errors():
    with pytest.raises(ValueError):
        CorpusStats.from_documents([])


def test_bm25_params_validated():
    with pytest.raises(ValueError):
        Bm25Params(k1=-1.0)
    with pytest.raises(ValueError):
        Bm25Params(b=1.5)


words = st.sampled_from(list("abcdef"))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.lists(words, min_size=1, max_size=8), min_size=1, max_size=6),
       st.lists(words, min_size=1, max_size=4), st.randoms())
def test_bm25_properties(corpus, query, rnd):
    stats = CorpusStats.from_documents(corpus)
    assert all(v <= stats.n_docs for v in stats.df.values()) and stats.avgdl > 0
    doc = corpus[0]
    s = bm25_score(query, doc, stats)
    assert s >= 0.0
    assert (s == 0.0) == (not set(query) & set(doc))
    shuffled = list(doc)
    rnd.shuffle(shuffled)
    assert bm25_score(query, shuffled, stats) == pytest.approx(s, abs=1e-12)
    # one extra occurrence of a query term (with length held by the same stats) never lowers the score
    more = doc + [query[0]]
    fixed = CorpusStats(stats.df, stats.n_docs, stats.avgdl)
    norm_len = lambda d: bm25_score(query, d, fixed, Bm25Params(b=0.0))
    assert norm_len(more) >= norm_len(doc) - 1e-12


def _separable(n=200, seed=0):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, n)
    X = np.column_stack([y + rng.uniform(-0.4, 0.4, n), rng.normal(size=n)])
    return X, y


def test_separating_feature_gives_auc_one_held_out():
    X, y = _separable()
    ens = train_boosted_ensemble(X[:150], y[:150])
    assert roc_auc(ens.predict(X[150:]), y[150:]) == 1.0


def test_duplicate_columns_match_single_column_fit():
    X, y = _separable(seed=3)
    single = train_boosted_ensemble(np.column_stack([X[:, 0], np.zeros(len(y))]), y)
    dup = train_boosted_ensemble(np.column_stack([X[:, 0], X[:, 0]]), y)
    np.testing.assert_array_equal(single.predict(np.column_stack([X[:, 0], np.zeros(len(y))])),
                                  dup.predict(np.column_stack([X[:, 0], X[:, 0]])))
    assert all(_features(t) <= {0} for t in dup.trees)


def _features(node):
    if node.is_leaf:
        return set()
    return {node.feature} | _features(node.left) | _features(node.right)


def test_zero_trees_returns_base_score():
    ens = BoostedEnsemble([], 0.1, -0.4, ["s", "bm25"])
    assert ensemble_score(ens, [3.0, 1.0]) == -0.4


def test_stump_has_two_outputs():
    ens = BoostedEnsemble([Node(0, 0.5, Node(value=-1.0), Node(value=2.0))], 0.1, 0.0, ["s", "bm25"])
    out = ens.predict(np.random.default_rng(0).uniform(0, 1, (100, 2)))
    assert len(set(out.tolist())) == 2


def test_predict_matches_brute_force_walk():
    X, y = _separable(seed=5)
    ens = train_boosted_ensemble(X, y)
    pts = np.random.default_rng(1).normal(size=(1000, 2))

    def walk(node, x):
        while not node.is_leaf:
            node = node.left if x[node.feature] <= node.threshold else node.right
        return node.value

    ref = [ens.base_score + sum(ens.shrinkage * walk(t, x) for t in ens.trees) for x in pts]
    np.testing.assert_allclose(ens.predict(pts), ref, rtol=0, atol=1e-12)


def test_length_mismatch_errors():
    ens = BoostedEnsemble([], 0.1, 0.0, ["s", "bm25"])
    with pytest.raises(ValueError):
        ensemble_score(ens, [1.0, 2.0, 3.0])


def test_single_class_gives_constant_model_with_warning():
    X = np.random.default_rng(0).normal(size=(20, 2))
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        ens = train_boosted_ensemble(X, np.ones(20))
    assert any(issubclass(x.category, RuntimeWarning) for x in w)
    assert ens.trees == [] and len(set(ens.predict(X).tolist())) == 1


def test_round_cap_and_monotone_training_loss():
    X, y = _separable(seed=7)
    y = np.where(np.random.default_rng(1).random(len(y)) < 0.15, 1 - y, y)  # label noise
    cfg = BoostConfig(max_rounds=40)
    ens = train_boosted_ensemble(X, y, config=cfg)
    assert len(ens.trees) <= cfg.max_rounds
    assert len(ens.cv_loss) == cfg.max_rounds + 1
    assert all(b <= a + 1e-12 for a, b in zip(ens.train_loss, ens.train_loss[1:]))


def test_training_is_deterministic():
    X, y = _separable(seed=9)
    a = train_boosted_ensemble(X, y, config=BoostConfig(seed=4))
    b = train_boosted_ensemble(X, y, config=BoostConfig(seed=4))
    assert a.to_dict() == b.to_dict()


def test_ensemble_dict_roundtrip():
    X, y = _separable(seed=2)
    ens = train_boosted_ensemble(X, y)
    again = BoostedEnsemble.from_dict(ens.to_dict())
    np.testing.assert_array_equal(ens.predict(X), again.predict(X))


def test_tree_predict_leaf():
    assert tree_predict(Node(value=1.5), np.zeros((3, 2))).tolist() == [1.5] * 3


def test_fold_and_width_preconditions():
    with pytest.raises(ValueError):
        train_boosted_ensemble(np.zeros((10, 1)), np.arange(10) % 2)
    with pytest.raises(ValueError):
        train_boosted_ensemble(np.zeros((10, 2)), np.arange(10) % 2, config=BoostConfig(folds=1))
