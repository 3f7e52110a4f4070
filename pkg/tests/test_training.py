import json
import math

import numpy as np
import pytest

from matchtensor.data import SyntheticTaskSpec, generate_synthetic
from matchtensor.models import ModelConfig, build_model
from matchtensor.tensor import Parameter
from matchtensor.text import build_table
from matchtensor.training import (
    Adam,
    TrainingConfig,
    bce_grad,
    bce_loss,
    evaluate_model,
    prepare,
    random_search,
    subsample_by_query,
    train,
    training_size_sweep,
)

SMALL = dict(queries=(16, 4, 4), n_clusters=20, cluster_size=4, n_filler=80, doc_length=(20, 40))


@pytest.fixture(scope="module")
def tiny():
    data, tokens, vecs = generate_synthetic(SyntheticTaskSpec(task="exact_match", seed=0, **SMALL))
    vocab, table = build_table(tokens, vecs, seed=0)
    return vocab, table, prepare(data.train, vocab), prepare(data.validation, vocab), prepare(data.test, vocab)


def _cfg(arch="match_tensor", **kw):
    return ModelConfig(arch=arch, projection_dim=4, doc_hidden=3, query_hidden=3, hidden=4, match_size=3,
                       filters1=2, filters2=2, seed=kw.pop("seed", 1), **kw)


def _snapshot(model):
    return {n: p.data.copy() for n, p in model.named_parameters()}


def test_bce_examples():
    assert bce_loss(0.5, 1.0) == pytest.approx(math.log(2), abs=1e-15)
    assert 0.0 < bce_loss(1.0, 1.0) < 1e-11
    assert 0.0 < bce_loss(0.0, 0.0) < 1e-11
    assert bce_grad(0.5, 1.0) == -2.0
    with pytest.raises(ValueError):
        bce_loss(1.5, 1.0)
    with pytest.raises(ValueError):
        bce_loss(float("nan"), 1.0)


def test_adam_first_step_moves_by_learning_rate():
    p = Parameter("w", np.array([0.0]))
    opt = Adam({"w": p}, lr=0.001)
    p.grad = np.array([1.0])
    opt.step()
    assert p.data[0] == pytest.approx(-0.001, rel=1e-6)


def test_adam_zero_gradient_leaves_parameters():
    p = Parameter("w", np.array([0.3, -2.0]))
    opt = Adam({"w": p}, lr=0.1)
    for _ in range(5):
        opt.zero_grad()
        opt.step()
    np.testing.assert_array_equal(p.data, [0.3, -2.0])


def test_adam_skips_frozen_parameters():
    frozen = Parameter("e", np.ones(2), trainable=False)
    assert Adam({"e": frozen}).params == {}


def test_config_validation():
    with pytest.raises(ValueError):
        TrainingConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainingConfig(subsample=0.0)


def test_zero_epochs_is_identity(tiny):
    vocab, table, tr, va, _ = tiny
    model = build_model(_cfg(), vocab, table)
    before = _snapshot(model)
    res = train(model, tr, TrainingConfig(epochs=0, batch_size=8), validation=va)
    assert res.steps == 0
    for n, v in _snapshot(model).items():
        np.testing.assert_array_equal(v, before[n])


def test_empty_training_set(tiny):
    vocab, table, *_ = tiny
    with pytest.raises(ValueError):
        train(build_model(_cfg(), vocab, table), [], TrainingConfig())


def test_training_is_deterministic_and_freezes_embeddings(tiny):
    vocab, table, tr, va, _ = tiny
    runs = []
    for _ in range(2):
        model = build_model(_cfg(), vocab, table)
        emb = model.embedding.data.copy()
        res = train(model, tr, TrainingConfig(epochs=0.5, batch_size=16, learning_rate=0.01, seed=3), validation=va)
        np.testing.assert_array_equal(model.embedding.data, emb)
        runs.append((res.curve[-1]["loss"], _snapshot(model)))
    assert runs[0][0] == runs[1][0]
    for n in runs[0][1]:
        np.testing.assert_array_equal(runs[0][1][n], runs[1][1][n])


def test_validation_every_quarter_epoch(tiny):
    vocab, table, tr, va, _ = tiny
    res = train(build_model(_cfg("ssm"), vocab, table), tr, TrainingConfig(epochs=1, batch_size=17), validation=va)
    epochs = [r["epoch"] for r in res.curve if r["split"] == "validation"]
    assert epochs == pytest.approx([0.0, 0.25, 0.5, 0.75, 1.0])


def test_keep_best_restores_lowest_validation_loss(tiny):
    vocab, table, tr, va, _ = tiny
    model = build_model(_cfg(), vocab, table)
    res = train(model, tr, TrainingConfig(epochs=1, batch_size=16, learning_rate=0.05, keep_best=True), validation=va)
    val = [r["loss"] for r in res.curve if r["split"] == "validation"]
    assert res.best_loss == min(val)
    assert evaluate_model(model, va).loss == pytest.approx(min(val), abs=1e-12)


def test_training_reduces_loss(tiny):
    vocab, table, tr, va, _ = tiny
    model = build_model(_cfg(), vocab, table)
    res = train(model, tr, TrainingConfig(epochs=2, batch_size=16, learning_rate=0.02), validation=va)
    val = [r["loss"] for r in res.curve if r["split"] == "validation"]
    assert val[-1] < val[0]


def test_random_search_single_run_and_fixed_point(tmp_path):
    calls = []

    def objective(cfg, seed):
        calls.append(cfg)
        return {"loss": cfg["hidden"] / 10.0, "auc": 0.5}

    best, trials = random_search({"hidden": [20, 30]}, 1, objective, seed=0)
    assert len(trials) == 1 and best is trials[0]
    best, trials = random_search({"hidden": [25], "filters1": 18}, 4, objective, seed=0, log_path=tmp_path / "t.jsonl")
    assert best.config == {"hidden": 25, "filters1": 18}
    rows = [json.loads(x) for x in (tmp_path / "t.jsonl").read_text().splitlines()]
    assert len(rows) == 4
    assert set(rows[0]) == {"run_id", "config", "epoch", "split", "loss", "ndcg1", "ndcg3", "ndcg10", "err", "auc"}


def test_random_search_deterministic_and_picks_min():
    space = {"hidden": [10, 20, 30, 40], "lr": [0.1, 0.01]}
    objective = lambda cfg, seed: {"loss": abs(cfg["hidden"] - 30) + cfg["lr"], "auc": 0.5}
    a = random_search(space, 8, objective, seed=5)
    b = random_search(space, 8, objective, seed=5)
    assert [(t.config, t.seed) for t in a[1]] == [(t.config, t.seed) for t in b[1]]
    assert a[0].loss == min(t.loss for t in a[1])


def test_random_search_errors():
    with pytest.raises(ValueError):
        random_search({}, 3, lambda c, s: {"loss": 0.0})


def test_subsample_is_query_level(tiny):
    _, _, tr, _, _ = tiny
    sub = subsample_by_query(tr, 0.25, seed=0)
    queries = {e.query_text for e in sub}
    assert len(queries) == 4
    assert all(sum(e.query_text == q for e in sub) == 17 for q in queries)
    assert subsample_by_query(tr, 1.0, 0) == list(tr)
    with pytest.raises(ValueError):
        subsample_by_query(tr, 0.01, 0)


def test_full_fraction_reproduces_baseline(tiny):
    vocab, table, tr, va, te = tiny
    cfg, tcfg = _cfg(), TrainingConfig(epochs=0.5, batch_size=16, learning_rate=0.01, seed=2)
    rows = training_size_sweep(cfg, tcfg, vocab, table, tr, te, [1.0], validation=va)
    model = build_model(cfg, vocab, table)
    train(model, tr, tcfg, validation=va)
    assert rows[0]["test_loss"] == evaluate_model(model, te).loss
