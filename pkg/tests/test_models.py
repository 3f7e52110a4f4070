import itertools

import numpy as np
import pytest

from matchtensor import tensor as T
from matchtensor.encoders import CnnEncoder, Module
from matchtensor.models import (
    PRESETS,
    REFERENCE_TOTALS,
    ModelConfig,
    PairBatch,
    ScoringHead,
    attention_pool,
    build_match_tensor,
    build_model,
    count_parameters,
    exact_match_matrix,
    hybrid_score,
    match_tensor_score,
    score_match_tensor,
    ssm_score,
)
from matchtensor.tensor import Parameter, Tape, Tensor
from matchtensor.text import assemble_document, build_table, process_query

from conftest import TOY_TOKENS, toy_config, toy_model, toy_pairs, toy_vocab

ARCHS = ["match_tensor", "ssm", "mt_exact_ssm", "mt_ssm"]


def test_match_tensor_products_example():
    mt = build_match_tensor(Tensor([[1.0, 2.0]]), Tensor([[3.0, 4.0]]), np.zeros((1, 1)), Tensor([0.7]))
    np.testing.assert_array_equal(mt.data[0, 0, 0], [3.0, 8.0, 0.0])


def test_match_tensor_exact_channel_is_alpha():
    mt = build_match_tensor(Tensor(np.zeros((1, 3))), Tensor(np.zeros((1, 3))), np.ones((1, 1)), Tensor([0.7]))
    np.testing.assert_array_equal(mt.data[0, 0, 0], [0, 0, 0, 0.7])


def test_match_tensor_masked_doc_position_is_zero():
    rng = np.random.default_rng(0)
    mt = build_match_tensor(Tensor(rng.normal(size=(2, 3))), Tensor(rng.normal(size=(4, 3))), np.ones((2, 4)),
                            Tensor([1.0]), q_mask=np.ones(2), d_mask=np.array([1, 1, 1, 0]))
    assert np.all(mt.data[0, :, 3, :] == 0.0)
    assert np.all(mt.data[0, :, :3, :] != 0.0)


def test_match_tensor_k_mismatch():
    with pytest.raises(T.ShapeError):
        build_match_tensor(Tensor(np.zeros((1, 3))), Tensor(np.zeros((1, 2))), np.zeros((1, 1)), Tensor([1.0]))


def test_exact_match_excludes_reserved_and_distinguishes_oov():
    vocab, _ = toy_vocab()
    q = process_query("low zzz yyy", vocab)
    d = assemble_document({"title": "low zzz", "body": "www"}, vocab)
    b = PairBatch.from_pairs([(q, d)], vocab)
    em = b.exact[0]
    # doc: <s> low zzz <field> www </s>
    assert em[0].tolist() == [0, 1, 0, 0, 0, 0]
    assert em[1].tolist() == [0, 0, 1, 0, 0, 0]  # same OOV surface
    assert em[2].tolist() == [0, 0, 0, 0, 0, 0]  # different OOV surface
    ids = np.array([[vocab.pad_id, vocab.boundary_id]])
    assert exact_match_matrix(ids, ids, np.ones((1, 2)), np.ones((1, 2)), vocab.reserved_ids, vocab.oov_id).sum() == 0


def test_zero_tensor_scores_one_half_at_zero_biases():
    head = ScoringHead("h", 4, 2, 2, 3, np.random.default_rng(0))
    for p in head.parameters().values():
        if p.name.endswith(".b"):
            p.data[...] = 0.0
    p = score_match_tensor(Tensor(np.zeros((3, 5, 4))), head)
    assert p.tolist() == [0.5]


def test_score_strictly_inside_unit_interval():
    head = ScoringHead("h", 4, 2, 2, 3, np.random.default_rng(1))
    for scale in (1e-3, 1.0, 10.0):
        p = score_match_tensor(Tensor(np.random.default_rng(2).normal(size=(2, 6, 4)) * scale), head)
        assert 0.0 < p[0] < 1.0


def test_head_filters_span_full_depth():
    head = ScoringHead("h", 41, 5, 2, 3, np.random.default_rng(0))
    assert [w.shape for w, _ in head.conv1] == [(5, 3, 3, 41), (5, 3, 4, 41), (5, 3, 5, 41)]


def test_single_3x4_filter_count_493():
    class One(Module):
        def __init__(self):
            self.w = Parameter("w", np.zeros((1, 3, 4, 41)))
            self.b = Parameter("b", np.zeros(1))
    assert count_parameters(One()).total == 493


def test_translation_of_phrase_leaves_score_unchanged():
    vocab, table = toy_vocab()
    model = build_model(toy_config("match_tensor", "cnn", seed=5), vocab, table)
    q = process_query("low fat", vocab)
    scores = []
    for pos in (8, 12, 17):
        body = ["news"] * 30
        body[pos:pos + 2] = ["low", "fat"]
        scores.append(match_tensor_score(q, assemble_document({"body": " ".join(body)}, vocab), model))
    assert max(scores) - min(scores) < 1e-9


def test_ssm_zero_weights_give_one_half():
    vocab, table = toy_vocab()
    model = toy_model("ssm")
    for p in model.trainable_parameters().values():
        p.data[...] = 0.0
    q, d = toy_pairs(model.vocab)[0]
    assert ssm_score(q, d, model) == 0.5


def _width1_ssm():
    vocab, table = toy_vocab()
    model = build_model(toy_config("ssm", "cnn"), vocab, table)
    rng = np.random.default_rng(8)
    model.doc_encoder = CnnEncoder("doc_cnn", 4, 6, rng, n_width1=6)
    model.query_encoder = CnnEncoder("query_cnn", 4, 6, rng, n_width1=6)
    return model, vocab


def test_width1_cnn_ssm_is_bag_of_words():
    model, vocab = _width1_ssm()
    q = process_query("low fat", vocab)
    words = "high carb diet recipe music tv".split()
    base = ssm_score(q, assemble_document({"body": " ".join(words)}, vocab), model)
    for perm in itertools.islice(itertools.permutations(words), 0, 720, 97):
        assert ssm_score(q, assemble_document({"body": " ".join(perm)}, vocab), model) == base
    dup = " ".join(w for w in words for _ in range(2))
    assert ssm_score(q, assemble_document({"body": dup}, vocab), model) == base


def test_attention_pool_examples():
    rng = np.random.default_rng(0)
    from matchtensor.encoders import Dense
    params = (Dense("aq", 3, 4, rng), Dense("ad", 3, 4, rng))
    d = rng.normal(size=(3, 3))
    q = Tensor(rng.normal(size=3))
    single = attention_pool(Tensor(d), q, params, np.array([0, 1, 0])).data
    np.testing.assert_allclose(single, d[1], rtol=0, atol=1e-15)
    twin = np.stack([d[0], d[0], d[2]])
    pooled = attention_pool(Tensor(twin), q, params, np.array([1, 1, 0])).data
    np.testing.assert_allclose(pooled, d[0], rtol=0, atol=1e-15)
    with pytest.raises(ValueError):
        attention_pool(Tensor(d), q, params, np.zeros(3))


def test_softmax_shift_invariance():
    x = np.random.default_rng(0).normal(size=(2, 5))
    a = T.softmax(Tensor(x)).data
    b = T.softmax(Tensor(x + 7.3)).data
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-15)


def test_exact_only_branch_without_overlap_gives_zero_input_features():
    model = toy_model("mt_exact_ssm")
    vocab = model.vocab
    q, d = process_query("music", vocab), assemble_document({"body": "low fat"}, vocab)
    batch = PairBatch.from_pairs([(q, d)], vocab)
    mt_feat, _ = model.branch_features(batch)
    zero = model.head.features(Tensor(np.zeros((1, len(q), len(d), 1))), batch.pair_mask)
    np.testing.assert_array_equal(mt_feat.data, zero.data)


def test_hybrids_differ_only_in_channel_count():
    a, b = toy_model("mt_exact_ssm"), toy_model("mt_ssm")
    assert a.head.channels == 1 and b.head.channels == 3 + 1


def test_zeroing_ssm_half_of_combine_leaves_mt_path():
    model = toy_model("mt_ssm")
    batch = PairBatch.from_pairs(toy_pairs(model.vocab), model.vocab)
    f2 = model.config.filters2
    model.combine.w.data[f2:] = 0.0
    mt_feat, _ = model.branch_features(batch)
    h = np.maximum(mt_feat.data @ model.combine.w.data[:f2] + model.combine.b.data, 0.0)
    z = h @ model.out.w.data + model.out.b.data
    np.testing.assert_allclose(model.logits(batch).data, z[:, 0], rtol=0, atol=1e-13)


def test_hybrid_shares_encoder_objects():
    model = toy_model("mt_ssm")
    names = [n for n, _ in model.named_parameters()]
    assert len(names) == len(set(names))
    assert sum(n.startswith("doc_lstm") for n in names) == 6


def test_product_channels_zeroed_leaves_exact_pattern_function():
    model = toy_model("match_tensor")
    model.query_state_proj.w.data[...] = 0.0
    vocab = model.vocab
    q = process_query("low fat", vocab)
    s1 = match_tensor_score(q, assemble_document({"body": "low music tv"}, vocab), model)
    s2 = match_tensor_score(q, assemble_document({"body": "low news show"}, vocab), model)
    assert s1 == s2


@pytest.mark.parametrize("arch", ARCHS)
@pytest.mark.parametrize("encoder", ["bilstm", "cnn"])
def test_score_padding_invariance(arch, encoder):
    model = toy_model(arch, encoder)
    pairs = toy_pairs(model.vocab)
    plain = model.score(PairBatch.from_pairs(pairs, model.vocab))
    padded = model.score(PairBatch.from_pairs(pairs, model.vocab, q_len=8, d_len=30))
    assert np.max(np.abs(plain - padded)) <= 1e-9
    singles = np.array([model.score(PairBatch.from_pairs([p], model.vocab))[0] for p in pairs])
    assert np.max(np.abs(plain - singles)) <= 1e-9


@pytest.mark.parametrize("arch", ARCHS)
def test_gradients_reach_every_parameter(arch):
    model = toy_model(arch)
    vocab = model.vocab
    batch = PairBatch.from_pairs(toy_pairs(vocab), vocab)
    assert batch.exact.sum() > 0
    for p in model.trainable_parameters().values():
        p.zero_grad()
    with Tape() as tape:
        loss = T.sigmoid_bce(model.logits(batch), np.array([1.0, 0.0, 0.5, 0.0, 1.0]))
    T.backward(tape, loss)
    for name, p in model.trainable_parameters().items():
        assert np.any(p.grad != 0.0), name
    assert model.embedding.grad is None


def test_wrappers_agree_with_batch_scores():
    for arch, fn in (("ssm", ssm_score), ("mt_ssm", hybrid_score), ("match_tensor", match_tensor_score)):
        model = toy_model(arch)
        q, d = toy_pairs(model.vocab)[1]
        assert abs(fn(q, d, model) - model.score(PairBatch.from_pairs([(q, d)], model.vocab))[0]) < 1e-15


def test_reference_count_ordering_and_tolerance():
    vocab, table = build_table(TOY_TOKENS, np.zeros((len(TOY_TOKENS), 256)))
    counts = {a: count_parameters(build_model(PRESETS[a], vocab, table)) for a in PRESETS}
    assert counts["match_tensor"].total < counts["mt_ssm"].total < counts["ssm"].total
    for a, ref in REFERENCE_TOTALS.items():
        assert abs(counts[a].total - ref) / ref <= 0.25
        assert sum(counts[a].components.values()) == counts[a].total


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(arch="dssm")
    with pytest.raises(ValueError):
        ModelConfig(encoder="gru")
