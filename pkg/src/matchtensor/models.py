"""Relevance scorers: Match-Tensor, SSM, and the two Match-Tensor + SSM hybrids."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .encoders import (
    BiLstmEncoder,
    CnnEncoder,
    Dense,
    InputProjection,
    Module,
    StateProjection,
    encode_batch,
    glorot,
    last_states,
)
from .tensor import Parameter, Tensor
from .text import EmbeddingTable, ProcessedText, Vocabulary, pad_batch

ARCHITECTURES = ("match_tensor", "ssm", "mt_exact_ssm", "mt_ssm")
ENCODERS = ("bilstm", "cnn")
HEAD_KERNELS = ((3, 3), (3, 4), (3, 5))  # (query words, document words)


@dataclass
class ModelConfig:
    arch: str = "match_tensor"
    encoder: str = "bilstm"
    projection_dim: int = 40
    doc_hidden: int = 70
    query_hidden: int = 15
    hidden: int = 50
    match_size: int = 40
    filters1: int = 18
    filters2: int = 20
    dropout: float = 0.2
    recurrent_projection: int = 0
    pooling: str = "max"  # document pooling for SSM branches: max | attention
    attention_dim: int = 16
    input_bias: bool = False
    alpha_init: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.arch not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {self.arch!r}; choose from {ARCHITECTURES}")
        if self.encoder not in ENCODERS:
            raise ValueError(f"unknown encoder {self.encoder!r}; choose from {ENCODERS}")
        if self.pooling not in ("max", "attention"):
            raise ValueError(f"unknown pooling {self.pooling!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    def replace(self, **changes) -> "ModelConfig":
        return replace(self, **changes)


# Tuned settings for each architecture (embedding projection, bi-LSTM sizes, ...).
PRESETS = {
    "ssm": ModelConfig(arch="ssm", projection_dim=50, doc_hidden=120, query_hidden=32, hidden=50),
    "match_tensor": ModelConfig(arch="match_tensor", projection_dim=40, doc_hidden=70, query_hidden=15, hidden=50,
                                match_size=40, filters1=18, filters2=20),
    "mt_ssm": ModelConfig(arch="mt_ssm", projection_dim=50, doc_hidden=95, query_hidden=15, hidden=55,
                          match_size=35, filters1=18, filters2=30),
}
REFERENCE_TOTALS = {"ssm": 216_000, "match_tensor": 104_000, "mt_ssm": 160_000}


# ---------------------------------------------------------------------------
# Batches
# ---------------------------------------------------------------------------


def exact_match_matrix(
    q_ids: np.ndarray,
    d_ids: np.ndarray,
    q_mask: np.ndarray,
    d_mask: np.ndarray,
    reserved_ids: frozenset = frozenset(),
    oov_id: Optional[int] = None,
    q_surface: Optional[Sequence[Sequence[str]]] = None,
    d_surface: Optional[Sequence[Sequence[str]]] = None,
) -> np.ndarray:
    """1 where query token i and document token j are the same word, else 0; shape (B, m, n).

    Reserved tokens never match. Two OOV tokens match only if their surface
    strings agree.
    """
    q_ids, d_ids = np.atleast_2d(q_ids), np.atleast_2d(d_ids)
    eq = q_ids[:, :, None] == d_ids[:, None, :]
    eq &= (np.atleast_2d(q_mask) > 0)[:, :, None] & (np.atleast_2d(d_mask) > 0)[:, None, :]
    banned = set(reserved_ids) - ({oov_id} if oov_id is not None else set())
    if banned:
        eq &= ~np.isin(q_ids, list(banned))[:, :, None]
    if oov_id is not None:
        for b, i, j in zip(*np.nonzero(eq & (q_ids == oov_id)[:, :, None])):
            if q_surface is None or d_surface is None or q_surface[b][i] != d_surface[b][j]:
                eq[b, i, j] = False
    return eq.astype(np.float64)


@dataclass
class PairBatch:
    q_ids: np.ndarray
    q_mask: np.ndarray
    d_ids: np.ndarray
    d_mask: np.ndarray
    exact: np.ndarray

    @classmethod
    def from_pairs(cls, pairs: Sequence[tuple[ProcessedText, ProcessedText]], vocab: Vocabulary,
                   q_len: Optional[int] = None, d_len: Optional[int] = None) -> "PairBatch":
        qs = [q for q, _ in pairs]
        ds = [d for _, d in pairs]
        if any(len(q) == 0 for q in qs) or any(len(d) == 0 for d in ds):
            raise ValueError("query and document must each hold at least one token")
        q_ids, q_mask = pad_batch(qs, vocab.pad_id, q_len)
        d_ids, d_mask = pad_batch(ds, vocab.pad_id, d_len)
        q_surf = [q.tokens for q in qs]
        d_surf = [d.tokens for d in ds]
        exact = exact_match_matrix(q_ids, d_ids, q_mask, d_mask, vocab.reserved_ids, vocab.oov_id, q_surf, d_surf)
        return cls(q_ids, q_mask, d_ids, d_mask, exact)

    def __len__(self) -> int:
        return self.q_ids.shape[0]

    @property
    def pair_mask(self) -> np.ndarray:
        return self.q_mask[:, :, None] * self.d_mask[:, None, :]


# ---------------------------------------------------------------------------
# Building blocks
# ---------------------------------------------------------------------------


def build_match_tensor(
    q_states: Tensor,
    d_states: Tensor,
    exact: np.ndarray,
    alpha: Tensor,
    q_mask: Optional[np.ndarray] = None,
    d_mask: Optional[np.ndarray] = None,
    include_products: bool = True,
) -> Tensor:
    """Stack the k per-dimension product channels and the alpha-scaled exact-match channel.

    States are (B, m, k) and (B, n, k), or unbatched (m, k) and (n, k). The
    result is (B, m, n, k+1), or (B, m, n, 1) without the product channels.
    """
    unbatched = q_states.ndim == 2
    if unbatched:
        q_states = T.reshape(q_states, (1,) + q_states.shape)
        d_states = T.reshape(d_states, (1,) + d_states.shape)
        exact = np.asarray(exact)[None] if np.ndim(exact) == 2 else exact
        q_mask = None if q_mask is None else np.asarray(q_mask)[None]
        d_mask = None if d_mask is None else np.asarray(d_mask)[None]
    nb, m, k = q_states.shape
    _, n, kd = d_states.shape
    if k != kd:
        raise T.ShapeError("build_match_tensor", "query and document state widths differ", (q_states.shape, d_states.shape))
    q_mask = np.ones((nb, m)) if q_mask is None else np.asarray(q_mask, dtype=np.float64)
    d_mask = np.ones((nb, n)) if d_mask is None else np.asarray(d_mask, dtype=np.float64)
    pair = q_mask[:, :, None] * d_mask[:, None, :]
    em = T.scalar_scale(Tensor((np.asarray(exact) * pair)[..., None]), alpha)
    if not include_products:
        return em
    qe = T.reshape(q_states, (nb, m, 1, k))
    de = T.reshape(d_states, (nb, 1, n, k))
    prod = T.mul(qe, de, broadcast=True)
    prod = T.mul(prod, Tensor(pair[..., None]), broadcast=True)
    return T.concat([prod, em], axis=-1)


class ScoringHead(Module):
    """Full-depth 3x3/3x4/3x5 convs, ReLU, 1x1 conv, ReLU, global max-pool, dense, sigmoid."""

    def __init__(self, name: str, channels: int, filters1: int, filters2: int, hidden: int,
                 rng: np.random.Generator, with_dense: bool = True):
        self.channels = channels
        self.conv1 = []
        for kh, kw in HEAD_KERNELS:
            fan_in, fan_out = kh * kw * channels, kh * kw * filters1
            self.conv1.append((
                Parameter(f"{name}.conv{kh}x{kw}.w", glorot(rng, (filters1, kh, kw, channels), fan_in, fan_out)),
                Parameter(f"{name}.conv{kh}x{kw}.b", np.zeros(filters1)),
            ))
        n1 = filters1 * len(HEAD_KERNELS)
        self.conv2_w = Parameter(f"{name}.conv1x1.w", glorot(rng, (filters2, 1, 1, n1), n1, filters2))
        self.conv2_b = Parameter(f"{name}.conv1x1.b", np.zeros(filters2))
        self.filters2 = filters2
        self.hidden = Dense(f"{name}.hidden", filters2, hidden, rng) if with_dense else None
        self.out = Dense(f"{name}.out", hidden, 1, rng) if with_dense else None

    def features(self, mt: Tensor, pair_mask: Optional[np.ndarray] = None) -> Tensor:
        """Pooled (B, filters2) vector; cells outside both texts are excluded from the max."""
        if mt.shape[-1] != self.channels:
            raise T.ShapeError("score_match_tensor", "channel count differs from the head", (mt.shape,))
        maps = [T.conv2d_full_depth(mt, w, b, padding="same") for w, b in self.conv1]
        h = T.relu(T.concat(maps, axis=-1))
        h = T.relu(T.conv2d_full_depth(h, self.conv2_w, self.conv2_b, padding="same"))
        mask = None if pair_mask is None else np.asarray(pair_mask) > 0
        return T.global_maxpool_2d(h, mask)

    def logits(self, mt: Tensor, pair_mask: Optional[np.ndarray] = None) -> Tensor:
        z = self.out(T.relu(self.hidden(self.features(mt, pair_mask))))
        return T.reshape(z, (z.shape[0],))


def score_match_tensor(mt: Tensor, head: ScoringHead, mode: str = "infer", pair_mask=None) -> np.ndarray:
    """Relevance probability for a (B, m, n, C) or (m, n, C) match tensor."""
    if mt.ndim == 3:
        mt = T.reshape(mt, (1,) + mt.shape)
        pair_mask = None if pair_mask is None else np.asarray(pair_mask)[None]
    with_tape = T.active_tape() is not None
    z = head.logits(mt, pair_mask)
    p = T.sigmoid(z)
    return p if with_tape else p.data


def attention_pool(d_states: Tensor, q_embedding: Tensor, params: tuple[Dense, Dense], d_mask: np.ndarray) -> Tensor:
    """Query-dependent convex combination of document states.

    ``params`` holds the two ReLU transforms (query side, document side);
    their dot products, softmax-normalized over unmasked positions, weight
    the document states.
    """
    att_q, att_d = params
    unbatched = d_states.ndim == 2
    if unbatched:
        d_states = T.reshape(d_states, (1,) + d_states.shape)
        q_embedding = T.reshape(q_embedding, (1,) + q_embedding.shape)
        d_mask = np.asarray(d_mask)[None]
    nb, n, dim = d_states.shape
    qa = T.relu(att_q(q_embedding))
    da = T.relu(att_d(d_states))
    logits = T.sum_(T.mul(da, T.reshape(qa, (nb, 1, qa.shape[-1])), broadcast=True), axis=-1)
    w = T.softmax(logits, mask=np.asarray(d_mask) > 0)
    pooled = T.sum_(T.mul(d_states, T.reshape(w, (nb, n, 1)), broadcast=True), axis=1)
    return T.reshape(pooled, (dim,)) if unbatched else pooled


# ---------------------------------------------------------------------------
# Models
# ---------------------------------------------------------------------------


class RankingModel(Module):
    """Common plumbing: frozen embeddings, shared projection, query/document encoders."""

    def __init__(self, config: ModelConfig, vocab: Vocabulary, table: EmbeddingTable):
        self.config = config
        self.vocab = vocab
        self.table = table
        self.embedding = Parameter("embedding.table", table.matrix, trainable=False)
        rng = np.random.default_rng(config.seed)
        self._rng = rng
        c = config
        self.input_proj = InputProjection("input_proj", table.dim, c.projection_dim, rng, bias=c.input_bias)
        if c.encoder == "bilstm":
            self.query_encoder = BiLstmEncoder("query_lstm", c.projection_dim, c.query_hidden, rng, c.dropout,
                                               c.recurrent_projection)
            self.doc_encoder = BiLstmEncoder("doc_lstm", c.projection_dim, c.doc_hidden, rng, c.dropout,
                                             c.recurrent_projection)
        else:
            self.query_encoder = CnnEncoder("query_cnn", c.projection_dim, 2 * c.query_hidden, rng, c.dropout)
            self.doc_encoder = CnnEncoder("doc_cnn", c.projection_dim, 2 * c.doc_hidden, rng, c.dropout)

    def set_dropout(self, rate: float) -> None:
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
        self.query_encoder.dropout = rate
        self.doc_encoder.dropout = rate

    def encode_pair(self, batch: PairBatch, train: bool, rng) -> tuple[Tensor, Tensor]:
        q = encode_batch(self.table, batch.q_ids, batch.q_mask, self.input_proj, self.query_encoder, train, rng)
        d = encode_batch(self.table, batch.d_ids, batch.d_mask, self.input_proj, self.doc_encoder, train, rng)
        return q, d

    def logits(self, batch: PairBatch, train: bool = False, rng: Optional[np.random.Generator] = None) -> Tensor:
        raise NotImplementedError

    def score(self, batch: PairBatch) -> np.ndarray:
        """Inference-mode probabilities, shape (B,)."""
        z = self.logits(batch, train=False).data
        return 1.0 / (1.0 + np.exp(-z))

    def score_pairs(self, pairs, batch_size: int = 256) -> np.ndarray:
        out = []
        for s in range(0, len(pairs), batch_size):
            out.append(self.score(PairBatch.from_pairs(pairs[s:s + batch_size], self.vocab)))
        return np.concatenate(out) if out else np.zeros(0)


class SsmBranch(Module):
    """Siamese comparison: query last states and pooled document states, projected, dot product."""

    def __init__(self, config: ModelConfig, q_dim: int, d_dim: int, rng: np.random.Generator):
        self.query_proj = Dense("ssm.query_proj", q_dim, config.hidden, rng, bias=False)
        self.doc_proj = Dense("ssm.doc_proj", d_dim, config.hidden, rng, bias=False)
        self.attention = None
        if config.pooling == "attention":
            self.attention = (
                Dense("ssm.att_query", q_dim, config.attention_dim, rng),
                Dense("ssm.att_doc", d_dim, config.attention_dim, rng),
            )

    def hidden(self, q_states, d_states, batch: PairBatch, bidirectional: bool) -> Tensor:
        """Elementwise product of the two projected embeddings; its sum is the dot product."""
        q_vec = last_states(q_states, batch.q_mask, bidirectional)
        if self.attention is not None:
            d_vec = attention_pool(d_states, q_vec, self.attention, batch.d_mask)
        else:
            d_vec = T.masked_maxpool_over_sequence(d_states, batch.d_mask)
        return T.mul(self.query_proj(q_vec), self.doc_proj(d_vec))


class MatchTensorModel(RankingModel):
    def __init__(self, config: ModelConfig, vocab: Vocabulary, table: EmbeddingTable):
        super().__init__(config, vocab, table)
        c, rng = config, self._rng
        self.query_state_proj = StateProjection("query_state_proj", self.query_encoder.out_dim, c.match_size, rng)
        self.doc_state_proj = StateProjection("doc_state_proj", self.doc_encoder.out_dim, c.match_size, rng)
        self.alpha = Parameter("alpha", np.array([c.alpha_init]))
        self.head = ScoringHead("head", c.match_size + 1, c.filters1, c.filters2, c.hidden, rng)

    def match_tensor(self, batch: PairBatch, train: bool = False, rng=None) -> Tensor:
        q, d = self.encode_pair(batch, train, rng)
        return build_match_tensor(self.query_state_proj(q), self.doc_state_proj(d), batch.exact, self.alpha,
                                  batch.q_mask, batch.d_mask)

    def logits(self, batch, train=False, rng=None):
        return self.head.logits(self.match_tensor(batch, train, rng), batch.pair_mask)


class SsmModel(RankingModel):
    def __init__(self, config: ModelConfig, vocab: Vocabulary, table: EmbeddingTable):
        super().__init__(config, vocab, table)
        self.ssm = SsmBranch(config, self.query_encoder.out_dim, self.doc_encoder.out_dim, self._rng)
        self.out_bias = Parameter("ssm.out_bias", np.zeros(1))

    def logits(self, batch, train=False, rng=None):
        q, d = self.encode_pair(batch, train, rng)
        hid = self.ssm.hidden(q, d, batch, self.query_encoder.bidirectional)
        z = T.sum_(hid, axis=-1)
        return T.add(z, self.out_bias, broadcast=True)


class HybridModel(RankingModel):
    """Match-Tensor branch and SSM branch over one set of encoders, joined before a dense layer."""

    def __init__(self, config: ModelConfig, vocab: Vocabulary, table: EmbeddingTable):
        super().__init__(config, vocab, table)
        c, rng = config, self._rng
        self.exact_only = c.arch == "mt_exact_ssm"
        if self.exact_only:
            self.query_state_proj = self.doc_state_proj = None
            channels = 1
        else:
            self.query_state_proj = StateProjection("query_state_proj", self.query_encoder.out_dim, c.match_size, rng)
            self.doc_state_proj = StateProjection("doc_state_proj", self.doc_encoder.out_dim, c.match_size, rng)
            channels = c.match_size + 1
        self.alpha = Parameter("alpha", np.array([c.alpha_init]))
        self.head = ScoringHead("head", channels, c.filters1, c.filters2, c.hidden, rng, with_dense=False)
        self.ssm = SsmBranch(c, self.query_encoder.out_dim, self.doc_encoder.out_dim, rng)
        self.combine = Dense("combine.hidden", c.filters2 + c.hidden, c.hidden, rng)
        self.out = Dense("combine.out", c.hidden, 1, rng)

    def branch_features(self, batch, train=False, rng=None) -> tuple[Tensor, Tensor]:
        q, d = self.encode_pair(batch, train, rng)
        if self.exact_only:
            mt = build_match_tensor(q, d, batch.exact, self.alpha, batch.q_mask, batch.d_mask, include_products=False)
        else:
            mt = build_match_tensor(self.query_state_proj(q), self.doc_state_proj(d), batch.exact, self.alpha,
                                    batch.q_mask, batch.d_mask)
        mt_feat = self.head.features(mt, batch.pair_mask)
        ssm_feat = self.ssm.hidden(q, d, batch, self.query_encoder.bidirectional)
        return mt_feat, ssm_feat

    def logits(self, batch, train=False, rng=None):
        mt_feat, ssm_feat = self.branch_features(batch, train, rng)
        h = T.relu(self.combine(T.concat([mt_feat, ssm_feat], axis=-1)))
        z = self.out(h)
        return T.reshape(z, (z.shape[0],))


def build_model(config: ModelConfig, vocab: Vocabulary, table: EmbeddingTable) -> RankingModel:
    cls = {"match_tensor": MatchTensorModel, "ssm": SsmModel, "mt_exact_ssm": HybridModel, "mt_ssm": HybridModel}
    return cls[config.arch](config, vocab, table)


def _single(model: RankingModel, q: ProcessedText, d: ProcessedText, mode: str, rng) -> float:
    batch = PairBatch.from_pairs([(q, d)], model.vocab)
    z = model.logits(batch, train=(mode == "train"), rng=rng).data[0]
    return float(1.0 / (1.0 + np.exp(-z)))


def ssm_score(q: ProcessedText, d: ProcessedText, model: SsmModel, mode: str = "infer", rng=None) -> float:
    return _single(model, q, d, mode, rng)


def hybrid_score(q: ProcessedText, d: ProcessedText, model: HybridModel, mode: str = "infer", rng=None) -> float:
    return _single(model, q, d, mode, rng)


def match_tensor_score(q: ProcessedText, d: ProcessedText, model: MatchTensorModel, mode: str = "infer", rng=None) -> float:
    return _single(model, q, d, mode, rng)


@dataclass
class ParameterCount:
    total: int
    components: dict = field(default_factory=dict)

    def __int__(self) -> int:
        return self.total


def count_parameters(model: Module) -> ParameterCount:
    """Trainable scalars, grouped by the first segment of each parameter name."""
    components: dict[str, int] = {}
    for name, p in model.named_parameters():
        if not p.trainable:
            continue
        key = name.split(".")[0]
        if key in ("head", "ssm", "combine"):
            key = ".".join(name.split(".")[:2])
        components[key] = components.get(key, 0) + p.data.size
    return ParameterCount(sum(components.values()), components)
