"""Sequence encoders: shared input projection, bi-LSTM or width-1/3 CNN, state projection."""

from __future__ import annotations

from typing import Iterator, Optional

import numpy as np

from . import tensor as T
from .tensor import Parameter, Tensor
from .text import EmbeddingTable, ProcessedText


def glorot(rng: np.random.Generator, shape: tuple, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Module:
    """Container that discovers Parameters and sub-Modules among its attributes."""

    def named_parameters(self) -> Iterator[tuple[str, Parameter]]:
        seen: set[int] = set()
        yield from self._walk(seen)

    def _walk(self, seen: set[int]) -> Iterator[tuple[str, Parameter]]:
        for value in vars(self).values():
            yield from _collect(value, seen)

    def parameters(self) -> dict[str, Parameter]:
        return dict(self.named_parameters())

    def trainable_parameters(self) -> dict[str, Parameter]:
        return {n: p for n, p in self.named_parameters() if p.trainable}


def _collect(value, seen: set[int]):
    if isinstance(value, Parameter):
        if id(value) not in seen:
            seen.add(id(value))
            yield value.name, value
    elif isinstance(value, Module):
        yield from value._walk(seen)
    elif isinstance(value, (list, tuple)):
        for v in value:
            yield from _collect(v, seen)


class Dense(Module):
    def __init__(self, name: str, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True):
        self.w = Parameter(f"{name}.w", glorot(rng, (n_in, n_out), n_in, n_out))
        self.b = Parameter(f"{name}.b", np.zeros(n_out)) if bias else None
        self.n_in, self.n_out = n_in, n_out

    def __call__(self, x: Tensor) -> Tensor:
        y = T.matmul(x, self.w)
        return T.add(y, self.b, broadcast=True) if self.b is not None else y


class InputProjection(Dense):
    """Embedding -> l dimensions; one instance is shared by query and document."""

    def __init__(self, name: str, d_emb: int, dim: int, rng: np.random.Generator, bias: bool = False):
        super().__init__(name, d_emb, dim, rng, bias=bias)


class StateProjection(Dense):
    """Encoder states -> k dimensions, linear, no bias (padding stays zero)."""

    def __init__(self, name: str, n_in: int, k: int, rng: np.random.Generator):
        super().__init__(name, n_in, k, rng, bias=False)


class LstmCell(Module):
    """Standard LSTM cell, gate order [input, forget, output, candidate]."""

    def __init__(self, name: str, n_in: int, hidden: int, rng: np.random.Generator, proj: int = 0):
        self.hidden = hidden
        self.proj = proj
        rec = proj or hidden
        self.w_x = Parameter(f"{name}.w_x", glorot(rng, (n_in, 4 * hidden), n_in, 4 * hidden))
        self.w_h = Parameter(f"{name}.w_h", glorot(rng, (rec, 4 * hidden), rec, 4 * hidden))
        b = np.zeros(4 * hidden)
        b[hidden:2 * hidden] = 1.0
        self.b = Parameter(f"{name}.b", b)
        self.w_p = Parameter(f"{name}.w_p", glorot(rng, (hidden, proj), hidden, proj)) if proj else None

    @property
    def out_dim(self) -> int:
        return self.proj or self.hidden

    def run(self, x: Tensor, mask: np.ndarray, reverse: bool, fused: bool = True) -> Tensor:
        if fused and self.w_p is None:
            return T.lstm_sequence(x, self.w_x, self.w_h, self.b, mask, reverse=reverse)
        return self.unrolled(x, mask, reverse)

    def unrolled(self, x: Tensor, mask: np.ndarray, reverse: bool) -> Tensor:
        """Unroll over (B, L, n_in); returns (B, L, out_dim) with zeros at masked positions.

        The carried state is frozen across masked steps, so the reverse
        direction starts at each sequence's own last token.
        """
        nb, length = mask.shape
        hsz, out = self.hidden, self.out_dim
        xw = T.add(T.matmul(x, self.w_x), self.b, broadcast=True)
        h = Tensor(np.zeros((nb, out)))
        c = Tensor(np.zeros((nb, hsz)))
        zero = Tensor(np.zeros((nb, out)))
        outputs: list[Optional[Tensor]] = [None] * length
        steps = range(length - 1, -1, -1) if reverse else range(length)
        for t in steps:
            m = mask[:, t]
            if not m.any():
                outputs[t] = zero
                continue
            z = T.add(T.slice_(xw, (slice(None), t)), T.matmul(h, self.w_h))
            s = T.sigmoid(T.slice_(z, (slice(None), slice(0, 3 * hsz))))
            g = T.tanh(T.slice_(z, (slice(None), slice(3 * hsz, 4 * hsz))))
            i = T.slice_(s, (slice(None), slice(0, hsz)))
            f = T.slice_(s, (slice(None), slice(hsz, 2 * hsz)))
            o = T.slice_(s, (slice(None), slice(2 * hsz, 3 * hsz)))
            c_new = T.add(T.mul(f, c), T.mul(i, g))
            h_new = T.mul(o, T.tanh(c_new))
            if self.w_p is not None:
                h_new = T.matmul(h_new, self.w_p)
            if m.all():
                c, h = c_new, h_new
                outputs[t] = h
            else:
                keep = Tensor(m[:, None])
                hold = Tensor(1.0 - m[:, None])
                c = T.add(T.mul(c_new, keep, broadcast=True), T.mul(c, hold, broadcast=True))
                h = T.add(T.mul(h_new, keep, broadcast=True), T.mul(h, hold, broadcast=True))
                outputs[t] = T.mul(h_new, keep, broadcast=True)
        return T.stack(outputs, axis=1)


class BiLstmEncoder(Module):
    bidirectional = True

    def __init__(self, name: str, n_in: int, hidden: int, rng: np.random.Generator, dropout: float = 0.0, proj: int = 0):
        self.forward_cell = LstmCell(f"{name}.forward", n_in, hidden, rng, proj)
        self.backward_cell = LstmCell(f"{name}.backward", n_in, hidden, rng, proj)
        self.dropout = dropout
        self.n_in = n_in

    @property
    def out_dim(self) -> int:
        return 2 * self.forward_cell.out_dim

    def __call__(self, x: Tensor, mask: np.ndarray, train: bool = False, rng=None) -> Tensor:
        x = T.dropout(x, self.dropout, rng, train)
        fw = self.forward_cell.run(x, mask, reverse=False)
        bw = self.backward_cell.run(x, mask, reverse=True)
        return T.concat([fw, bw], axis=-1)


class CnnEncoder(Module):
    """Width-1 and width-3 filters over positions, ReLU, same padding."""

    bidirectional = False

    def __init__(self, name: str, n_in: int, out_dim: int, rng: np.random.Generator, dropout: float = 0.0,
                 n_width1: Optional[int] = None):
        n1 = out_dim // 2 if n_width1 is None else n_width1
        n3 = out_dim - n1
        self.w1 = Parameter(f"{name}.w1", glorot(rng, (n1, 1, 1, n_in), n_in, n1)) if n1 else None
        self.b1 = Parameter(f"{name}.b1", np.zeros(n1)) if n1 else None
        self.w3 = Parameter(f"{name}.w3", glorot(rng, (n3, 1, 3, n_in), 3 * n_in, 3 * n3)) if n3 else None
        self.b3 = Parameter(f"{name}.b3", np.zeros(n3)) if n3 else None
        self.dropout = dropout
        self.n_in = n_in
        self._out = out_dim

    @property
    def out_dim(self) -> int:
        return self._out

    def __call__(self, x: Tensor, mask: np.ndarray, train: bool = False, rng=None) -> Tensor:
        x = T.dropout(x, self.dropout, rng, train)
        nb, length, d = x.shape
        img = T.reshape(x, (nb, 1, length, d))
        parts = [T.conv2d_full_depth(img, w, b) for w, b in ((self.w1, self.b1), (self.w3, self.b3)) if w is not None]
        y = T.relu(parts[0] if len(parts) == 1 else T.concat(parts, axis=-1))
        y = T.reshape(y, (nb, length, self._out))
        return T.mul(y, Tensor(mask[:, :, None]), broadcast=True)


def embed(table: EmbeddingTable, ids: np.ndarray, proj: InputProjection, mask: np.ndarray) -> Tensor:
    """Frozen lookup then the shared projection; padded positions are forced to zero."""
    if table.dim != proj.n_in:
        raise T.ShapeError("encode", "embedding width differs from projection input", ((table.dim,), proj.w.shape))
    x = proj(Tensor(table.lookup(ids)))
    return T.mul(x, Tensor(mask[:, :, None]), broadcast=True)


def encode_batch(table, ids, mask, proj, enc, train=False, rng=None) -> Tensor:
    """Raw encoder states (B, L, enc.out_dim), zero at masked positions."""
    return enc(embed(table, ids, proj, mask), mask, train=train, rng=rng)


def encode(
    sequence: ProcessedText,
    table: EmbeddingTable,
    proj: InputProjection,
    enc: BiLstmEncoder | CnnEncoder,
    out_proj: StateProjection,
    mode: str = "infer",
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """Per-position k-dimensional states for one text, shape (len, k)."""
    if len(sequence) < 1:
        raise ValueError("cannot encode an empty sequence")
    ids = sequence.ids[None, :]
    mask = sequence.mask[None, :]
    states = encode_batch(table, ids, mask, proj, enc, train=(mode == "train"), rng=rng)
    out = out_proj(states)
    return T.reshape(out, out.shape[1:])


def last_states(states: Tensor, mask: np.ndarray, bidirectional: bool = True) -> Tensor:
    """Forward state at the last true position joined with the backward state at position 0.

    ``states`` is (B, L, 2h) from a bi-LSTM. Encoders without direction
    (CNN) fall back to a masked max-pool.
    """
    mask = np.asarray(mask, dtype=np.float64)
    if states.ndim == 2:
        states = T.reshape(states, (1,) + states.shape)
        mask = mask[None, :]
    lengths = mask.sum(axis=1).astype(int)
    if (lengths < 1).any():
        raise ValueError("last_states: sequence has no unmasked position")
    if not bidirectional:
        return T.masked_maxpool_over_sequence(states, mask)
    nb, length, d = states.shape
    half = d // 2
    sel = np.zeros((nb, length, d))
    sel[np.arange(nb), lengths - 1, :half] = 1.0
    sel[:, 0, half:] = 1.0
    return T.sum_(T.mul(states, Tensor(sel)), axis=1)
