"""Dense double-precision tensors with tape-based reverse-mode differentiation.

Every primitive below computes its forward value with numpy and, when a
:class:`Tape` is active and some input requires a gradient, appends a record
holding the inputs, the output and a closure mapping the output gradient to
input gradients. :func:`backward` replays those records in reverse.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Parameter",
    "Tape",
    "ShapeError",
    "NonFiniteError",
    "TapeError",
    "backward",
    "finite_difference_check",
    "GradCheckReport",
    "primitive_forward",
]


class ShapeError(ValueError):
    """Operand extents do not conform to an op's shape rule."""

    def __init__(self, op_kind: str, message: str, shapes: Sequence[tuple] = ()):
        self.op_kind = op_kind
        self.shapes = tuple(tuple(s) for s in shapes)
        extents = ", ".join(str(s) for s in self.shapes)
        super().__init__(f"{op_kind}: {message} (got {extents})" if extents else f"{op_kind}: {message}")


class NonFiniteError(ValueError):
    pass


class TapeError(RuntimeError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "__weakref__")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64) if not isinstance(data, np.ndarray) else data
        if arr.dtype != np.float64:
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if requires_grad else None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # Operator sugar for same-shape arithmetic.
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __matmul__(self, other):
        return matmul(self, other)


class Parameter(Tensor):
    """A named model weight. Frozen parameters are excluded from updates."""

    __slots__ = ("name", "trainable")

    def __init__(self, name: str, data, trainable: bool = True):
        super().__init__(data, requires_grad=trainable)
        self.name = name
        self.trainable = trainable

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape}, trainable={self.trainable})"


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class _Record:
    op_kind: str
    inputs: tuple
    output: Tensor
    backward_fn: Callable[[np.ndarray], tuple]


_local = threading.local()


def _tape_stack() -> list:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


class Tape:
    """Ordered log of executed primitives; activate with ``with Tape() as tape``."""

    def __init__(self):
        self.records: list[_Record] = []
        self._index: dict[int, int] = {}

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        _tape_stack().pop()

    def __len__(self) -> int:
        return len(self.records)

    def _push(self, record: _Record) -> None:
        self._index[id(record.output)] = len(self.records)
        self.records.append(record)

    def produced(self, t: Tensor) -> bool:
        return id(t) in self._index

    def reset(self) -> None:
        self.records.clear()
        self._index.clear()


def active_tape() -> Optional[Tape]:
    stack = _tape_stack()
    return stack[-1] if stack else None


def _check_finite(op_kind: str, arrays) -> None:
    for a in arrays:
        if not np.isfinite(a).all():
            raise NonFiniteError(f"{op_kind}: non-finite input")


def _emit(op_kind: str, inputs: tuple, out: np.ndarray, backward_fn) -> Tensor:
    needs = any(t.requires_grad for t in inputs)
    result = Tensor(out)
    if needs:
        tape = active_tape()
        if tape is not None:
            result.requires_grad = True
            tape._push(_Record(op_kind, inputs, result, backward_fn))
    return result


def backward(tape: Tape, loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every grad-requiring tensor reached."""
    if loss.data.size != 1:
        raise TapeError(f"loss must be scalar-shaped, got shape {loss.shape}")
    start = tape._index.get(id(loss))
    if start is None:
        raise TapeError("loss was not produced on this tape")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for rec in reversed(tape.records[: start + 1]):
        g = grads.pop(id(rec.output), None)
        if g is None:
            continue
        out = rec.output
        out.grad = g if out.grad is None else out.grad + g
        input_grads = rec.backward_fn(g)
        for t, gi in zip(rec.inputs, input_grads):
            if gi is None or not t.requires_grad:
                continue
            key = id(t)
            if key in tape._index:
                prev = grads.get(key)
                grads[key] = gi if prev is None else prev + gi
            else:
                if t.grad is None:
                    t.grad = np.zeros_like(t.data)
                t.grad += gi


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _binary_shape(op_kind: str, a: Tensor, b: Tensor, broadcast: bool) -> None:
    if a.shape == b.shape:
        return
    if not broadcast:
        raise ShapeError(op_kind, "operands must have identical shapes unless broadcast=True", (a.shape, b.shape))
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op_kind, "operands are not broadcast-compatible", (a.shape, b.shape)) from None


def add(a: Tensor, b: Tensor, broadcast: bool = False) -> Tensor:
    _binary_shape("add", a, b, broadcast)
    _check_finite("add", (a.data, b.data))
    sa, sb = a.shape, b.shape
    return _emit("add", (a, b), a.data + b.data, lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def mul(a: Tensor, b: Tensor, broadcast: bool = False) -> Tensor:
    _binary_shape("mul_elementwise", a, b, broadcast)
    _check_finite("mul_elementwise", (a.data, b.data))
    ad, bd = a.data, b.data

    def bw(g):
        return (
            _unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
            _unbroadcast(g * ad, bd.shape) if b.requires_grad else None,
        )

    return _emit("mul_elementwise", (a, b), ad * bd, bw)


def scalar_scale(x: Tensor, s) -> Tensor:
    """Multiply every entry of ``x`` by a scalar (a float or a size-1 tensor)."""
    s = _as_tensor(s)
    if s.data.size != 1:
        raise ShapeError("scalar_scale", "scale must hold exactly one value", (x.shape, s.shape))
    _check_finite("scalar_scale", (x.data, s.data))
    sv = s.data.reshape(-1)[0]
    xd = x.data

    def bw(g):
        gs = np.array(np.sum(g * xd)).reshape(s.shape) if s.requires_grad else None
        return (g * sv if x.requires_grad else None, gs)

    return _emit("scalar_scale", (x, s), xd * sv, bw)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``(..., K) @ (K, N)`` or batched ``(..., M, K) @ (..., K, N)`` with equal leading extents."""
    if a.ndim < 1 or b.ndim < 2:
        raise ShapeError("matmul", "need a.ndim >= 1 and b.ndim >= 2", (a.shape, b.shape))
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", "inner extents differ", (a.shape, b.shape))
    if b.ndim > 2 and (a.ndim != b.ndim or a.shape[:-2] != b.shape[:-2]):
        raise ShapeError("matmul", "batched operands need identical leading extents", (a.shape, b.shape))
    _check_finite("matmul", (a.data, b.data))
    ad, bd = a.data, b.data
    out = ad @ bd

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            ga = g @ np.swapaxes(bd, -1, -2)
        if b.requires_grad:
            if bd.ndim == 2:
                k, n = bd.shape
                gb = ad.reshape(-1, k).T @ g.reshape(-1, n)
            else:
                gb = np.swapaxes(ad, -1, -2) @ g
        return ga, gb

    return _emit("matmul", (a, b), out, bw)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = tuple(tensors)
    if not tensors:
        raise ShapeError("concat", "no operands")
    nd = tensors[0].ndim
    ax = axis % nd
    for t in tensors:
        if t.ndim != nd or t.shape[:ax] + t.shape[ax + 1:] != tensors[0].shape[:ax] + tensors[0].shape[ax + 1:]:
            raise ShapeError("concat", f"extents off axis {ax} must agree", [t.shape for t in tensors])
    _check_finite("concat", [t.data for t in tensors])
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        out = []
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                idx = [slice(None)] * nd
                idx[ax] = slice(lo, hi)
                out.append(g[tuple(idx)])
            else:
                out.append(None)
        return tuple(out)

    return _emit("concat", tensors, np.concatenate([t.data for t in tensors], axis=ax), bw)


def slice_(x: Tensor, index) -> Tensor:
    """Basic (non-fancy) indexing: ints and slices only."""
    if not isinstance(index, tuple):
        index = (index,)
    for i in index:
        if not isinstance(i, (int, slice, type(None), type(Ellipsis))):
            raise ShapeError("slice", "only ints, slices, None and Ellipsis are supported", (x.shape,))
    _check_finite("slice", (x.data,))
    out = x.data[index]
    shape = x.shape

    def bw(g):
        full = np.zeros(shape)
        full[index] += g
        return (full,)

    return _emit("slice", (x,), np.array(out), bw)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    if not tensors or any(t.shape != tensors[0].shape for t in tensors):
        raise ShapeError("stack", "operands must share one shape", [t.shape for t in tensors])
    _check_finite("stack", [t.data for t in tensors])
    out = np.stack([t.data for t in tensors], axis=axis)

    def bw(g):
        parts = np.moveaxis(g, axis, 0)
        return tuple(parts[i] if t.requires_grad else None for i, t in enumerate(tensors))

    return _emit("stack", tensors, out, bw)


def reshape(x: Tensor, shape: tuple) -> Tensor:
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", f"cannot reshape to {shape}", (x.shape,)) from None
    orig = x.shape
    return _emit("reshape", (x,), out, lambda g: (g.reshape(orig),))


def sum_(x: Tensor, axis=None) -> Tensor:
    _check_finite("sum", (x.data,))
    shape = x.shape
    out = np.sum(x.data, axis=axis)

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _emit("sum", (x,), np.asarray(out, dtype=np.float64), bw)


def _stable_sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x: Tensor) -> Tensor:
    _check_finite("sigmoid", (x.data,))
    y = _stable_sigmoid(x.data)
    return _emit("sigmoid", (x,), y, lambda g: (g * y * (1.0 - y),))


def tanh(x: Tensor) -> Tensor:
    _check_finite("tanh", (x.data,))
    y = np.tanh(x.data)
    return _emit("tanh", (x,), y, lambda g: (g * (1.0 - y * y),))


def relu(x: Tensor) -> Tensor:
    _check_finite("relu", (x.data,))
    pos = x.data > 0
    return _emit("relu", (x,), np.where(pos, x.data, 0.0), lambda g: (g * pos,))


def softmax(x: Tensor, mask: Optional[np.ndarray] = None, axis: int = -1) -> Tensor:
    """Softmax along ``axis``; entries where ``mask`` is 0 get weight exactly 0."""
    _check_finite("softmax", (x.data,))
    z = x.data
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != z.shape:
            raise ShapeError("softmax", "mask must match input", (z.shape, mask.shape))
        if not mask.any(axis=axis).all():
            raise ValueError("softmax: a row has no unmasked entry")
        z = np.where(mask, z, -np.inf)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _emit("softmax", (x,), y, bw)


def dropout(x: Tensor, rate: float, rng: Optional[np.random.Generator] = None, train: bool = True) -> Tensor:
    """Inverted dropout: kept units are scaled by 1/(1-rate); identity outside training."""
    if not train or rate == 0.0:
        return x
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if rng is None:
        raise ValueError("dropout in training mode needs a random generator")
    _check_finite("dropout", (x.data,))
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _emit("dropout", (x,), x.data * keep, lambda g: (g * keep,))


def _same_pads(k: int) -> tuple[int, int]:
    before = (k - 1) // 2
    return before, k - 1 - before


def conv2d_full_depth(x: Tensor, w: Tensor, b: Optional[Tensor] = None, padding: str = "same") -> Tensor:
    """2-D convolution whose filters span every input channel.

    ``x`` is (B, H, W, C), ``w`` is (F, kh, kw, C), ``b`` is (F,). Output is
    (B, H', W', F); with ``padding="same"`` the spatial extent is preserved by
    zero padding (the extra row/column goes after for even kernels).
    """
    if x.ndim != 4 or w.ndim != 4 or x.shape[3] != w.shape[3]:
        raise ShapeError("conv2d_full_depth", "need x (B,H,W,C) and w (F,kh,kw,C) with equal C", (x.shape, w.shape))
    if b is not None and b.shape != (w.shape[0],):
        raise ShapeError("conv2d_full_depth", "bias must be (F,)", (w.shape, b.shape))
    nb, h, wd, c = x.shape
    f, kh, kw, _ = w.shape
    if padding == "same":
        ph, pw = _same_pads(kh), _same_pads(kw)
    elif padding == "valid":
        ph = pw = (0, 0)
        if h < kh or wd < kw:
            raise ShapeError("conv2d_full_depth", "valid padding needs input at least as large as the filter", (x.shape, w.shape))
    else:
        raise ValueError(f"unknown padding {padding!r}")
    inputs = (x, w) if b is None else (x, w, b)
    _check_finite("conv2d_full_depth", [t.data for t in inputs])
    xp = np.pad(x.data, ((0, 0), ph, pw, (0, 0))) if padding == "same" else x.data
    ho, wo = xp.shape[1] - kh + 1, xp.shape[2] - kw + 1
    wd_ = w.data
    out = np.zeros((nb, ho, wo, f))
    for i in range(kh):
        for j in range(kw):
            out += xp[:, i:i + ho, j:j + wo, :] @ wd_[:, i, j, :].T
    if b is not None:
        out += b.data

    def bw(g):
        gx = gw = gb = None
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, i:i + ho, j:j + wo, :] += g @ wd_[:, i, j, :]
            gx = gxp[:, ph[0]:ph[0] + h, pw[0]:pw[0] + wd, :]
        if w.requires_grad:
            gw = np.empty_like(wd_)
            g2 = g.reshape(-1, f).T
            for i in range(kh):
                for j in range(kw):
                    gw[:, i, j, :] = g2 @ xp[:, i:i + ho, j:j + wo, :].reshape(-1, c)
        if b is not None and b.requires_grad:
            gb = g.reshape(-1, f).sum(axis=0)
        return (gx, gw) if b is None else (gx, gw, gb)

    return _emit("conv2d_full_depth", inputs, out, bw)


def global_maxpool_2d(x: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
    """Per-channel max over both spatial axes of (B, H, W, C); masked cells never win."""
    if x.ndim != 4:
        raise ShapeError("global_maxpool_2d", "need (B,H,W,C)", (x.shape,))
    _check_finite("global_maxpool_2d", (x.data,))
    nb, h, w, c = x.shape
    flat = x.data.reshape(nb, h * w, c)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (nb, h, w):
            raise ShapeError("global_maxpool_2d", "mask must be (B,H,W)", (x.shape, mask.shape))
        if not mask.reshape(nb, -1).any(axis=1).all():
            raise ValueError("global_maxpool_2d: an example has no unmasked cell")
        flat = np.where(mask.reshape(nb, h * w, 1), flat, -np.inf)
    arg = flat.argmax(axis=1)
    out = np.take_along_axis(flat, arg[:, None, :], axis=1)[:, 0, :]

    def bw(g):
        gx = np.zeros((nb, h * w, c))
        np.put_along_axis(gx, arg[:, None, :], g[:, None, :], axis=1)
        return (gx.reshape(nb, h, w, c),)

    return _emit("global_maxpool_2d", (x,), out, bw)


def masked_maxpool_over_sequence(x: Tensor, mask: np.ndarray) -> Tensor:
    """Max over the position axis of (B, L, D), treating masked positions as -inf."""
    if x.ndim != 3:
        raise ShapeError("masked_maxpool_over_sequence", "need (B,L,D)", (x.shape,))
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != x.shape[:2]:
        raise ShapeError("masked_maxpool_over_sequence", "mask must be (B,L)", (x.shape, mask.shape))
    if not mask.any(axis=1).all():
        raise ValueError("masked_maxpool_over_sequence: an example has no unmasked position")
    _check_finite("masked_maxpool_over_sequence", (x.data,))
    z = np.where(mask[:, :, None], x.data, -np.inf)
    arg = z.argmax(axis=1)
    out = np.take_along_axis(z, arg[:, None, :], axis=1)[:, 0, :]
    shape = x.shape

    def bw(g):
        gx = np.zeros(shape)
        np.put_along_axis(gx, arg[:, None, :], g[:, None, :], axis=1)
        return (gx,)

    return _emit("masked_maxpool_over_sequence", (x,), out, bw)


def lstm_sequence(x: Tensor, w_x: Tensor, w_h: Tensor, b: Tensor, mask: np.ndarray, reverse: bool = False) -> Tensor:
    """Whole-sequence LSTM (gate order i, f, o, g) with hand-written BPTT.

    ``x`` is (B, L, n_in); returns (B, L, H). Masked steps leave the carried
    state untouched and emit zeros. Numerically identical to unrolling the
    cell from the other primitives, just far fewer tape records.
    """
    nb, length, n_in = x.shape
    hsz = w_h.shape[0]
    if w_x.shape != (n_in, 4 * hsz) or w_h.shape != (hsz, 4 * hsz) or b.shape != (4 * hsz,):
        raise ShapeError("lstm_sequence", "weights must be (n_in,4H), (H,4H), (4H,)", (x.shape, w_x.shape, w_h.shape, b.shape))
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != (nb, length):
        raise ShapeError("lstm_sequence", "mask must be (B,L)", (x.shape, mask.shape))
    _check_finite("lstm_sequence", (x.data, w_x.data, w_h.data, b.data))
    xw = x.data @ w_x.data + b.data
    wh = w_h.data
    h = np.zeros((nb, hsz))
    c = np.zeros((nb, hsz))
    out = np.zeros((nb, length, hsz))
    steps = list(range(length - 1, -1, -1)) if reverse else list(range(length))
    cache = []
    for t in steps:
        m = mask[:, t:t + 1]
        if not m.any():
            cache.append(None)
            continue
        z = xw[:, t] + h @ wh
        s = _stable_sigmoid(z[:, :3 * hsz])
        g = np.tanh(z[:, 3 * hsz:])
        i, f, o = s[:, :hsz], s[:, hsz:2 * hsz], s[:, 2 * hsz:]
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        h_new = o * tc
        cache.append((h, c, i, f, o, g, tc, m))
        out[:, t] = m * h_new
        c = m * c_new + (1.0 - m) * c
        h = m * h_new + (1.0 - m) * h

    def bw(gout):
        dxw = np.zeros_like(xw)
        dwh = np.zeros_like(wh)
        dh = np.zeros((nb, hsz))
        dc = np.zeros((nb, hsz))
        for t, entry in zip(reversed(steps), reversed(cache)):
            if entry is None:
                continue
            h_prev, c_prev, i, f, o, g, tc, m = entry
            dh_new = m * (dh + gout[:, t])
            dc_new = m * dc + dh_new * o * (1.0 - tc * tc)
            dz = np.concatenate(
                [
                    dc_new * g * i * (1.0 - i),
                    dc_new * c_prev * f * (1.0 - f),
                    dh_new * tc * o * (1.0 - o),
                    dc_new * i * (1.0 - g * g),
                ],
                axis=1,
            )
            dxw[:, t] = dz
            dwh += h_prev.T @ dz
            dh = dz @ wh.T + (1.0 - m) * dh
            dc = dc_new * f + (1.0 - m) * dc
        gx = dxw @ w_x.data.T if x.requires_grad else None
        gwx = x.data.reshape(-1, n_in).T @ dxw.reshape(-1, 4 * hsz) if w_x.requires_grad else None
        gb = dxw.reshape(-1, 4 * hsz).sum(axis=0) if b.requires_grad else None
        return gx, gwx, dwh, gb

    return _emit("lstm_sequence", (x, w_x, w_h, b), out, bw)


def sigmoid_bce(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean binary cross-entropy of sigmoid(logits) against soft targets in [0, 1]."""
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != logits.shape:
        raise ShapeError("sigmoid_bce", "targets must match logits", (logits.shape, targets.shape))
    _check_finite("sigmoid_bce", (logits.data, targets))
    z = logits.data
    # softplus(z) - t*z, written to stay finite for large |z|
    per = np.maximum(z, 0.0) - z * targets + np.log1p(np.exp(-np.abs(z)))
    n = z.size
    p = _stable_sigmoid(z)
    return _emit("sigmoid_bce", (logits,), np.array(per.mean()), lambda g: (g * (p - targets) / n,))


_OPS: dict[str, Callable] = {
    "matmul": matmul,
    "add": add,
    "mul_elementwise": mul,
    "concat": concat,
    "slice": slice_,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "relu": relu,
    "softmax": softmax,
    "dropout": dropout,
    "conv2d_full_depth": conv2d_full_depth,
    "global_maxpool_2d": global_maxpool_2d,
    "masked_maxpool_over_sequence": masked_maxpool_over_sequence,
    "scalar_scale": scalar_scale,
    "reshape": reshape,
    "stack": stack,
    "sum": sum_,
    "sigmoid_bce": sigmoid_bce,
    "lstm_sequence": lstm_sequence,
}


def primitive_forward(op_kind: str, inputs: Sequence[Tensor], **attrs) -> Tensor:
    """Dispatch by name, e.g. ``primitive_forward("relu", [x])``."""
    try:
        fn = _OPS[op_kind]
    except KeyError:
        raise ValueError(f"unknown op_kind {op_kind!r}") from None
    if op_kind in ("concat", "stack"):
        return fn(list(inputs), **attrs)
    return fn(*inputs, **attrs)


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_error: float
    passed: bool
    tolerance: float
    checked: int
    kinks: list = field(default_factory=list)
    worst_index: Optional[tuple] = None

    def __str__(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        extra = f", {len(self.kinks)} subgradient point(s) skipped" if self.kinks else ""
        return f"{flag}: max rel. error {self.max_rel_error:.3e} over {self.checked} coordinates{extra}"


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def finite_difference_check(
    f: Callable[[], Tensor],
    point: Tensor | Sequence[Tensor],
    step: float = 1e-5,
    tolerance: float = 1e-4,
    kink_tolerance: float = 1e-2,
) -> GradCheckReport:
    """Compare tape gradients of the scalar ``f()`` with central differences.

    ``point`` is one tensor or a list of tensors that ``f`` reads; they are
    perturbed in place and restored. Coordinates where the one-sided
    difference quotients disagree by more than ``kink_tolerance`` sit on a
    kink of a piecewise-linear op; they are reported in ``kinks`` and left out
    of the pass/fail decision.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    points = [point] if isinstance(point, Tensor) else list(point)
    for p in points:
        p.requires_grad = True
        p.grad = np.zeros_like(p.data)
    with Tape() as tape:
        loss = f()
    backward(tape, loss)
    f0 = loss.item()

    def value() -> float:
        return f().item()

    worst, worst_idx, checked, kinks = 0.0, None, 0, []
    for pi, p in enumerate(points):
        analytic = p.grad.copy()
        flat = p.data.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + step
            fp = value()
            flat[k] = orig - step
            fm = value()
            flat[k] = orig
            fwd, bwd = (fp - f0) / step, (f0 - fm) / step
            if abs(fwd - bwd) > kink_tolerance * max(1.0, abs(fwd), abs(bwd)):
                kinks.append((pi, k))
                continue
            numeric = (fp - fm) / (2 * step)
            err = float(relative_error(np.array(analytic.reshape(-1)[k]), np.array(numeric)))
            checked += 1
            if err > worst:
                worst, worst_idx = err, (pi, k)
    return GradCheckReport(worst, worst <= tolerance, tolerance, checked, kinks, worst_idx)
