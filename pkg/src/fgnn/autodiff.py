"""Minimal define-by-run reverse-mode autodiff over float64 numpy arrays.

Every differentiable operation appends a node to a :class:`Tape`. Tapes are
created lazily: an operation whose inputs carry no tape starts a fresh one,
and an operation combining tensors from two tapes splices the smaller tape
into the larger. Because each tape is topologically ordered on its own and
two tapes never share nodes, concatenation keeps the ordering valid.

``backward`` walks the tape in strict reverse recording order and visits each
node at most once. Gradients accumulate additively into leaf tensors until
``zero_grad`` is called.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .exceptions import ContractError, DimensionError, SegmentationError

DTYPE = np.float64


@dataclass(eq=False)
class Node:
    op: str
    inputs: tuple
    output: "Tensor"
    vjp: Callable[[np.ndarray], tuple]


@dataclass(eq=False)
class Tape:
    nodes: list = field(default_factory=list)

    def record(self, node: Node) -> None:
        self.nodes.append(node)
        node.output._tape = self

    def absorb(self, other: "Tape") -> None:
        for node in other.nodes:
            node.output._tape = self
        self.nodes.extend(other.nodes)
        other.nodes = []

    def __len__(self) -> int:
        return len(self.nodes)


class Tensor:
    """Dense float64 array with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_node", "_tape")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.array(data, dtype=DTYPE)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._node: Optional[Node] = None
        self._tape: Optional[Tape] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    @property
    def tape(self) -> Optional[Tape]:
        return self._tape

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad=None) -> None:
        backward(self, grad)

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take(self, key)

    @property
    def T(self):
        return transpose(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None):
        return tensor_sum(self, axis)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(op: str, data: np.ndarray, inputs: Sequence[Tensor], vjp) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._node = None
    out._tape = None
    out.requires_grad = any(t.requires_grad for t in inputs)
    if not out.requires_grad:
        return out
    tapes = []
    for t in inputs:
        if t._tape is not None and not any(t._tape is s for s in tapes):
            tapes.append(t._tape)
    if not tapes:
        tape = Tape()
    else:
        tape = max(tapes, key=len)
        for other in tapes:
            if other is not tape:
                tape.absorb(other)
    node = Node(op, tuple(inputs), out, vjp)
    out._node = node
    tape.record(node)
    return out


def backward(loss: Tensor, grad=None) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable leaf with requires_grad."""
    if loss.size != 1:
        raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
    seed = np.ones_like(loss.data) if grad is None else np.array(grad, dtype=DTYPE).reshape(loss.shape)
    if not loss.requires_grad:
        raise ContractError("loss does not depend on any tensor with requires_grad")
    if loss.is_leaf:
        _accumulate(loss, seed)
        return
    tape = loss._tape
    pending = {id(loss): seed}
    for node in reversed(tape.nodes):
        g = pending.pop(id(node.output), None)
        if g is None:
            continue
        for parent, pg in zip(node.inputs, node.vjp(g)):
            if pg is None or not parent.requires_grad:
                continue
            if parent.is_leaf:
                _accumulate(parent, pg)
            else:
                key = id(parent)
                prev = pending.get(key)
                pending[key] = pg if prev is None else prev + pg


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    g = np.asarray(g, dtype=DTYPE).reshape(t.shape)
    t.grad = g.copy() if t.grad is None else t.grad + g


def zero_grad(tensors) -> None:
    for t in tensors:
        t.grad = None


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)
    sa, sb = a.shape, b.shape
    return _record("add", a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)
    sa, sb = a.shape, b.shape
    return _record("sub", a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)
    ad, bd = a.data, b.data

    def vjp(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _record("mul", ad * bd, (a, b), vjp)


def scale(a, factor: float) -> Tensor:
    a = as_tensor(a)
    factor = float(factor)
    return _record("scale", a.data * factor, (a,), lambda g: (g * factor,))


def matmul(a, b) -> Tensor:
    """2-D matrix product with the usual VJPs dA = dC·Bᵀ, dB = Aᵀ·dC."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    ad, bd = a.data, b.data
    return _record("matmul", ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got {a.shape}")
    return _record("transpose", a.data.T, (a,), lambda g: (g.T,))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    src = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {src} as {tuple(shape)}") from None
    return _record("reshape", out, (a,), lambda g: (g.reshape(src),))


def take(a, key) -> Tensor:
    """Basic slicing (``a[key]``); the gradient is scattered back into zeros."""
    a = as_tensor(a)
    src = a.shape

    def vjp(g):
        full = np.zeros(src, dtype=DTYPE)
        np.add.at(full, key, g)
        return (full,)

    return _record("take", a.data[key], (a,), vjp)


def tensor_sum(a, axis=None) -> Tensor:
    a = as_tensor(a)
    src = a.shape

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, src).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), src).copy(),)

    return _record("sum", np.asarray(a.data.sum(axis=axis)), (a,), vjp)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: {[t.shape for t in ts]} along axis {axis}: {exc}") from None
    bounds = np.cumsum([0] + [t.shape[axis] for t in ts])

    def vjp(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(ts)))

    return _record("concat", out, ts, vjp)


def concat_rows(tensors: Sequence) -> Tensor:
    return concat(tensors, axis=0)


def concat_cols(tensors: Sequence) -> Tensor:
    return concat(tensors, axis=-1)


# ---------------------------------------------------------------- nonlinearities


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _record("relu", np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    a = as_tensor(a)
    factor = np.where(a.data >= 0, 1.0, slope)
    return _record("leaky_relu", a.data * factor, (a,), lambda g: (g * factor,))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    s = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _record("sigmoid", s, (a,), lambda g: (g * s * (1.0 - s),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    t = np.tanh(a.data)
    return _record("tanh", t, (a,), lambda g: (g * (1.0 - t * t),))


# ---------------------------------------------------------------- indexing / segments


def _index_array(indices, n_rows: int, op: str) -> np.ndarray:
    idx = np.asarray(indices)
    if idx.size and not np.issubdtype(idx.dtype, np.integer):
        raise IndexError(f"{op}: indices must be integers, got dtype {idx.dtype}")
    idx = idx.astype(np.intp).reshape(-1)
    if idx.size:
        bad = idx[(idx < 0) | (idx >= n_rows)]
        if bad.size:
            raise IndexError(f"{op}: index {int(bad[0])} out of range for {n_rows} rows")
    return idx


def gather_rows(table, indices) -> Tensor:
    """Select rows of ``table``; repeated indices scatter their gradients additively."""
    table = as_tensor(table)
    idx = _index_array(indices, table.shape[0], "gather_rows")
    shape = table.shape

    def vjp(g):
        full = np.zeros(shape, dtype=DTYPE)
        np.add.at(full, idx, g)
        return (full,)

    return _record("gather_rows", table.data[idx], (table,), vjp)


def _segment_ids(segment_ids, n: int, num_segments: Optional[int], op: str) -> tuple:
    seg = np.asarray(segment_ids, dtype=np.intp).reshape(-1)
    if seg.shape[0] != n:
        raise SegmentationError(f"{op}: {seg.shape[0]} segment ids for {n} entries")
    if num_segments is None:
        num_segments = int(seg.max()) + 1 if n else 0
    if n and (seg.min() < 0 or seg.max() >= num_segments):
        raise SegmentationError(f"{op}: segment id out of range 0..{num_segments - 1}")
    return seg, num_segments


def segment_ids_from_groups(groups: Sequence[Sequence[int]], size: int) -> np.ndarray:
    """Turn a list of index groups into a per-entry segment id array.

    Every index in ``0..size-1`` must appear in exactly one non-empty group.
    """
    seg = np.full(size, -1, dtype=np.intp)
    for s, group in enumerate(groups):
        if len(group) == 0:
            raise SegmentationError(f"segment {s} is empty")
        for i in group:
            if not 0 <= i < size:
                raise SegmentationError(f"segment {s} holds index {i} outside 0..{size - 1}")
            if seg[i] != -1:
                raise SegmentationError(f"index {i} appears in more than one segment")
            seg[i] = s
    if (seg < 0).any():
        raise SegmentationError(f"index {int(np.flatnonzero(seg < 0)[0])} belongs to no segment")
    return seg


def segment_sum(values, segment_ids, num_segments: Optional[int] = None) -> Tensor:
    """Sum rows of ``values`` into ``num_segments`` buckets (scatter-add)."""
    values = as_tensor(values)
    seg, n_seg = _segment_ids(segment_ids, values.shape[0], num_segments, "segment_sum")
    out = np.zeros((n_seg,) + values.shape[1:], dtype=DTYPE)
    np.add.at(out, seg, values.data)
    return _record("segment_sum", out, (values,), lambda g: (g[seg],))


def segment_max(values, segment_ids, num_segments: Optional[int] = None) -> Tensor:
    """Coordinate-wise max per segment; ties split the gradient evenly."""
    values = as_tensor(values)
    seg, n_seg = _segment_ids(segment_ids, values.shape[0], num_segments, "segment_max")
    counts = np.bincount(seg, minlength=n_seg)
    if (counts == 0).any():
        raise SegmentationError(f"segment_max: segment {int(np.flatnonzero(counts == 0)[0])} is empty")
    out = np.full((n_seg,) + values.shape[1:], -np.inf, dtype=DTYPE)
    np.maximum.at(out, seg, values.data)
    hit = (values.data == out[seg]).astype(DTYPE)
    ties = np.zeros_like(out)
    np.add.at(ties, seg, hit)
    share = hit / ties[seg]
    return _record("segment_max", out, (values,), lambda g: (g[seg] * share,))


def segment_softmax(scores, segment_ids, num_segments: Optional[int] = None) -> Tensor:
    """Softmax computed independently inside each segment.

    ``scores`` is 1-D, or 2-D where each column is normalised separately.
    The per-segment max is subtracted before exponentiation.
    """
    scores = as_tensor(scores)
    n = scores.shape[0] if scores.ndim else 0
    seg, n_seg = _segment_ids(segment_ids, n, num_segments, "segment_softmax")
    counts = np.bincount(seg, minlength=n_seg)
    if n_seg == 0 or (counts == 0).any():
        empty = int(np.flatnonzero(counts == 0)[0]) if n_seg else 0
        raise SegmentationError(f"segment_softmax: segment {empty} is empty")
    x = scores.data
    top = np.full((n_seg,) + x.shape[1:], -np.inf, dtype=DTYPE)
    np.maximum.at(top, seg, x)
    ex = np.exp(x - top[seg])
    denom = np.zeros_like(top)
    np.add.at(denom, seg, ex)
    y = ex / denom[seg]

    def vjp(g):
        dot = np.zeros_like(top)
        np.add.at(dot, seg, g * y)
        return (y * (g - dot[seg]),)

    return _record("segment_softmax", y, (scores,), vjp)


# ---------------------------------------------------------------- losses


def log_softmax(logits) -> Tensor:
    """Row-wise log-softmax of a 2-D tensor."""
    logits = as_tensor(logits)
    x = logits.data
    shifted = x - x.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse
    p = np.exp(out)
    return _record("log_softmax", out, (logits,),
                   lambda g: (g - p * g.sum(axis=-1, keepdims=True),))


def cross_entropy(logits, labels) -> Tensor:
    """Summed negative log-likelihood of ``labels`` under row-wise softmax(logits).

    Fused so the gradient is simply ``softmax - onehot`` per row.
    """
    logits = as_tensor(logits)
    if logits.ndim == 1:
        logits = reshape(logits, (1, -1))
    labels = np.asarray(labels).reshape(-1)
    b, m = logits.shape
    if labels.shape[0] != b:
        raise DimensionError(f"cross_entropy: {labels.shape[0]} labels for {b} rows")
    labels = _index_array(labels, m, "cross_entropy")
    x = logits.data
    shifted = x - x.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(b)
    loss = np.asarray((lse - shifted[rows, labels]).sum())
    probs = np.exp(shifted - lse[:, None])

    def vjp(g):
        d = probs.copy()
        d[rows, labels] -= 1.0
        return (d * g,)

    return _record("cross_entropy", loss, (logits,), vjp)


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Plain numpy softmax (no tape); used for reporting probabilities."""
    x = np.asarray(x, dtype=DTYPE)
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


# ---------------------------------------------------------------- finite differences


def numerical_grad(fn: Callable[[], float], param: Tensor, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function w.r.t. ``param.data``."""
    flat = param.data.reshape(-1)
    out = np.zeros_like(flat)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = fn()
        flat[i] = old - h
        fm = fn()
        flat[i] = old
        out[i] = (fp - fm) / (2.0 * h)
    return out.reshape(param.shape)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Max over entries of |a - n| / max(|a|, |n|, floor).

    Central differences at h=1e-5 carry round-off of roughly 1e-11, so
    entries below the floor are in effect checked absolutely (1e-10 at a
    1e-4 tolerance) instead of producing meaningless ratios.
    """
    a = np.asarray(analytic, dtype=DTYPE)
    n = np.asarray(numeric, dtype=DTYPE)
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))
