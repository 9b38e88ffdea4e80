"""Dense tensors with reverse-mode automatic differentiation.

Storage is numpy; float32 by default, float64 when built from float64 data
(gradient checks run in float64). Every op accepts optional leading batch
axes so whole minibatches go through one BLAS call.

Each op output remembers its parents and a backward rule. ``backward()``
linearises the graph into a tape (parents always before children) and
replays it in reverse, so every use of a tensor contributes its gradient
exactly once.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    pass


class UnsupportedConfigError(ValueError):
    pass


class ConfigError(ValueError):
    pass


class VocabularyError(IndexError):
    pass


def _as_float_array(data, dtype=None) -> np.ndarray:
    if isinstance(data, Tensor):
        data = data.data
    arr = np.asarray(data)
    if dtype is not None:
        return np.ascontiguousarray(arr, dtype=dtype)
    if arr.dtype == np.float64:
        return arr
    return np.ascontiguousarray(arr, dtype=np.float32)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = _as_float_array(data, dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.op = "leaf"

    # -- views ------------------------------------------------------------
    @property
    def dims(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def values(self) -> np.ndarray:
        return self.data.reshape(-1)

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(dims={self.dims}, dtype={self.dtype}, op={self.op})"

    # -- operators ----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_wrap(other, self.dtype)))

    def __rsub__(self, other):
        return add(_wrap(other, self.dtype), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self):
        return tsum(self)

    def mean(self):
        return tmean(self)

    def reshape(self, *dims):
        if len(dims) == 1 and isinstance(dims[0], (tuple, list)):
            dims = tuple(dims[0])
        return reshape(self, dims)

    # -- autodiff -------------------------------------------------------------
    def backward(self, grad=None) -> None:
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every leaf that
        requires grad. ``grad`` defaults to ones (scalar losses)."""
        if grad is None:
            seed = np.ones_like(self.data)
        else:
            seed = np.asarray(grad, dtype=self.data.dtype).reshape(self.data.shape)
        tape = build_tape(self)
        grads: dict[int, np.ndarray] = {id(self): seed}
        for node in reversed(tape):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not _needs_grad(parent):
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def _needs_grad(t: Tensor) -> bool:
    return t.requires_grad or t._backward is not None


def build_tape(root: Tensor) -> list[Tensor]:
    """Topologically ordered list of every node reachable from ``root``
    through grad-carrying edges (inputs first)."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and _needs_grad(p):
                stack.append((p, False))
    return order


def _wrap(x, dtype=np.float32) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _result(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = False
    out.op = op
    if any(_needs_grad(p) for p in parents):
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise / structural

def add(a, b) -> Tensor:
    a = _wrap(a)
    b = _wrap(b, a.dtype)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, (a, b), backward, "add")


def mul(a, b) -> Tensor:
    a = _wrap(a)
    b = _wrap(b, a.dtype)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(a.data * b.data, (a, b), backward, "mul")


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), lambda g: (-g,), "neg")


def reshape(a: Tensor, dims) -> Tensor:
    shape = a.shape
    return _result(a.data.reshape(dims), (a,), lambda g: (g.reshape(shape),), "reshape")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = list(tensors)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward, "concat")


def tsum(a: Tensor) -> Tensor:
    total = np.asarray(a.data.sum(dtype=np.float64), dtype=a.dtype)
    shape = a.shape

    def backward(g):
        return (np.broadcast_to(g, shape).astype(a.dtype),)

    return _result(total, (a,), backward, "sum")


def tmean(a: Tensor) -> Tensor:
    n = a.data.size
    total = np.asarray(a.data.sum(dtype=np.float64) / n, dtype=a.dtype)
    shape = a.shape

    def backward(g):
        return (np.broadcast_to(g / n, shape).astype(a.dtype),)

    return _result(total, (a,), backward, "mean")


# ---------------------------------------------------------------------------
# dense algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a[..., m, k] @ b[k, n]``. Leading axes of ``a`` are treated as batch."""
    a = _wrap(a)
    b = _wrap(b, a.dtype)
    if a.data.ndim < 1 or b.data.ndim != 2:
        raise ShapeError(f"matmul expects a[..., k] and b[k, n], got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[0]:
        raise ShapeError(
            f"matmul inner dims differ: a has {a.shape[-1]} columns, b has {b.shape[0]} rows"
        )
    out = a.data @ b.data

    def backward(g):
        ga = g @ b.data.T
        a2 = a.data.reshape(-1, a.shape[-1])
        gb = a2.T @ g.reshape(-1, b.shape[1])
        return ga, gb

    return _result(out, (a, b), backward, "matmul")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    y = matmul(x, weight)
    return y if bias is None else add(y, bias)


# ---------------------------------------------------------------------------
# nonlinearities

def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0)
    return _result(out, (x,), lambda g: (g * (out > 0),), "relu")


def stable_sigmoid(x: np.ndarray) -> np.ndarray:
    """1/(1+exp(-x)) without overflow for either sign of x."""
    x = np.asarray(x)
    out = np.empty_like(x, dtype=x.dtype if x.dtype.kind == "f" else np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(x: Tensor) -> Tensor:
    s = stable_sigmoid(x.data)
    return _result(s, (x,), lambda g: (g * s * (1 - s),), "sigmoid")


def stable_softmax(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax(x: Tensor) -> Tensor:
    s = stable_softmax(x.data)

    def backward(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _result(s, (x,), backward, "softmax")


def dropout(x: Tensor, rate: float, train: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout; identity in eval mode."""
    if not 0 <= rate < 1:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if not train or rate == 0:
        return x
    if rng is None:
        raise ConfigError("train-mode dropout needs a seeded generator")
    keep = rng.random(x.shape) >= rate
    scale = np.asarray(1.0 / (1.0 - rate), dtype=x.dtype)
    mask = keep.astype(x.dtype) * scale
    return _result(x.data * mask, (x,), lambda g: (g * mask,), "dropout")


# ---------------------------------------------------------------------------
# lookup, convolution, pooling

def embedding_gather(table: Tensor, ids) -> Tensor:
    """Rows of ``table[V, D]`` at ``ids`` (any integer shape)."""
    ids = np.asarray(ids, dtype=np.int64)
    vocab = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        bad = int(ids.max()) if ids.max() >= vocab else int(ids.min())
        raise VocabularyError(f"token id {bad} outside vocabulary of size {vocab}")
    out = table.data[ids]

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (gt,)

    return _result(out, (table,), backward, "embedding")


def conv1d_valid(seq: Tensor, filters: Tensor) -> Tensor:
    """Valid convolution over time.

    seq: [..., L, D]; filters: [F, w, D] -> [..., L-w+1, F]. Each filter
    spans the full embedding width.
    """
    nf, w, d = filters.shape
    length = seq.shape[-2]
    if seq.shape[-1] != d:
        raise ShapeError(f"conv1d: sequence width {seq.shape[-1]} != filter width {d}")
    if w > length:
        raise ShapeError(f"conv1d: filter width {w} exceeds sequence length {length}")
    steps = length - w + 1
    # windows: [..., T, D, w] -> [..., T, w, D]
    win = sliding_window_view(seq.data, w, axis=-2)
    cols = np.ascontiguousarray(np.swapaxes(win, -1, -2)).reshape(seq.shape[:-2] + (steps, w * d))
    wmat = filters.data.reshape(nf, w * d)
    out = cols @ wmat.T

    def backward(g):
        gw = (g.reshape(-1, nf).T @ cols.reshape(-1, w * d)).reshape(filters.shape)
        if not _needs_grad(seq):
            return None, gw
        gcols = (g @ wmat).reshape(seq.shape[:-2] + (steps, w, d))
        gseq = np.zeros_like(seq.data)
        for j in range(w):
            gseq[..., j : j + steps, :] += gcols[..., j, :]
        return gseq, gw

    return _result(out, (seq, filters), backward, "conv1d")


def conv2d_same(img: Tensor, filters: Tensor) -> Tensor:
    """Stride-1, zero-pad-1 3x3 convolution.

    img: [..., H, W, Cin]; filters: [F, 3, 3, Cin] -> [..., H, W, F].
    """
    if filters.data.ndim != 4 or filters.shape[1:3] != (3, 3):
        raise UnsupportedConfigError(f"conv2d supports only 3x3 filters, got {filters.shape}")
    nf, _, _, cin = filters.shape
    if img.shape[-1] != cin:
        raise ShapeError(f"conv2d: image has {img.shape[-1]} channels, filters expect {cin}")
    lead = img.shape[:-3]
    h, w = img.shape[-3], img.shape[-2]
    x = img.data.reshape((-1, h, w, cin))
    padded = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    cols = np.empty((x.shape[0], h, w, 9, cin), dtype=x.dtype)
    for k in range(9):
        dy, dx = divmod(k, 3)
        cols[:, :, :, k, :] = padded[:, dy : dy + h, dx : dx + w, :]
    cols = cols.reshape(-1, 9 * cin)
    wmat = filters.data.reshape(nf, 9 * cin)
    out = (cols @ wmat.T).reshape(lead + (h, w, nf))

    def backward(g):
        g2 = g.reshape(-1, nf)
        gw = (g2.T @ cols).reshape(filters.shape) if _needs_grad(filters) else None
        if not _needs_grad(img):
            return None, gw
        gcols = (g2 @ wmat).reshape(x.shape[0], h, w, 9, cin)
        gpad = np.zeros_like(padded)
        for k in range(9):
            dy, dx = divmod(k, 3)
            gpad[:, dy : dy + h, dx : dx + w, :] += gcols[:, :, :, k, :]
        gimg = gpad[:, 1 : h + 1, 1 : w + 1, :].reshape(img.shape)
        return gimg, gw

    return _result(out, (img, filters), backward, "conv2d")


def maxpool2d(img: Tensor) -> Tensor:
    """2x2 max pooling, stride 2. Odd sides are padded with -inf at the
    trailing edge; ties go to the first position in row-major window order."""
    lead = img.shape[:-3]
    h, w, c = img.shape[-3:]
    h2, w2 = (h + 1) // 2, (w + 1) // 2
    x = img.data.reshape((-1, h, w, c))
    if h % 2 or w % 2:
        x = np.pad(x, ((0, 0), (0, h2 * 2 - h), (0, w2 * 2 - w), (0, 0)), constant_values=-np.inf)
    n = x.shape[0]
    win = x.reshape(n, h2, 2, w2, 2, c).transpose(0, 1, 3, 5, 2, 4).reshape(n, h2, w2, c, 4)
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        gwin = np.zeros(win.shape, dtype=g.dtype)
        np.put_along_axis(gwin, arg[..., None], g.reshape(n, h2, w2, c, 1), axis=-1)
        gx = gwin.reshape(n, h2, w2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(n, 2 * h2, 2 * w2, c)
        return (gx[:, :h, :w, :].reshape(img.shape),)

    return _result(out.reshape(lead + (h2, w2, c)), (img,), backward, "maxpool2d")


def max_over_time(seq: Tensor) -> Tensor:
    """Column-wise max over the time axis: [..., T, F] -> [..., F]."""
    if seq.shape[-2] < 1:
        raise ShapeError("max_over_time needs at least one time step")
    arg = seq.data.argmax(axis=-2)
    out = np.take_along_axis(seq.data, arg[..., None, :], axis=-2)[..., 0, :]

    def backward(g):
        gs = np.zeros_like(seq.data)
        np.put_along_axis(gs, arg[..., None, :], g[..., None, :], axis=-2)
        return (gs,)

    return _result(out, (seq,), backward, "max_over_time")
