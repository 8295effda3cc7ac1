"""Dense-array math with a recorded-tape reverse-mode autodiff.

Every learnable quantity and every loss in this package flows through the
Tensor class below. Operations append nodes to a module-level tape; parents
always precede children, and the backward pass consumes nodes in strictly
decreasing insertion order. The tape is cheap to rebuild and is cleared once
per training step via ``reset_graph``.

Array storage and kernels are plain numpy; only the recording and the
adjoints are implemented here. Subgradient conventions are fixed so tests
are deterministic: ``absolute`` has subgradient 0 at 0, ``clamp`` has zero
gradient outside its bounds, min/max reductions route to the first
arg-extremum, and elementwise ``minimum`` routes ties to the first operand.
"""

from __future__ import annotations

import heapq
import math
from contextlib import contextmanager

import numpy as np
from scipy.special import erf as _erf

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


class Node:
    """One recorded operation: tag, parent node ids, and an adjoint closure."""

    __slots__ = ("tag", "parents", "backward")

    def __init__(self, tag, parents, backward):
        self.tag = tag
        self.parents = parents
        self.backward = backward


class Graph:
    """Append-only tape. Node ids are list indices; parents of node i all
    have index < i. ``generation`` invalidates stale node handles after a
    reset without touching the tensors that hold them."""

    __slots__ = ("nodes", "generation")

    def __init__(self):
        self.nodes = []
        self.generation = 0

    def clear(self):
        self.nodes.clear()
        self.generation += 1


_GRAPH = Graph()
_GRAD_ENABLED = True


def active_graph() -> Graph:
    return _GRAPH


def reset_graph():
    """Drop all recorded nodes. Live tensors become leaves on next use."""
    _GRAPH.clear()


@contextmanager
def no_grad():
    """Disable recording inside the block; results are plain values."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    """A dense n-dimensional real array, optionally tracked on the tape.

    ``requires_grad`` marks a leaf whose gradient is wanted; tensors produced
    by operations on tracked inputs are tracked automatically. A tensor with
    requires_grad False never accumulates gradient.
    """

    __slots__ = ("data", "requires_grad", "_node", "_gen")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self._node = -1
        self._gen = -1

    # -- bookkeeping -------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        """A view of the same values that is cut off from the tape."""
        return Tensor(self.data)

    def astype(self, dtype) -> "Tensor":
        return cast(self, dtype)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def _leaf_id(self) -> int:
        """Node id of this tensor in the current generation, registering a
        leaf node on first use."""
        if self._gen == _GRAPH.generation and self._node >= 0:
            return self._node
        nid = len(_GRAPH.nodes)
        _GRAPH.nodes.append(Node("leaf", (), None))
        self._node = nid
        self._gen = _GRAPH.generation
        return nid

    # -- operators ---------------------------------------------------------

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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __abs__(self):
        return absolute(self)

    def __getitem__(self, key):
        return take(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def min(self, axis=None):
        return reduce_min(self, axis=axis)

    def max(self, axis=None):
        return reduce_max(self, axis=axis)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(tag, out_data, parents, backward) -> Tensor:
    """Wrap ``out_data``, appending a tape node when any parent is tracked.

    ``backward(grad_out)`` must return one gradient array (or None) per
    parent, in order. Untracked parents receive id -1 and are skipped.
    """
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out._node = -1
    out._gen = -1
    if not _GRAD_ENABLED or not any(p.requires_grad for p in parents):
        out.requires_grad = False
        return out
    parent_ids = tuple(p._leaf_id() if p.requires_grad else -1 for p in parents)
    nid = len(_GRAPH.nodes)
    _GRAPH.nodes.append(Node(tag, parent_ids, backward))
    out.requires_grad = True
    out._node = nid
    out._gen = _GRAPH.generation
    return out


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# -- elementwise arithmetic -------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data
    ash, bsh = a.data.shape, b.data.shape

    def backward(g):
        return _unbroadcast(g, ash), _unbroadcast(g, bsh)

    return _record("add", out, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data
    ash, bsh = a.data.shape, b.data.shape

    def backward(g):
        return _unbroadcast(g, ash), _unbroadcast(-g, bsh)

    return _record("sub", out, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    out = ad * bd

    def backward(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _record("mul", out, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    out = ad / bd

    def backward(g):
        return (
            _unbroadcast(g / bd, ad.shape),
            _unbroadcast(-g * ad / (bd * bd), bd.shape),
        )

    return _record("div", out, (a, b), backward)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _record("neg", -a.data, (a,), lambda g: (-g,))


def power(a, exponent: float) -> Tensor:
    """Elementwise ``a ** exponent`` for a constant real exponent."""
    a = as_tensor(a)
    p = float(exponent)
    ad = a.data
    out = ad ** p

    def backward(g):
        return (g * p * ad ** (p - 1.0),)

    return _record("power", out, (a,), backward)


# -- transcendental ----------------------------------------------------------


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _record("exp", out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        bad = float(np.min(a.data))
        raise ValueError(f"log of non-positive input (min value {bad})")
    ad = a.data
    return _record("log", np.log(ad), (a,), lambda g: (g / ad,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data < 0):
        bad = float(np.min(a.data))
        raise ValueError(f"sqrt of negative input (min value {bad})")
    out = np.sqrt(a.data)
    return _record("sqrt", out, (a,), lambda g: (g * 0.5 / out,))


def sin(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _record("sin", np.sin(ad), (a,), lambda g: (g * np.cos(ad),))


def cos(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _record("cos", np.cos(ad), (a,), lambda g: (-g * np.sin(ad),))


# -- activations -------------------------------------------------------------


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    out = np.empty_like(ad)
    pos = ad >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-ad[pos]))
    ez = np.exp(ad[~pos])
    out[~pos] = ez / (1.0 + ez)

    def backward(g):
        return (g * out * (1.0 - out),)

    return _record("sigmoid", out, (a,), backward)


def relu(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    out = np.maximum(ad, 0.0)

    def backward(g):
        return (g * (ad > 0),)

    return _record("relu", out, (a,), backward)


def gelu(a) -> Tensor:
    """Exact Gaussian-error-linear unit, x * Phi(x)."""
    a = as_tensor(a)
    ad = a.data
    cdf = 0.5 * (1.0 + _erf(ad * _INV_SQRT2))
    out = ad * cdf

    def backward(g):
        pdf = np.exp(-0.5 * ad * ad) * _INV_SQRT2PI
        return (g * (cdf + ad * pdf),)

    return _record("gelu", out, (a,), backward)


def softmax(a) -> Tensor:
    """Row softmax over the last axis."""
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - dot),)

    return _record("softmax", out, (a,), backward)


def absolute(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _record("abs", np.abs(ad), (a,), lambda g: (g * np.sign(ad),))


def clamp(a, lo=None, hi=None) -> Tensor:
    """Clip to [lo, hi]; gradient is zero strictly outside the bounds."""
    a = as_tensor(a)
    ad = a.data
    out = np.clip(ad, lo, hi)
    mask = np.ones(ad.shape, dtype=bool)
    if lo is not None:
        mask &= ad >= lo
    if hi is not None:
        mask &= ad <= hi

    def backward(g):
        return (g * mask,)

    return _record("clamp", out, (a,), backward)


def minimum(a, b) -> Tensor:
    """Elementwise minimum; the subgradient goes to the smaller operand,
    ties to the first."""
    a, b = as_tensor(a), as_tensor(b)
    first = a.data <= b.data
    out = np.where(first, a.data, b.data)
    ash, bsh = a.data.shape, b.data.shape

    def backward(g):
        return _unbroadcast(g * first, ash), _unbroadcast(g * ~first, bsh)

    return _record("minimum", out, (a, b), backward)


# -- reductions ---------------------------------------------------------------


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    out = ad.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, ad.shape).copy(),)
        g2 = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g2, ad.shape).copy(),)

    return _record("sum", np.asarray(out), (a,), backward)


def tmean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    count = ad.size if axis is None else np.prod(
        [ad.shape[ax] for ax in np.atleast_1d(axis)]
    )
    out = ad.mean(axis=axis, keepdims=keepdims)
    inv = 1.0 / float(count)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g * inv, ad.shape).copy(),)
        g2 = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g2 * inv, ad.shape).copy(),)

    return _record("mean", np.asarray(out), (a,), backward)


def _reduce_extremum(a, axis, kind) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    argfn = np.argmin if kind == "min" else np.argmax
    redfn = np.min if kind == "min" else np.max
    if axis is None:
        flat_idx = int(argfn(ad))  # first extremum in raster order
        out = np.asarray(ad.reshape(-1)[flat_idx])

        def backward(g):
            gx = np.zeros_like(ad)
            gx.reshape(-1)[flat_idx] = g
            return (gx,)

    else:
        idx = argfn(ad, axis=axis)
        out = redfn(ad, axis=axis)

        def backward(g):
            gx = np.zeros_like(ad)
            sel = np.expand_dims(idx, axis)
            np.put_along_axis(gx, sel, np.expand_dims(g, axis), axis=axis)
            return (gx,)

    return _record(kind, out, (a,), backward)


def reduce_min(a, axis=None) -> Tensor:
    """Min reduction; subgradient routes to the first argmin."""
    return _reduce_extremum(a, axis, "min")


def reduce_max(a, axis=None) -> Tensor:
    """Max reduction; subgradient routes to the first argmax."""
    return _reduce_extremum(a, axis, "max")


def cumsum(a, axis=-1) -> Tensor:
    a = as_tensor(a)
    out = np.cumsum(a.data, axis=axis)

    def backward(g):
        return (np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis),)

    return _record("cumsum", out, (a,), backward)


# -- shape & structure --------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    if ad.ndim != 2 or bd.ndim != 2:
        raise ValueError(f"matmul expects 2-d operands, got {ad.shape} and {bd.shape}")
    if ad.shape[1] != bd.shape[0]:
        raise ValueError(f"matmul shapes {ad.shape} and {bd.shape} are incompatible")
    out = ad @ bd

    def backward(g):
        return g @ bd.T, ad.T @ g

    return _record("matmul", out, (a, b), backward)


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise ValueError(f"transpose expects a 2-d tensor, got shape {a.data.shape}")
    return _record("transpose", a.data.T.copy(), (a,), lambda g: (g.T,))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.data.shape
    out = a.data.reshape(shape)
    return _record("reshape", out, (a,), lambda g: (g.reshape(old),))


def broadcast_to(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.data.shape
    out = np.broadcast_to(a.data, shape).copy()
    return _record("broadcast", out, (a,), lambda g: (_unbroadcast(g, old),))


def concatenate(tensors, axis=0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.data.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _record("concat", out, tuple(ts), backward)


def take(a, key) -> Tensor:
    """Basic and integer-array indexing. Gradients scatter-add back, so
    repeated indices accumulate correctly."""
    a = as_tensor(a)
    ad = a.data
    out = ad[key]
    if isinstance(out, np.ndarray):
        out = out.copy()
    else:
        out = np.asarray(out)

    def backward(g):
        gx = np.zeros_like(ad)
        np.add.at(gx, key, g)
        return (gx,)

    return _record("slice", out, (a,), backward)


def cast(a, dtype) -> Tensor:
    a = as_tensor(a)
    src = a.data.dtype
    out = a.data.astype(dtype)

    def backward(g):
        return (g.astype(src),)

    return _record("cast", out, (a,), backward)


# -- differentiation ----------------------------------------------------------


def gradient(loss: Tensor, inputs) -> list:
    """Reverse-mode gradients of a scalar ``loss`` with respect to ``inputs``.

    Inputs that do not lie on a path to the loss get a zero gradient of
    matching shape. Nodes are visited in strictly decreasing tape order, so
    every adjoint is complete before it is propagated.
    """
    if loss.data.size != 1:
        raise ValueError(f"gradient expects a scalar loss, got shape {loss.data.shape}")
    single = isinstance(inputs, Tensor)
    input_list = [inputs] if single else list(inputs)

    adjoints = {}
    if loss._gen == _GRAPH.generation and loss._node >= 0:
        adjoints[loss._node] = np.ones_like(loss.data)
        heap = [-loss._node]
        seen = set()
        nodes = _GRAPH.nodes
        while heap:
            nid = -heapq.heappop(heap)
            if nid in seen:
                continue
            seen.add(nid)
            node = nodes[nid]
            if node.backward is None:
                continue
            g = adjoints[nid]
            for pid, pg in zip(node.parents, node.backward(g)):
                if pid < 0 or pg is None:
                    continue
                if pid in adjoints:
                    adjoints[pid] = adjoints[pid] + pg
                else:
                    adjoints[pid] = pg
                heapq.heappush(heap, -pid)

    grads = []
    for t in input_list:
        if t._gen == _GRAPH.generation and t._node in adjoints:
            g = adjoints[t._node]
            grads.append(Tensor(np.reshape(g, t.data.shape)))
        else:
            grads.append(Tensor(np.zeros_like(t.data)))
    return grads[0] if single else grads


def finite_difference(loss_fn, inputs, step: float = 1e-5) -> list:
    """Central-difference gradient estimate, the oracle for ``gradient``.

    ``loss_fn`` takes the list of tensors and returns a scalar (Tensor or
    float). Each coordinate of each input is perturbed by +/- ``step``.
    """
    if step <= 0:
        raise ValueError("finite_difference requires step > 0")
    single = isinstance(inputs, Tensor)
    input_list = [inputs] if single else list(inputs)

    def evaluate(ts):
        with no_grad():
            val = loss_fn(ts if not single else ts[0])
        return float(val.data) if isinstance(val, Tensor) else float(val)

    grads = []
    for i, t in enumerate(input_list):
        base = t.data.astype(np.float64)
        g = np.zeros_like(base)
        flat = g.reshape(-1)
        work = base.copy()
        for j in range(base.size):
            orig = work.reshape(-1)[j]
            work.reshape(-1)[j] = orig + step
            ts = [Tensor(work) if k == i else input_list[k] for k in range(len(input_list))]
            hi = evaluate(ts)
            work.reshape(-1)[j] = orig - step
            ts = [Tensor(work) if k == i else input_list[k] for k in range(len(input_list))]
            lo = evaluate(ts)
            work.reshape(-1)[j] = orig
            flat[j] = (hi - lo) / (2.0 * step)
        grads.append(Tensor(g))
    return grads[0] if single else grads
