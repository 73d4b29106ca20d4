"""Dense float64 tensors with reverse-mode automatic differentiation.

The graph is rebuilt dynamically on every forward pass: each operation
creates a node holding its parents and a backward closure. Calling
``backward()`` on a scalar loss topologically sorts the reachable graph
and accumulates gradients into ``Tensor.grad`` buffers. Repeated calls
accumulate; callers reset with ``zero_grad``.

Only the operations the models need are provided (no generic
broadcasting beyond bias-style adds and batched matmul).
"""

from __future__ import annotations

from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from scipy.special import expit


def _tune_allocator():
    """Keep megabyte-scale temporaries on the heap.

    Array math here allocates fresh ~1 MB buffers thousands of times per
    second; if glibc hands those to mmap, the map/unmap churn dominates
    runtime on kernels where page management is expensive. Raising the
    mmap and trim thresholds makes free+malloc reuse the same hot pages.
    """
    try:
        import ctypes

        libc = ctypes.CDLL("libc.so.6", use_errno=True)
        libc.mallopt(-3, 512 * 1024 * 1024)   # M_MMAP_THRESHOLD
        libc.mallopt(-1, 512 * 1024 * 1024)   # M_TRIM_THRESHOLD
    except Exception:  # pragma: no cover - non-glibc platforms
        pass


_tune_allocator()

__all__ = [
    "Tensor",
    "DimensionError",
    "NumericError",
    "UsageError",
    "no_grad",
    "grad_enabled",
    "as_tensor",
    "add",
    "sub",
    "mul",
    "matmul",
    "linear",
    "custom_op",
    "reshape",
    "swap_last_axes",
    "slice_last",
    "take_nodes",
    "take_nodes_regular",
    "take_pairs",
    "concat",
    "tsum",
    "tmean",
    "tanh",
    "sigmoid",
    "leaky_relu",
    "softmax",
    "mse",
]


class DimensionError(ValueError):
    """Raised when tensor shapes do not line up."""


class NumericError(FloatingPointError):
    """Raised on non-finite inputs where finiteness is required."""


class UsageError(RuntimeError):
    """Raised on misuse of the autodiff API (e.g. backward on non-scalar)."""


_GRAD_ENABLED = True


class no_grad:
    """Context manager disabling graph construction (rollouts, evaluation)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward = None

    # -- bookkeeping ------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def values(self):
        """Row-major value buffer (flat view), matching the storage contract."""
        return self.data.reshape(-1)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g: np.ndarray):
        """Add a gradient contribution that may alias another buffer."""
        if self.grad is None:
            self.grad = np.array(g, copy=True)
        else:
            self.grad += g

    def _accumulate_owned(self, g: np.ndarray):
        """Add a freshly allocated contribution the caller hands over."""
        if self.grad is None:
            self.grad = g
        else:
            self.grad += g

    def backward(self):
        """Accumulate d(self)/d(param) into every reachable ``grad`` buffer."""
        if self.data.size != 1:
            raise UsageError(
                f"backward() requires a scalar loss, got shape {self.data.shape}"
            )
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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
                if id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- operator sugar ---------------------------------------------------

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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor]) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the original operand shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _acc_unbroadcast(t: Tensor, g: np.ndarray, fresh: bool):
    """Accumulate ``g`` into ``t.grad``, reducing broadcast axes first."""
    reduced = _unbroadcast(g, t.data.shape)
    if reduced is g and not fresh:
        t._accumulate(reduced)
    else:
        t._accumulate_owned(reduced if reduced is not g else g)


def custom_op(data: np.ndarray, parents: Sequence[Tensor],
              backward: Optional[Callable[[np.ndarray], None]]) -> Tensor:
    """Create a tape node for a fused operation with a hand-written backward."""
    out = _make(data, parents)
    if out.requires_grad:
        out._backward = backward
    return out


# -- arithmetic -----------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = _make(a.data + b.data, (a, b))
    if out.requires_grad:

        def back(g):
            if a.requires_grad:
                _acc_unbroadcast(a, g, fresh=False)
            if b.requires_grad:
                _acc_unbroadcast(b, g, fresh=False)

        out._backward = back
    return out


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = _make(a.data - b.data, (a, b))
    if out.requires_grad:

        def back(g):
            if a.requires_grad:
                _acc_unbroadcast(a, g, fresh=False)
            if b.requires_grad:
                _acc_unbroadcast(b, -g, fresh=True)

        out._backward = back
    return out


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = _make(a.data * b.data, (a, b))
    if out.requires_grad:

        def back(g):
            if a.requires_grad:
                _acc_unbroadcast(a, g * b.data, fresh=True)
            if b.requires_grad:
                _acc_unbroadcast(b, g * a.data, fresh=True)

        out._backward = back
    return out


def matmul(a, b) -> Tensor:
    """np.matmul semantics for 2-d and batched operands."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.shape[-1] != b.data.shape[-2 if b.data.ndim > 1 else 0]:
        raise DimensionError(
            f"matmul inner dimensions differ: {a.data.shape} @ {b.data.shape}"
        )
    out = _make(np.matmul(a.data, b.data), (a, b))
    if out.requires_grad:

        def back(g):
            if a.requires_grad:
                ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
                _acc_unbroadcast(a, ga, fresh=True)
            if b.requires_grad:
                gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
                _acc_unbroadcast(b, gb, fresh=True)

        out._backward = back
    return out


def linear(x, w, b) -> Tensor:
    """Fused x @ w + b over trailing feature axes (single tape node)."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    n_in, n_out = w.data.shape
    if x.data.shape[-1] != n_in:
        raise DimensionError(
            f"linear expects input width {n_in}, got {x.data.shape[-1]}"
        )
    out = _make(np.matmul(x.data, w.data) + b.data, (x, w, b))
    if out.requires_grad:
        lead = x.data.shape[:-1]

        def back(g):
            gf = g.reshape(-1, n_out)
            if x.requires_grad:
                x._accumulate_owned(np.matmul(g, w.data.T))
            if w.requires_grad:
                w._accumulate_owned(
                    np.matmul(x.data.reshape(-1, n_in).T, gf)
                )
            if b.requires_grad:
                b._accumulate_owned(gf.sum(axis=0))

        out._backward = back
    return out


# -- shape manipulation ---------------------------------------------------


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out = _make(a.data.reshape(shape), (a,))
    if out.requires_grad:
        src_shape = a.data.shape

        def back(g):
            a._accumulate(g.reshape(src_shape))

        out._backward = back
    return out


def swap_last_axes(a) -> Tensor:
    a = as_tensor(a)
    out = _make(np.swapaxes(a.data, -1, -2).copy(), (a,))
    if out.requires_grad:

        def back(g):
            a._accumulate(np.swapaxes(g, -1, -2))

        out._backward = back
    return out


def slice_last(a, start: int, stop: int) -> Tensor:
    """Static slice along the last axis."""
    a = as_tensor(a)
    out = _make(a.data[..., start:stop].copy(), (a,))
    if out.requires_grad:

        def back(g):
            if a.grad is None:
                a.grad = np.zeros_like(a.data)
            a.grad[..., start:stop] += g

        out._backward = back
    return out


def take_nodes(a, idx: np.ndarray) -> Tensor:
    """Gather rows along the node axis: out[..., i, :] = a[..., idx[..., i], :].

    ``a`` is (L, F) with idx (M,) or (B, L, F) with idx (B, M).
    """
    a = as_tensor(a)
    idx = np.asarray(idx)
    if a.data.ndim == 2:
        data = a.data[idx]
    elif a.data.ndim == 3:
        b = np.arange(a.data.shape[0])[:, None]
        data = a.data[b, idx]
    else:
        raise DimensionError(f"take_nodes expects 2-d or 3-d input, got {a.data.shape}")
    out = _make(data, (a,))
    if out.requires_grad:

        def back(g):
            full = np.zeros_like(a.data)
            if a.data.ndim == 2:
                np.add.at(full, idx, g)
            else:
                b = np.arange(a.data.shape[0])[:, None]
                np.add.at(full, (b, idx), g)
            a._accumulate_owned(full)

        out._backward = back
    return out


def take_nodes_regular(a, idx: np.ndarray, incoming: np.ndarray) -> Tensor:
    """Row gather whose backward is scatter-free.

    ``a`` is (B, L, F) and ``idx`` (B, M) as in :func:`take_nodes`, with the
    additional structure that every source row appears exactly R times in
    each batch row; ``incoming`` (B, L, R) lists those positions, letting
    the backward gather-and-sum instead of scatter-add.
    """
    a = as_tensor(a)
    idx = np.asarray(idx)
    brow = np.arange(a.data.shape[0])[:, None]
    out = _make(a.data[brow, idx], (a,))
    if out.requires_grad:
        bcol = np.arange(a.data.shape[0])[:, None, None]

        def back(g):
            a._accumulate_owned(g[bcol, incoming].sum(axis=2))

        out._backward = back
    return out


def take_pairs(a, node_idx: np.ndarray, slot_idx: np.ndarray) -> Tensor:
    """Gather out[b, v, d] = a[b, node_idx[b,v,d], slot_idx[b,v,d]] for (B, L, D) input."""
    a = as_tensor(a)
    if a.data.ndim != 3:
        raise DimensionError(f"take_pairs expects 3-d input, got {a.data.shape}")
    b = np.arange(a.data.shape[0])[:, None, None]
    out = _make(a.data[b, node_idx, slot_idx], (a,))
    if out.requires_grad:

        def back(g):
            full = np.zeros_like(a.data)
            np.add.at(full, (b, node_idx, slot_idx), g)
            a._accumulate_owned(full)

        out._backward = back
    return out


def concat(parts: Iterable, axis: int = -1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    out = _make(np.concatenate([p.data for p in parts], axis=axis), parts)
    if out.requires_grad:
        sizes = [p.data.shape[axis] for p in parts]
        splits = np.cumsum(sizes)[:-1]

        def back(g):
            for p, piece in zip(parts, np.split(g, splits, axis=axis)):
                if p.requires_grad:
                    p._accumulate(piece)

        out._backward = back
    return out


# -- reductions -----------------------------------------------------------


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = _make(a.data.sum(axis=axis, keepdims=keepdims), (a,))
    if out.requires_grad:

        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            a._accumulate_owned(np.broadcast_to(g, a.data.shape).copy())

        out._backward = back
    return out


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


# -- nonlinearities -------------------------------------------------------


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = _make(np.tanh(a.data), (a,))
    if out.requires_grad:
        y = out.data

        def back(g):
            a._accumulate_owned(g * (1.0 - y * y))

        out._backward = back
    return out


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _make(expit(a.data), (a,))
    if out.requires_grad:
        yv = out.data

        def back(g):
            a._accumulate_owned(g * yv * (1.0 - yv))

        out._backward = back
    return out


def leaky_relu(a, slope: float = 0.01) -> Tensor:
    a = as_tensor(a)
    out = _make(np.where(a.data >= 0, a.data, slope * a.data), (a,))
    if out.requires_grad:
        factor = np.where(a.data >= 0, 1.0, slope)

        def back(g):
            a._accumulate_owned(g * factor)

        out._backward = back
    return out


def softmax(a, axis: int = -1, mask: Optional[np.ndarray] = None) -> Tensor:
    """Softmax along ``axis``; optional 0/1 mask excludes entries.

    Fully masked rows yield all-zero output rather than NaN.
    """
    a = as_tensor(a)
    if a.data.shape[axis] == 0:
        raise UsageError("softmax over an empty axis")
    x = a.data
    if mask is not None:
        mask = np.asarray(mask, dtype=np.float64)
        x = np.where(mask > 0, x, -np.inf)
    xmax = np.max(x, axis=axis, keepdims=True)
    xmax = np.where(np.isfinite(xmax), xmax, 0.0)
    e = np.exp(x - xmax)
    denom = e.sum(axis=axis, keepdims=True)
    y = np.divide(e, denom, out=np.zeros_like(e), where=denom > 0)
    out = _make(y, (a,))
    if out.requires_grad:
        yv = out.data

        def back(g):
            dot = (g * yv).sum(axis=axis, keepdims=True)
            a._accumulate_owned(yv * (g - dot))

        out._backward = back
    return out


def mse(pred, target) -> Tensor:
    """Mean of squared differences over all elements."""
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.data.shape != target.data.shape:
        raise DimensionError(
            f"mse shape mismatch: {pred.data.shape} vs {target.data.shape}"
        )
    diff = sub(pred, target)
    return tmean(mul(diff, diff))
