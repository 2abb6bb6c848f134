"""Minimal reverse-mode autodiff over dense numpy arrays.

The op set is exactly what the denoiser needs: elementwise arithmetic with
broadcasting, matmul, reshape/transpose/stack, integer gathers, reductions,
softmax/log-softmax, log/exp, GELU, and layer normalization.  Every op records
its parents and a vector-Jacobian closure; :func:`backward` walks the graph in
reverse topological order.  Gradients are verified against central finite
differences by :func:`grad_check` (run models in float64 for that).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

from .errors import ShapeError

_CHECK_FINITE = False


def set_debug_checks(enabled: bool) -> None:
    """Toggle the NaN/Inf assertion applied to every op output."""
    global _CHECK_FINITE
    _CHECK_FINITE = enabled


class Tensor:
    """A dense array node in the computation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "name")

    def __init__(self, data, requires_grad: bool = False, parents=(), name: str = ""):
        self.data = np.asarray(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[tuple["Tensor", Callable[[np.ndarray], np.ndarray]], ...] = parents
        self.name = name
        if _CHECK_FINITE and not np.all(np.isfinite(self.data)):
            raise FloatingPointError(f"non-finite values in tensor {name or '<anon>'}")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Tensor(name={self.name!r}, shape={self.shape}, grad={self.grad is not None})"

    # Operator sugar; constants are not tracked.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, _as_tensor(other))

    def __neg__(self):
        return neg(self)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcasted gradient back to the parent's shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _node(data, parents: Iterable[tuple[Tensor, Callable]], name: str = "") -> Tensor:
    tracked = tuple((p, fn) for p, fn in parents if p.requires_grad)
    return Tensor(data, requires_grad=bool(tracked), parents=tracked, name=name)


# ---------------------------------------------------------------------------
# Elementwise ops


def add(a: Tensor, b) -> Tensor:
    b = _as_tensor(b)
    out = a.data + b.data
    return _node(
        out,
        [
            (a, lambda g: _unbroadcast(g, a.shape)),
            (b, lambda g: _unbroadcast(g, b.shape)),
        ],
        "add",
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.data - b.data
    return _node(
        out,
        [
            (a, lambda g: _unbroadcast(g, a.shape)),
            (b, lambda g: _unbroadcast(-g, b.shape)),
        ],
        "sub",
    )


def neg(a: Tensor) -> Tensor:
    return _node(-a.data, [(a, lambda g: -g)], "neg")


def mul(a: Tensor, b) -> Tensor:
    b = _as_tensor(b)
    out = a.data * b.data
    return _node(
        out,
        [
            (a, lambda g: _unbroadcast(g * b.data, a.shape)),
            (b, lambda g: _unbroadcast(g * a.data, b.shape)),
        ],
        "mul",
    )


def div(a: Tensor, b: Tensor) -> Tensor:
    out = a.data / b.data
    return _node(
        out,
        [
            (a, lambda g: _unbroadcast(g / b.data, a.shape)),
            (b, lambda g: _unbroadcast(-g * a.data / (b.data**2), b.shape)),
        ],
        "div",
    )


def log(a: Tensor) -> Tensor:
    return _node(np.log(a.data), [(a, lambda g: g / a.data)], "log")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _node(out, [(a, lambda g: g * out)], "exp")


def gelu(a: Tensor) -> Tensor:
    """Exact GELU: x * Phi(x), with Phi the standard normal CDF."""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x / math.sqrt(2.0)))
    out = x * cdf
    pdf = np.exp(-0.5 * x**2) / math.sqrt(2.0 * math.pi)
    return _node(out, [(a, lambda g: g * (cdf + x * pdf))], "gelu")


# ---------------------------------------------------------------------------
# Shape ops


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    return _node(a.data.reshape(shape), [(a, lambda g: g.reshape(a.shape))], "reshape")


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _node(a.data.transpose(axes), [(a, lambda g: g.transpose(inverse))], "transpose")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    data = np.stack([t.data for t in tensors], axis=axis)
    parents = []
    for i, t in enumerate(tensors):
        parents.append((t, lambda g, i=i: np.take(g, i, axis=axis)))
    return _node(data, parents, "stack")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    data = np.concatenate([t.data for t in tensors], axis=axis)
    parents = []
    offset = 0
    for t in tensors:
        size = t.shape[axis]
        sl = [slice(None)] * data.ndim
        sl[axis] = slice(offset, offset + size)
        parents.append((t, lambda g, sl=tuple(sl): g[sl]))
        offset += size
    return _node(data, parents, "concat")


# ---------------------------------------------------------------------------
# Indexing


def gather(a: Tensor, idx: np.ndarray) -> Tensor:
    """Index axis 0 with an integer array; rows may repeat (grads accumulate)."""
    idx = np.asarray(idx, dtype=np.int64)

    def vjp(g):
        out = np.zeros_like(a.data)
        np.add.at(out, idx, g)
        return out

    return _node(a.data[idx], [(a, vjp)], "gather")


def take_along(a: Tensor, idx: np.ndarray, axis: int) -> Tensor:
    """np.take_along_axis with gradient; idx must already be broadcast so that
    idx.shape matches the output shape."""
    idx = np.asarray(idx, dtype=np.int64)

    def vjp(g):
        out = np.zeros_like(a.data)
        grids = np.meshgrid(*[np.arange(s) for s in idx.shape], indexing="ij")
        index = [gr for gr in grids]
        index[axis] = idx
        np.add.at(out, tuple(index), g)
        return out

    return _node(np.take_along_axis(a.data, idx, axis=axis), [(a, vjp)], "take_along")


# ---------------------------------------------------------------------------
# Linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data @ b.data

    def vjp_a(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        return _unbroadcast(ga, a.shape) if ga.shape != a.shape else ga

    def vjp_b(g):
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(gb, b.shape) if gb.shape != b.shape else gb

    return _node(out, [(a, vjp_a), (b, vjp_b)], "matmul")


# ---------------------------------------------------------------------------
# Reductions


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return np.broadcast_to(g, a.shape).copy()
        g2 = g if keepdims else np.expand_dims(g, axis)
        return np.broadcast_to(g2, a.shape).copy()

    return _node(out, [(a, vjp)], "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else a.shape[axis]
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / count)


# ---------------------------------------------------------------------------
# Normalizations and composite primitives


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return out * (g - dot)

    return _node(out, [(a, vjp)], "softmax")


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse

    def vjp(g):
        return g - np.exp(out) * g.sum(axis=axis, keepdims=True)

    return _node(out, [(a, vjp)], "log_softmax")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis, then scale and shift."""
    mu = x.data.mean(axis=-1, keepdims=True)
    var = ((x.data - mu) ** 2).mean(axis=-1, keepdims=True)
    sigma = np.sqrt(var + eps)
    xhat = (x.data - mu) / sigma
    out = xhat * gamma.data + beta.data
    lead_axes = tuple(range(out.ndim - 1))

    def vjp_x(g):
        ghat = g * gamma.data
        m1 = ghat.mean(axis=-1, keepdims=True)
        m2 = (ghat * xhat).mean(axis=-1, keepdims=True)
        return (ghat - m1 - xhat * m2) / sigma

    return _node(
        out,
        [
            (x, vjp_x),
            (gamma, lambda g: (g * xhat).sum(axis=lead_axes)),
            (beta, lambda g: g.sum(axis=lead_axes)),
        ],
        "layer_norm",
    )


# ---------------------------------------------------------------------------
# Backward pass


def _topo_order(root: Tensor) -> list[Tensor]:
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
        for parent, _ in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every reachable tensor that requires gradients.

    Gradients accumulate into any existing ``grad`` buffers, so zero them
    between steps.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topo_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.grad is None:
            node.grad = np.zeros_like(node.data)
        node.grad = node.grad + g
        for parent, vjp in node._parents:
            contribution = vjp(g)
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + contribution
            else:
                grads[id(parent)] = contribution


# ---------------------------------------------------------------------------
# Gradient checking


@dataclass
class GradCheckEntry:
    name: str
    max_rel_error: float
    passed: bool


@dataclass
class GradCheckReport:
    entries: list[GradCheckEntry]
    tolerance: float

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    @property
    def max_rel_error(self) -> float:
        return max((e.max_rel_error for e in self.entries), default=0.0)


def grad_check(
    forward: Callable[[], Tensor],
    params: dict[str, Tensor],
    tolerance: float = 1e-4,
    eps: float = 1e-5,
) -> GradCheckReport:
    """Compare analytic gradients with central finite differences.

    ``forward`` must rebuild the graph from the current parameter data on each
    call.  Run in float64: float32 round-off swamps the comparison.  The
    difference quotient is Richardson-extrapolated over two step sizes so the
    oracle stays accurate for parameters whose effect nearly cancels (for
    example additive biases under softmax).
    """
    for p in params.values():
        p.zero_grad()
    loss = forward()
    backward(loss)
    analytic = {name: p.grad.copy() for name, p in params.items()}

    def central(flat, i, step):
        orig = flat[i]
        flat[i] = orig + step
        hi = forward().item()
        flat[i] = orig - step
        lo = forward().item()
        flat[i] = orig
        return (hi - lo) / (2 * step)

    entries = []
    for name, p in params.items():
        worst = 0.0
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            coarse = central(flat, i, eps)
            fine = central(flat, i, eps / 2)
            fd = (4.0 * fine - coarse) / 3.0
            an = analytic[name].reshape(-1)[i]
            denom = max(abs(fd), abs(an))
            if denom > 1e-8:
                worst = max(worst, abs(fd - an) / denom)
        entries.append(GradCheckEntry(name, worst, worst < tolerance))
    return GradCheckReport(entries, tolerance)
