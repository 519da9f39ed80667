"""Reverse-mode automatic differentiation over numpy float64 arrays.

A :class:`Tensor` wraps an ndarray and remembers how it was produced; calling
:func:`backward` on a scalar loss walks the graph in reverse topological order
and accumulates gradients into every tensor created with
``requires_grad=True``. Only the operations the encoder needs are provided,
with fused softmax/cross-entropy/layer-norm kernels so the graph stays small.

All shapes follow numpy broadcasting; gradients of broadcast operands are
summed back down to the operand's shape.
"""

from __future__ import annotations

import numpy as np

_SQRT_2_OVER_PI = np.sqrt(2.0 / np.pi)
_GELU_C = 0.044715


def _stable_sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    enz = np.exp(z[~pos])
    out[~pos] = enz / (1.0 + enz)
    return out


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, value, requires_grad: bool = False,
                 parents: tuple = (), backward=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Tensor(shape={self.value.shape}, grad={self.requires_grad})"

    # operator sugar; every op routes through the module-level functions
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(other, mul(self, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, -1.0)


def _ensure(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(value) -> Tensor:
    """A leaf that never receives gradient."""
    return Tensor(value, requires_grad=False)


def parameter(value) -> Tensor:
    return Tensor(np.array(value, dtype=np.float64, copy=True), requires_grad=True)


def _needs(*tensors: Tensor) -> bool:
    return any(t.requires_grad or t._parents for t in tensors)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def _accumulate(t: Tensor, grad: np.ndarray) -> None:
    if t.grad is None:
        t.grad = grad.copy()
    else:
        t.grad += grad


def add(a, b) -> Tensor:
    a, b = _ensure(a), _ensure(b)
    out_value = a.value + b.value

    def back(g):
        yield a, _unbroadcast(g, a.value.shape)
        yield b, _unbroadcast(g, b.value.shape)

    return Tensor(out_value, parents=(a, b), backward=back) if _needs(a, b) else Tensor(out_value)


def mul(a, b) -> Tensor:
    a, b = _ensure(a), _ensure(b)
    out_value = a.value * b.value

    def back(g):
        yield a, _unbroadcast(g * b.value, a.value.shape)
        yield b, _unbroadcast(g * a.value, b.value.shape)

    return Tensor(out_value, parents=(a, b), backward=back) if _needs(a, b) else Tensor(out_value)


def matmul(a, b) -> Tensor:
    a, b = _ensure(a), _ensure(b)
    if a.value.ndim < 2 or b.value.ndim < 2:
        raise ValueError("matmul operands must have ndim >= 2")
    out_value = a.value @ b.value

    def back(g):
        yield a, _unbroadcast(g @ np.swapaxes(b.value, -1, -2), a.value.shape)
        yield b, _unbroadcast(np.swapaxes(a.value, -1, -2) @ g, b.value.shape)

    return Tensor(out_value, parents=(a, b), backward=back) if _needs(a, b) else Tensor(out_value)


def reshape(a, shape) -> Tensor:
    a = _ensure(a)
    out_value = a.value.reshape(shape)

    def back(g):
        yield a, g.reshape(a.value.shape)

    return Tensor(out_value, parents=(a,), backward=back) if _needs(a) else Tensor(out_value)


def transpose_last(a) -> Tensor:
    """Swap the last two axes."""
    a = _ensure(a)
    out_value = np.swapaxes(a.value, -1, -2)

    def back(g):
        yield a, np.swapaxes(g, -1, -2)

    return Tensor(out_value, parents=(a,), backward=back) if _needs(a) else Tensor(out_value)


def moveaxis(a, src: int, dst: int) -> Tensor:
    a = _ensure(a)
    out_value = np.moveaxis(a.value, src, dst)

    def back(g):
        yield a, np.moveaxis(g, dst, src)

    return Tensor(out_value, parents=(a,), backward=back) if _needs(a) else Tensor(out_value)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _ensure(a)
    out_value = a.value.sum(axis=axis, keepdims=keepdims)

    def back(g):
        expanded = g
        if not keepdims and axis is not None:
            expanded = np.expand_dims(g, axis)
        yield a, np.broadcast_to(expanded, a.value.shape).copy()

    return Tensor(out_value, parents=(a,), backward=back) if _needs(a) else Tensor(out_value)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _ensure(a)
    out_value = a.value.mean(axis=axis, keepdims=keepdims)
    count = a.value.size / out_value.size

    def back(g):
        expanded = g
        if not keepdims and axis is not None:
            expanded = np.expand_dims(g, axis)
        yield a, np.broadcast_to(expanded, a.value.shape).copy() / count

    return Tensor(out_value, parents=(a,), backward=back) if _needs(a) else Tensor(out_value)


def gelu(a) -> Tensor:
    """Gaussian error linear unit, tanh approximation."""
    a = _ensure(a)
    x = a.value
    inner = _SQRT_2_OVER_PI * (x + _GELU_C * x ** 3)
    t = np.tanh(inner)
    out_value = 0.5 * x * (1.0 + t)

    def back(g):
        d_inner = _SQRT_2_OVER_PI * (1.0 + 3.0 * _GELU_C * x ** 2)
        grad = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t ** 2) * d_inner
        yield a, g * grad

    return Tensor(out_value, parents=(a,), backward=back) if _needs(a) else Tensor(out_value)


def sigmoid(a) -> Tensor:
    a = _ensure(a)
    out_value = _stable_sigmoid(np.atleast_1d(a.value)).reshape(a.value.shape)

    def back(g):
        yield a, g * out_value * (1.0 - out_value)

    return Tensor(out_value, parents=(a,), backward=back) if _needs(a) else Tensor(out_value)


def softmax(a) -> Tensor:
    """Softmax over the last axis (fused forward/backward)."""
    a = _ensure(a)
    shifted = a.value - a.value.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out_value = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        dot = (g * out_value).sum(axis=-1, keepdims=True)
        yield a, out_value * (g - dot)

    return Tensor(out_value, parents=(a,), backward=back) if _needs(a) else Tensor(out_value)


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Layer normalization over the last axis with learned gain and bias."""
    x, gain, bias = _ensure(x), _ensure(gain), _ensure(bias)
    mu = x.value.mean(axis=-1, keepdims=True)
    centered = x.value - mu
    var = (centered ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out_value = gain.value * xhat + bias.value

    def back(g):
        g_xhat = g * gain.value
        mean_g = g_xhat.mean(axis=-1, keepdims=True)
        mean_gx = (g_xhat * xhat).mean(axis=-1, keepdims=True)
        yield x, (g_xhat - mean_g - xhat * mean_gx) * inv
        yield gain, _unbroadcast(g * xhat, gain.value.shape)
        yield bias, _unbroadcast(g, bias.value.shape)

    if _needs(x, gain, bias):
        return Tensor(out_value, parents=(x, gain, bias), backward=back)
    return Tensor(out_value)


def take_rows(a, indices: np.ndarray) -> Tensor:
    """Gather rows of a 2-D tensor; backward scatter-adds (np.add.at)."""
    a = _ensure(a)
    indices = np.asarray(indices, dtype=np.int64)
    out_value = a.value[indices]

    def back(g):
        grad = np.zeros_like(a.value)
        np.add.at(grad, indices, g)
        yield a, grad

    return Tensor(out_value, parents=(a,), backward=back) if _needs(a) else Tensor(out_value)


def softmax_cross_entropy(logits, targets: np.ndarray) -> Tensor:
    """Mean cross-entropy of (N, V) logits against integer targets (N,)."""
    logits = _ensure(logits)
    targets = np.asarray(targets, dtype=np.int64)
    n = logits.value.shape[0]
    shifted = logits.value - logits.value.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1)) + logits.value.max(axis=-1)
    picked = logits.value[np.arange(n), targets]
    out_value = np.float64((lse - picked).mean())

    def back(g):
        probs = np.exp(shifted)
        probs /= probs.sum(axis=-1, keepdims=True)
        probs[np.arange(n), targets] -= 1.0
        yield logits, g * probs / n

    return Tensor(out_value, parents=(logits,), backward=back) if _needs(logits) else Tensor(out_value)


def bce_with_logits(logits, targets: np.ndarray) -> Tensor:
    """Mean binary cross-entropy over every element of ``logits``."""
    logits = _ensure(logits)
    targets = np.asarray(targets, dtype=np.float64)
    z = logits.value
    per = np.maximum(z, 0.0) - z * targets + np.log1p(np.exp(-np.abs(z)))
    out_value = np.float64(per.mean())

    def back(g):
        sig = _stable_sigmoid(z)
        yield logits, g * (sig - targets) / z.size

    return Tensor(out_value, parents=(logits,), backward=back) if _needs(logits) else Tensor(out_value)


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(tensor) into ``grad`` across the whole graph."""
    if loss.value.ndim != 0:
        raise ValueError("backward expects a scalar loss")
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad:
            _accumulate(node, g)
        if node._backward is None:
            continue
        for parent, parent_grad in node._backward(g):
            if not (parent.requires_grad or parent._parents):
                continue
            key = id(parent)
            if key in grads:
                grads[key] += parent_grad
            else:
                grads[key] = np.array(parent_grad, dtype=np.float64, copy=True)


def zero_grads(tensors) -> None:
    for t in tensors:
        t.grad = None
