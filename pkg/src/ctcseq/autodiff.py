"""Reverse-mode automatic differentiation over dense float64 arrays.

The graph is built eagerly by the op functions below and walked once in
reverse topological order by ``backward``. Only the operations the
recognizer actually composes are provided, each with an explicit
vector-Jacobian rule, and ``finite_difference_check`` is the oracle used
to verify every one of them.

Gradients accumulate into ``Parameter.grad`` across backward calls until
explicitly zeroed, so per-batch accumulation falls out for free.
"""
from __future__ import annotations

import math
from contextlib import contextmanager

import numpy as np

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph construction inside the block (forward-only evals)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """Dense float64 array plus the bookkeeping for reverse-mode grads."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents: tuple[Tensor, ...] = ()
        self._vjp = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # arithmetic sugar; every operator defers to the module-level ops
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean_(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) != 1 or not isinstance(shape[0], (tuple, list)) else shape[0])

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def relu(self):
        return relu(self)


class Parameter(Tensor):
    """A leaf tensor updated by the optimizer; grad starts at zeros."""

    __slots__ = ("name",)

    def __init__(self, data, name: str = ""):
        super().__init__(data, requires_grad=True)
        self.grad = np.zeros_like(self.data)
        self.name = name

    def zero_grad(self):
        self.grad[...] = 0.0

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.data.shape})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, vjp) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
    return out


def _reduce_to(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient down to ``shape`` undoing numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise and structural ops


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def vjp(g):
        return _reduce_to(g, a.shape), _reduce_to(g, b.shape)

    return _node(a.data + b.data, (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def vjp(g):
        return _reduce_to(g, a.shape), _reduce_to(-g, b.shape)

    return _node(a.data - b.data, (a, b), vjp)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def vjp(g):
        return _reduce_to(g * b.data, a.shape), _reduce_to(g * a.data, b.shape)

    return _node(a.data * b.data, (a, b), vjp)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def vjp(g):
        return (
            _reduce_to(g / b.data, a.shape),
            _reduce_to(-g * a.data / (b.data * b.data), b.shape),
        )

    return _node(a.data / b.data, (a, b), vjp)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _node(-a.data, (a,), lambda g: (-g,))


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    p = float(p)

    def vjp(g):
        return (g * p * np.power(a.data, p - 1.0),)

    return _node(np.power(a.data, p), (a,), vjp)


def relu(a) -> Tensor:
    a = as_tensor(a)

    def vjp(g):
        return (g * (a.data > 0.0),)

    return _node(np.maximum(a.data, 0.0), (a,), vjp)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.exp(a.data)

    def vjp(g):
        return (g * out_data,)

    return _node(out_data, (a,), vjp)


def log(a) -> Tensor:
    a = as_tensor(a)

    def vjp(g):
        return (g / a.data,)

    return _node(np.log(a.data), (a,), vjp)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    out_data = np.where(x >= 0.0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def vjp(g):
        return (g * out_data * (1.0 - out_data),)

    return _node(out_data, (a,), vjp)


def clamp_min(a, floor: float) -> Tensor:
    """max(a, floor); gradient passes only where a > floor."""
    a = as_tensor(a)

    def vjp(g):
        return (g * (a.data > floor),)

    return _node(np.maximum(a.data, floor), (a,), vjp)


def sum_(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        g2 = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g2, a.shape).copy(),)

    return _node(a.data.sum(axis=axis, keepdims=keepdims), (a,), vjp)


def mean_(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        n = a.size
    else:
        n = a.shape[axis] if isinstance(axis, int) else int(np.prod([a.shape[i] for i in axis]))
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)

    def vjp(g):
        return (g.reshape(a.shape),)

    return _node(a.data.reshape(shape), (a,), vjp)


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))

    def vjp(g):
        return (g.transpose(inv),)

    return _node(a.data.transpose(axes), (a,), vjp)


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)

    def vjp(g):
        z = np.zeros_like(a.data)
        np.add.at(z, idx, g)
        return (z,)

    return _node(a.data[idx], (a,), vjp)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul requires 2-D or batched operands: {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")
    out_data = np.matmul(a.data, b.data)

    def vjp(g):
        ga = _reduce_to(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape) if a.requires_grad else None
        gb = _reduce_to(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape) if b.requires_grad else None
        return ga, gb

    return _node(out_data, (a, b), vjp)


def linear(x, weight, bias=None) -> Tensor:
    """Affine map x @ weight (+ bias). Shape mismatches raise ValueError."""
    out = matmul(x, weight)
    if bias is not None:
        out = add(out, bias)
    return out


def dropout(x, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; call only in training mode."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1): {p}")
    if p == 0.0:
        return as_tensor(x)
    x = as_tensor(x)
    mask = (rng.random(x.shape) >= p) / (1.0 - p)

    def vjp(g):
        return (g * mask,)

    return _node(x.data * mask, (x,), vjp)


# ---------------------------------------------------------------------------
# reductions in the log domain


def logsumexp(a, axis: int = -1, keepdims: bool = False) -> Tensor:
    """Stable log-sum-exp along an axis, differentiable (grad = softmax)."""
    a = as_tensor(a)
    m = np.max(a.data, axis=axis, keepdims=True)
    shifted = sub(a, Tensor(m))
    out = add(log(sum_(exp(shifted), axis=axis, keepdims=True)), Tensor(m))
    if not keepdims:
        out = reshape(out, tuple(n for i, n in enumerate(out.shape) if i != (axis % a.ndim)))
    return out


def softmax(logits, axis: int = -1) -> Tensor:
    """Softmax with max-subtraction; slices along ``axis`` sum to 1.

    Output is floored at the smallest normal float so entries stay
    strictly positive even when the exponential underflows.
    """
    logits = as_tensor(logits)
    if not -logits.ndim <= axis < logits.ndim:
        raise ValueError(f"softmax axis {axis} invalid for shape {logits.shape}")
    return clamp_min(exp(log_softmax(logits, axis=axis)), np.finfo(np.float64).tiny)


def log_softmax(logits, axis: int = -1) -> Tensor:
    logits = as_tensor(logits)
    if not -logits.ndim <= axis < logits.ndim:
        raise ValueError(f"log_softmax axis {axis} invalid for shape {logits.shape}")
    return sub(logits, logsumexp(logits, axis=axis, keepdims=True))


def log_sum_exp(values) -> float:
    """ln(sum(exp(v))) of a non-empty list of log-domain reals.

    -inf is the absorbing log-domain zero; an all-sentinel input returns
    the sentinel. Reduction runs in ascending index order.
    """
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("log_sum_exp of an empty list")
    return float(np.logaddexp.reduce(arr.ravel()))


# ---------------------------------------------------------------------------
# convolution


def conv2d(x, weight, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D convolution, NCHW layout, square stride/padding.

    x: (N, Cin, H, W); weight: (Cout, Cin, kh, kw); bias: (Cout,).
    """
    x, weight = as_tensor(x), as_tensor(weight)
    n, cin, h, w = x.shape
    cout, cin_w, kh, kw = weight.shape
    if cin != cin_w:
        raise ValueError(f"conv2d channel mismatch: input {cin}, weight {cin_w}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    hp, wp = xp.shape[2], xp.shape[3]
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1
    if oh <= 0 or ow <= 0:
        raise ValueError(f"conv2d input {h}x{w} too small for kernel {kh}x{kw}")

    # im2col in NHWC: one strided copy plus one matmul each direction
    wd = weight.data
    wmat = wd.reshape(cout, cin * kh * kw)
    xph = np.ascontiguousarray(xp.transpose(0, 2, 3, 1))
    win = np.lib.stride_tricks.sliding_window_view(xph, (kh, kw), axis=(1, 2))
    cols = win[:, ::stride, ::stride].reshape(n * oh * ow, cin * kh * kw)
    out_data = np.ascontiguousarray((cols @ wmat.T).reshape(n, oh, ow, cout).transpose(0, 3, 1, 2))
    if bias is not None:
        out_data += bias.data[None, :, None, None]

    parents = (x, weight) if bias is None else (x, weight, bias)

    def vjp(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(n * oh * ow, cout)
        gw = (gmat.T @ cols).reshape(cout, cin, kh, kw) if weight.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (gmat @ wmat).reshape(n, oh, ow, cin, kh, kw)
            gxph = np.zeros((n, hp, wp, cin))
            for i in range(kh):
                for j in range(kw):
                    gxph[:, i : i + stride * oh : stride, j : j + stride * ow : stride, :] += gcols[:, :, :, :, i, j]
            gxp = gxph.transpose(0, 3, 1, 2)
            gx = gxp[:, :, padding : padding + h, padding : padding + w] if padding else gxp
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    return _node(out_data, parents, vjp)


# ---------------------------------------------------------------------------
# backward pass and the gradient oracle


def backward(t: Tensor, grad=None) -> None:
    """Populate grads of every reachable leaf with d(t)/d(leaf).

    ``t`` must be scalar unless an explicit seed gradient is given.
    """
    if grad is None:
        if t.size != 1:
            raise ValueError("backward requires a scalar loss")
        grad = np.ones_like(t.data)
    if not t.requires_grad:
        return

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(t, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(t): np.asarray(grad, dtype=np.float64)}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._vjp is None:
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad += g
            continue
        for parent, pg in zip(node._parents, node._vjp(g)):
            if not parent.requires_grad or pg is None:
                continue
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + pg
            else:
                grads[id(parent)] = pg


def finite_difference_check(f, p: Parameter, h: float = 1e-5) -> float:
    """Max over coordinates of the central-difference gradient error.

    Error per coordinate is |analytic - numeric| / max(1, |analytic|),
    where numeric = (f(p + h e_i) - f(p - h e_i)) / 2h. ``f`` must be a
    deterministic scalar function of ``p``'s current value.
    """
    p.zero_grad()
    out = f()
    backward(out)
    analytic = p.grad.copy()

    max_err = 0.0
    flat = p.data.reshape(-1)
    aflat = analytic.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        with no_grad():
            fp = f().item()
        flat[i] = orig - h
        with no_grad():
            fm = f().item()
        flat[i] = orig
        numeric = (fp - fm) / (2.0 * h)
        err = abs(aflat[i] - numeric) / max(1.0, abs(aflat[i]))
        if err > max_err:
            max_err = err
    return max_err
