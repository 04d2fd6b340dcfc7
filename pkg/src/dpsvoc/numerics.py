"""A small tape-based reverse-mode autodiff engine for 1-D signals.

Tensors hold float64 arrays, normally shaped ``(channels, time)``. Every
operation that touches a tensor with ``requires_grad`` records a closure that
maps the output gradient to input gradients; :func:`backward` walks the graph
once in reverse topological order and then releases it.
"""
import math
from collections import OrderedDict
from contextlib import contextmanager

import numpy as np

from . import kernels

__all__ = [
    "ShapeError",
    "NumericError",
    "GraphError",
    "Tensor",
    "ParamStore",
    "no_grad",
    "backward",
    "conv1d",
    "conv_transpose1d",
    "gated_activation",
    "tanh",
    "sigmoid",
    "leaky_relu",
    "concat",
    "repeat_time",
    "clip",
    "square",
    "log",
    "sqrt",
    "abs_",
    "sum_",
    "mean",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class NumericError(FloatingPointError):
    """A NaN or infinity reached an operation that refuses it."""


class GraphError(RuntimeError):
    """The recorded graph was already consumed by a backward pass."""


_CONSUMED = object()
_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording (inference)."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # arithmetic -----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __truediv__(self, scalar):
        return mul(self, 1.0 / float(scalar))

    def __getitem__(self, idx):
        return take(self, idx)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(data, parents, backward_fn):
    """Wrap ``data`` as the output of an op; record the closure if needed."""
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape

    def bw(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _record(a.data + b.data, (a, b), bw)


def neg(a):
    return _record(-a.data, (a,), lambda g: (-g,))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data

    def bw(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _record(ad * bd, (a, b), bw)


def tanh(x):
    y = np.tanh(x.data)
    return _record(y, (x,), lambda g: (g * (1.0 - y * y),))


def _sigmoid(v):
    return 0.5 * (1.0 + np.tanh(0.5 * v))


def sigmoid(x):
    y = _sigmoid(x.data)
    return _record(y, (x,), lambda g: (g * y * (1.0 - y),))


def leaky_relu(x, slope=0.2):
    pos = x.data > 0
    y = np.where(pos, x.data, slope * x.data)
    return _record(y, (x,), lambda g: (np.where(pos, g, slope * g),))


def square(x):
    xd = x.data
    return _record(xd * xd, (x,), lambda g: (2.0 * g * xd,))


def abs_(x):
    xd = x.data
    return _record(np.abs(xd), (x,), lambda g: (g * np.sign(xd),))


def sqrt(x):
    y = np.sqrt(x.data)

    def bw(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            return (np.where(y > 0, 0.5 * g / np.where(y > 0, y, 1.0), 0.0),)

    return _record(y, (x,), bw)


def log(x, floor=0.0):
    """Natural log of ``max(x, floor)``; zero gradient where the floor is active."""
    xd = x.data
    active = xd > floor
    y = np.log(np.where(active, xd, floor))
    return _record(y, (x,), lambda g: (np.where(active, g / np.where(active, xd, 1.0), 0.0),))


def clip(x, lo, hi):
    xd = x.data
    inside = (xd >= lo) & (xd <= hi)
    return _record(np.clip(xd, lo, hi), (x,), lambda g: (np.where(inside, g, 0.0),))


def gated_activation(x, cond):
    """``tanh(x_f + c_f) * sigmoid(x_g + c_g)`` over the two channel halves."""
    if x.shape != cond.shape:
        raise ShapeError(f"gate input {x.shape} and condition {cond.shape} differ")
    channels = x.shape[0]
    if channels % 2:
        raise ShapeError(f"gated activation needs an even channel count, got {channels}")
    half = channels // 2
    z = x.data + cond.data
    a = np.tanh(z[:half])
    s = _sigmoid(z[half:])

    def bw(g):
        gz = np.empty_like(z)
        gz[:half] = g * s * (1.0 - a * a)
        gz[half:] = g * a * s * (1.0 - s)
        return gz, gz

    return _record(a * s, (x, cond), bw)


# ---------------------------------------------------------------------------
# reductions and shape ops
# ---------------------------------------------------------------------------


def sum_(x):
    shape = x.shape
    return _record(np.array(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, shape).copy(),))


def mean(x):
    n = x.data.size
    shape = x.shape
    return _record(np.array(x.data.mean()), (x,), lambda g: (np.full(shape, float(g) / n),))


def take(x, idx):
    shape = x.shape

    def bw(g):
        out = np.zeros(shape)
        out[idx] += g
        return (out,)

    return _record(x.data[idx], (x,), bw)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(tensors))
        )

    return _record(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw)


def repeat_time(x, factor):
    """Nearest-neighbour upsampling along time (each sample repeated ``factor`` times)."""
    channels, length = x.shape

    def bw(g):
        return (g.reshape(channels, length, factor).sum(axis=2),)

    return _record(np.repeat(x.data, factor, axis=1), (x,), bw)


# ---------------------------------------------------------------------------
# convolutions
# ---------------------------------------------------------------------------


def _check_finite(x, what):
    if not np.isfinite(x).all():
        raise NumericError(f"non-finite values in {what}")


def conv1d(x, weight, bias=None, dilation=1, padding="same"):
    """Dilated 1-D convolution (cross-correlation) of ``x`` (C_in, T).

    ``weight`` is (C_out, C_in, K). ``padding="same"`` pads ``dilation*(K-1)``
    zeros split evenly (extra sample on the right), which preserves length.
    An int pads both sides; a pair gives (left, right).
    """
    if x.data.ndim != 2 or weight.data.ndim != 3:
        raise ShapeError("conv1d expects x (C, T) and weight (C_out, C_in, K)")
    c_out, c_in, k_size = weight.shape
    if x.shape[0] != c_in:
        raise ShapeError(f"input has {x.shape[0]} channels, weight expects {c_in}")
    if dilation < 1 or k_size < 1:
        raise ValueError("dilation and kernel length must be >= 1")
    _check_finite(x.data, "conv1d input")
    if padding == "same":
        total = dilation * (k_size - 1)
        left, right = total // 2, total - total // 2
    elif isinstance(padding, (tuple, list)):
        left, right = padding
    else:
        left = right = int(padding)
    length = x.shape[1]
    out_len = length + left + right - dilation * (k_size - 1)
    if out_len < 1:
        raise ShapeError("input too short for this kernel and padding")
    xp = np.pad(x.data, ((0, 0), (left, right))) if (left or right) else x.data
    w = weight.data
    y = kernels.conv1d_forward(xp, w, dilation, out_len)
    if bias is not None:
        y += bias.data.reshape(c_out, 1)

    def bw(g):
        gxp, gw = kernels.conv1d_backward(xp, w, g, dilation)
        gx = gxp[:, left : left + length]
        grads = (gx, gw)
        if bias is not None:
            grads += (g.sum(axis=1).reshape(bias.shape),)
        return grads

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _record(y, parents, bw)


def conv_transpose1d(x, weight, bias=None, stride=1):
    """Transposed convolution upsampling ``x`` (C_in, L) to exactly (C_out, L*stride).

    ``weight`` is (C_in, C_out, K) with K >= stride; the full output of length
    (L-1)*stride + K is cropped by (K-stride)//2 on the left.
    """
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if x.data.ndim != 2 or weight.data.ndim != 3:
        raise ShapeError("conv_transpose1d expects x (C, L) and weight (C_in, C_out, K)")
    c_in, c_out, k_size = weight.shape
    if x.shape[0] != c_in:
        raise ShapeError(f"input has {x.shape[0]} channels, weight expects {c_in}")
    if k_size < stride:
        raise ShapeError(f"kernel length {k_size} shorter than stride {stride}")
    _check_finite(x.data, "conv_transpose1d input")
    length = x.shape[1]
    crop = (k_size - stride) // 2
    xd, w = x.data, weight.data
    full = kernels.conv_transpose1d_forward(xd, w, stride)
    y = full[:, crop : crop + length * stride].copy()
    if bias is not None:
        y += bias.data.reshape(c_out, 1)
    full_len = full.shape[1]

    def bw(g):
        g_full = np.zeros((c_out, full_len))
        g_full[:, crop : crop + length * stride] = g
        gx, gw = kernels.conv_transpose1d_backward(xd, w, g_full, stride)
        grads = (gx, gw)
        if bias is not None:
            grads += (g.sum(axis=1).reshape(bias.shape),)
        return grads

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _record(y, parents, bw)


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------


def _topological(root):
    order, seen = [], set()
    stack = [(root, False)]
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss, params=None):
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every reachable leaf.

    The graph is released afterwards; calling again on the same loss raises
    :class:`GraphError`. Parameters in ``params`` that the loss does not reach
    get a zero gradient. Returns ``params``.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._backward is _CONSUMED:
        raise GraphError("graph already consumed by a previous backward pass")
    grads = {id(loss): np.ones_like(loss.data)}
    if loss.requires_grad:
        for node in reversed(_topological(loss)):
            g = grads.pop(id(node), None)
            fn = node._backward
            if fn is None or fn is _CONSUMED:
                if g is not None and node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            if g is not None:
                for parent, pg in zip(node._parents, fn(g)):
                    if pg is None or not parent.requires_grad:
                        continue
                    key = id(parent)
                    grads[key] = pg if key not in grads else grads[key] + pg
            node._backward = _CONSUMED
            node._parents = ()
    loss._backward = _CONSUMED
    if params is not None:
        for p in params.values():
            if p.grad is None:
                p.grad = np.zeros_like(p.data)
    return params


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------


class ParamStore:
    """Ordered name -> trainable :class:`Tensor` map."""

    def __init__(self):
        self._params = OrderedDict()

    def add(self, name, data):
        if name in self._params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)
        self._params[name] = t
        return t

    def add_uniform(self, name, shape, fan_in, rng):
        bound = math.sqrt(1.0 / fan_in)
        return self.add(name, rng.uniform(-bound, bound, size=shape))

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def keys(self):
        return self._params.keys()

    def values(self):
        return self._params.values()

    def items(self):
        return self._params.items()

    def zero_grad(self):
        for p in self._params.values():
            p.grad = np.zeros_like(p.data)

    def num_params(self):
        return int(sum(p.data.size for p in self._params.values()))

    def state(self):
        return OrderedDict((k, p.data) for k, p in self._params.items())

    def load_state(self, state):
        missing = set(self._params) - set(state)
        if missing:
            raise KeyError(f"missing parameters: {sorted(missing)}")
        for k, p in self._params.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise ShapeError(f"{k}: expected {p.data.shape}, got {arr.shape}")
            p.data = arr.copy()
