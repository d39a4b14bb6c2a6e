"""Forward operations with their adjoint rules.

Every op accepts ``Tensor`` or array-like inputs, computes the forward result
with numpy, and, when a graph is active and an input requires gradients,
records the adjoint rule on the tape. Broadcasting follows numpy semantics;
adjoints are summed back over broadcast axes.
"""

from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np
from scipy.special import erf

from ..errors import NumcoreError, ShapeError
from .tensor import Node, Tensor, as_tensor, _active_graph

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

ACTIVATIONS = ("relu", "gelu", "elu")
INIT_SCHEMES = ("uniform_fan", "zeros", "ones")


def _record(inputs: Sequence[Tensor], out_data: np.ndarray, backward_fn, name: str) -> Tensor:
    graph = _active_graph()
    requires = any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=requires and graph is not None)
    if graph is not None and requires:
        graph.record(Node(inputs, out, backward_fn, name))
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def param_init(shape: Sequence[int], scheme: str, seed: int = 0) -> Tensor:
    """Create a trainable parameter tensor.

    ``uniform_fan`` draws from U(-1/sqrt(fan_in), 1/sqrt(fan_in)) where
    fan_in is the product of all but the last extent (the input width of the
    linear map the tensor implements). ``zeros``/``ones`` are constant fills.
    Deterministic for a fixed (shape, scheme, seed).
    """
    shape = tuple(int(s) for s in shape)
    if len(shape) == 0:
        raise ShapeError("param_init needs a non-empty shape")
    if any(s <= 0 for s in shape):
        raise ShapeError(f"param_init extents must be positive, got {shape}")
    if scheme == "zeros":
        data = np.zeros(shape)
    elif scheme == "ones":
        data = np.ones(shape)
    elif scheme == "uniform_fan":
        fan_in = shape[0] if len(shape) == 1 else int(np.prod(shape[:-1]))
        bound = 1.0 / math.sqrt(fan_in)
        rng = np.random.default_rng(seed)
        data = rng.uniform(-bound, bound, size=shape)
    else:
        raise NumcoreError(f"unknown init scheme {scheme!r}; expected one of {INIT_SCHEMES}")
    return Tensor(data, requires_grad=True)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _record((a, b), out, bw, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _record((a, b), out, bw, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _record((a, b), out, bw, "mul")


def neg(a) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        return (-g,)

    return _record((a,), -a.data, bw, "neg")


def matmul(a, b) -> Tensor:
    """Matrix product with numpy's stacked-matmul broadcasting.

    Adjoints: grad_a = g @ b^T, grad_b = a^T @ g (transposes on the last two
    axes, summed back over broadcast leading axes).
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner extents disagree: {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise ShapeError(f"matmul broadcast failure: {a.shape} @ {b.shape}") from exc

    def bw(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _record((a, b), out, bw, "matmul")


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out = a.data.reshape(shape)

    def bw(g):
        return (g.reshape(a.shape),)

    return _record((a,), out, bw, "reshape")


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    out = a.data.transpose(axes)

    def bw(g):
        return (g.transpose(inverse),)

    return _record((a,), out, bw, "transpose")


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _record(tuple(ts), out, bw, "concat")


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _record((a,), out, bw, "sum")


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size if axis is None else a.shape[axis]

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, a.shape).copy(),)

    return _record((a,), out, bw, "mean")


def softmax(a, axis: int = -1) -> Tensor:
    """Numerically stable softmax; tolerates -inf entries (they get weight 0)."""
    a = as_tensor(a)
    shifted = a.data - np.max(a.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - inner),)

    return _record((a,), out, bw, "softmax")


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Zero mean / unit variance along the last axis, then affine gain/bias."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.shape[-1]
    if d < 1:
        raise ShapeError("layer_norm needs a non-empty feature axis")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = xhat * gain.data + bias.data

    def bw(g):
        gxhat = g * gain.data
        gx = inv * (gxhat
                    - gxhat.mean(axis=-1, keepdims=True)
                    - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - gain.data.ndim))
        ggain = (g * xhat).sum(axis=lead) if lead else g * xhat
        gbias = g.sum(axis=lead) if lead else g.copy()
        return gx, _unbroadcast(ggain, gain.shape), _unbroadcast(gbias, bias.shape)

    return _record((x, gain, bias), out, bw, "layer_norm")


def relu(a) -> Tensor:
    a = as_tensor(a)
    out = np.maximum(a.data, 0.0)

    def bw(g):
        return (g * (a.data > 0.0),)

    return _record((a,), out, bw, "relu")


def gelu(a) -> Tensor:
    """Exact Gaussian-CDF form: x * Phi(x)."""
    a = as_tensor(a)
    phi_cdf = 0.5 * (1.0 + erf(a.data * _INV_SQRT2))
    out = a.data * phi_cdf

    def bw(g):
        pdf = np.exp(-0.5 * a.data * a.data) * _INV_SQRT_2PI
        return (g * (phi_cdf + a.data * pdf),)

    return _record((a,), out, bw, "gelu")


def elu(a, alpha: float = 1.0) -> Tensor:
    a = as_tensor(a)
    neg_part = alpha * np.expm1(np.minimum(a.data, 0.0))
    out = np.where(a.data > 0.0, a.data, neg_part)

    def bw(g):
        return (g * np.where(a.data > 0.0, 1.0, neg_part + alpha),)

    return _record((a,), out, bw, "elu")


def activation(a, kind: str) -> Tensor:
    if kind == "relu":
        return relu(a)
    if kind == "gelu":
        return gelu(a)
    if kind == "elu":
        return elu(a)
    raise NumcoreError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = np.empty_like(a.data)
    pos = a.data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
    ez = np.exp(a.data[~pos])
    out[~pos] = ez / (1.0 + ez)

    def bw(g):
        return (g * out * (1.0 - out),)

    return _record((a,), out, bw, "sigmoid")


def log(a) -> Tensor:
    a = as_tensor(a)
    out = np.log(a.data)

    def bw(g):
        return (g / a.data,)

    return _record((a,), out, bw, "log")


def clamp(a, lo: float, hi: float) -> Tensor:
    """Clip to [lo, hi]; gradient passes only where the input was not clipped."""
    a = as_tensor(a)
    out = np.clip(a.data, lo, hi)

    def bw(g):
        return (g * ((a.data >= lo) & (a.data <= hi)),)

    return _record((a,), out, bw, "clamp")


def masked_fill(a, mask, value: float) -> Tensor:
    """Set entries where ``mask`` is True to ``value``; their gradient is zero."""
    a = as_tensor(a)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), a.shape)
    out = np.where(mask, value, a.data)

    def bw(g):
        return (np.where(mask, 0.0, g),)

    return _record((a,), out, bw, "masked_fill")


def dropout(x, rate: float, training: bool = True,
            rng: Optional[np.random.Generator] = None, seed: Optional[int] = None) -> Tensor:
    """Inverted dropout: zero with probability ``rate``, scale survivors by
    1/(1-rate). Identity at inference or rate 0."""
    x = as_tensor(x)
    if not 0.0 <= rate < 1.0:
        raise NumcoreError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        def bw_id(g):
            return (g,)

        return _record((x,), x.data.copy(), bw_id, "dropout")
    if rng is None:
        rng = np.random.default_rng(seed)
    keep = rng.random(x.shape) >= rate
    scale = 1.0 / (1.0 - rate)
    out = np.where(keep, x.data * scale, 0.0)

    def bw(g):
        return (np.where(keep, g * scale, 0.0),)

    return _record((x,), out, bw, "dropout")
