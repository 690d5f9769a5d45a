"""Reverse-mode automatic differentiation on numpy arrays.

A `Tensor` wraps an ndarray (float32 for speed, float64 for verification)
and records the operations applied to it. `backward(loss)` walks the
recorded graph in reverse execution order and accumulates gradients into
every leaf that requires them. `grad_check` compares those gradients
against central finite differences; it is the correctness oracle for the
whole engine and must be run in float64.

Only the operations the fusion network, discriminators and loss actually
need are implemented: (batched) matmul, conv2d, 2x2 maxpool, pointwise
arithmetic/activations, softmax, layer norm, resampling, layout changes
and reductions. No GPU, no mixed precision, one graph per thread.
"""

from __future__ import annotations

import math
from contextlib import contextmanager

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError, NumericalError, UsageError

_VERIFY = False


def set_verification(flag: bool) -> None:
    """Globally enable/disable NaN/Inf checks on every op output."""
    global _VERIFY
    _VERIFY = bool(flag)


@contextmanager
def verification():
    """Context manager that turns on finite-value assertions."""
    global _VERIFY
    old = _VERIFY
    _VERIFY = True
    try:
        yield
    finally:
        _VERIFY = old


class Tensor:
    """N-dimensional float array with optional gradient tracking.

    `data` is always a contiguous float32/float64 ndarray. `grad`, when
    populated by `backward`, has the same shape and dtype as `data`.
    Tensors produced by operations keep references to their parents so the
    graph can be traversed; leaf tensors have no parents.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = np.ascontiguousarray(arr)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self._op = "leaf"

    # -- basic introspection -------------------------------------------------
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
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.data.dtype.name}, op={self._op})"

    # -- operator sugar ------------------------------------------------------
    def __add__(self, other):
        return add(self, _wrap(other, self))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _wrap(other, self))

    def __rsub__(self, other):
        return sub(_wrap(other, self), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / float(other))
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_wrap(other, self), self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def permute(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return permute(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)


def _wrap(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.data.dtype))


def _node(data: np.ndarray, parents, backward_fn, op: str) -> Tensor:
    """Build an op-output tensor, recording the graph edge when needed."""
    if _VERIFY and not np.all(np.isfinite(data)):
        raise NumericalError(f"non-finite values produced by {op}")
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
        out._op = op
    return out


def _check_broadcast(a_shape, b_shape, op):
    try:
        return np.broadcast_shapes(a_shape, b_shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {tuple(a_shape)} and {tuple(b_shape)} do not broadcast") from None


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# pointwise arithmetic
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a.shape, b.shape, "add")
    return _node(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a.shape, b.shape, "sub")
    return _node(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a.shape, b.shape, "mul")
    return _node(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)), "mul")


def div(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a.shape, b.shape, "div")
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data / b.data

    def backward(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * out / b.data, b.shape)
        return ga, gb

    return _node(out, (a, b), backward, "div")


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    return _node(a.data * s, (a,), lambda g: (g * s,), "scale")


def relu(a: Tensor) -> Tensor:
    return _node(np.maximum(a.data, 0.0), (a,), lambda g: (g * (a.data > 0),), "relu")


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a: Tensor) -> Tensor:
    # tanh approximation: 0.5 x (1 + tanh(c (x + 0.044715 x^3)))
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x * x * x)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def backward(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner),)

    return _node(out, (a,), backward, "gelu")


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def absolute(a: Tensor) -> Tensor:
    return _node(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),), "abs")


def elementwise(kind: str, *operands) -> Tensor:
    """Dispatch table for the pointwise family (binary ops broadcast)."""
    table = {"add": add, "sub": sub, "mul": mul, "relu": relu,
             "gelu": gelu, "sigmoid": sigmoid, "scale": scale, "abs": absolute}
    if kind not in table:
        raise UsageError(f"unknown elementwise kind {kind!r}")
    return table[kind](*operands)


# ---------------------------------------------------------------------------
# matmul / softmax / layer norm
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul: operands must be at least 2-D, got {tuple(a.shape)} and {tuple(b.shape)}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: inner dimensions disagree, {tuple(a.shape)} @ {tuple(b.shape)}")
    _check_broadcast(a.shape[:-2], b.shape[:-2], "matmul (batch dims)")
    out = a.data @ b.data

    def backward(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return _node(out, (a, b), backward, "matmul")


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    if not -a.ndim <= axis < a.ndim:
        raise DimensionError(f"softmax: axis {axis} out of range for {tuple(a.shape)}")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        gy = g * out
        return (gy - out * gy.sum(axis=axis, keepdims=True),)

    return _node(out, (a,), backward, "softmax")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    e = x.shape[-1]
    if gamma.shape != (e,) or beta.shape != (e,):
        raise DimensionError(f"layer_norm: affine shapes {tuple(gamma.shape)}/{tuple(beta.shape)} "
                             f"do not match embedding dim {e}")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = xhat * gamma.data + beta.data

    def backward(g):
        lead = tuple(range(g.ndim - 1))
        ggamma = (g * xhat).sum(axis=lead)
        gbeta = g.sum(axis=lead)
        gxhat = g * gamma.data
        gx = inv * (gxhat - gxhat.mean(axis=-1, keepdims=True)
                    - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
        return gx, ggamma, gbeta

    return _node(out, (x, gamma, beta), backward, "layer_norm")


# ---------------------------------------------------------------------------
# convolution and pooling
# ---------------------------------------------------------------------------

def conv2d(x: Tensor, w: Tensor, bias: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation with zero padding; bias added per output channel."""
    if x.ndim != 4 or w.ndim != 4:
        raise DimensionError(f"conv2d: need 4-D input/kernel, got {tuple(x.shape)} and {tuple(w.shape)}")
    b, cin, h, wd = x.shape
    cout, kcin, kh, kw = w.shape
    if cin != kcin:
        raise DimensionError(f"conv2d: input channels {cin} != kernel channels {kcin}")
    if stride < 1 or pad < 0:
        raise UsageError("conv2d: stride must be >= 1 and pad >= 0")
    hp, wp = h + 2 * pad, wd + 2 * pad
    if kh > hp or kw > wp:
        raise DimensionError(f"conv2d: kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    if bias is not None and bias.shape != (cout,):
        raise DimensionError(f"conv2d: bias shape {tuple(bias.shape)} != ({cout},)")

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    oh, ow = win.shape[2], win.shape[3]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b, oh * ow, cin * kh * kw)
    wmat = w.data.reshape(cout, cin * kh * kw)
    out = (cols @ wmat.T).transpose(0, 2, 1).reshape(b, cout, oh, ow)
    if bias is not None:
        out = out + bias.data[:, None, None]

    def backward(g):
        go = g.transpose(0, 2, 3, 1).reshape(b, oh * ow, cout)
        gw = np.tensordot(go, cols, axes=([0, 1], [0, 1])).reshape(w.shape) if w.requires_grad else None
        gb = go.sum(axis=(0, 1)) if (bias is not None and bias.requires_grad) else None
        gx = None
        if x.requires_grad:
            gcols = (go @ wmat).reshape(b, oh, ow, cin, kh, kw).transpose(0, 3, 1, 2, 4, 5)
            gxp = np.zeros((b, cin, hp, wp), dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += gcols[:, :, :, :, i, j]
            gx = gxp[:, :, pad:pad + h, pad:pad + wd] if pad else gxp
        grads = (gx, gw) if bias is None else (gx, gw, gb)
        return grads

    parents = (x, w) if bias is None else (x, w, bias)
    return _node(out, parents, backward, "conv2d")


def maxpool2(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2; spatial extents must be even."""
    b, c, h, w = x.shape
    if h % 2 or w % 2:
        raise DimensionError(f"maxpool2: extents {h}x{w} must be even")
    h2, w2 = h // 2, w // 2
    v = x.data.reshape(b, c, h2, 2, w2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h2, w2, 4)
    idx = v.argmax(axis=-1)
    out = np.take_along_axis(v, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        gv = np.zeros_like(v)
        np.put_along_axis(gv, idx[..., None], g[..., None], axis=-1)
        gx = gv.reshape(b, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h, w)
        return (gx,)

    return _node(out, (x,), backward, "maxpool2")


# ---------------------------------------------------------------------------
# resampling
# ---------------------------------------------------------------------------

def _nearest_index(n_out: int, n_in: int) -> np.ndarray:
    return np.minimum(((np.arange(n_out) + 0.5) * n_in / n_out).astype(np.int64), n_in - 1)


def resample(x: Tensor, out_h: int, out_w: int, mode: str) -> Tensor:
    """Spatial resampling of a NCHW tensor; differentiable in all modes.

    `bilinear` follows the align-corners=false convention. `avgpool`
    requires the input extents to be divisible by the output extents.
    """
    if x.ndim != 4:
        raise DimensionError(f"resample: need 4-D input, got {tuple(x.shape)}")
    b, c, h, w = x.shape
    if out_h < 1 or out_w < 1:
        raise DimensionError("resample: output extents must be positive")

    if mode == "nearest":
        iy = _nearest_index(out_h, h)
        ix = _nearest_index(out_w, w)
        out = x.data[:, :, iy[:, None], ix[None, :]]

        def backward(g):
            gx = np.zeros_like(x.data)
            np.add.at(gx, (slice(None), slice(None), iy[:, None], ix[None, :]), g)
            return (gx,)

        return _node(out, (x,), backward, "resample_nearest")

    if mode == "bilinear":
        fy = (np.arange(out_h) + 0.5) * h / out_h - 0.5
        fx = (np.arange(out_w) + 0.5) * w / out_w - 0.5
        y0f, x0f = np.floor(fy), np.floor(fx)
        wy, wx = fy - y0f, fx - x0f
        y0 = np.clip(y0f, 0, h - 1).astype(np.int64)
        y1 = np.clip(y0f + 1, 0, h - 1).astype(np.int64)
        x0 = np.clip(x0f, 0, w - 1).astype(np.int64)
        x1 = np.clip(x0f + 1, 0, w - 1).astype(np.int64)
        w00 = ((1 - wy)[:, None] * (1 - wx)[None, :]).astype(x.data.dtype)
        w01 = ((1 - wy)[:, None] * wx[None, :]).astype(x.data.dtype)
        w10 = (wy[:, None] * (1 - wx)[None, :]).astype(x.data.dtype)
        w11 = (wy[:, None] * wx[None, :]).astype(x.data.dtype)
        d = x.data
        out = (w00 * d[:, :, y0[:, None], x0[None, :]] + w01 * d[:, :, y0[:, None], x1[None, :]]
               + w10 * d[:, :, y1[:, None], x0[None, :]] + w11 * d[:, :, y1[:, None], x1[None, :]])

        def backward(g):
            gx = np.zeros_like(x.data)
            np.add.at(gx, (slice(None), slice(None), y0[:, None], x0[None, :]), g * w00)
            np.add.at(gx, (slice(None), slice(None), y0[:, None], x1[None, :]), g * w01)
            np.add.at(gx, (slice(None), slice(None), y1[:, None], x0[None, :]), g * w10)
            np.add.at(gx, (slice(None), slice(None), y1[:, None], x1[None, :]), g * w11)
            return (gx,)

        return _node(out, (x,), backward, "resample_bilinear")

    if mode == "avgpool":
        if h % out_h or w % out_w:
            raise DimensionError(f"resample avgpool: extents {h}x{w} not divisible by {out_h}x{out_w}")
        fh, fw = h // out_h, w // out_w
        out = x.data.reshape(b, c, out_h, fh, out_w, fw).mean(axis=(3, 5))

        def backward(g):
            ge = np.broadcast_to(g[:, :, :, None, :, None] / (fh * fw), (b, c, out_h, fh, out_w, fw))
            return (ge.reshape(b, c, h, w).copy(),)

        return _node(out, (x,), backward, "resample_avgpool")

    raise UsageError(f"resample: unknown mode {mode!r}")


# ---------------------------------------------------------------------------
# layout changes and reductions
# ---------------------------------------------------------------------------

def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != x.size:
        raise DimensionError(f"reshape: cannot view {tuple(x.shape)} as {shape} (element count differs)")
    return _node(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),), "reshape")


def permute(x: Tensor, axes) -> Tensor:
    axes = tuple(int(a) for a in axes)
    if sorted(axes) != list(range(x.ndim)):
        raise DimensionError(f"permute: {axes} is not a permutation of axes of {tuple(x.shape)}")
    inv = np.argsort(axes)
    return _node(np.ascontiguousarray(x.data.transpose(axes)), (x,),
                 lambda g: (g.transpose(inv),), "permute")


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    base = list(tensors[0].shape)
    for t in tensors[1:]:
        other = list(t.shape)
        if len(other) != len(base) or any(o != b for i, (o, b) in enumerate(zip(other, base)) if i != axis % len(base)):
            raise DimensionError(f"concat: incompatible shapes {tuple(tensors[0].shape)} vs {tuple(t.shape)}")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return _node(out, tuple(tensors), backward, "concat")


def patchify(x: Tensor, p: int) -> Tensor:
    """NCHW -> (N, tokens, C*p*p) with non-overlapping p x p patches."""
    b, c, h, w = x.shape
    if h % p or w % p:
        raise DimensionError(f"patchify: extents {h}x{w} not divisible by patch size {p}")
    hp, wp = h // p, w // p
    t = reshape(x, (b, c, hp, p, wp, p))
    t = permute(t, (0, 2, 4, 1, 3, 5))
    return reshape(t, (b, hp * wp, c * p * p))


def unpatchify(tokens: Tensor, c: int, h: int, w: int, p: int) -> Tensor:
    """Inverse of `patchify`: (N, tokens, C*p*p) -> NCHW."""
    b, n, d = tokens.shape
    hp, wp = h // p, w // p
    if n != hp * wp or d != c * p * p:
        raise DimensionError(f"unpatchify: token grid {n}x{d} does not match {c}x{h}x{w} with p={p}")
    t = reshape(tokens, (b, hp, wp, c, p, p))
    t = permute(t, (0, 3, 1, 4, 2, 5))
    return reshape(t, (b, c, h, w))


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = x.data.sum(axis=axis, keepdims=keepdims)
    out = np.asarray(out)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g.reshape((1,) * x.ndim), x.shape),)
        axes = axis if isinstance(axis, tuple) else (axis,)
        if not keepdims:
            shape = list(x.shape)
            for a in sorted(a % x.ndim for a in axes):
                shape[a] = 1
            g = g.reshape(shape)
        return (np.broadcast_to(g, x.shape),)

    return _node(out, (x,), backward, "sum")


def tmean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = x.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([x.shape[a] for a in axes]))
    return scale(tsum(x, axis, keepdims), 1.0 / n)


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------

def _toposort(root: Tensor):
    order, visited = [], set()
    stack = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))
    return order  # parents precede children


def backward(loss: Tensor) -> None:
    """Populate `.grad` on every requires-grad leaf reachable from `loss`.

    Repeated calls without `zero_grad` accumulate. Only scalar losses are
    accepted.
    """
    if loss.size != 1:
        raise UsageError(f"backward: loss must be scalar, got shape {tuple(loss.shape)}")
    if not loss.requires_grad:
        raise UsageError("backward: loss does not require grad (no recorded graph)")
    order = _toposort(loss)
    flows = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = flows.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad += g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in flows:
                flows[key] = flows[key] + pg
            else:
                flows[key] = pg


def dump_graph(root: Tensor) -> str:
    """Plain-text edge list of the recorded graph, for debugging."""
    ids, lines = {}, []

    def name(t):
        if id(t) not in ids:
            ids[id(t)] = f"n{len(ids)}"
        return ids[id(t)]

    for node in _toposort(root):
        if node._parents:
            lines.append(f"{name(node)} {node._op}{tuple(node.shape)} <- "
                         + " ".join(name(p) for p in node._parents))
        else:
            lines.append(f"{name(node)} leaf{tuple(node.shape)}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# verification: finite differences
# ---------------------------------------------------------------------------

def grad_check(builder, inputs, eps: float = 1e-5, max_coords: int = 200, seed: int = 0) -> float:
    """Compare reverse-mode gradients with central finite differences.

    `builder(*inputs)` must rebuild the graph from the inputs' current
    data and return a scalar loss. All inputs must be float64. When the
    total coordinate count exceeds `max_coords`, a fixed-seed random
    subset of exactly `max_coords` coordinates is checked. Returns the
    largest relative error |analytic - numeric| / max(1, |a|, |n|).
    """
    inputs = list(inputs)
    for t in inputs:
        if t.data.dtype != np.float64:
            raise UsageError("grad_check requires float64 inputs")
        t.requires_grad = True
        t.grad = None
    loss = builder(*inputs)
    if loss.size != 1:
        raise UsageError("grad_check: builder must return a scalar")
    backward(loss)

    sizes = [t.size for t in inputs]
    total = int(sum(sizes))
    if total > max_coords:
        rng = np.random.default_rng(seed)
        flat_ids = np.sort(rng.choice(total, size=max_coords, replace=False))
    else:
        flat_ids = np.arange(total)

    bounds = np.cumsum([0] + sizes)
    max_rel = 0.0
    for fid in flat_ids:
        ti = int(np.searchsorted(bounds, fid, side="right") - 1)
        ci = int(fid - bounds[ti])
        t = inputs[ti]
        flat = t.data.reshape(-1)
        orig = flat[ci]
        flat[ci] = orig + eps
        fp = builder(*inputs).item()
        flat[ci] = orig - eps
        fm = builder(*inputs).item()
        flat[ci] = orig
        numeric = (fp - fm) / (2.0 * eps)
        analytic = 0.0 if t.grad is None else float(t.grad.reshape(-1)[ci])
        rel = abs(analytic - numeric) / max(1.0, abs(analytic), abs(numeric))
        max_rel = max(max_rel, rel)
    return max_rel


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

class AdamState:
    """First/second moment buffers plus the shared step counter."""

    def __init__(self, params):
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.step = 0


def adam_step(params, grads, state: AdamState, lr: float = 1e-4,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One bias-corrected Adam update, in place on `params[i].data`."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise DimensionError("adam_step: params/grads/state lengths disagree")
    state.step += 1
    bc1 = 1.0 - beta1 ** state.step
    bc2 = 1.0 - beta2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            continue
        if g.shape != p.data.shape:
            raise DimensionError(f"adam_step: grad shape {g.shape} != param shape {p.data.shape}")
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


class Adam:
    """Convenience wrapper reading gradients from the tensors themselves."""

    def __init__(self, params, lr: float = 1e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.state = AdamState(self.params)

    def step(self) -> None:
        grads = [p.grad for p in self.params]
        adam_step(self.params, grads, self.state, self.lr, self.beta1, self.beta2, self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
