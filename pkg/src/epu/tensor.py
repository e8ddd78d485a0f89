"""Dense float tensors with reverse-mode automatic differentiation.

Implements exactly the layer set the perceptual ensembles need: conv2d,
maxpool2d, batchnorm2d, dense, elementwise activations, reductions, and the
arithmetic glue for additive heads and cross-entropy losses. The operation
graph is recorded on the tensors themselves (parent links plus a backward
closure per node) and replayed in reverse topological order by `backward`.

Gradients accumulate: each backward call adds its contribution to `.grad` of
every requires-grad tensor in the ancestry, so two calls double the grads
unless they are zeroed in between.
"""
from __future__ import annotations

import math
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, DimensionError

Array = np.ndarray

_FLOATS = (np.float32, np.float64)


class _State:
    grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording within the block (evaluation paths)."""
    prev = _State.grad_enabled
    _State.grad_enabled = False
    try:
        yield
    finally:
        _State.grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_grad_fn")

    def __init__(self, data, requires_grad=False, dtype=None, _parents=(), _grad_fn=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.type not in _FLOATS:
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._grad_fn = _grad_fn

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def relu(self):
        return relu(self)

    def tanh(self):
        return tanh(self)

    def sigmoid(self):
        return sigmoid(self)

    def log(self):
        return log(self)

    def clip(self, lo, hi):
        return clip(self, lo, hi)

    def sum(self):
        return tsum(self)

    def mean(self):
        return tmean(self)

    def reshape(self, *shape):
        return reshape(self, shape)


@dataclass(eq=False)
class Param:
    """A named leaf tensor tracked by the optimizer."""

    name: str
    tensor: Tensor

    @property
    def data(self) -> Array:
        return self.tensor.data

    @property
    def grad(self):
        return self.tensor.grad


def _astensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if isinstance(x, Param):
        return x.tensor
    if isinstance(x, (int, float)):
        # scalar constants stay f32 so they never widen an f32 graph
        return Tensor(np.asarray(x, dtype=np.float32))
    return Tensor(x)


def _node(data: Array, parents, grad_fn) -> Tensor:
    if _State.grad_enabled and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=tuple(parents), _grad_fn=grad_fn)
    return Tensor(data)


def _push(fresh: dict, t: Tensor, g: Array) -> None:
    """Add a per-call gradient contribution for tensor `t`."""
    if not t.requires_grad:
        return
    key = id(t)
    if key in fresh:
        fresh[key] = fresh[key] + g
    else:
        fresh[key] = g


def _unbroadcast(g: Array, shape) -> Array:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def backward(loss: Tensor) -> None:
    """Reverse-mode sweep from a scalar loss.

    Accumulates into `.grad` of every requires-grad tensor reachable from
    `loss`. Propagation uses per-call fresh gradients so repeated calls add
    rather than compound.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    topo: list[Tensor] = []
    seen = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
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
            if id(p) not in seen:
                stack.append((p, False))

    fresh: dict[int, Array] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        g = fresh.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad:
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad += g
        if node._grad_fn is not None:
            node._grad_fn(g, fresh)


# ---------------------------------------------------------------------------
# elementwise and linear ops


def add(a, b) -> Tensor:
    a, b = _astensor(a), _astensor(b)
    out = a.data + b.data

    def grad_fn(up, fresh):
        _push(fresh, a, _unbroadcast(up, a.data.shape))
        _push(fresh, b, _unbroadcast(up, b.data.shape))

    return _node(out, (a, b), grad_fn)


def sub(a, b) -> Tensor:
    a, b = _astensor(a), _astensor(b)
    out = a.data - b.data

    def grad_fn(up, fresh):
        _push(fresh, a, _unbroadcast(up, a.data.shape))
        _push(fresh, b, _unbroadcast(-up, b.data.shape))

    return _node(out, (a, b), grad_fn)


def neg(x) -> Tensor:
    x = _astensor(x)

    def grad_fn(up, fresh):
        _push(fresh, x, -up)

    return _node(-x.data, (x,), grad_fn)


def mul(a, b) -> Tensor:
    a, b = _astensor(a), _astensor(b)
    out = a.data * b.data

    def grad_fn(up, fresh):
        _push(fresh, a, _unbroadcast(up * b.data, a.data.shape))
        _push(fresh, b, _unbroadcast(up * a.data, b.data.shape))

    return _node(out, (a, b), grad_fn)


def matmul(a, b) -> Tensor:
    a, b = _astensor(a), _astensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError("matmul expects 2-D operands")
    if a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(f"matmul inner dims differ: {a.data.shape} vs {b.data.shape}")
    out = a.data @ b.data

    def grad_fn(up, fresh):
        _push(fresh, a, up @ b.data.T)
        _push(fresh, b, a.data.T @ up)

    return _node(out, (a, b), grad_fn)


def dense(x, weight, bias) -> Tensor:
    """Affine map rows @ weight + bias (bias broadcast over rows)."""
    return add(matmul(x, weight), bias)


def log(x) -> Tensor:
    x = _astensor(x)
    out = np.log(x.data)

    def grad_fn(up, fresh):
        _push(fresh, x, up / x.data)

    return _node(out, (x,), grad_fn)


def clip(x, lo: float, hi: float) -> Tensor:
    if lo >= hi:
        raise ContractError(f"clip bounds inverted: [{lo}, {hi}]")
    x = _astensor(x)
    out = np.clip(x.data, lo, hi)
    passthrough = (x.data >= lo) & (x.data <= hi)

    def grad_fn(up, fresh):
        _push(fresh, x, up * passthrough)

    return _node(out, (x,), grad_fn)


def relu(x) -> Tensor:
    x = _astensor(x)
    out = np.maximum(x.data, 0)
    mask = out > 0

    def grad_fn(up, fresh):
        _push(fresh, x, up * mask)

    return _node(out, (x,), grad_fn)


def tanh(x) -> Tensor:
    x = _astensor(x)
    out = np.tanh(x.data)

    def grad_fn(up, fresh):
        _push(fresh, x, up * (1.0 - out * out))

    return _node(out, (x,), grad_fn)


def sigmoid(x) -> Tensor:
    x = _astensor(x)
    out = np.empty_like(x.data)
    pos = x.data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    ex = np.exp(x.data[~pos])
    out[~pos] = ex / (1.0 + ex)

    def grad_fn(up, fresh):
        _push(fresh, x, up * out * (1.0 - out))

    return _node(out, (x,), grad_fn)


def softmax(x, axis: int = -1) -> Tensor:
    x = _astensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def grad_fn(up, fresh):
        dot = (up * out).sum(axis=axis, keepdims=True)
        _push(fresh, x, out * (up - dot))

    return _node(out, (x,), grad_fn)


def tsum(x) -> Tensor:
    x = _astensor(x)
    out = np.asarray(x.data.sum(), dtype=x.data.dtype)

    def grad_fn(up, fresh):
        _push(fresh, x, np.broadcast_to(up, x.data.shape))

    return _node(out, (x,), grad_fn)


def tmean(x) -> Tensor:
    x = _astensor(x)
    out = np.asarray(x.data.mean(), dtype=x.data.dtype)
    n = x.data.size

    def grad_fn(up, fresh):
        _push(fresh, x, np.broadcast_to(up / n, x.data.shape))

    return _node(out, (x,), grad_fn)


def reshape(x, shape) -> Tensor:
    x = _astensor(x)
    out = x.data.reshape(shape)

    def grad_fn(up, fresh):
        _push(fresh, x, up.reshape(x.data.shape))

    return _node(out, (x,), grad_fn)


def flatten_batch(x) -> Tensor:
    """Collapse all but the leading axis."""
    x = _astensor(x)
    return reshape(x, (x.data.shape[0], -1))


# ---------------------------------------------------------------------------
# structured layers


def conv2d(x, kernels, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation over NCHW input, no bias.

    kernels has shape (out_channels, in_channels, k, k); zero padding.
    """
    x, kt = _astensor(x), _astensor(kernels)
    if x.data.ndim != 4:
        raise DimensionError(f"conv2d expects NCHW input, got shape {x.data.shape}")
    if kt.data.ndim != 4:
        raise DimensionError(f"conv2d expects OIKK kernels, got shape {kt.data.shape}")
    if stride < 1:
        raise ContractError(f"conv2d stride must be >= 1, got {stride}")
    if padding < 0:
        raise ContractError(f"conv2d padding must be >= 0, got {padding}")
    batch, cin, h, w = x.data.shape
    cout, kin, kh, kw = kt.data.shape
    if kin != cin:
        raise DimensionError(f"conv2d channel mismatch: input {cin}, kernels {kin}")
    hp, wp = h + 2 * padding, w + 2 * padding
    if kh > hp or kw > wp:
        raise DimensionError(f"kernel {kh}x{kw} exceeds padded input {hp}x{wp}")

    if padding:
        xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        xp = x.data
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    if stride > 1:
        windows = windows[:, :, ::stride, ::stride]
    ho, wo = windows.shape[2], windows.shape[3]
    out = np.tensordot(windows, kt.data, axes=([1, 4, 5], [1, 2, 3]))
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))

    def grad_fn(up, fresh):
        if kt.requires_grad:
            gk = np.tensordot(up, windows, axes=([0, 2, 3], [0, 2, 3]))
            _push(fresh, kt, gk)
        if x.requires_grad:
            gcols = np.tensordot(up, kt.data, axes=([1], [0]))  # (B, Ho, Wo, C, kh, kw)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                re = i + (ho - 1) * stride + 1
                for j in range(kw):
                    ce = j + (wo - 1) * stride + 1
                    gxp[:, :, i:re:stride, j:ce:stride] += gcols[..., i, j].transpose(0, 3, 1, 2)
            if padding:
                gxp = gxp[:, :, padding : padding + h, padding : padding + w]
            _push(fresh, x, gxp)

    return _node(out, (x, kt), grad_fn)


def maxpool2d(x, window: int) -> Tensor:
    """Square max pooling; ragged edges padded with -inf (output ceil(H/w)).

    Within-window ties route the gradient to the first maximum in row-major
    order.
    """
    x = _astensor(x)
    if x.data.ndim != 4:
        raise DimensionError(f"maxpool2d expects NCHW input, got shape {x.data.shape}")
    if window < 1:
        raise ContractError(f"maxpool2d window must be >= 1, got {window}")
    batch, ch, h, w = x.data.shape
    ho, wo = -(-h // window), -(-w // window)
    ph, pw = ho * window - h, wo * window - w
    if ph or pw:
        xp = np.pad(x.data, ((0, 0), (0, 0), (0, ph), (0, pw)), constant_values=-np.inf)
    else:
        xp = x.data
    tiles = xp.reshape(batch, ch, ho, window, wo, window)
    flat = np.ascontiguousarray(tiles.transpose(0, 1, 2, 4, 3, 5)).reshape(
        batch, ch, ho, wo, window * window
    )
    idx = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]

    def grad_fn(up, fresh):
        g = np.zeros((batch, ch, ho, wo, window * window), dtype=up.dtype)
        np.put_along_axis(g, idx[..., None], up[..., None], axis=-1)
        g = g.reshape(batch, ch, ho, wo, window, window).transpose(0, 1, 2, 4, 3, 5)
        g = g.reshape(batch, ch, ho * window, wo * window)
        _push(fresh, x, np.ascontiguousarray(g[:, :, :h, :w]))

    return _node(out, (x,), grad_fn)


def batchnorm2d(
    x,
    gamma,
    beta,
    running_mean: Array,
    running_var: Array,
    training: bool,
    momentum: float = 0.9,
    eps: float = 1e-5,
) -> Tensor:
    """Channel-wise batch normalization for NCHW input.

    Training mode uses biased batch statistics and updates the running
    buffers in place: new = momentum*old + (1-momentum)*batch. Evaluation
    mode normalizes with the running buffers.
    """
    x, gt, bt = _astensor(x), _astensor(gamma), _astensor(beta)
    if x.data.ndim != 4:
        raise DimensionError(f"batchnorm2d expects NCHW input, got shape {x.data.shape}")
    ch = x.data.shape[1]
    if gt.data.shape != (ch,) or bt.data.shape != (ch,):
        raise DimensionError(
            f"batchnorm2d scale/shift must have shape ({ch},), got {gt.data.shape} and {bt.data.shape}"
        )
    if running_mean.shape != (ch,) or running_var.shape != (ch,):
        raise DimensionError(f"batchnorm2d running buffers must have shape ({ch},)")
    axes = (0, 2, 3)
    bc = (1, ch, 1, 1)

    if training:
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        xc = x.data - mean.reshape(bc)
        ivstd = 1.0 / np.sqrt(var + eps)
        xhat = xc * ivstd.reshape(bc)
        running_mean[:] = momentum * running_mean + (1.0 - momentum) * mean
        running_var[:] = momentum * running_var + (1.0 - momentum) * var
        m = x.data.shape[0] * x.data.shape[2] * x.data.shape[3]

        def grad_fn(up, fresh):
            if gt.requires_grad:
                _push(fresh, gt, (up * xhat).sum(axis=axes))
            if bt.requires_grad:
                _push(fresh, bt, up.sum(axis=axes))
            if x.requires_grad:
                dxhat = up * gt.data.reshape(bc)
                dvar = (dxhat * xc).sum(axis=axes) * -0.5 * ivstd**3
                dmean = -(dxhat.sum(axis=axes)) * ivstd + dvar * (-2.0 / m) * xc.sum(axis=axes)
                dx = (
                    dxhat * ivstd.reshape(bc)
                    + (2.0 / m) * dvar.reshape(bc) * xc
                    + dmean.reshape(bc) / m
                )
                _push(fresh, x, dx)

    else:
        ivstd = 1.0 / np.sqrt(running_var + eps)
        xhat = (x.data - running_mean.reshape(bc)) * ivstd.reshape(bc)

        def grad_fn(up, fresh):
            if gt.requires_grad:
                _push(fresh, gt, (up * xhat).sum(axis=axes))
            if bt.requires_grad:
                _push(fresh, bt, up.sum(axis=axes))
            if x.requires_grad:
                _push(fresh, x, up * (gt.data * ivstd).reshape(bc))

    out = gt.data.reshape(bc) * xhat + bt.data.reshape(bc)
    return _node(out, (x, gt, bt), grad_fn)


# ---------------------------------------------------------------------------
# initialization and optimization


def kaiming_uniform(shape, fan_in: int, rng: np.random.Generator, dtype=np.float32) -> Array:
    """Uniform init on [-sqrt(6/fan_in), sqrt(6/fan_in)]."""
    if fan_in < 1:
        raise ContractError(f"fan_in must be >= 1, got {fan_in}")
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def sgd_step(params, lr: float) -> None:
    """In-place w -= lr * grad for every param with a gradient, then zero."""
    for p in params:
        t = p.tensor if isinstance(p, Param) else p
        if t.grad is not None:
            t.data -= (lr * t.grad).astype(t.data.dtype, copy=False)
            t.grad = None


def zero_grads(params) -> None:
    for p in params:
        t = p.tensor if isinstance(p, Param) else p
        t.grad = None
