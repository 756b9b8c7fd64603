"""Reverse-mode automatic differentiation over numpy arrays.

A ``Tensor`` wraps a float32 (training) or float64 (gradient-check) ndarray
and records, when gradients are enabled, a closure that propagates the output
gradient to its parents. ``backward`` walks the recorded graph once in
reverse topological order; re-running backward through a consumed graph
raises ``GraphError`` (gradients accumulate additively only across separate
forward passes that share leaf tensors).

All stochastic ops take an explicit ``numpy.random.Generator`` handle.
"""

from __future__ import annotations

import contextlib

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import (
    ConfigError,
    ContractError,
    DimensionError,
    GraphError,
    NumericDomainError,
)

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the context (eval-mode forwards)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn", "_consumed")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward_fn = None
        self._consumed = False

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def _from_op(data: np.ndarray, parents, backward_fn):
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out._consumed = False
        track = _GRAD_ENABLED and any(p.requires_grad for p in parents)
        out.requires_grad = track
        if track:
            out._parents = tuple(parents)
            out._backward_fn = backward_fn
        else:
            out._parents = ()
            out._backward_fn = None
        return out

    # -- basic properties ------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = g.astype(self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self, params=None):
        return backward(self, params=params)

    # -- operator sugar ---------------------------------------------------------

    def __add__(self, other):
        return add(self, _as_tensor(other, self.dtype))

    def __radd__(self, other):
        return add(_as_tensor(other, self.dtype), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self.dtype))

    def __rsub__(self, other):
        return sub(_as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other, self.dtype))

    def __rmul__(self, other):
        return mul(_as_tensor(other, self.dtype), self)

    def __truediv__(self, other):
        return div(self, _as_tensor(other, self.dtype))

    def __rtruediv__(self, other):
        return div(_as_tensor(other, self.dtype), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return narrow(self, key)


def _as_tensor(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _check_same_dtype(a: Tensor, b: Tensor):
    if a.dtype != b.dtype:
        raise ContractError(f"dtype mismatch: {a.dtype} vs {b.dtype}")


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcasted gradient back to ``shape``."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# -- arithmetic -----------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b)
    out_data = a.data + b.data

    def backward_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._from_op(out_data, (a, b), backward_fn)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b)
    out_data = a.data - b.data

    def backward_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor._from_op(out_data, (a, b), backward_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b)
    out_data = a.data * b.data

    def backward_fn(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor._from_op(out_data, (a, b), backward_fn)


def div(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b)
    out_data = a.data / b.data

    def backward_fn(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return Tensor._from_op(out_data, (a, b), backward_fn)


def neg(a: Tensor) -> Tensor:
    return Tensor._from_op(-a.data, (a,), lambda g: (-g,))


# -- linear algebra ---------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Strict 2-D matrix product ``[m,k] @ [k,n] -> [m,n]``."""
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    _check_same_dtype(a, b)
    out_data = a.data @ b.data

    def backward_fn(g):
        return g @ b.data.T, a.data.T @ g

    return Tensor._from_op(out_data, (a, b), backward_fn)


def bmm(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product with numpy broadcasting over leading axes."""
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"bmm expects >=2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"bmm inner dims differ: {a.shape} @ {b.shape}")
    _check_same_dtype(a, b)
    out_data = np.matmul(a.data, b.data)

    def backward_fn(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return Tensor._from_op(out_data, (a, b), backward_fn)


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inverse = np.argsort(axes)

    def backward_fn(g):
        return (g.transpose(inverse),)

    return Tensor._from_op(a.data.transpose(axes), (a,), backward_fn)


# -- shape manipulation ------------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    old_shape = a.shape
    return Tensor._from_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(old_shape),))


def narrow(a: Tensor, key) -> Tensor:
    out_data = a.data[key]
    if not isinstance(out_data, np.ndarray):
        out_data = np.asarray(out_data, dtype=a.dtype)

    def backward_fn(g):
        ga = np.zeros_like(a.data)
        ga[key] = g
        return (ga,)

    return Tensor._from_op(out_data, (a,), backward_fn)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise DimensionError("concat of zero tensors")
    for t in tensors[1:]:
        _check_same_dtype(tensors[0], t)
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward_fn(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._from_op(out_data, tuple(tensors), backward_fn)


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise DimensionError("stack of zero tensors")
    for t in tensors[1:]:
        _check_same_dtype(tensors[0], t)
    out_data = np.stack([t.data for t in tensors], axis=axis)

    def backward_fn(g):
        return tuple(np.moveaxis(g, axis, 0))

    return Tensor._from_op(out_data, tuple(tensors), backward_fn)


# -- reductions ----------------------------------------------------------------------


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward_fn(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).astype(a.dtype, copy=False),)
        g2 = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g2, a.shape).astype(a.dtype, copy=False),)

    return Tensor._from_op(np.asarray(out_data, dtype=a.dtype), (a,), backward_fn)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.data.size
    else:
        ax = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.shape[i] for i in ax]))
    if count == 0:
        raise DimensionError("mean over empty axis")
    s = tsum(a, axis=axis, keepdims=keepdims)
    return mul(s, Tensor(np.asarray(1.0 / count, dtype=a.dtype)))


def global_avg_pool(a: Tensor, axes=None) -> Tensor:
    """Arithmetic mean over ``axes`` (all axes when None)."""
    if axes is None:
        axes = tuple(range(a.ndim))
    axes = tuple(axes)
    for ax in axes:
        if a.shape[ax] == 0:
            raise DimensionError(f"global_avg_pool over empty axis {ax} of shape {a.shape}")
    return tmean(a, axis=axes)


# -- pointwise nonlinearities ----------------------------------------------------------


def relu(a: Tensor) -> Tensor:
    out_data = np.maximum(a.data, 0)

    def backward_fn(g):
        return (g * (a.data > 0),)

    return Tensor._from_op(out_data, (a,), backward_fn)


def tanh(a: Tensor) -> Tensor:
    out_data = np.tanh(a.data)

    def backward_fn(g):
        return (g * (1.0 - out_data * out_data),)

    return Tensor._from_op(out_data, (a,), backward_fn)


def softplus(a: Tensor) -> Tensor:
    out_data = np.logaddexp(np.asarray(0.0, dtype=a.dtype), a.data)

    def backward_fn(g):
        # sigmoid via tanh keeps f32/f64 stability at large |x|
        sig = 0.5 * (1.0 + np.tanh(0.5 * a.data))
        return (g * sig,)

    return Tensor._from_op(out_data, (a,), backward_fn)


def log1p(a: Tensor) -> Tensor:
    bad = a.data <= -1.0
    if bad.any():
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        raise NumericDomainError(f"log1p domain violation at index {idx}: value {a.data[idx]} <= -1")
    out_data = np.log1p(a.data)

    def backward_fn(g):
        return (g / (1.0 + a.data),)

    return Tensor._from_op(out_data, (a,), backward_fn)


def log(a: Tensor) -> Tensor:
    bad = a.data <= 0.0
    if bad.any():
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        raise NumericDomainError(f"log domain violation at index {idx}: value {a.data[idx]} <= 0")
    out_data = np.log(a.data)

    def backward_fn(g):
        return (g / a.data,)

    return Tensor._from_op(out_data, (a,), backward_fn)


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)

    def backward_fn(g):
        return (g * out_data,)

    return Tensor._from_op(out_data, (a,), backward_fn)


def sqrt(a: Tensor) -> Tensor:
    out_data = np.sqrt(a.data)

    def backward_fn(g):
        return (g * 0.5 / out_data,)

    return Tensor._from_op(out_data, (a,), backward_fn)


# -- softmax family ----------------------------------------------------------------------


def _prob_clip_bounds(dtype):
    if dtype == np.float64:
        return 1e-300, 1.0 - 1e-12
    return 1e-30, 1.0 - 2e-7


def softmax_temp(z: Tensor, temperature: float, axis: int = -1) -> Tensor:
    """Temperature softmax ``exp(z_i/T) / sum_j exp(z_j/T)`` with max-subtraction.

    Outputs are clipped into the open interval (0, 1) so the probability-vector
    contract survives inputs extreme enough to underflow exp; the backward pass
    uses the exact unclipped softmax.
    """
    if not temperature > 0:
        raise ConfigError(f"softmax temperature must be positive, got {temperature}")
    scaled = z.data / np.asarray(temperature, dtype=z.dtype)
    shifted = scaled - scaled.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)
    lo, hi = _prob_clip_bounds(z.dtype)
    out_data = np.clip(s, lo, hi)

    def backward_fn(g):
        inner = (g * s).sum(axis=axis, keepdims=True)
        return (s * (g - inner) / temperature,)

    return Tensor._from_op(out_data.astype(z.dtype, copy=False), (z,), backward_fn)


def log_softmax(z: Tensor, axis: int = -1) -> Tensor:
    m = z.data.max(axis=axis, keepdims=True)
    shifted = z.data - m
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out_data = shifted - lse
    s = np.exp(out_data)

    def backward_fn(g):
        return (g - s * g.sum(axis=axis, keepdims=True),)

    return Tensor._from_op(out_data, (z,), backward_fn)


# -- convolution -----------------------------------------------------------------------------


def _triple(v, name):
    if isinstance(v, int):
        v = (v, v, v)
    v = tuple(int(x) for x in v)
    if len(v) != 3:
        raise ConfigError(f"{name} must be an int or 3-tuple, got {v}")
    return v


def conv3d(x: Tensor, kernels: Tensor, stride=1, padding=0) -> Tensor:
    """Cross-correlation over (T, H, W) with channels last.

    ``x`` is ``[T,H,W,Cin]`` or batched ``[B,T,H,W,Cin]``; ``kernels`` is
    ``[kt,kh,kw,Cin,Cout]``. Zero padding is applied symmetrically per axis.
    """
    stride = _triple(stride, "stride")
    padding = _triple(padding, "padding")
    if any(s < 1 for s in stride):
        raise ConfigError(f"stride components must be >= 1, got {stride}")
    if any(p < 0 for p in padding):
        raise ConfigError(f"padding components must be >= 0, got {padding}")
    if kernels.ndim != 5:
        raise DimensionError(f"kernels must be rank 5 [kt,kh,kw,Cin,Cout], got {kernels.shape}")
    squeeze = x.ndim == 4
    if x.ndim not in (4, 5):
        raise DimensionError(f"conv3d input must be rank 4 or 5, got {x.shape}")
    _check_same_dtype(x, kernels)

    kt, kh, kw, cin, cout = kernels.shape
    xs = x.shape if not squeeze else (1,) + x.shape
    if xs[-1] != cin:
        raise DimensionError(f"input channels {xs[-1]} != kernel Cin {cin}")
    pt, ph, pw = padding
    padded_extent = (xs[1] + 2 * pt, xs[2] + 2 * ph, xs[3] + 2 * pw)
    if kt > padded_extent[0] or kh > padded_extent[1] or kw > padded_extent[2]:
        raise DimensionError(
            f"kernel {kernels.shape[:3]} exceeds padded input extents {padded_extent}"
        )

    xd = x.data if not squeeze else x.data[None]
    st, sh, sw = stride
    xp = np.pad(xd, ((0, 0), (pt, pt), (ph, ph), (pw, pw), (0, 0)))
    win = sliding_window_view(xp, (kt, kh, kw), axis=(1, 2, 3))
    win = win[:, ::st, ::sh, ::sw]  # [B,T',H',W',Cin,kt,kh,kw]
    out_data = np.tensordot(win, kernels.data, axes=([5, 6, 7, 4], [0, 1, 2, 3]))
    out_data = np.ascontiguousarray(out_data, dtype=x.dtype)
    n_out = out_data.shape[1:4]

    def backward_fn(g):
        gb = g if not squeeze else g[None]
        gk = np.tensordot(win, gb, axes=([0, 1, 2, 3], [0, 1, 2, 3]))
        gk = gk.transpose(1, 2, 3, 0, 4)  # [kt,kh,kw,Cin,Cout]
        gxp = np.zeros_like(xp)
        to, ho, wo = n_out
        for i in range(kt):
            for j in range(kh):
                for l in range(kw):
                    contrib = np.tensordot(gb, kernels.data[i, j, l], axes=([4], [1]))
                    gxp[
                        :,
                        i : i + st * to : st,
                        j : j + sh * ho : sh,
                        l : l + sw * wo : sw,
                        :,
                    ] += contrib
        gx = gxp[:, pt : pt + xs[1], ph : ph + xs[2], pw : pw + xs[3], :]
        if squeeze:
            gx = gx[0]
        return gx.astype(x.dtype, copy=False), gk.astype(kernels.dtype, copy=False)

    if squeeze:
        out_data = out_data[0]
    return Tensor._from_op(out_data, (x, kernels), backward_fn)


# -- stochastic ops -------------------------------------------------------------------------------


def dropout(x: Tensor, p: float, mode: str, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: train mode zeroes with prob ``p`` and rescales by 1/(1-p)."""
    if mode not in ("train", "eval"):
        raise ConfigError(f"dropout mode must be 'train' or 'eval', got {mode!r}")
    if not (0.0 <= p < 1.0):
        raise ConfigError(f"dropout rate must satisfy 0 <= p < 1, got {p}")
    if mode == "eval" or p == 0.0:
        return Tensor._from_op(x.data.copy(), (x,), lambda g: (g,))
    if rng is None:
        raise ConfigError("dropout in train mode requires an explicit rng handle")
    keep = (rng.random(x.shape) >= p).astype(x.dtype)
    scale = np.asarray(1.0 / (1.0 - p), dtype=x.dtype)
    out_data = x.data * keep * scale

    def backward_fn(g):
        return (g * keep * scale,)

    return Tensor._from_op(out_data, (x,), backward_fn)


# -- backward ----------------------------------------------------------------------------------------


def backward(loss: Tensor, params=None):
    """Propagate gradients from a scalar ``loss`` to every reachable tensor.

    Returns a dict mapping requires-grad leaf tensors to their gradient
    arrays. When ``params`` is given, every listed parameter appears in the
    map (zeros when the loss does not depend on it) and has ``.grad`` set.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward requires a scalar loss, got shape {loss.shape}")
    if loss._consumed:
        raise GraphError("backward was already run through this graph; rebuild the forward pass")

    topo: list[Tensor] = []
    visited = set()
    stack_ = [loss]
    while stack_:
        node = stack_[-1]
        nid = id(node)
        if nid in visited:
            stack_.pop()
            continue
        if node._consumed:
            raise GraphError("graph shares consumed nodes; rebuild the forward pass")
        pending = [p for p in node._parents if id(p) not in visited and p.requires_grad]
        if pending:
            stack_.extend(pending)
        else:
            visited.add(nid)
            stack_.pop()
            topo.append(node)

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaf_map: dict[Tensor, np.ndarray] = {}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward_fn is None:
            if node.requires_grad:
                node._accumulate(g)
                leaf_map[node] = node.grad
            continue
        parent_grads = node._backward_fn(g)
        for parent, pg in zip(node._parents, parent_grads):
            if not parent.requires_grad:
                continue
            pid = id(parent)
            if pid in grads:
                grads[pid] = grads[pid] + pg
            else:
                grads[pid] = pg
        node._consumed = True
        node._backward_fn = None
        node._parents = ()
    loss._consumed = True

    if params is not None:
        for p in params:
            if not p.requires_grad:
                continue
            if p not in leaf_map:
                if p.grad is None:
                    p.grad = np.zeros_like(p.data)
                leaf_map[p] = p.grad
    return leaf_map
