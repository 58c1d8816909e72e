"""Dense float64 tensors with reverse-mode automatic differentiation.

A graph is recorded per forward pass. Calling :meth:`Tensor.backward` on a
scalar root fills ``.grad`` on every reachable leaf that requires gradients
and then frees the graph, so a second call on the same root raises.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "Tensor",
    "GraphError",
    "NonFiniteError",
    "no_grad",
    "tensor",
    "matmul",
    "concat",
    "stack",
    "relu",
    "sigmoid",
    "tanh",
    "activation",
    "softmax",
    "layer_norm",
    "softmax_xent",
    "conv2d_nhwc",
    "conv_valid",
    "conv_precision",
]

# Peak bytes for one im2col buffer inside conv2d_nhwc.
CONV_CHUNK_BYTES = 192 * 2**20

_grad_enabled = True
_conv_dtype = np.float64


class GraphError(RuntimeError):
    """Misuse of the autodiff graph (non-scalar root, reuse after free)."""


class NonFiniteError(FloatingPointError):
    """A tensor value became NaN or infinite."""


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference, finite differences)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


@contextlib.contextmanager
def conv_precision(dtype):
    """Run convolution matmuls in ``dtype`` (e.g. float32) inside the block.

    Values and gradients stay float64 outside the convolutions. Halving the
    precision roughly halves the cost of the extractor during training.
    """
    global _conv_dtype
    prev = _conv_dtype
    _conv_dtype = np.dtype(dtype).type
    try:
        yield
    finally:
        _conv_dtype = prev


def _check_finite(data: np.ndarray, op: str) -> None:
    if not np.isfinite(data).all():
        raise NonFiniteError(f"non-finite values produced by {op or 'leaf'}")


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op", "_freed")

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = (), _op: str = ""):
        arr = np.asarray(data, dtype=np.float64)
        _check_finite(arr, _op)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward: Callable[[np.ndarray], None] | None = None
        self._op = _op
        self._freed = False

    # -- basic protocol -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self._op or 'leaf'!r})"

    def _accum(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    # -- graph ----------------------------------------------------------
    def backward(self) -> None:
        if self._freed:
            raise GraphError("graph was already consumed by a previous backward()")
        if self.data.size != 1:
            raise GraphError(f"backward() needs a scalar root, got shape {self.shape}")
        if not self.requires_grad:
            raise GraphError("root does not depend on any tensor requiring grad")

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
            if node._freed:
                raise GraphError("graph contains nodes freed by an earlier backward()")
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        for node in order:
            if not node._parents and node.grad is not None:
                raise GraphError(
                    "leaf already holds a gradient; reset grads before calling backward() again"
                )

        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

        for node in order:
            if node._parents:
                node._parents = ()
                node._backward = None
                node.grad = None
                node._freed = True

    # -- operators ------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(tensor(other)))

    def __rsub__(self, other):
        return add(tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, reciprocal(other))
        return mul(self, 1.0 / np.asarray(other, dtype=np.float64))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        n = self.data.size if axis is None else np.prod([self.shape[a] for a in np.atleast_1d(axis)])
        return tsum(self, axis, keepdims) * (1.0 / n)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)


def tensor(x, requires_grad: bool = False) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, requires_grad=requires_grad)


def _make(data: np.ndarray, parents: Sequence[Tensor], op: str, backward) -> Tensor:
    track = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=track, _parents=tuple(parents) if track else (), _op=op)
    if track:
        out._backward = backward
    return out


# -- elementwise ------------------------------------------------------------
def add(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)

    def bw(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), "add", bw)


def mul(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)

    def bw(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), "mul", bw)


def neg(a: Tensor) -> Tensor:
    def bw(g):
        a._accum(-g)

    return _make(-a.data, (a,), "neg", bw)


def reciprocal(a: Tensor) -> Tensor:
    out = 1.0 / a.data

    def bw(g):
        a._accum(-g * out * out)

    return _make(out, (a,), "reciprocal", bw)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def bw(g):
        x._accum(g * mask)

    return _make(np.where(mask, x.data, 0.0), (x,), "relu", bw)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)

    def bw(g):
        x._accum(g * s * (1.0 - s))

    return _make(s, (x,), "sigmoid", bw)


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)

    def bw(g):
        x._accum(g * (1.0 - t * t))

    return _make(t, (x,), "tanh", bw)


_ACTIVATIONS = {"relu": relu, "sigmoid": sigmoid, "tanh": tanh}


def activation(x: Tensor, kind: str) -> Tensor:
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}; expected one of {sorted(_ACTIVATIONS)}")
    return fn(x)


# -- reductions and shape ---------------------------------------------------
def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        x._accum(np.broadcast_to(g, x.shape))

    return _make(np.sum(x.data, axis=axis, keepdims=keepdims), (x,), "sum", bw)


def reshape(x: Tensor, shape) -> Tensor:
    def bw(g):
        x._accum(g.reshape(x.shape))

    return _make(x.data.reshape(shape), (x,), "reshape", bw)


def transpose(x: Tensor, axes=None) -> Tensor:
    inv = None if axes is None else tuple(np.argsort(axes))

    def bw(g):
        x._accum(np.transpose(g, inv))

    return _make(np.transpose(x.data, axes), (x,), "transpose", bw)


def _is_basic(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in items)


def getitem(x: Tensor, idx) -> Tensor:
    basic = _is_basic(idx)

    def bw(g):
        full = np.zeros_like(x.data)
        if basic:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        x._accum(full)

    return _make(x.data[idx], (x,), "getitem", bw)


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    xs = [tensor(x) for x in xs]
    sizes = [x.shape[axis] for x in xs]
    bounds = np.cumsum(sizes)[:-1]

    def bw(g):
        for x, part in zip(xs, np.split(g, bounds, axis=axis)):
            if x.requires_grad:
                x._accum(part)

    return _make(np.concatenate([x.data for x in xs], axis=axis), xs, "concat", bw)


def stack(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = [tensor(x) for x in xs]

    def bw(g):
        for i, x in enumerate(xs):
            if x.requires_grad:
                x._accum(np.take(g, i, axis=axis))

    return _make(np.stack([x.data for x in xs], axis=axis), xs, "stack", bw)


# -- linear algebra ---------------------------------------------------------
def matmul(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul operands must be at least 2-D")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def bw(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            if a.ndim > 2 and b.ndim == 2:
                # fold the batch into rows: one GEMM instead of a batched sum
                gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
            b._accum(gb)

    return _make(a.data @ b.data, (a, b), "matmul", bw)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        x._accum(s * (g - (g * s).sum(axis=axis, keepdims=True)))

    return _make(s, (x,), "softmax", bw)


def layer_norm(x: Tensor, eps: float = 1e-9) -> Tensor:
    """Normalize the last axis to zero mean and unit (population) variance; no affine."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv

    def bw(g):
        gm = g.mean(axis=-1, keepdims=True)
        gx = (g * xhat).mean(axis=-1, keepdims=True)
        x._accum(inv * (g - gm - xhat * gx))

    return _make(xhat, (x,), "layer_norm", bw)


def softmax_xent(logits: Tensor, labels) -> tuple[Tensor, np.ndarray]:
    """Mean categorical cross-entropy of softmax(logits) against integer labels.

    Returns the scalar loss tensor and the probability rows.
    """
    if logits.ndim != 2:
        raise ValueError(f"logits must be B x K, got {logits.shape}")
    labels = np.asarray(labels, dtype=np.int64)
    b, k = logits.shape
    if labels.shape != (b,):
        raise ValueError(f"expected {b} labels, got shape {labels.shape}")
    if b and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"label out of range [0, {k})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    probs = np.exp(logp)
    rows = np.arange(b)
    loss = -logp[rows, labels].mean()

    def bw(g):
        d = probs.copy()
        d[rows, labels] -= 1.0
        logits._accum(d * (g / b))

    # clamp tiny negative rounding at the one-hot optimum
    return _make(np.array(max(loss, 0.0)), (logits,), "softmax_xent", bw), probs


# -- convolution ------------------------------------------------------------
def _out_len(n: int, k: int, s: int) -> int:
    return (n - k) // s + 1


def _cols(x: np.ndarray, kh: int, kw: int, sh: int, sw: int, ho: int, wo: int) -> np.ndarray:
    # (n, ho, wo, kh, kw, c) flattened to rows of length kh*kw*c
    v = sliding_window_view(x, (kh, kw), axis=(1, 2))[:, : sh * (ho - 1) + 1 : sh, : sw * (wo - 1) + 1 : sw]
    return v.transpose(0, 1, 2, 4, 5, 3).reshape(-1, kh * kw * x.shape[3])


def conv2d_nhwc(x: Tensor, kernels: Tensor, stride=(1, 1), bias: Tensor | None = None) -> Tensor:
    """Valid cross-correlation on channels-last input.

    x: N x H x W x C_in, kernels: C_out x C_in x kh x kw -> N x H' x W' x C_out.
    """
    if x.ndim != 4 or kernels.ndim != 4:
        raise ValueError("conv2d_nhwc expects 4-D input and kernels")
    n, h, w, c = x.shape
    o, c2, kh, kw = kernels.shape
    sh, sw = stride
    if c != c2:
        raise ValueError(f"input has {c} channels, kernels expect {c2}")
    if kh > h or kw > w:
        raise ValueError(f"kernel {kh}x{kw} larger than input {h}x{w}")
    ho, wo = _out_len(h, kh, sh), _out_len(w, kw, sw)
    cd = _conv_dtype
    wm = kernels.data.transpose(2, 3, 1, 0).reshape(kh * kw * c, o).astype(cd)
    xd = x.data.astype(cd, copy=False)
    per_item = ho * wo * kh * kw * c * np.dtype(cd).itemsize
    chunk = max(1, int(CONV_CHUNK_BYTES // max(per_item, 1)))

    out = np.empty((n, ho, wo, o))
    for s in range(0, n, chunk):
        xs = xd[s : s + chunk]
        out[s : s + chunk] = (_cols(xs, kh, kw, sh, sw, ho, wo) @ wm).reshape(len(xs), ho, wo, o)
    if bias is not None:
        out += bias.data

    def bw(g):
        if bias is not None and bias.requires_grad:
            bias._accum(g.sum(axis=(0, 1, 2)))
        g = g.astype(cd, copy=False)
        gw = np.zeros_like(wm) if kernels.requires_grad else None
        gx = np.zeros_like(xd) if x.requires_grad else None
        for s in range(0, n, chunk):
            gs = g[s : s + chunk].reshape(-1, o)
            m = min(chunk, n - s)
            if gw is not None:
                gw += _cols(xd[s : s + chunk], kh, kw, sh, sw, ho, wo).T @ gs
            if gx is not None:
                g4 = gs.reshape(m, ho, wo, o)
                taps = wm.reshape(kh, kw, c, o)
                dst = gx[s : s + chunk]
                for i in range(kh):
                    for j in range(kw):
                        dst[:, i : i + sh * (ho - 1) + 1 : sh, j : j + sw * (wo - 1) + 1 : sw] += g4 @ taps[i, j].T
        if gw is not None:
            kernels._accum(gw.reshape(kh, kw, c, o).transpose(3, 2, 0, 1).astype(np.float64))
        if gx is not None:
            x._accum(gx.astype(np.float64, copy=False))

    parents = (x, kernels) if bias is None else (x, kernels, bias)
    return _make(out, parents, "conv", bw)


def conv_valid(x: Tensor, kernels: Tensor, stride=(1, 1), bias: Tensor | None = None) -> Tensor:
    """Valid cross-correlation in channels-first layout.

    x: C_in x H x W (or N x C_in x H x W), kernels: C_out x C_in x kh x kw.
    Output extents are floor((H - kh) / sh) + 1 and floor((W - kw) / sw) + 1.
    """
    x = tensor(x)
    batched = x.ndim == 4
    if not batched:
        if x.ndim != 3:
            raise ValueError(f"conv_valid expects C x H x W input, got {x.shape}")
        x = x.reshape((1,) + x.shape)
    y = conv2d_nhwc(x.transpose(0, 2, 3, 1), kernels, stride, bias).transpose(0, 3, 1, 2)
    return y if batched else y.reshape(y.shape[1:])
