"""CPU tensors with a reverse-mode autodiff tape and a gradient checker.

Tensors wrap float32/float64 numpy arrays.  Ops are plain functions; when any
input carries a tape node the result is recorded on that tape together with a
vector-Jacobian closure, and ``Tape.backward`` replays the recording in exact
reverse order.  Every op validates shapes up front and rejects non-finite
outputs immediately rather than letting NaN/Inf propagate.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .rng import Rng

DTYPES = {"f32": np.float32, "f64": np.float64}
_NP_TO_TAG = {np.dtype(np.float32): "f32", np.dtype(np.float64): "f64"}


class ShapeError(ValueError):
    """Inputs whose shapes do not conform to the op's rule."""


class NumericError(FloatingPointError):
    """A non-finite value appeared where only finite values are allowed."""


class ContractError(RuntimeError):
    """An op was called outside its contract (e.g. non-scalar backward root)."""


def _ensure_finite(op: str, arr: np.ndarray) -> None:
    if not np.isfinite(arr).all():
        raise NumericError(f"{op}: produced non-finite values")


class Node:
    """One recorded op. ``vjp`` maps the output adjoint to (parent, adjoint) pairs."""

    __slots__ = ("tape", "index", "op", "vjp")

    def __init__(self, tape: "Tape", index: int, op: str, vjp):
        self.tape = tape
        self.index = index
        self.op = op
        self.vjp = vjp


class Tensor:
    """Immutable n-d array of f32/f64 values, optionally on an autodiff tape."""

    __slots__ = ("array", "node")

    def __init__(self, array, dtype: str | None = None, node: Node | None = None):
        if isinstance(array, Tensor):
            array = array.array
        np_dtype = DTYPES[dtype] if dtype is not None else None
        arr = np.asarray(array, dtype=np_dtype)
        if arr.dtype not in _NP_TO_TAG:
            arr = arr.astype(np.float32 if dtype is None else DTYPES[dtype])
        self.array = arr
        self.node = node

    @property
    def shape(self) -> tuple[int, ...]:
        return self.array.shape

    @property
    def dtype(self) -> str:
        return _NP_TO_TAG[self.array.dtype]

    @property
    def data(self) -> np.ndarray:
        """Flat row-major view of the underlying buffer."""
        return self.array.reshape(-1)

    @property
    def size(self) -> int:
        return self.array.size

    def item(self) -> float:
        if self.array.size != 1:
            raise ContractError(f"item() on non-scalar tensor of shape {self.shape}")
        return float(self.array.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.array)

    def __add__(self, other):
        return add(self, _wrap(other, self))

    def __radd__(self, other):
        return add(_wrap(other, self), self)

    def __sub__(self, other):
        return sub(self, _wrap(other, self))

    def __rsub__(self, other):
        return sub(_wrap(other, self), self)

    def __mul__(self, other):
        return mul(self, _wrap(other, self))

    def __rmul__(self, other):
        return mul(_wrap(other, self), self)

    def __matmul__(self, other):
        return matmul(self, _wrap(other, self))

    def __neg__(self):
        return mul(self, Tensor(np.asarray(-1.0, self.array.dtype)))

    def __repr__(self) -> str:
        tag = f", node#{self.node.index}" if self.node is not None else ""
        return f"Tensor(shape={list(self.shape)}, dtype={self.dtype}{tag})"


def _wrap(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.array.dtype))


class Tape:
    """Ordered op recording; backward visits nodes once, in reverse order."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.leaves: list[Node] = []
        self._leaf_values: list[np.ndarray] = []

    def leaf(self, array, dtype: str | None = None) -> Tensor:
        """Watch a value as a differentiable leaf parameter."""
        t = Tensor(array, dtype=dtype)
        node = Node(self, len(self.nodes), "leaf", None)
        self.nodes.append(node)
        self.leaves.append(node)
        self._leaf_values.append(t.array)
        _ensure_finite("leaf", t.array)
        return Tensor(t.array, node=node)

    def record(self, op: str, out: np.ndarray, vjp) -> Tensor:
        node = Node(self, len(self.nodes), op, vjp)
        self.nodes.append(node)
        return Tensor(out, node=node)

    def release(self) -> None:
        """Drop recorded closures so saved activations free without the
        cyclic collector (node -> vjp -> tensor -> node is a cycle)."""
        for node in self.nodes:
            node.vjp = None
        self.nodes.clear()
        self.leaves.clear()
        self._leaf_values.clear()

    def backward(self, root: Tensor) -> dict[Node, np.ndarray]:
        """Adjoints of ``root`` w.r.t. every leaf on this tape.

        Returns a map keyed by leaf node; leaves unreachable from the root get
        zero gradients of their own shape.
        """
        if root.node is None or root.node.tape is not self:
            raise ContractError("backward: root is not on this tape")
        if root.array.size != 1:
            raise ContractError(
                f"backward: root must be scalar, got shape {list(root.shape)}"
            )
        accum: list[np.ndarray | None] = [None] * len(self.nodes)
        owned = [False] * len(self.nodes)
        accum[root.node.index] = np.ones_like(root.array)
        owned[root.node.index] = True
        for node in reversed(self.nodes):
            adjoint = accum[node.index]
            if node.vjp is not None:
                accum[node.index] = None
            if adjoint is None or node.vjp is None:
                continue
            for parent, grad in node.vjp(adjoint):
                i = parent.index
                if accum[i] is None:
                    accum[i] = grad
                elif owned[i]:
                    accum[i] += grad
                else:
                    accum[i] = accum[i] + grad
                    owned[i] = True
        grads: dict[Node, np.ndarray] = {}
        for leaf, value in zip(self.leaves, self._leaf_values):
            g = accum[leaf.index]
            grads[leaf] = g if g is not None else np.zeros_like(value)
        return grads


def _node_of(*tensors: Tensor) -> Node | None:
    node = None
    for t in tensors:
        if t.node is not None:
            if node is not None and node.tape is not t.node.tape:
                raise ContractError("op mixes tensors from different tapes")
            node = t.node
    return node


def _result(op: str, out: np.ndarray, parents: Sequence[Tensor], vjp_builder) -> Tensor:
    _ensure_finite(op, out)
    node = _node_of(*parents)
    if node is None:
        return Tensor(out)
    pairs = [(t.node, i) for i, t in enumerate(parents) if t.node is not None]

    def vjp(g: np.ndarray):
        grads = vjp_builder(g)
        return [(pn, grads[i]) for pn, i in pairs if grads[i] is not None]

    return node.tape.record(op, out, vjp)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _binary_shapes(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(
            f"{op}: shapes {list(a.shape)} and {list(b.shape)} are not broadcastable"
        ) from None


# ---------------------------------------------------------------------------
# elementwise and linear ops
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes("add", a, b)
    out = a.array + b.array
    return _result(
        "add", out, (a, b),
        lambda g: (
            _unbroadcast(g, a.shape) if a.node is not None else None,
            _unbroadcast(g, b.shape) if b.node is not None else None,
        ),
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes("sub", a, b)
    out = a.array - b.array
    return _result(
        "sub", out, (a, b),
        lambda g: (
            _unbroadcast(g, a.shape) if a.node is not None else None,
            _unbroadcast(-g, b.shape) if b.node is not None else None,
        ),
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes("mul", a, b)
    out = a.array * b.array
    return _result(
        "mul", out, (a, b),
        lambda g: (
            _unbroadcast(g * b.array, a.shape) if a.node is not None else None,
            _unbroadcast(g * a.array, b.shape) if b.node is not None else None,
        ),
    )


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.array.ndim != 2 or b.array.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(
            f"matmul: shapes {list(a.shape)} and {list(b.shape)} do not conform"
        )
    out = a.array @ b.array
    return _result(
        "matmul", out, (a, b),
        lambda g: (
            g @ b.array.T if a.node is not None else None,
            a.array.T @ g if b.node is not None else None,
        ),
    )


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.array, 0)
    return _result("relu", out, (x,), lambda g: (g * (x.array > 0),))


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    out = np.where(x.array > 0, x.array, x.array * x.array.dtype.type(slope))
    return _result(
        "leaky_relu", out, (x,),
        lambda g: (g * np.where(x.array > 0, x.array.dtype.type(1), x.array.dtype.type(slope)),),
    )


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.array)
    return _result("tanh", out, (x,), lambda g: (g * (1 - out * out),))


def sigmoid(x: Tensor) -> Tensor:
    # overflow-free for both signs: exp(-|x|) <= 1
    e = np.exp(-np.abs(x.array))
    out = np.where(x.array >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.array.dtype, copy=False)
    return _result("sigmoid", out, (x,), lambda g: (g * out * (1 - out),))


def log(x: Tensor) -> Tensor:
    if np.any(x.array <= 0):
        raise NumericError("log: input must be strictly positive")
    out = np.log(x.array)
    return _result("log", out, (x,), lambda g: (g / x.array,))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.array)
    return _result("exp", out, (x,), lambda g: (g * out,))


def square(x: Tensor) -> Tensor:
    out = x.array * x.array
    return _result("square", out, (x,), lambda g: (g * 2 * x.array,))


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values to [lo, hi]; gradient passes only through the interior."""
    out = np.clip(x.array, lo, hi)
    inside = (x.array >= lo) & (x.array <= hi)
    return _result("clip", out, (x,), lambda g: (g * inside,))


def maximum_scalar(x: Tensor, c: float) -> Tensor:
    """Elementwise max(x, c); at the kink x == c the gradient follows x."""
    out = np.maximum(x.array, x.array.dtype.type(c))
    passes = x.array >= c
    return _result("maximum_scalar", out, (x,), lambda g: (g * passes,))


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = x.array.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).astype(x.array.dtype, copy=False),)

    return _result("sum", np.asarray(out), (x,), vjp)


def tmean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = x.array.mean(axis=axis, keepdims=keepdims)
    count = x.array.size if axis is None else np.prod(
        [x.shape[a] for a in (axis if isinstance(axis, tuple) else (axis,))]
    )

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        full = np.broadcast_to(g, x.shape).astype(x.array.dtype, copy=False)
        return (full / x.array.dtype.type(count),)

    return _result("mean", np.asarray(out), (x,), vjp)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ShapeError("concat: needs at least one tensor")
    out = np.concatenate([t.array for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def vjp_builder(g):
        slicer = [slice(None)] * g.ndim
        grads = []
        for i in range(len(tensors)):
            slicer[axis] = slice(offsets[i], offsets[i + 1])
            grads.append(g[tuple(slicer)])
        return grads

    return _result("concat", out, tuple(tensors), vjp_builder)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    out = x.array.reshape(shape)
    return _result("reshape", out, (x,), lambda g: (g.reshape(x.shape),))


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    """Contiguous leading-axis slice x[start:stop]."""
    if not (0 <= start <= stop <= x.shape[0]):
        raise ShapeError(f"slice_rows: [{start}:{stop}] out of range for {list(x.shape)}")
    out = x.array[start:stop]

    def vjp(g):
        full = np.zeros_like(x.array)
        full[start:stop] = g
        return (full,)

    return _result("slice_rows", out, (x,), vjp)


# ---------------------------------------------------------------------------
# spatial ops (NCHW layout)
# ---------------------------------------------------------------------------


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


def _im2col(x: np.ndarray, kh: int, kw: int, sh: int, sw: int, ph: int, pw: int):
    """Gather conv patches into [B, C*kh*kw, OH*OW]."""
    b, c, h, w = x.shape
    oh = (h + 2 * ph - kh) // sh + 1
    ow = (w + 2 * pw - kw) // sw + 1
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x
    sb, sc, srow, scol = xp.strides
    view = np.lib.stride_tricks.as_strided(
        xp,
        shape=(b, c, kh, kw, oh, ow),
        strides=(sb, sc, srow, scol, srow * sh, scol * sw),
        writeable=False,
    )
    return np.ascontiguousarray(view).reshape(b, c * kh * kw, oh * ow), oh, ow


def _col2im(cols: np.ndarray, xshape, kh, kw, sh, sw, ph, pw, oh, ow) -> np.ndarray:
    """Scatter-add patches back; exact adjoint of ``_im2col``."""
    b, c, h, w = xshape
    xp = np.zeros((b, c, h + 2 * ph, w + 2 * pw), dtype=cols.dtype)
    cols = cols.reshape(b, c, kh, kw, oh, ow)
    for i in range(kh):
        for j in range(kw):
            xp[:, :, i : i + sh * oh : sh, j : j + sw * ow : sw] += cols[:, :, i, j]
    if ph or pw:
        return xp[:, :, ph : ph + h, pw : pw + w]
    return xp


def conv2d(x: Tensor, kernel: Tensor, stride=1, padding=0) -> Tensor:
    """Cross-correlation of [B,C,H,W] input with [F,C,KH,KW] kernel."""
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    if x.array.ndim != 4 or kernel.array.ndim != 4:
        raise ShapeError(
            f"conv2d: expected 4-d input and kernel, got {list(x.shape)} and {list(kernel.shape)}"
        )
    b, c, h, w = x.shape
    f, kc, kh, kw = kernel.shape
    if kc != c:
        raise ShapeError(
            f"conv2d: input channels {c} != kernel channels {kc} (input {list(x.shape)}, kernel {list(kernel.shape)})"
        )
    if h + 2 * ph < kh or w + 2 * pw < kw:
        raise ShapeError(
            f"conv2d: kernel {list(kernel.shape)} larger than padded input {list(x.shape)}"
        )
    cols, oh, ow = _im2col(x.array, kh, kw, sh, sw, ph, pw)
    kmat = kernel.array.reshape(f, c * kh * kw)
    out = np.matmul(kmat[None], cols).reshape(b, f, oh, ow)

    def vjp_builder(g):
        gmat = g.reshape(b, f, oh * ow)
        dk = dx = None
        if kernel.node is not None:
            # batched gemm keeps the transposes as views (no 6-d copy)
            dk = np.matmul(gmat, cols.transpose(0, 2, 1)).sum(axis=0).reshape(kernel.shape)
        if x.node is not None:
            dcols = np.matmul(kmat.T[None], gmat)
            dx = _col2im(dcols, x.shape, kh, kw, sh, sw, ph, pw, oh, ow)
        return (dx, dk)

    return _result("conv2d", out, (x, kernel), vjp_builder)


def conv2d_transpose(y: Tensor, kernel: Tensor, stride=1, padding=0, out_pad=0) -> Tensor:
    """Adjoint of ``conv2d``: maps [B,F,H',W'] back to [B,C,H,W].

    With matching stride/padding, <conv2d(x,k), y> == <x, conv2d_transpose(y,k)>.
    ``out_pad`` disambiguates the output extent when the forward conv stride
    does not divide evenly.
    """
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    oph, opw = _pair(out_pad)
    if oph >= sh or opw >= sw:
        raise ShapeError(f"conv2d_transpose: out_pad {out_pad} must be < stride {stride}")
    if y.array.ndim != 4 or kernel.array.ndim != 4:
        raise ShapeError(
            f"conv2d_transpose: expected 4-d input and kernel, got {list(y.shape)} and {list(kernel.shape)}"
        )
    b, f, hh, ww = y.shape
    kf, c, kh, kw = kernel.shape
    if kf != f:
        raise ShapeError(
            f"conv2d_transpose: input channels {f} != kernel lead {kf} (input {list(y.shape)}, kernel {list(kernel.shape)})"
        )
    h = (hh - 1) * sh - 2 * ph + kh + oph
    w = (ww - 1) * sw - 2 * pw + kw + opw
    if h <= 0 or w <= 0:
        raise ShapeError(f"conv2d_transpose: non-positive output extent ({h}, {w})")
    kmat = kernel.array.reshape(f, c * kh * kw)
    ymat = y.array.reshape(b, f, hh * ww)
    cols = np.matmul(kmat.T[None], ymat)
    out = _col2im(cols, (b, c, h, w), kh, kw, sh, sw, ph, pw, hh, ww)

    def vjp_builder(g):
        gcols, _, _ = _im2col(g, kh, kw, sh, sw, ph, pw)
        dy = np.matmul(kmat[None], gcols).reshape(y.shape) if y.node is not None else None
        dk = (
            np.matmul(ymat, gcols.transpose(0, 2, 1)).sum(axis=0).reshape(kernel.shape)
            if kernel.node is not None
            else None
        )
        return (dy, dk)

    return _result("conv2d_transpose", out, (y, kernel), vjp_builder)


def maxpool2d(x: Tensor, window=2, stride=2) -> Tensor:
    """Max pooling; ties go to the lowest flat index inside each window."""
    wh, ww = _pair(window)
    sh, sw = _pair(stride)
    if x.array.ndim != 4:
        raise ShapeError(f"maxpool2d: expected 4-d input, got {list(x.shape)}")
    b, c, h, w = x.shape
    if (wh, ww) != (sh, sw) or h % wh or w % ww:
        return _maxpool2d_general(x, wh, ww, sh, sw)
    oh, ow = h // wh, w // ww
    tiles = x.array.reshape(b, c, oh, wh, ow, ww).transpose(0, 1, 2, 4, 3, 5)
    flat = tiles.reshape(b, c, oh, ow, wh * ww)
    arg = flat.argmax(axis=-1)  # argmax returns the first max: lowest flat index
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def vjp_builder(g):
        dflat = np.zeros_like(flat)
        np.put_along_axis(dflat, arg[..., None], g[..., None].astype(x.array.dtype), axis=-1)
        dx = (
            dflat.reshape(b, c, oh, ow, wh, ww)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(b, c, h, w)
        )
        return (dx,)

    return _result("maxpool2d", out, (x,), vjp_builder)


def _maxpool2d_general(x: Tensor, wh, ww, sh, sw) -> Tensor:
    b, c, h, w = x.shape
    oh = (h - wh) // sh + 1
    ow = (w - ww) // sw + 1
    if oh <= 0 or ow <= 0:
        raise ShapeError(f"maxpool2d: window ({wh},{ww}) larger than input {list(x.shape)}")
    windows = np.lib.stride_tricks.sliding_window_view(x.array, (wh, ww), axis=(2, 3))
    windows = windows[:, :, ::sh, ::sw].reshape(b, c, oh, ow, wh * ww)
    arg = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, arg[..., None], axis=-1)[..., 0]

    def vjp_builder(g):
        dx = np.zeros_like(x.array)
        ih = arg // ww
        iw = arg % ww
        bi, ci, ohi, owi = np.indices(arg.shape, sparse=False)
        rows = ohi * sh + ih
        cols_ = owi * sw + iw
        np.add.at(dx, (bi, ci, rows, cols_), g)
        return (dx,)

    return _result("maxpool2d", out, (x,), vjp_builder)


class RunningStats:
    """Mutable per-channel mean/variance for batchnorm inference."""

    __slots__ = ("mean", "var")

    def __init__(self, mean: np.ndarray, var: np.ndarray):
        self.mean = mean
        self.var = var


def batchnorm(
    features: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_stats: RunningStats | None,
    mode: str,
    momentum: float = 0.9,
    eps: float = 1e-5,
) -> Tensor:
    """Normalize per channel (axis 1); train mode updates running stats in place."""
    if mode not in ("train", "eval"):
        raise ContractError(f"batchnorm: mode must be 'train' or 'eval', got {mode!r}")
    x = features.array
    if x.ndim not in (2, 4):
        raise ShapeError(f"batchnorm: expected 2-d or 4-d input, got {list(features.shape)}")
    c = x.shape[1]
    if gamma.array.shape != (c,) or beta.array.shape != (c,):
        raise ShapeError(
            f"batchnorm: gamma/beta must have shape [{c}], got {list(gamma.shape)}/{list(beta.shape)}"
        )
    axes = (0,) if x.ndim == 2 else (0, 2, 3)
    bshape = (1, c) if x.ndim == 2 else (1, c, 1, 1)
    gb = gamma.array.reshape(bshape)
    bb = beta.array.reshape(bshape)

    if mode == "eval":
        if running_stats is None:
            raise ContractError("batchnorm: eval mode requires running stats")
        mu = running_stats.mean.reshape(bshape)
        var = running_stats.var.reshape(bshape)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (x - mu) * inv
        out = gb * xhat + bb

        def vjp_eval(g):
            dg = (g * xhat).sum(axis=axes)
            db = g.sum(axis=axes)
            dx = (g * gb * inv).astype(x.dtype, copy=False)
            return (dx, dg.astype(gamma.array.dtype), db.astype(beta.array.dtype))

        return _result("batchnorm", out, (features, gamma, beta), vjp_eval)

    n = x.size // c
    mu = x.mean(axis=axes, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = gb * xhat + bb

    if running_stats is not None:
        m = x.dtype.type(momentum)
        running_stats.mean[...] = m * running_stats.mean + (1 - m) * mu.reshape(c)
        running_stats.var[...] = m * running_stats.var + (1 - m) * var.reshape(c)

    def vjp_train(g):
        dg = (g * xhat).sum(axis=axes).astype(gamma.array.dtype) if gamma.node is not None else None
        db = g.sum(axis=axes).astype(beta.array.dtype) if beta.node is not None else None
        dx = None
        if features.node is not None:
            dxhat = g * gb
            mean_dxhat = dxhat.mean(axis=axes, keepdims=True)
            mean_dxhat_xhat = (dxhat * xhat).mean(axis=axes, keepdims=True)
            dx = (inv * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat)).astype(x.dtype, copy=False)
        return (dx, dg, db)

    return _result("batchnorm", out, (features, gamma, beta), vjp_train)


def sample_standard_normal(rng: Rng, shape: Sequence[int], dtype: str = "f32") -> Tensor:
    """Draw an i.i.d. standard-normal tensor from the given counter stream."""
    shape = tuple(int(s) for s in shape)
    if len(shape) == 0 or any(s <= 0 for s in shape):
        raise ShapeError(f"sample_standard_normal: shape {list(shape)} must be nonempty")
    return Tensor(rng.normal(shape, dtype=DTYPES[dtype]))


# ---------------------------------------------------------------------------
# finite-difference gradient checking
# ---------------------------------------------------------------------------


@dataclass
class GradCheckEntry:
    name: str
    max_rel_err: float
    max_abs_analytic: float
    max_abs_numeric: float


@dataclass
class GradCheckReport:
    tol: float
    h: float
    entries: list[GradCheckEntry] = field(default_factory=list)

    @property
    def max_rel_err(self) -> float:
        return max((e.max_rel_err for e in self.entries), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tol

    def summary(self) -> str:
        lines = [f"grad_check tol={self.tol:g} h={self.h:g} -> {'PASS' if self.passed else 'FAIL'}"]
        for e in self.entries:
            lines.append(f"  {e.name}: max rel err {e.max_rel_err:.3e}")
        return "\n".join(lines)


def grad_check(
    f: Callable[[dict[str, Tensor]], Tensor],
    params: dict[str, np.ndarray],
    h: float = 1e-5,
    tol: float = 1e-4,
) -> GradCheckReport:
    """Compare tape gradients of ``f`` against central finite differences.

    ``f`` must be deterministic and is evaluated in float64.  The report lists
    every parameter; relative error uses max(|analytic|, |numeric|, 1e-8) as
    the denominator.
    """
    params64 = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}
    tape = Tape()
    leaves = {k: tape.leaf(v) for k, v in params64.items()}
    out = f(leaves)
    gmap = tape.backward(out)
    report = GradCheckReport(tol=tol, h=h)
    for name, value in params64.items():
        analytic = gmap[leaves[name].node]
        if analytic is None:
            analytic = np.zeros_like(value)
        numeric = np.zeros_like(value)
        flat = value.reshape(-1)
        nflat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f({k: Tensor(v) for k, v in params64.items()}).item()
            flat[i] = orig - h
            fm = f({k: Tensor(v) for k, v in params64.items()}).item()
            flat[i] = orig
            nflat[i] = (fp - fm) / (2.0 * h)
        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
        rel = np.abs(analytic - numeric) / denom
        report.entries.append(
            GradCheckEntry(
                name=name,
                max_rel_err=float(rel.max()) if rel.size else 0.0,
                max_abs_analytic=float(np.abs(analytic).max()) if analytic.size else 0.0,
                max_abs_numeric=float(np.abs(numeric).max()) if numeric.size else 0.0,
            )
        )
    return report
