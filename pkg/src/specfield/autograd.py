"""Tape-based reverse-mode automatic differentiation over dense numpy arrays.

A :class:`Tape` records every primitive application as an append-only list of
nodes.  Calling :meth:`Tape.backward` on a scalar root walks the list once in
reverse and accumulates adjoints with plain numpy, so two runs over the same
tape produce bit-identical gradients.  All values are float64; there is no
implicit broadcasting beyond the few cases the primitives document.

The op set is deliberately small: just enough for bilinear plane sampling,
small convolutions, MLPs, softmax mixing and the smoothness/sampling losses
used elsewhere in this package.  Shapes are checked eagerly so a mismatch
fails at record time with the op name, not deep inside a backward pass.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.ndimage as _ndimage
import scipy.sparse as _sparse

Array = np.ndarray


class ShapeError(ValueError):
    """Raised when an op is applied to operands of incompatible shape."""


class TapeError(RuntimeError):
    """Raised on structural misuse of a tape (wrong root, foreign node, ...)."""


def _as_value(x) -> Array:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 0:
        return a  # ascontiguousarray would promote 0-d to shape (1,)
    return np.ascontiguousarray(a)


# ---------------------------------------------------------------------------
# op registry

_FORWARD: dict[str, Callable] = {}
_BACKWARD: dict[str, Callable] = {}


def _op(name: str):
    def deco(cls):
        _FORWARD[name] = cls.forward
        _BACKWARD[name] = cls.backward
        return cls

    return deco


def op_names() -> tuple[str, ...]:
    """Names of every registered primitive, for coverage checks."""
    return tuple(sorted(_FORWARD))


def _check(cond: bool, op: str, msg: str) -> None:
    if not cond:
        raise ShapeError(f"{op}: {msg}")


@_op("add")
class _Add:
    """Elementwise sum; second operand may be a 1-D bias over the last axis."""

    @staticmethod
    def forward(attrs, a, b):
        if a.shape != b.shape:
            _check(
                b.ndim == 1 and a.ndim >= 1 and a.shape[-1] == b.shape[0],
                "add",
                f"operands {a.shape} and {b.shape} are neither equal nor "
                "broadcastable as a trailing-axis bias",
            )
        return a + b

    @staticmethod
    def backward(attrs, vals, out, g):
        a, b = vals
        ga = g
        if a.shape == b.shape:
            gb = g
        else:
            gb = g.reshape(-1, b.shape[0]).sum(axis=0)
        return ga, gb


@_op("sub")
class _Sub:
    @staticmethod
    def forward(attrs, a, b):
        _check(a.shape == b.shape, "sub", f"operands {a.shape} vs {b.shape}")
        return a - b

    @staticmethod
    def backward(attrs, vals, out, g):
        return g, -g


@_op("mul")
class _Mul:
    @staticmethod
    def forward(attrs, a, b):
        _check(a.shape == b.shape, "mul", f"operands {a.shape} vs {b.shape}")
        return a * b

    @staticmethod
    def backward(attrs, vals, out, g):
        a, b = vals
        return g * b, g * a


@_op("scale-rows")
class _ScaleRows:
    """(N, C) scaled per row by an (N, 1) column, used for per-sample weights."""

    @staticmethod
    def forward(attrs, a, s):
        _check(
            a.ndim == 2 and s.shape == (a.shape[0], 1),
            "scale-rows",
            f"expected (N,C) and (N,1), got {a.shape} and {s.shape}",
        )
        return a * s

    @staticmethod
    def backward(attrs, vals, out, g):
        a, s = vals
        return g * s, (g * a).sum(axis=1, keepdims=True)


@_op("matmul")
class _MatMul:
    @staticmethod
    def forward(attrs, a, b):
        _check(
            a.ndim == 2 and b.ndim == 2 and a.shape[1] == b.shape[0],
            "matmul",
            f"operands {a.shape} @ {b.shape}",
        )
        return a @ b

    @staticmethod
    def backward(attrs, vals, out, g):
        a, b = vals
        return g @ b.T, a.T @ g


@_op("relu")
class _Relu:
    @staticmethod
    def forward(attrs, a):
        return np.maximum(a, 0.0)

    @staticmethod
    def backward(attrs, vals, out, g):
        return (g * (vals[0] > 0.0),)


@_op("square")
class _Square:
    @staticmethod
    def forward(attrs, a):
        return a * a

    @staticmethod
    def backward(attrs, vals, out, g):
        return (2.0 * vals[0] * g,)


@_op("log1p")
class _Log1p:
    @staticmethod
    def forward(attrs, a):
        _check(bool(np.all(a > -1.0)), "log1p", "operand must stay above -1")
        return np.log1p(a)

    @staticmethod
    def backward(attrs, vals, out, g):
        return (g / (1.0 + vals[0]),)


@_op("scalar-scale")
class _ScalarScale:
    @staticmethod
    def forward(attrs, a):
        return a * attrs["factor"]

    @staticmethod
    def backward(attrs, vals, out, g):
        return (g * attrs["factor"],)


@_op("softmax-lastdim")
class _Softmax:
    @staticmethod
    def forward(attrs, a):
        _check(a.ndim >= 1, "softmax-lastdim", "needs at least one axis")
        shifted = a - a.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=-1, keepdims=True)

    @staticmethod
    def backward(attrs, vals, out, g):
        # d softmax: s * (g - <g, s>)
        dot = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - dot),)


def _norm_axes(axis, ndim: int, op: str) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    axes = tuple(a % ndim for a in axis)
    _check(len(set(axes)) == len(axes), op, f"repeated axis in {axis}")
    return axes


@_op("sum-reduce")
class _Sum:
    @staticmethod
    def forward(attrs, a):
        axes = _norm_axes(attrs.get("axis"), a.ndim, "sum-reduce")
        return np.asarray(a.sum(axis=axes))

    @staticmethod
    def backward(attrs, vals, out, g):
        a = vals[0]
        axes = _norm_axes(attrs.get("axis"), a.ndim, "sum-reduce")
        shape = [1 if i in axes else n for i, n in enumerate(a.shape)]
        return (np.broadcast_to(np.reshape(g, shape), a.shape).copy(),)


@_op("mean-reduce")
class _Mean:
    @staticmethod
    def forward(attrs, a):
        axes = _norm_axes(attrs.get("axis"), a.ndim, "mean-reduce")
        return np.asarray(a.mean(axis=axes))

    @staticmethod
    def backward(attrs, vals, out, g):
        a = vals[0]
        axes = _norm_axes(attrs.get("axis"), a.ndim, "mean-reduce")
        count = 1
        for i in axes:
            count *= a.shape[i]
        shape = [1 if i in axes else n for i, n in enumerate(a.shape)]
        return (np.broadcast_to(np.reshape(g, shape) / count, a.shape).copy(),)


@_op("reshape")
class _Reshape:
    @staticmethod
    def forward(attrs, a):
        try:
            return a.reshape(attrs["shape"])
        except ValueError as e:
            raise ShapeError(f"reshape: {a.shape} -> {attrs['shape']} ({e})")

    @staticmethod
    def backward(attrs, vals, out, g):
        return (g.reshape(vals[0].shape),)


@_op("narrow")
class _Narrow:
    """Contiguous slice of length `length` starting at `start` along `axis`."""

    @staticmethod
    def forward(attrs, a):
        ax = attrs["axis"] % a.ndim
        start, length = attrs["start"], attrs["length"]
        _check(
            0 <= start and start + length <= a.shape[ax],
            "narrow",
            f"slice [{start}:{start + length}] out of range for axis {ax} "
            f"of {a.shape}",
        )
        idx = [slice(None)] * a.ndim
        idx[ax] = slice(start, start + length)
        return a[tuple(idx)].copy()

    @staticmethod
    def backward(attrs, vals, out, g):
        a = vals[0]
        ax = attrs["axis"] % a.ndim
        start = attrs["start"]
        ga = np.zeros_like(a)
        idx = [slice(None)] * a.ndim
        idx[ax] = slice(start, start + attrs["length"])
        ga[tuple(idx)] = g
        return (ga,)


def _bilinear_weights(h: int, w: int, u: Array, v: Array):
    """Corner indices and weights for align-corners sampling on an (h, w) grid.

    u indexes the first spatial axis, v the second; both in [0, 1] and clamped.
    Returns flat indices into an h*w raster plus the four corner weights.
    """
    x = np.clip(u, 0.0, 1.0) * (h - 1)
    y = np.clip(v, 0.0, 1.0) * (w - 1)
    x0 = np.minimum(np.floor(x), h - 2 if h > 1 else 0).astype(np.int64)
    y0 = np.minimum(np.floor(y), w - 2 if w > 1 else 0).astype(np.int64)
    x0 = np.maximum(x0, 0)
    y0 = np.maximum(y0, 0)
    fx = x - x0
    fy = y - y0
    x1 = np.minimum(x0 + 1, h - 1)
    y1 = np.minimum(y0 + 1, w - 1)
    i00 = x0 * w + y0
    i01 = x0 * w + y1
    i10 = x1 * w + y0
    i11 = x1 * w + y1
    w00 = (1.0 - fx) * (1.0 - fy)
    w01 = (1.0 - fx) * fy
    w10 = fx * (1.0 - fy)
    w11 = fx * fy
    return (i00, i01, i10, i11), (w00, w01, w10, w11)


@_op("bilinear-sample-2d")
class _BilinearSample:
    """Sample a (C, H, W) grid at N continuous (u, v) points -> (N, C).

    Coordinates live in [0, 1] with align-corners semantics: u maps to row
    u * (H - 1), v to column v * (W - 1); out-of-range inputs clamp to the
    edge.  Differentiable w.r.t. the grid only; the coordinates are attrs.
    """

    @staticmethod
    def forward(attrs, grid):
        _check(grid.ndim == 3, "bilinear-sample-2d", f"grid must be (C,H,W), got {grid.shape}")
        u = attrs["u"]
        v = attrs["v"]
        _check(u.shape == v.shape and u.ndim == 1, "bilinear-sample-2d",
               f"u/v must be matching 1-D arrays, got {u.shape} and {v.shape}")
        c, h, w = grid.shape
        idx, wts = _bilinear_weights(h, w, u, v)
        flat = grid.reshape(c, h * w)
        out = (
            flat[:, idx[0]] * wts[0]
            + flat[:, idx[1]] * wts[1]
            + flat[:, idx[2]] * wts[2]
            + flat[:, idx[3]] * wts[3]
        )
        return np.ascontiguousarray(out.T)

    @staticmethod
    def backward(attrs, vals, out, g):
        grid = vals[0]
        c, h, w = grid.shape
        u = attrs["u"]
        v = attrs["v"]
        n = u.shape[0]
        idx, wts = _bilinear_weights(h, w, u, v)
        # Scatter the four weighted corner contributions back onto the grid.
        # A sparse (H*W, N) matrix applied to g is much faster than add.at.
        rows = np.concatenate(idx)
        cols = np.tile(np.arange(n, dtype=np.int64), 4)
        data = np.concatenate(wts)
        mat = _sparse.coo_matrix((data, (rows, cols)), shape=(h * w, n)).tocsr()
        gg = mat @ g  # (H*W, C)
        return (np.ascontiguousarray(gg.T.reshape(c, h, w)),)


def _linear_weights(k: int, u: Array):
    x = np.clip(u, 0.0, 1.0) * (k - 1)
    x0 = np.minimum(np.floor(x), k - 2 if k > 1 else 0).astype(np.int64)
    x0 = np.maximum(x0, 0)
    fx = x - x0
    x1 = np.minimum(x0 + 1, k - 1)
    return x0, x1, fx


@_op("linear-sample-1d")
class _LinearSample:
    """Sample a (C, K) grid at N continuous positions u in [0,1] -> (N, C)."""

    @staticmethod
    def forward(attrs, grid):
        _check(grid.ndim == 2, "linear-sample-1d", f"grid must be (C,K), got {grid.shape}")
        u = attrs["u"]
        _check(u.ndim == 1, "linear-sample-1d", f"u must be 1-D, got {u.shape}")
        c, k = grid.shape
        x0, x1, fx = _linear_weights(k, u)
        out = grid[:, x0] * (1.0 - fx) + grid[:, x1] * fx
        return np.ascontiguousarray(out.T)

    @staticmethod
    def backward(attrs, vals, out, g):
        grid = vals[0]
        c, k = grid.shape
        u = attrs["u"]
        n = u.shape[0]
        x0, x1, fx = _linear_weights(k, u)
        rows = np.concatenate([x0, x1])
        cols = np.tile(np.arange(n, dtype=np.int64), 2)
        data = np.concatenate([1.0 - fx, fx])
        mat = _sparse.coo_matrix((data, (rows, cols)), shape=(k, n)).tocsr()
        return (np.ascontiguousarray((mat @ g).T),)


def _conv_out_len(n: int, stride: int) -> int:
    # kernel 3, pad 1 on both sides
    return (n + 2 - 3) // stride + 1


def _tap_slice(arr, i, j, stride, ho, wo):
    return arr[:, :, i : i + (ho - 1) * stride + 1 : stride,
               j : j + (wo - 1) * stride + 1 : stride]


@_op("conv2d-3x3-pad1")
class _Conv3x3:
    """3x3 convolution with zero padding 1, optional stride, optional bias.

    input (N, Cin, H, W), kernel (Cout, Cin, 3, 3), bias (Cout,).
    Nine shifted-slice contractions; an im2col window view was dominating
    step time on the huge batches of tiny single-channel maps the fusion
    stage produces, which also get a direct scalar path here.
    """

    @staticmethod
    def forward(attrs, x, k, *rest):
        stride = attrs.get("stride", 1)
        _check(x.ndim == 4, "conv2d-3x3-pad1", f"input must be 4-D, got {x.shape}")
        _check(
            k.ndim == 4 and k.shape[2:] == (3, 3) and k.shape[1] == x.shape[1],
            "conv2d-3x3-pad1",
            f"kernel {k.shape} does not match input {x.shape}",
        )
        n, cin, h, w = x.shape
        cout = k.shape[0]
        ho, wo = _conv_out_len(h, stride), _conv_out_len(w, stride)
        if cin == 1 and cout == 1 and stride == 1:
            # single compiled stencil pass over the batch axis
            out = _ndimage.correlate(x[:, 0], k[0, 0][None],
                                     mode="constant")[:, None]
        else:
            xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
            out = np.zeros((n, cout, ho, wo))
            for i in range(3):
                for j in range(3):
                    out += np.einsum("nchw,oc->nohw",
                                     _tap_slice(xp, i, j, stride, ho, wo),
                                     k[:, :, i, j], optimize=True)
        if rest:
            b = rest[0]
            _check(b.shape == (k.shape[0],), "conv2d-3x3-pad1",
                   f"bias {b.shape} does not match Cout={k.shape[0]}")
            out = out + b[None, :, None, None]
        return np.ascontiguousarray(out)

    @staticmethod
    def backward(attrs, vals, out, g):
        stride = attrs.get("stride", 1)
        x, k = vals[0], vals[1]
        n, cin, h, w = x.shape
        cout = k.shape[0]
        ho, wo = g.shape[2], g.shape[3]
        gk = np.empty_like(k)
        if cin == 1 and cout == 1 and stride == 1:
            # adjoint of correlation is convolution with the same kernel
            gx = _ndimage.convolve(g[:, 0], k[0, 0][None],
                                   mode="constant")[:, None]
            xp = np.pad(x[:, 0], ((0, 0), (1, 1), (1, 1)))
            win = np.lib.stride_tricks.sliding_window_view(xp, (3, 3),
                                                           axis=(1, 2))
            gk[0, 0] = np.einsum("nhwij,nhw->ij", win, g[:, 0], optimize=True)
        else:
            xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
            gxp = np.zeros_like(xp)
            for i in range(3):
                for j in range(3):
                    xsl = _tap_slice(xp, i, j, stride, ho, wo)
                    gsl = _tap_slice(gxp, i, j, stride, ho, wo)
                    gk[:, :, i, j] = np.einsum("nohw,nchw->oc", g, xsl,
                                               optimize=True)
                    gsl += np.einsum("nohw,oc->nchw", g, k[:, :, i, j],
                                     optimize=True)
            gx = np.ascontiguousarray(gxp[:, :, 1 : 1 + h, 1 : 1 + w])
        if len(vals) == 3:
            return gx, gk, g.sum(axis=(0, 2, 3))
        return gx, gk


@_op("conv2d-1x1")
class _Conv1x1:
    """Pointwise convolution: input (N, Cin, H, W), kernel (Cout, Cin, 1, 1)."""

    @staticmethod
    def forward(attrs, x, k, *rest):
        _check(x.ndim == 4, "conv2d-1x1", f"input must be 4-D, got {x.shape}")
        _check(
            k.ndim == 4 and k.shape[2:] == (1, 1) and k.shape[1] == x.shape[1],
            "conv2d-1x1",
            f"kernel {k.shape} does not match input {x.shape}",
        )
        out = np.einsum("nchw,oc->nohw", x, k[:, :, 0, 0], optimize=True)
        if rest:
            b = rest[0]
            _check(b.shape == (k.shape[0],), "conv2d-1x1",
                   f"bias {b.shape} does not match Cout={k.shape[0]}")
            out = out + b[None, :, None, None]
        return np.ascontiguousarray(out)

    @staticmethod
    def backward(attrs, vals, out, g):
        x, k = vals[0], vals[1]
        gx = np.einsum("nohw,oc->nchw", g, k[:, :, 0, 0], optimize=True)
        gk = np.einsum("nohw,nchw->oc", g, x, optimize=True)[:, :, None, None]
        if len(vals) == 3:
            return np.ascontiguousarray(gx), gk, g.sum(axis=(0, 2, 3))
        return np.ascontiguousarray(gx), gk


@_op("upsample-nearest-2x")
class _UpNearest:
    @staticmethod
    def forward(attrs, x):
        _check(x.ndim == 4, "upsample-nearest-2x", f"input must be 4-D, got {x.shape}")
        return np.ascontiguousarray(x.repeat(2, axis=2).repeat(2, axis=3))

    @staticmethod
    def backward(attrs, vals, out, g):
        n, c, h2, w2 = g.shape
        gr = g.reshape(n, c, h2 // 2, 2, w2 // 2, 2).sum(axis=(3, 5))
        return (np.ascontiguousarray(gr),)


@_op("bilinear-resize")
class _BilinearResize:
    """Resize (N, C, H, W) to (N, C, out_h, out_w), align-corners."""

    @staticmethod
    def forward(attrs, x):
        _check(x.ndim == 4, "bilinear-resize", f"input must be 4-D, got {x.shape}")
        n, c, h, w = x.shape
        oh, ow = attrs["out_h"], attrs["out_w"]
        u = np.linspace(0.0, 1.0, oh)
        v = np.linspace(0.0, 1.0, ow)
        x0, x1, fx = _linear_weights(h, u)
        y0, y1, fy = _linear_weights(w, v)
        top = x[:, :, x0, :] * (1.0 - fx)[None, None, :, None] + x[:, :, x1, :] * fx[None, None, :, None]
        out = top[:, :, :, y0] * (1.0 - fy) + top[:, :, :, y1] * fy
        return np.ascontiguousarray(out)

    @staticmethod
    def backward(attrs, vals, out, g):
        x = vals[0]
        n, c, h, w = x.shape
        oh, ow = attrs["out_h"], attrs["out_w"]
        u = np.linspace(0.0, 1.0, oh)
        v = np.linspace(0.0, 1.0, ow)
        x0, x1, fx = _linear_weights(h, u)
        y0, y1, fy = _linear_weights(w, v)
        rmat = _sparse.coo_matrix(
            (np.concatenate([1.0 - fx, fx]),
             (np.concatenate([x0, x1]), np.tile(np.arange(oh), 2))),
            shape=(h, oh),
        ).tocsr()
        cmat = _sparse.coo_matrix(
            (np.concatenate([1.0 - fy, fy]),
             (np.concatenate([y0, y1]), np.tile(np.arange(ow), 2))),
            shape=(w, ow),
        ).tocsr()
        gr = g.reshape(n * c, oh, ow)
        tmp = np.stack([rmat @ gr[i] for i in range(n * c)])  # (NC, h, ow)
        gx = np.stack([cmat @ tmp[i].T for i in range(n * c)])  # (NC, w, h)
        gx = gx.transpose(0, 2, 1).reshape(n, c, h, w)
        return (np.ascontiguousarray(gx),)


@_op("tv2d")
class _Tv2d:
    """Mean squared forward difference along both grid axes of a (C, H, W) plane.

    Returns a scalar: mean over all horizontal pairs plus mean over all
    vertical pairs.  Constant planes score exactly zero.
    """

    @staticmethod
    def forward(attrs, p):
        _check(p.ndim == 3, "tv2d", f"plane must be (C,H,W), got {p.shape}")
        dh = p[:, 1:, :] - p[:, :-1, :]
        dw = p[:, :, 1:] - p[:, :, :-1]
        # runs on every plane every step; keep the diffs for the backward
        # pass and contract without materializing the squares
        attrs["_diffs"] = (dh, dw)
        total = 0.0
        if dh.size:
            total += np.einsum("abc,abc->", dh, dh) / dh.size
        if dw.size:
            total += np.einsum("abc,abc->", dw, dw) / dw.size
        return np.asarray(total)

    @staticmethod
    def backward(attrs, vals, out, g):
        p = vals[0]
        gp = np.zeros_like(p)
        dh, dw = attrs["_diffs"]
        if dh.size:
            scaled = (2.0 * g / dh.size) * dh
            gp[:, 1:, :] += scaled
            gp[:, :-1, :] -= scaled
        if dw.size:
            scaled = (2.0 * g / dw.size) * dw
            gp[:, :, 1:] += scaled
            gp[:, :, :-1] -= scaled
        return (gp,)


# ---------------------------------------------------------------------------
# tape

@dataclass
class _Record:
    op: Optional[str]  # None marks a leaf
    inputs: tuple[int, ...]
    attrs: dict
    value: Array


class Node:
    """Handle to one recorded value on a tape."""

    __slots__ = ("tape", "idx")

    def __init__(self, tape: "Tape", idx: int):
        self.tape = tape
        self.idx = idx

    @property
    def value(self) -> Array:
        return self.tape._records[self.idx].value

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def grad(self) -> Array:
        return self.tape.grad(self)

    # sugar for the common arithmetic; everything else goes through apply()
    def __add__(self, other: "Node") -> "Node":
        return self.tape.apply("add", self, other)

    def __sub__(self, other: "Node") -> "Node":
        return self.tape.apply("sub", self, other)

    def __mul__(self, other: "Node") -> "Node":
        return self.tape.apply("mul", self, other)

    def __matmul__(self, other: "Node") -> "Node":
        return self.tape.apply("matmul", self, other)

    def relu(self) -> "Node":
        return self.tape.apply("relu", self)

    def square(self) -> "Node":
        return self.tape.apply("square", self)

    def reshape(self, shape) -> "Node":
        return self.tape.apply("reshape", self, shape=tuple(shape))

    def sum(self, axis=None) -> "Node":
        return self.tape.apply("sum-reduce", self, axis=axis)

    def mean(self, axis=None) -> "Node":
        return self.tape.apply("mean-reduce", self, axis=axis)

    def scale(self, factor: float) -> "Node":
        return self.tape.apply("scalar-scale", self, factor=float(factor))

    def __repr__(self) -> str:
        kind = self.tape._records[self.idx].op or "leaf"
        return f"Node({kind}, shape={self.shape})"


class Tape:
    """Append-only record of a differentiable computation."""

    def __init__(self):
        self._records: list[_Record] = []
        self._grads: list[Optional[Array]] = []

    def __len__(self) -> int:
        return len(self._records)

    def leaf(self, value) -> Node:
        """Record an input value.  Returns its node handle."""
        self._records.append(_Record(None, (), {}, _as_value(value)))
        self._grads.append(None)
        return Node(self, len(self._records) - 1)

    def apply(self, op: str, *inputs: Node, **attrs) -> Node:
        """Record one primitive application and run its forward immediately."""
        if op not in _FORWARD:
            raise TapeError(f"unknown op {op!r}")
        for node in inputs:
            if node.tape is not self:
                raise TapeError(f"{op}: input node belongs to a different tape")
        vals = [self._records[n.idx].value for n in inputs]
        out = _FORWARD[op](attrs, *vals)
        self._records.append(
            _Record(op, tuple(n.idx for n in inputs), attrs, _as_value(out))
        )
        self._grads.append(None)
        return Node(self, len(self._records) - 1)

    def backward(self, root: Node) -> None:
        """Accumulate adjoints of every node w.r.t. a scalar root.

        Reverse single pass over the record list; deterministic.  Leaves not
        on a path to the root keep a zero gradient.
        """
        if root.tape is not self:
            raise TapeError("backward: root belongs to a different tape")
        if root.value.shape != ():
            raise TapeError(
                f"backward: root must be a scalar, got shape {root.value.shape}"
            )
        self._grads = [None] * len(self._records)
        self._grads[root.idx] = np.asarray(1.0)
        for i in range(root.idx, -1, -1):
            g = self._grads[i]
            if g is None:
                continue
            rec = self._records[i]
            if rec.op is None:
                continue
            vals = [self._records[j].value for j in rec.inputs]
            gins = _BACKWARD[rec.op](rec.attrs, vals, rec.value, g)
            for j, gin in zip(rec.inputs, gins):
                if self._grads[j] is None:
                    self._grads[j] = np.zeros_like(self._records[j].value)
                self._grads[j] += gin

    def grad(self, node: Node) -> Array:
        """Gradient of the last backward() root w.r.t. `node` (zeros if unused)."""
        if node.tape is not self:
            raise TapeError("grad: node belongs to a different tape")
        g = self._grads[node.idx]
        if g is None:
            return np.zeros_like(self._records[node.idx].value)
        return g


# ---------------------------------------------------------------------------
# convenience wrappers used by the model code

def bilinear_sample(tape: Tape, grid: Node, u, v) -> Node:
    """Sample grid (C, H, W) at coordinates u, v in [0,1]; returns (N, C)."""
    u = np.atleast_1d(np.asarray(u, dtype=np.float64))
    v = np.atleast_1d(np.asarray(v, dtype=np.float64))
    return tape.apply("bilinear-sample-2d", grid, u=u, v=v)


def linear_sample(tape: Tape, grid: Node, u) -> Node:
    u = np.atleast_1d(np.asarray(u, dtype=np.float64))
    return tape.apply("linear-sample-1d", grid, u=u)


def conv3x3(tape: Tape, x: Node, k: Node, bias: Optional[Node] = None,
            stride: int = 1) -> Node:
    if bias is None:
        return tape.apply("conv2d-3x3-pad1", x, k, stride=stride)
    return tape.apply("conv2d-3x3-pad1", x, k, bias, stride=stride)


def conv1x1(tape: Tape, x: Node, k: Node, bias: Optional[Node] = None) -> Node:
    if bias is None:
        return tape.apply("conv2d-1x1", x, k)
    return tape.apply("conv2d-1x1", x, k, bias)


def softmax(tape: Tape, x: Node) -> Node:
    return tape.apply("softmax-lastdim", x)


def narrow(tape: Tape, x: Node, axis: int, start: int, length: int) -> Node:
    return tape.apply("narrow", x, axis=axis, start=start, length=length)


def tv2d(tape: Tape, plane: Node) -> Node:
    return tape.apply("tv2d", plane)


def scale_rows(tape: Tape, x: Node, s: Node) -> Node:
    return tape.apply("scale-rows", x, s)


def upsample2x(tape: Tape, x: Node) -> Node:
    return tape.apply("upsample-nearest-2x", x)


def bilinear_resize(tape: Tape, x: Node, out_h: int, out_w: int) -> Node:
    return tape.apply("bilinear-resize", x, out_h=out_h, out_w=out_w)


def log1p(tape: Tape, x: Node) -> Node:
    return tape.apply("log1p", x)
