"""Differentiable primitives.

Every function takes and returns :class:`Tensor`; the backward closure maps
the upstream gradient to one gradient per input (``None`` for constants).
"""
from __future__ import annotations

import numpy as np
from scipy.special import erf, expit

from .tensor import Tensor, as_tensor, make_result

try:
    from . import _dwconv
except ImportError:  # extension not built; numpy loops below
    _dwconv = None

_SQRT_2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _const_like(x, ref: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=ref.dtype))


# -- elementwise arithmetic -------------------------------------------------

def add(a, b) -> Tensor:
    a = as_tensor(a)
    b = _const_like(b, a)
    out = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_result(out, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a = _const_like(a, b)
    b = _const_like(b, a)
    out = a.data - b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_result(out, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    b = _const_like(b, a)
    out = a.data * b.data

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_result(out, (a, b), backward, "mul")


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return make_result(out, (x,), lambda g: (g * out,), "exp")


def abs(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    return make_result(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),), "abs")


def square(x: Tensor) -> Tensor:
    return make_result(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,), "square")


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)
    return make_result(s, (x,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def silu(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)
    out = x.data * s
    return make_result(out, (x,), lambda g: (g * (s + out * (1.0 - s)),), "silu")


def gelu(x: Tensor) -> Tensor:
    """Exact (erf) GELU."""
    cdf = 0.5 * (1.0 + erf(x.data / _SQRT_2))
    out = x.data * cdf

    def backward(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x.data * x.data)
        return (g * (cdf + x.data * pdf),)

    return make_result(out, (x,), backward, "gelu")


def softplus(x: Tensor) -> Tensor:
    out = np.logaddexp(0.0, x.data).astype(x.dtype, copy=False)
    return make_result(out, (x,), lambda g: (g * _sigmoid(x.data),), "softplus")


def _sigmoid(v: np.ndarray) -> np.ndarray:
    return expit(v)


# -- reductions and shape ops ----------------------------------------------

def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return make_result(np.asarray(out), (x,), backward, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = np.mean(x.data, axis=axis, keepdims=keepdims)
    n = x.size // max(np.asarray(out).size, 1)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, x.shape).copy(),)

    return make_result(np.asarray(out), (x,), backward, "mean")


def reshape(x: Tensor, shape) -> Tensor:
    out = x.data.reshape(shape)
    return make_result(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = np.ascontiguousarray(x.data.transpose(axes))
    return make_result(out, (x,), lambda g: (g.transpose(inv),), "transpose")


def getitem(x: Tensor, key) -> Tensor:
    """Basic (non-fancy) slicing."""
    out = np.array(x.data[key])

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[key] = g
        return (gx,)

    return make_result(out, (x,), backward, "getitem")


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return make_result(out, tuple(tensors), backward, "concat")


def split(x: Tensor, sections: int, axis: int = 0) -> list[Tensor]:
    n = x.shape[axis] // sections
    idx = [slice(None)] * x.ndim
    parts = []
    for i in range(sections):
        idx[axis] = slice(i * n, (i + 1) * n)
        parts.append(getitem(x, tuple(idx)))
    return parts


def take(x: Tensor, indices: np.ndarray, axis: int) -> Tensor:
    """Gather along ``axis``; repeated indices accumulate in backward."""
    indices = np.asarray(indices, dtype=np.intp)
    out = np.take(x.data, indices, axis=axis)

    def backward(g):
        gx = np.zeros_like(x.data)
        moved = np.moveaxis(gx, axis, 0)
        np.add.at(moved, indices, np.moveaxis(g, axis, 0))
        return (gx,)

    return make_result(out, (x,), backward, "take")


def take_along(x: Tensor, indices: np.ndarray, axis: int) -> Tensor:
    """Per-row gather (``np.take_along_axis``) with duplicate-safe backward."""
    indices = np.asarray(indices, dtype=np.intp)
    out = np.take_along_axis(x.data, indices, axis=axis)

    def backward(g):
        gx = np.zeros_like(x.data)
        full = np.broadcast_to(indices, g.shape)
        grid = list(np.indices(g.shape, sparse=True))
        grid[axis] = full
        np.add.at(gx, tuple(grid), g)
        return (gx,)

    return make_result(out, (x,), backward, "take_along")


def permute_flat(x: Tensor, perm: np.ndarray, shape) -> Tensor:
    """``x.ravel()[perm].reshape(shape)`` for a bijective ``perm``."""
    perm = np.asarray(perm, dtype=np.intp)
    if perm.size != x.size:
        raise ValueError(f"permutation of length {perm.size} for tensor of size {x.size}")
    out = x.data.reshape(-1)[perm].reshape(shape)

    def backward(g):
        gx = np.empty(x.size, dtype=g.dtype)
        gx[perm] = g.reshape(-1)
        return (gx.reshape(x.shape),)

    return make_result(out, (x,), backward, "permute_flat")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = np.matmul(a.data, b.data)

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return make_result(out, (a, b), backward, "matmul")


def pad_reflect(x: Tensor, pad_h: tuple[int, int], pad_w: tuple[int, int]) -> Tensor:
    """Reflect-pad the last two axes (edge pixel not repeated)."""
    H, W = x.shape[-2:]
    ih = np.pad(np.arange(H), pad_h, mode="reflect")
    iw = np.pad(np.arange(W), pad_w, mode="reflect")
    out = x.data[..., ih[:, None], iw[None, :]]

    def backward(g):
        gx = np.zeros(x.shape[:-2] + (H * W,), dtype=g.dtype)
        flat = (ih[:, None] * W + iw[None, :]).ravel()
        lead = g.reshape(-1, flat.size)
        gx2 = gx.reshape(-1, H * W)
        for row in range(lead.shape[0]):
            gx2[row] = np.bincount(flat, weights=lead[row], minlength=H * W)
        return (gx.reshape(x.shape),)

    return make_result(out, (x,), backward, "pad_reflect")


# -- layers -----------------------------------------------------------------

def linear(x: Tensor, W: Tensor, b: Tensor | None = None) -> Tensor:
    """Affine map over the last axis: ``x @ W.T + b``."""
    if x.shape[-1] != W.shape[1]:
        raise ValueError(f"linear: input width {x.shape[-1]} != weight fan-in {W.shape[1]}")
    out = x.data @ W.data.T
    if b is not None:
        if b.shape != (W.shape[0],):
            raise ValueError(f"linear: bias shape {b.shape} != ({W.shape[0]},)")
        out = out + b.data
    inputs = (x, W) if b is None else (x, W, b)

    def backward(g):
        gx = g @ W.data if x.requires_grad else None
        gW = g.reshape(-1, g.shape[-1]).T @ x.data.reshape(-1, x.shape[-1])
        grads = [gx, gW]
        if b is not None:
            grads.append(g.reshape(-1, g.shape[-1]).sum(axis=0))
        return grads

    return make_result(out, inputs, backward, "linear")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5, axis: int = -1) -> Tensor:
    """Normalize to zero mean / unit variance along ``axis`` then apply gamma, beta."""
    if eps <= 0:
        raise ValueError("layer_norm: eps must be positive")
    axis = axis % x.ndim
    C = x.shape[axis]
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ValueError(f"layer_norm: expected ({C},) affine params, got {gamma.shape}, {beta.shape}")
    bshape = [1] * x.ndim
    bshape[axis] = C
    g_ = gamma.data.reshape(bshape)
    b_ = beta.data.reshape(bshape)
    mu = x.data.mean(axis=axis, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=axis, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    out = xhat * g_ + b_
    red = tuple(i for i in range(x.ndim) if i != axis)

    def backward(g):
        gxhat = g * g_
        gx = rstd * (gxhat - gxhat.mean(axis=axis, keepdims=True)
                     - xhat * (gxhat * xhat).mean(axis=axis, keepdims=True))
        return gx, (g * xhat).sum(axis=red), g.sum(axis=red)

    return make_result(out, (x, gamma, beta), backward, "layer_norm")


def _pad_hw(a: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return a
    return np.pad(a, ((0, 0), (0, 0), (p, p), (p, p)))


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, Ho: int, Wo: int) -> np.ndarray:
    """[N, C, Hp, Wp] -> [N, C*kh*kw, Ho*Wo] patch columns."""
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride][:, :, :Ho, :Wo]  # [N, C, Ho, Wo, kh, kw]
    N, C = xp.shape[:2]
    return win.transpose(0, 1, 4, 5, 2, 3).reshape(N, C * kh * kw, Ho * Wo)


def conv2d(x: Tensor, k: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation, NCHW input, OIHW kernel, zero padding."""
    if stride < 1:
        raise ValueError("conv2d: stride must be >= 1")
    N, Cin, H, W = x.shape
    Cout, Cin_k, kh, kw = k.shape
    if Cin_k != Cin:
        raise ValueError(f"conv2d: kernel expects {Cin_k} input channels, got {Cin}")
    Hp, Wp = H + 2 * padding, W + 2 * padding
    if kh > Hp or kw > Wp:
        raise ValueError("conv2d: kernel larger than padded input")
    if kh == 1 and kw == 1 and stride == 1 and padding == 0:
        return channel_linear(x, reshape(k, (Cout, Cin)), b)
    Ho = (Hp - kh) // stride + 1
    Wo = (Wp - kw) // stride + 1
    xp = _pad_hw(x.data, padding)
    cols = _im2col(xp, kh, kw, stride, Ho, Wo)
    kmat = k.data.reshape(Cout, -1)
    out = np.matmul(kmat, cols)
    if b is not None:
        out += b.data[None, :, None]
    out = out.reshape(N, Cout, Ho, Wo)
    inputs = (x, k) if b is None else (x, k, b)

    def backward(g):
        gf = g.reshape(N, Cout, Ho * Wo)
        gk = np.matmul(gf, cols.transpose(0, 2, 1)).sum(axis=0).reshape(k.shape)
        gx = None
        if x.requires_grad:
            gcols = np.matmul(kmat.T, gf).reshape(N, Cin, kh, kw, Ho, Wo)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += gcols[:, :, i, j]
            gx = gxp[:, :, padding:padding + H, padding:padding + W] if padding else gxp
        grads = [gx, gk]
        if b is not None:
            grads.append(gf.sum(axis=(0, 2)))
        return grads

    return make_result(out, inputs, backward, "conv2d")


def dwconv2d(x: Tensor, k: Tensor, b: Tensor | None = None, padding: int = 0) -> Tensor:
    """Depthwise cross-correlation: channel c sees only kernel k[c, 0]."""
    N, C, H, W = x.shape
    if k.shape[0] != C or k.shape[1] != 1:
        raise ValueError(f"dwconv2d: kernel shape {k.shape} incompatible with {C} channels")
    _, _, kh, kw = k.shape
    Hp, Wp = H + 2 * padding, W + 2 * padding
    if kh > Hp or kw > Wp:
        raise ValueError("dwconv2d: kernel larger than padded input")
    Ho, Wo = Hp - kh + 1, Wp - kw + 1
    dtype = np.result_type(x.data, k.data)
    xp = np.ascontiguousarray(_pad_hw(x.data, padding), dtype=dtype)
    kk = np.ascontiguousarray(k.data[:, 0], dtype=dtype)
    out = np.empty((N, C, Ho, Wo), dtype=dtype)
    if _dwconv is not None:
        _dwconv.dw_forward(xp, kk, out)
    else:
        out[...] = 0
        for i in range(kh):
            for j in range(kw):
                out += xp[:, :, i:i + Ho, j:j + Wo] * kk[None, :, i, j, None, None]
    if b is not None:
        out += b.data[None, :, None, None]
    inputs = (x, k) if b is None else (x, k, b)

    def backward(g):
        g = np.ascontiguousarray(g, dtype=dtype)
        gxp = np.zeros_like(xp)
        if _dwconv is not None:
            gk = np.zeros_like(kk)
            _dwconv.dw_backward(g, xp, kk, gxp, gk)
        else:
            gk = np.empty_like(kk)
            for i in range(kh):
                for j in range(kw):
                    gk[:, i, j] = np.einsum("nchw,nchw->c", g, xp[:, :, i:i + Ho, j:j + Wo])
                    gxp[:, :, i:i + Ho, j:j + Wo] += g * kk[None, :, i, j, None, None]
        gx = gxp[:, :, padding:padding + H, padding:padding + W] if padding else gxp
        grads = [gx, gk[:, None]]
        if b is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    return make_result(out, inputs, backward, "dwconv2d")


def resize(x: Tensor, mh: np.ndarray, mw: np.ndarray) -> Tensor:
    """Separable linear resampling of the last two axes: ``mh @ x @ mw.T``."""
    mh = mh.astype(x.dtype, copy=False)
    mw = mw.astype(x.dtype, copy=False)
    out = np.matmul(np.matmul(mh, x.data), mw.T)
    return make_result(out, (x,), lambda g: (np.matmul(np.matmul(mh.T, g), mw),), "resize")


def channel_linear(x: Tensor, W: Tensor, b: Tensor | None = None) -> Tensor:
    """``linear`` applied over axis 1 of an NCHW tensor (a 1x1 convolution)."""
    N, C, H, Wd = x.shape
    if C != W.shape[1]:
        raise ValueError(f"channel_linear: input channels {C} != weight fan-in {W.shape[1]}")
    xf = x.data.reshape(N, C, H * Wd)
    out = np.matmul(W.data, xf)
    if b is not None:
        out += b.data[None, :, None]
    out = out.reshape(N, W.shape[0], H, Wd)
    inputs = (x, W) if b is None else (x, W, b)

    def backward(g):
        gf = g.reshape(N, W.shape[0], H * Wd)
        gx = np.matmul(W.data.T, gf).reshape(x.shape) if x.requires_grad else None
        gW = np.matmul(gf, xf.transpose(0, 2, 1)).sum(axis=0)
        grads = [gx, gW]
        if b is not None:
            grads.append(gf.sum(axis=(0, 2)))
        return grads

    return make_result(out, inputs, backward, "channel_linear")
