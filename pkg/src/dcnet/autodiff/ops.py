"""Differentiable primitives on NHWC float64 tensors.

Each function computes its forward value with numpy and registers a closure
mapping the output gradient to one gradient per input.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .. import kernels
from .tensor import ShapeError, Tensor, as_tensor, check_inputs, make_result


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _broadcast_shape(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, f"cannot broadcast {a.shape} with {b.shape}") from None


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    check_inputs("add", a, b)
    sa, sb = a.shape, b.shape
    return make_result(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)
    check_inputs("sub", a, b)
    sa, sb = a.shape, b.shape
    return make_result(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    """Elementwise (broadcasting) product; covers the channel-wise multiply as well."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)
    check_inputs("mul", a, b)
    ad, bd = a.data, b.data

    def bw(g):
        return (
            _unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
            _unbroadcast(g * ad, bd.shape) if b.requires_grad else None,
        )

    return make_result(ad * bd, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("div", a, b)
    check_inputs("div", a, b)
    ad, bd = a.data, b.data
    out = ad / bd

    def bw(g):
        return (
            _unbroadcast(g / bd, ad.shape) if a.requires_grad else None,
            _unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None,
        )

    return make_result(out, (a, b), bw, "div")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return make_result(-a.data, (a,), lambda g: (-g,), "neg")


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    check_inputs("power", a)
    x = a.data
    out = np.power(x, exponent)
    return make_result(out, (a,), lambda g: (g * exponent * np.power(x, exponent - 1),), "power")


def exp(a) -> Tensor:
    a = as_tensor(a)
    check_inputs("exp", a)
    out = np.exp(a.data)
    return make_result(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    check_inputs("log", a)
    x = a.data
    if np.any(x <= 0):
        raise ValueError("log: input must be strictly positive")
    return make_result(np.log(x), (a,), lambda g: (g / x,), "log")


def clip(a, lo: float, hi: float) -> Tensor:
    a = as_tensor(a)
    x = a.data
    inside = (x >= lo) & (x <= hi)
    return make_result(np.clip(x, lo, hi), (a,), lambda g: (g * inside,), "clip")


def relu(a) -> Tensor:
    a = as_tensor(a)
    check_inputs("relu", a)
    mask = a.data > 0
    return make_result(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    check_inputs("sigmoid", a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return make_result(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    check_inputs("softmax", a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_result(out, (a,), bw, "softmax")


# ------------------------------------------------------------------ reductions

def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    shape = a.shape
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return make_result(np.asarray(out), (a,), bw, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def amax(a, axis=None, keepdims: bool = False) -> Tensor:
    """Maximum over ``axis``; the gradient is shared evenly among tied maxima."""
    a = as_tensor(a)
    x = a.data
    if x.size == 0:
        raise ShapeError("amax", "empty tensor")
    m = x.max(axis=axis, keepdims=True)
    hit = (x == m).astype(np.float64)
    hit /= hit.sum(axis=axis, keepdims=True)
    out = m if keepdims else np.squeeze(m, axis=axis) if axis is not None else m.reshape(())

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axis) if axis is not None else np.reshape(g, (1,) * x.ndim)
        return (hit * g,)

    return make_result(np.asarray(out), (a,), bw, "amax")


# -------------------------------------------------------------------- shaping

def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", f"cannot reshape {old} to {shape}") from None
    return make_result(out, (a,), lambda g: (g.reshape(old),), "reshape")


def flatten(a) -> Tensor:
    a = as_tensor(a)
    return reshape(a, (a.shape[0], -1))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return make_result(np.ascontiguousarray(a.data.transpose(axes)), (a,), lambda g: (g.transpose(inv),), "transpose")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", f"incompatible operands {a.shape} @ {b.shape}")
    check_inputs("matmul", a, b)
    ad, bd = a.data, b.data

    def bw(g):
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape) if b.requires_grad else None
        return ga, gb

    return make_result(ad @ bd, (a, b), bw, "matmul")


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    """Join along ``axis`` (channels by default)."""
    ts = [as_tensor(t) for t in tensors]
    ref = ts[0].shape
    ax = axis % len(ref)
    for t in ts[1:]:
        if t.ndim != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise ShapeError("concat", f"extents {ref} and {t.shape} differ off axis {axis}")
    sizes = [t.shape[ax] for t in ts]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=ax) for i in range(len(ts)))

    return make_result(np.concatenate([t.data for t in ts], axis=ax), ts, bw, "concat")


def split(a, sizes: Sequence[int], axis: int = -1) -> list[Tensor]:
    a = as_tensor(a)
    ax = axis % a.ndim
    if int(np.sum(sizes)) != a.shape[ax]:
        raise ShapeError("split", f"sizes {list(sizes)} do not sum to extent {a.shape[ax]}")
    outs, start = [], 0
    for s in sizes:
        idx = np.arange(start, start + s)
        shape = a.shape

        def bw(g, idx=idx, shape=shape):
            full = np.zeros(shape)
            sl = [slice(None)] * len(shape)
            sl[ax] = slice(idx[0], idx[-1] + 1) if len(idx) else slice(0, 0)
            full[tuple(sl)] = g
            return (full,)

        outs.append(make_result(np.take(a.data, idx, axis=ax), (a,), bw, "split"))
        start += s
    return outs


# -------------------------------------------------------------- convolution

def _same_pads(size: int, k: int, stride: int, dilation: int) -> tuple[int, int]:
    eff = dilation * (k - 1) + 1
    out = -(-size // stride)
    total = max((out - 1) * stride + eff - size, 0)
    return total // 2, total - total // 2


def conv2d(x, w, b=None, stride: int = 1, dilation: int = 1, padding: str = "same") -> Tensor:
    """2-D convolution, NHWC input and (kh, kw, cin, cout) kernel.

    ``padding`` is ``"same"`` (zeros), ``"cyclic"`` (wrap-around, same extent)
    or ``"valid"``.
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError("conv2d", f"expected NHWC input and 4-d kernel, got {x.shape}, {w.shape}")
    n, h, wd, cin = x.shape
    kh, kw, wcin, cout = w.shape
    if wcin != cin:
        raise ShapeError("conv2d", f"input has {cin} channels, kernel expects {wcin}")
    if b is not None:
        b = as_tensor(b)
        if b.shape != (cout,):
            raise ShapeError("conv2d", f"bias shape {b.shape} != ({cout},)")
    check_inputs("conv2d", x, w, *(() if b is None else (b,)))

    if padding == "valid":
        pt = pb = pl = pr = 0
    elif padding in ("same", "cyclic"):
        pt, pb = _same_pads(h, kh, stride, dilation)
        pl, pr = _same_pads(wd, kw, stride, dilation)
    else:
        raise ValueError(f"conv2d: unknown padding {padding!r}")
    hp, wp = h + pt + pb, wd + pl + pr
    ho = (hp - dilation * (kh - 1) - 1) // stride + 1
    wo = (wp - dilation * (kw - 1) - 1) // stride + 1
    if ho <= 0 or wo <= 0:
        raise ShapeError("conv2d", f"kernel {kh}x{kw} (dilation {dilation}) larger than input {h}x{wd}")

    pointwise = kh == 1 and kw == 1 and stride == 1 and pt == pb == pl == pr == 0
    if pointwise:
        xp = x.data
        cols = x.data.reshape(-1, cin)
    else:
        if padding == "cyclic":
            rows = (np.arange(hp) - pt) % h
            colsi = (np.arange(wp) - pl) % wd
            xp = np.ascontiguousarray(x.data[:, rows][:, :, colsi])
        elif pt or pb or pl or pr:
            xp = np.zeros((n, hp, wp, cin))
            xp[:, pt:pt + h, pl:pl + wd, :] = x.data
        else:
            xp = np.ascontiguousarray(x.data)
        cols = kernels.im2col(xp, kh, kw, stride, dilation, ho, wo)
    w2 = w.data.reshape(kh * kw * cin, cout)
    out = cols @ w2
    if b is not None:
        out += b.data
    out = out.reshape(n, ho, wo, cout)

    def bw(g):
        g2 = g.reshape(-1, cout)
        gw = (cols.T @ g2).reshape(w.shape) if w.requires_grad else None
        gb = g2.sum(axis=0) if (b is not None and b.requires_grad) else None
        gx = None
        if x.requires_grad:
            dcols = g2 @ w2.T
            if pointwise:
                gx = dcols.reshape(x.shape)
            else:
                dxp = kernels.col2im(np.ascontiguousarray(dcols), xp.shape, kh, kw, stride, dilation, ho, wo)
                if padding == "cyclic":
                    gx = np.zeros(x.shape)
                    tmp = np.zeros((n, h, wp, cin))
                    np.add.at(tmp, (slice(None), rows), dxp)
                    np.add.at(gx, (slice(None), slice(None), colsi), tmp)
                else:
                    gx = dxp[:, pt:pt + h, pl:pl + wd, :]
        return (gx, gw) if b is None else (gx, gw, gb)

    parents = (x, w) if b is None else (x, w, b)
    return make_result(out, parents, bw, "conv2d")


# ------------------------------------------------------------ pooling/resize

def _check_divisible(op, x, k):
    if x.ndim != 4:
        raise ShapeError(op, f"expected NHWC input, got {x.shape}")
    if x.shape[1] % k or x.shape[2] % k:
        raise ShapeError(op, f"extent {x.shape[1]}x{x.shape[2]} not divisible by {k}")


def max_pool(x, k: int = 2) -> Tensor:
    x = as_tensor(x)
    _check_divisible("max_pool", x, k)
    check_inputs("max_pool", x)
    out, arg = kernels.maxpool_forward(np.ascontiguousarray(x.data), k)
    shape = x.shape
    return make_result(out, (x,), lambda g: (kernels.maxpool_backward(np.ascontiguousarray(g), arg, k, shape),), "max_pool")


def avg_pool(x, k: int = 2) -> Tensor:
    x = as_tensor(x)
    _check_divisible("avg_pool", x, k)
    n, h, w, c = x.shape
    out = x.data.reshape(n, h // k, k, w // k, k, c).mean(axis=(2, 4))

    def bw(g):
        return (np.repeat(np.repeat(g, k, axis=1), k, axis=2) / (k * k),)

    return make_result(out, (x,), bw, "avg_pool")


def global_avg_pool(x, keepdims: bool = False) -> Tensor:
    """Mean over the spatial extents: (N, H, W, C) -> (N, C)."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError("global_avg_pool", f"expected NHWC input, got {x.shape}")
    n, h, w, c = x.shape
    out = x.data.mean(axis=(1, 2), keepdims=keepdims)

    def bw(g):
        g = g.reshape(n, 1, 1, c)
        return (np.broadcast_to(g / (h * w), x.shape).copy(),)

    return make_result(out, (x,), bw, "global_avg_pool")


def upsample(x, k: int = 2) -> Tensor:
    """Nearest-neighbour upsampling by an integer factor."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError("upsample", f"expected NHWC input, got {x.shape}")
    n, h, w, c = x.shape
    out = np.repeat(np.repeat(x.data, k, axis=1), k, axis=2)

    def bw(g):
        return (g.reshape(n, h, k, w, k, c).sum(axis=(2, 4)),)

    return make_result(out, (x,), bw, "upsample")


# ------------------------------------------------------------ normalization

def batch_norm(x, gamma, beta, running_mean: np.ndarray, running_var: np.ndarray,
               training: bool, momentum: float = 0.9, eps: float = 1e-5) -> Tensor:
    """Per-channel normalization over every axis but the last.

    In training mode batch statistics are used and the running buffers are
    updated in place as ``momentum * running + (1 - momentum) * batch``.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError("batch_norm", f"scale/shift must have shape ({c},), got {gamma.shape}, {beta.shape}")
    check_inputs("batch_norm", x, gamma, beta)
    shape = x.shape
    xd = x.data.reshape(-1, c)
    count = xd.shape[0]
    ones = np.ones(count)
    if training:
        # column sums through BLAS are much faster than strided reductions for small c
        mu = ones @ xd / count
        xc = xd - mu
        var = ones @ (xc * xc) / count
        running_mean *= momentum
        running_mean += (1.0 - momentum) * mu
        running_var *= momentum
        running_var += (1.0 - momentum) * (var * count / max(count - 1, 1))
    else:
        mu, var = running_mean.copy(), running_var.copy()
        xc = xd - mu
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = (xhat * gamma.data + beta.data).reshape(shape)

    def bw(g):
        g = g.reshape(-1, c)
        ggamma = ones @ (g * xhat)
        gbeta = ones @ g
        if training:
            gx = (gamma.data * inv / count) * (count * g - gbeta - xhat * ggamma)
        else:
            gx = g * (gamma.data * inv)
        return gx.reshape(shape), ggamma, gbeta

    return make_result(out, (x, gamma, beta), bw, "batch_norm")


# ------------------------------------------------------------ context pooling

def indicator_sum(m: int, tau: int) -> int:
    """Number of ones in the m x m band matrix of half-width ``tau``."""
    if tau >= m - 1:
        return m * m
    return m * (2 * tau + 1) - tau * (tau + 1)


def window_flatten(a: np.ndarray, r: int) -> np.ndarray:
    """(N, H, W, C) -> (N*C, m, r*r), windows row-major, pixels row-major inside each."""
    n, h, w, c = a.shape
    v = a.reshape(n, h // r, r, w // r, r, c).transpose(0, 5, 1, 3, 2, 4)
    return np.ascontiguousarray(v.reshape(n * c, (h // r) * (w // r), r * r))


def window_unflatten(a: np.ndarray, shape: tuple, r: int) -> np.ndarray:
    n, h, w, c = shape
    v = a.reshape(n, c, h // r, w // r, r, r).transpose(0, 2, 4, 3, 5, 1)
    return np.ascontiguousarray(v.reshape(shape))


def context_pool_banded(z, delta, tau: int, r: int = 2) -> Tensor:
    """Banded context pooling with a per-window kernel map.

    ``z`` and ``delta`` share the NHWC shape. Output entry p of channel k is
    ``(m / sum(H)) * sum_{|q-p|<=tau} <z window p, delta window q>``, which
    is the row sum of ``H * (Z_flat @ Delta_flat^T)`` evaluated in O(m) per row.
    """
    z, delta = as_tensor(z), as_tensor(delta)
    if z.shape != delta.shape:
        raise ShapeError("context_pool", f"feature {z.shape} and kernel {delta.shape} differ")
    _check_divisible("context_pool", z, r)
    if tau < 0:
        raise ValueError("context_pool: tau must be >= 0")
    check_inputs("context_pool", z, delta)
    n, h, w, c = z.shape
    ho, wo = h // r, w // r
    m = ho * wo
    scale = m / indicator_sum(m, tau)
    zf = window_flatten(z.data, r)
    df = window_flatten(delta.data, r)
    dband = kernels.band_sum(df, tau)
    flat = scale * np.einsum("bpv,bpv->bp", zf, dband)
    out = np.ascontiguousarray(flat.reshape(n, c, ho, wo).transpose(0, 2, 3, 1))

    def bw(g):
        gf = scale * np.ascontiguousarray(g.transpose(0, 3, 1, 2)).reshape(n * c, m, 1)
        gz = window_unflatten(gf * dband, z.shape, r) if z.requires_grad else None
        gd = None
        if delta.requires_grad:
            gd = window_unflatten(kernels.band_sum(np.ascontiguousarray(gf * zf), tau), z.shape, r)
        return gz, gd

    return make_result(out, (z, delta), bw, "context_pool")
