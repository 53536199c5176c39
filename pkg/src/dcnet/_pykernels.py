"""Pure-numpy reference kernels.

Used when the compiled ``_ckernels`` extension is unavailable, or when
``DCNET_PURE_PYTHON=1`` is set. Every function here has a byte-for-byte
compatible twin in ``_ckernels.pyx``.
"""
import numpy as np
from numpy.lib.stride_tricks import as_strided


def im2col(xp, kh, kw, stride, dilation, ho, wo):
    """Unfold a padded NHWC array into a (N*ho*wo, kh*kw*C) patch matrix."""
    n, _, _, c = xp.shape
    xp = np.ascontiguousarray(xp)
    s_n, s_h, s_w, s_c = xp.strides
    view = as_strided(
        xp,
        shape=(n, ho, wo, kh, kw, c),
        strides=(s_n, s_h * stride, s_w * stride, s_h * dilation, s_w * dilation, s_c),
        writeable=False,
    )
    return view.reshape(n * ho * wo, kh * kw * c)


def col2im(cols, xp_shape, kh, kw, stride, dilation, ho, wo):
    """Scatter-add a patch matrix back onto a padded NHWC array (adjoint of im2col)."""
    n, _, _, c = xp_shape
    out = np.zeros(xp_shape, dtype=np.float64)
    cols6 = cols.reshape(n, ho, wo, kh, kw, c)
    h_span = (ho - 1) * stride + 1
    w_span = (wo - 1) * stride + 1
    for i in range(kh):
        hi = i * dilation
        for j in range(kw):
            wj = j * dilation
            out[:, hi:hi + h_span:stride, wj:wj + w_span:stride, :] += cols6[:, :, :, i, j, :]
    return out


def band_sum(a, tau):
    """Sum each row of ``a`` (B, m, K) over its neighbours within ``tau`` along axis 1."""
    b, m, k = a.shape
    csum = np.zeros((b, m + 1, k), dtype=np.float64)
    np.cumsum(a, axis=1, out=csum[:, 1:, :])
    idx = np.arange(m)
    hi = np.minimum(idx + tau, m - 1) + 1
    lo = np.maximum(idx - tau, 0)
    return csum[:, hi, :] - csum[:, lo, :]


def maxpool_forward(x, k):
    """Non-overlapping k x k max pooling; returns output and flat in-window argmax."""
    n, h, w, c = x.shape
    win = x.reshape(n, h // k, k, w // k, k, c).transpose(0, 1, 3, 5, 2, 4)
    win = win.reshape(n, h // k, w // k, c, k * k)
    arg = np.argmax(win, axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    return np.ascontiguousarray(out), arg.astype(np.int64)


def maxpool_backward(g, arg, k, shape):
    n, h, w, c = shape
    ho, wo = h // k, w // k
    win = np.zeros((n, ho, wo, c, k * k), dtype=np.float64)
    np.put_along_axis(win, arg[..., None], g[..., None], axis=-1)
    win = win.reshape(n, ho, wo, c, k, k).transpose(0, 1, 4, 2, 5, 3)
    return np.ascontiguousarray(win.reshape(n, h, w, c))
