"""Differentiable context pooling.

Features and kernels are flattened window by window (windows row-major,
pixels row-major inside a window) into ``m x r^2`` matrices. A band
indicator matrix of half-width ``tau`` decides which window/kernel pairs
contribute to each pooled value.
"""
from __future__ import annotations

from typing import Optional

import numpy as np

from .autodiff import ops
from .autodiff.layers import Module, Parameter, he_normal
from .autodiff.tensor import ShapeError, Tensor, as_tensor


def _as_nhwc(z) -> Tensor:
    z = as_tensor(z)
    if z.ndim == 2:
        return ops.reshape(z, (1, z.shape[0], z.shape[1], 1))
    return z


def classic_pool(z, kernel, r: int = 2) -> Tensor:
    """Window-wise weighted sum ``sum(Z_window * delta_window)``.

    ``kernel`` has the same layout as ``z`` (each r x r window carries its own
    weights). A 2-D ``z`` is treated as a single-channel image.
    """
    z2, k2 = _as_nhwc(z), _as_nhwc(kernel)
    if z2.shape != k2.shape:
        raise ShapeError("classic_pool", f"feature {z2.shape} and kernel {k2.shape} differ")
    if z2.shape[1] % r or z2.shape[2] % r:
        raise ShapeError("classic_pool", f"window {r} does not divide extent {z2.shape[1]}x{z2.shape[2]}")
    out = ops.mul(ops.avg_pool(ops.mul(z2, k2), r), float(r * r))
    if as_tensor(z).ndim == 2:
        return ops.reshape(out, out.shape[1:3])
    return out


def indicator_matrix(m: int, tau: int) -> np.ndarray:
    if m < 1 or tau < 0:
        raise ValueError(f"indicator_matrix needs m >= 1 and tau >= 0, got m={m}, tau={tau}")
    idx = np.arange(m)
    return (np.abs(idx[:, None] - idx[None, :]) <= tau).astype(np.float64)


def flatten_windows(z: np.ndarray, r: int = 2) -> np.ndarray:
    """(H, W) -> (m, r*r) using the window order of the pooling operator."""
    h, w = z.shape
    return z.reshape(h // r, r, w // r, r).transpose(0, 2, 1, 3).reshape(-1, r * r)


def context_pool(z_flat, delta_flat, h) -> Tensor:
    """``(m / sum(H)) * (H * (Z_flat @ Delta_flat^T)) @ 1`` for any leading batch axes."""
    z_flat, delta_flat = as_tensor(z_flat), as_tensor(delta_flat)
    h = np.asarray(h, dtype=np.float64)
    m = z_flat.shape[-2]
    if z_flat.shape != delta_flat.shape:
        raise ShapeError("context_pool", f"Z {z_flat.shape} and Delta {delta_flat.shape} differ")
    if h.shape != (m, m):
        raise ShapeError("context_pool", f"indicator must be {m}x{m}, got {h.shape}")
    axes = list(range(delta_flat.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    u = ops.matmul(z_flat, ops.transpose(delta_flat, axes))
    return ops.mul(ops.sum(ops.mul(u, h), axis=-1), m / h.sum())


class DCP(Module):
    """Learnable context pooling with r = 2.

    The kernel map is a depthwise 2x2 stride-2 convolution with r^2 outputs
    per channel: window p of channel k yields its own 2x2 pooling weights,
    which are then pooled against the features with band half-width ``tau``.
    """

    r = 2

    def __init__(self, c: int, tau: int = 1, rng: Optional[np.random.Generator] = None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        if tau < 0:
            raise ValueError("tau must be >= 0")
        self.c, self.tau = c, tau
        rr = self.r * self.r
        self.weight = Parameter(he_normal(rng, (self.r, self.r, c, rr), rr))
        self.bias = Parameter(np.zeros((c, rr)))

    def kernel_map(self, z: Tensor) -> Tensor:
        n, h, w, c = z.shape
        r, rr = self.r, self.r * self.r
        win = ops.reshape(z, (n, h // r, r, w // r, r, c))
        win = ops.transpose(win, (0, 1, 3, 5, 2, 4))
        win = ops.reshape(win, (n, h // r, w // r, c, 1, rr))
        wk = ops.transpose(ops.reshape(self.weight, (rr, c, rr)), (1, 0, 2))  # (c, pixel, entry)
        delta = ops.add(ops.matmul(win, wk), ops.reshape(self.bias, (c, 1, rr)))
        delta = ops.reshape(delta, (n, h // r, w // r, c, r, r))
        delta = ops.transpose(delta, (0, 1, 4, 2, 5, 3))
        return ops.reshape(delta, (n, h, w, c))

    def forward(self, z) -> Tensor:
        z = as_tensor(z)
        if z.ndim != 4 or z.shape[-1] != self.c:
            raise ShapeError("dcp", f"expected (N, H, W, {self.c}) input, got {z.shape}")
        if z.shape[1] % self.r or z.shape[2] % self.r:
            raise ShapeError("dcp", f"odd spatial extent {z.shape[1]}x{z.shape[2]}")
        return ops.context_pool_banded(z, self.kernel_map(z), self.tau, self.r)

    def macs(self, h: int, w: int) -> int:
        m = (h // self.r) * (w // self.r)
        rr = self.r * self.r
        return m * self.c * (rr * rr + rr * (2 * self.tau + 1))


def dcp_forward(z, module: DCP) -> Tensor:
    return module(z)
