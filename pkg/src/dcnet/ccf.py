"""Cross-correlation fusion of encoder (low-level) and decoder (high-level) features."""
from __future__ import annotations

from typing import Optional

import numpy as np

from .autodiff import ops
from .autodiff.layers import ConvUnit, Module, Parameter, he_normal
from .autodiff.tensor import ShapeError, Tensor, as_tensor


def relation_matrix(x_e, x_d_up) -> Tensor:
    """Channel Gram matrix ``X_E^T X_D / (h w)`` per sample: (N, c, c)."""
    x_e, x_d_up = as_tensor(x_e), as_tensor(x_d_up)
    if x_e.shape != x_d_up.shape or x_e.ndim != 4:
        raise ShapeError("relation_matrix", f"shapes {x_e.shape} and {x_d_up.shape} differ")
    n, h, w, c = x_e.shape
    fe = ops.reshape(x_e, (n, h * w, c))
    fd = ops.reshape(x_d_up, (n, h * w, c))
    return ops.mul(ops.matmul(ops.transpose(fe, (0, 2, 1)), fd), 1.0 / (h * w))


def global_relation_vectors(m, rho_e, rho_d) -> tuple[Tensor, Tensor]:
    """Row-wise (encoder) and column-wise (decoder) projections of M; linear, bias-free."""
    m, rho_e, rho_d = as_tensor(m), as_tensor(rho_e), as_tensor(rho_d)
    c = m.shape[-1]
    if rho_e.shape != (c,) or rho_d.shape != (c,):
        raise ShapeError("global_relation_vectors", f"kernels must have length {c}, got {rho_e.shape}, {rho_d.shape}")
    batched = m.ndim == 3
    mt = ops.transpose(m, (0, 2, 1) if batched else (1, 0))
    w_e = ops.matmul(m, ops.reshape(rho_e, (c, 1)))
    w_d = ops.matmul(mt, ops.reshape(rho_d, (c, 1)))
    shape = (m.shape[0], c) if batched else (c,)
    return ops.reshape(w_e, shape), ops.reshape(w_d, shape)


class CCF(Module):
    """Fusion block of the decoder.

    ``mode`` selects the fusion: ``"ccf"`` (relation-weighted channels),
    ``"concat"`` or ``"add"`` (the plain skip-connection baselines).
    """

    def __init__(self, c: int, cout: Optional[int] = None, mode: str = "ccf",
                 rng: Optional[np.random.Generator] = None, shared_rho: bool = False):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        if mode not in ("ccf", "concat", "add"):
            raise ValueError(f"unknown fusion mode {mode!r}")
        self.c, self.mode = c, mode
        cout = c if cout is None else cout
        if mode == "ccf":
            self.rho_e = Parameter(he_normal(rng, (c,), c))
            if shared_rho:
                object.__setattr__(self, "rho_d", self.rho_e)  # alias, registered once
            else:
                self.rho_d = Parameter(he_normal(rng, (c,), c))
        self.merge = ConvUnit(c if mode == "add" else 2 * c, cout, k=3, rng=rng)

    def forward(self, x_e, x_d) -> Tensor:
        x_e, x_d = as_tensor(x_e), as_tensor(x_d)
        if x_e.ndim != 4 or x_d.ndim != 4 or x_e.shape[-1] != self.c or x_d.shape[-1] != self.c:
            raise ShapeError("ccf", f"expected {self.c}-channel NHWC inputs, got {x_e.shape}, {x_d.shape}")
        if x_e.shape[1] != 2 * x_d.shape[1] or x_e.shape[2] != 2 * x_d.shape[2]:
            raise ShapeError("ccf", f"decoder extent {x_d.shape[1:3]} is not half of encoder extent {x_e.shape[1:3]}")
        x_up = ops.upsample(x_d, 2)
        if self.mode == "concat":
            return self.merge(ops.concat([x_e, x_up]))
        if self.mode == "add":
            return self.merge(ops.add(x_e, x_up))
        n, c = x_e.shape[0], self.c
        m = relation_matrix(x_e, x_up)
        w_e, w_d = global_relation_vectors(m, self.rho_e, self.rho_d)
        xe_bar = ops.mul(x_e, ops.reshape(w_e, (n, 1, 1, c)))
        xd_bar = ops.mul(x_up, ops.reshape(w_d, (n, 1, 1, c)))
        return self.merge(ops.concat([xe_bar, xd_bar]))


def ccf_forward(x_e, x_d, module: CCF) -> Tensor:
    return module(x_e, x_d)
