"""Coupler: dependency-aware reinforcement, aggregation units and the auxiliary stream."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .autodiff import ops
from .autodiff.layers import Conv2d, ConvUnit, Module
from .autodiff.tensor import ShapeError, Tensor, as_tensor
from .saliency import self_reversal

DILATIONS = (1, 3, 5)


@dataclass
class PrototypePair:
    key: Tensor
    value: Tensor


class PyramidBranch(Module):
    """Dilated f3x3 units (rates 1, 3, 5) -> concat -> GAP -> 1x1 conv to ``c`` channels."""

    def __init__(self, c: int, rng: Optional[np.random.Generator] = None):
        super().__init__()
        self.c = c
        self.units = [self.add_module(f"d{d}", ConvUnit(c, c, k=3, dilation=d, rng=rng)) for d in DILATIONS]
        self.merge = Conv2d(3 * c, c, k=1, rng=rng)

    def forward(self, x) -> Tensor:
        feats = ops.concat([u(x) for u in self.units])
        pooled = ops.global_avg_pool(feats, keepdims=True)
        out = self.merge(pooled)
        return ops.reshape(out, (out.shape[0], self.c))


class Prototypes(Module):
    def __init__(self, c: int, rng: Optional[np.random.Generator] = None):
        super().__init__()
        self.c = c
        self.key = PyramidBranch(c, rng)
        self.value = PyramidBranch(c, rng)

    def forward(self, fb_rev) -> PrototypePair:
        fb_rev = as_tensor(fb_rev)
        if fb_rev.ndim != 4 or fb_rev.shape[-1] != self.c:
            raise ShapeError("pyramid_prototypes", f"expected {self.c} channels, got shape {fb_rev.shape}")
        return PrototypePair(self.key(fb_rev), self.value(fb_rev))


def pyramid_prototypes(fb_rev, module: Prototypes) -> PrototypePair:
    return module(fb_rev)


def dependency_attend(f_f, key, value) -> tuple[Tensor, Tensor]:
    """``sigmoid(F_f K^T) V`` on the flattened foreground embedding.

    Returns the complementary representation (N, h, w, c) and the attention
    map (N, h, w, 1).
    """
    f_f, key, value = as_tensor(f_f), as_tensor(key), as_tensor(value)
    n, h, w, c = f_f.shape
    if key.shape != (n, c) or value.shape != (n, c):
        raise ShapeError("dependency_attend", f"prototypes must be ({n}, {c}), got {key.shape}, {value.shape}")
    flat = ops.reshape(f_f, (n, h * w, c))
    attn = ops.sigmoid(ops.matmul(flat, ops.reshape(key, (n, c, 1))))
    out = ops.matmul(attn, ops.reshape(value, (n, 1, c)))
    return ops.reshape(out, (n, h, w, c)), ops.reshape(attn, (n, h, w, 1))


class DaR(Module):
    """Dependency-aware reinforcement: ``f1x1(attend(F_f, K, V)) + (F_f ++ reverse(F_b))``.

    With ``enabled=False`` only the concatenation is returned (the
    concatenation-fusion ablation).
    """

    def __init__(self, c: int, enabled: bool = True, rng: Optional[np.random.Generator] = None):
        super().__init__()
        self.c, self.enabled = c, enabled
        if enabled:
            self.prototypes = Prototypes(c, rng)
            self.project = ConvUnit(c, 2 * c, k=1, rng=rng)
        self.last_attention: Optional[np.ndarray] = None

    def forward(self, f_f, f_b) -> Tensor:
        f_f, f_b = as_tensor(f_f), as_tensor(f_b)
        if f_f.shape != f_b.shape or f_f.ndim != 4 or f_f.shape[-1] != self.c:
            raise ShapeError("dar", f"embeddings {f_f.shape} and {f_b.shape} must match with {self.c} channels")
        fb_rev = self_reversal(f_b)
        base = ops.concat([f_f, fb_rev])
        if not self.enabled:
            return base
        protos = self.prototypes(fb_rev)
        comp, attn = dependency_attend(f_f, protos.key, protos.value)
        self.last_attention = attn.data
        return ops.add(self.project(comp), base)


def dar_forward(f_f, f_b, module: DaR) -> Tensor:
    return module(f_f, f_b)


class AggregationUnit(Module):
    """f1x1 on the foreground feature, f3x3 on the background feature, then DaR (2c output channels)."""

    def __init__(self, cf: int, cb: int, c: int, dar: bool = True, rng: Optional[np.random.Generator] = None):
        super().__init__()
        self.cf, self.cb, self.c = cf, cb, c
        self.embed_f = ConvUnit(cf, c, k=1, rng=rng)
        self.embed_b = ConvUnit(cb, c, k=3, rng=rng)
        self.dar = DaR(c, enabled=dar, rng=rng)

    def forward(self, x_f, x_b) -> Tensor:
        x_f, x_b = as_tensor(x_f), as_tensor(x_b)
        if x_f.shape[1:3] != x_b.shape[1:3]:
            raise ShapeError("aggregation_unit", f"extents {x_f.shape[1:3]} and {x_b.shape[1:3]} differ")
        return self.dar(self.embed_f(x_f), self.embed_b(x_b))


@dataclass
class AuxiliaryFeatures:
    contracting: list  # E^b_1..E^b_5
    expanding: list  # D^b_1..D^b_4
    skips: list  # pre-pool features of contracting blocks 1..4


class AuxiliaryStream(Module):
    """Background stream: f3x3 + 2x2 max pooling down, 2x upsampling + skip concat + f3x3 up."""

    def __init__(self, channels: Sequence[int], cin: int = 2, rng: Optional[np.random.Generator] = None):
        super().__init__()
        ch = list(channels)
        if len(ch) != 5:
            raise ValueError("auxiliary stream needs five channel counts")
        self.channels = ch
        prev = cin
        self.down = []
        for j, c in enumerate(ch):
            self.down.append(self.add_module(f"e{j + 1}", ConvUnit(prev, c, k=3, rng=rng)))
            prev = c
        self.up = []
        for j in range(4):
            skip = ch[3 - j]
            self.up.append(self.add_module(f"d{j + 1}", ConvUnit(prev + skip, skip, k=3, rng=rng)))
            prev = skip

    def forward(self, e0) -> AuxiliaryFeatures:
        e0 = as_tensor(e0)
        if e0.ndim != 4 or e0.shape[1] % 16 or e0.shape[2] % 16:
            raise ShapeError("auxiliary_stream", f"extent of {e0.shape} not divisible by 16")
        x, skips, contracting = e0, [], []
        for j, unit in enumerate(self.down):
            x = unit(x)
            if j < 4:
                skips.append(x)
                x = ops.max_pool(x, 2)
            contracting.append(x)
        expanding = []
        for j, unit in enumerate(self.up):
            x = unit(ops.concat([ops.upsample(x, 2), skips[3 - j]]))
            expanding.append(x)
        return AuxiliaryFeatures(contracting, expanding, skips)
