"""Decomposition subnet: attention backbone plus foreground/background saliency heads."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .autodiff import ops
from .autodiff.layers import Conv2d, ConvUnit, Linear, Module
from .autodiff.tensor import ShapeError, Tensor, as_tensor

# (f1x1 output, f3x3 output) channels of the five attention blocks at width 1
ATTENTION_TABLE = ((32, 64), (64, 128), (128, 256), (256, 64), (64, 32))


def scale_channels(c: int, width: float, minimum: int = 4) -> int:
    return max(minimum, int(round(c * width)))


def self_reversal(x) -> Tensor:
    """Per-channel ``max(X^k) - X^k`` over the spatial extents of an NHWC tensor."""
    x = as_tensor(x)
    if x.size == 0:
        raise ShapeError("self_reversal", "empty tensor")
    if x.ndim != 4:
        raise ShapeError("self_reversal", f"expected NHWC input, got {x.shape}")
    return ops.sub(ops.amax(x, axis=(1, 2), keepdims=True), x)


def background_target(y: np.ndarray) -> np.ndarray:
    """Background supervision mask for a binary foreground mask.

    Applying the self-reversal to a binary mask that contains a lesion yields
    ``1 - y``; masks without any lesion use the same complement so the
    background target is never empty.
    """
    return 1.0 - np.asarray(y, dtype=np.float64)


@dataclass
class SaliencyPair:
    fg: Tensor
    bg: Tensor


class AttentionBlock(Module):
    """f1x1 -> channel weights from softmax(FC(GAP)) -> channel-wise scaling -> f3x3."""

    def __init__(self, cin: int, cmid: int, cout: int, rng: Optional[np.random.Generator] = None):
        super().__init__()
        self.cin = cin
        self.reduce = ConvUnit(cin, cmid, k=1, rng=rng)
        self.fc = Linear(cmid, cmid, rng=rng)
        self.merge = ConvUnit(cmid, cout, k=3, rng=rng)
        self.last_weights: Optional[np.ndarray] = None

    def channel_weights(self, bt: Tensor) -> Tensor:
        return ops.softmax(self.fc(ops.global_avg_pool(bt)), axis=-1)

    def forward(self, x) -> Tensor:
        x = as_tensor(x)
        if x.ndim != 4 or x.shape[-1] != self.cin:
            raise ShapeError("attention_block", f"expected {self.cin} input channels, got shape {x.shape}")
        bt = self.reduce(x)
        omega = self.channel_weights(bt)
        self.last_weights = omega.data
        n, c = omega.shape
        return self.merge(ops.mul(bt, ops.reshape(omega, (n, 1, 1, c))))


class DecompositionSubnet(Module):
    """Image -> (S^f, S^b).

    Stem f3x3, blocks B1..B5 with 4x4 max pooling after B1/B2 and 4x4
    upsampling before B4/B5; B1/B2 outputs are concatenated onto the B5/B4
    inputs. B5 is the foreground representation, its self-reversal the
    background one; each gets its own 1x1 convolution and sigmoid.
    """

    def __init__(self, width: float = 1.0, rng: Optional[np.random.Generator] = None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        t = [(scale_channels(a, width), scale_channels(b, width)) for a, b in ATTENTION_TABLE]
        self.table = t
        self.stem = ConvUnit(1, t[0][0], k=3, rng=rng)
        self.b1 = AttentionBlock(t[0][0], *t[0], rng=rng)
        self.b2 = AttentionBlock(t[0][1], *t[1], rng=rng)
        self.b3 = AttentionBlock(t[1][1], *t[2], rng=rng)
        self.b4 = AttentionBlock(t[2][1] + t[1][1], *t[3], rng=rng)
        self.b5 = AttentionBlock(t[3][1] + t[0][1], *t[4], rng=rng)
        self.head_fg = Conv2d(t[4][1], 1, k=1, rng=rng)
        self.head_bg = Conv2d(t[4][1], 1, k=1, rng=rng)

    def forward(self, image) -> SaliencyPair:
        image = as_tensor(image)
        if image.ndim != 4 or image.shape[-1] != 1:
            raise ShapeError("decompose", f"expected (N, H, W, 1) image, got {image.shape}")
        if image.shape[1] % 16 or image.shape[2] % 16:
            raise ShapeError("decompose", f"extent {image.shape[1]}x{image.shape[2]} not divisible by 16")
        b0 = self.stem(image)
        b1 = self.b1(b0)
        b2 = self.b2(ops.max_pool(b1, 4))
        b3 = self.b3(ops.max_pool(b2, 4))
        b4 = self.b4(ops.concat([ops.upsample(b3, 4), b2]))
        b5 = self.b5(ops.concat([ops.upsample(b4, 4), b1]))
        bb = self_reversal(b5)
        return SaliencyPair(ops.sigmoid(self.head_fg(b5)), ops.sigmoid(self.head_bg(bb)))


def decompose(subnet: DecompositionSubnet, image) -> SaliencyPair:
    return subnet(image)
