"""Finite-difference gradient checks for every building block and the assembled network."""
from __future__ import annotations

import time
from typing import Callable, Optional, Sequence

import numpy as np

from .autodiff import Tensor, gradcheck, ops
from .autodiff.gradcheck import GradcheckReport
from .ccf import CCF
from .dar import DaR
from .dcp import DCP
from .losses import LossConfig, harmonic_loss_map, total_loss
from .network import DCNet, NetworkConfig
from .saliency import AttentionBlock, self_reversal


def _weighted(out: Tensor, rng) -> Tensor:
    # a fixed random projection avoids cancellations that a plain sum would hide
    r = rng.standard_normal(out.shape)
    return ops.sum(ops.mul(out, r))


def _check(module_params, inputs: Sequence[Tensor], fn: Callable[[], Tensor], samples, seed,
           step=1e-5, floor=1e-6) -> GradcheckReport:
    names = [f"input{i}" for i in range(len(inputs))] + [k for k, _ in module_params]
    tensors = list(inputs) + [p for _, p in module_params]
    return gradcheck(fn, tensors, step=step, floor=floor, samples=samples, seed=seed, names=names)


def check_attention_block(seed: int = 0, samples: Optional[int] = 12) -> GradcheckReport:
    rng = np.random.default_rng(seed)
    block = AttentionBlock(3, 4, 5, rng=rng)
    x = Tensor(rng.standard_normal((2, 6, 6, 3)))
    r = np.random.default_rng(seed + 1)
    proj = r.standard_normal((2, 6, 6, 5))
    return _check(list(block.named_parameters()), [x], lambda: ops.sum(ops.mul(block(x), proj)), samples, seed)


def check_self_reversal(seed: int = 0, samples: Optional[int] = None) -> GradcheckReport:
    rng = np.random.default_rng(seed)
    x = Tensor(rng.standard_normal((2, 5, 5, 3)))
    proj = rng.standard_normal((2, 5, 5, 3))
    return _check([], [x], lambda: ops.sum(ops.mul(self_reversal(x), proj)), samples, seed)


def check_dcp(seed: int = 0, samples: Optional[int] = 16, tau: int = 1) -> GradcheckReport:
    rng = np.random.default_rng(seed)
    pool = DCP(3, tau=tau, rng=rng)
    pool.bias.data = rng.standard_normal(pool.bias.shape) * 0.1
    x = Tensor(rng.standard_normal((2, 8, 8, 3)))
    proj = rng.standard_normal((2, 4, 4, 3))
    return _check(list(pool.named_parameters()), [x], lambda: ops.sum(ops.mul(pool(x), proj)), samples, seed)


def check_ccf(seed: int = 0, samples: Optional[int] = 12) -> GradcheckReport:
    rng = np.random.default_rng(seed)
    fuse = CCF(4, rng=rng)
    xe = Tensor(rng.standard_normal((2, 8, 8, 4)))
    xd = Tensor(rng.standard_normal((2, 4, 4, 4)))
    proj = rng.standard_normal((2, 8, 8, 4))
    return _check(list(fuse.named_parameters()), [xe, xd], lambda: ops.sum(ops.mul(fuse(xe, xd), proj)), samples, seed)


def check_dar(seed: int = 0, samples: Optional[int] = 8) -> GradcheckReport:
    rng = np.random.default_rng(seed)
    dar = DaR(3, rng=rng)
    ff = Tensor(rng.standard_normal((2, 8, 8, 3)))
    fb = Tensor(rng.standard_normal((2, 8, 8, 3)))
    proj = rng.standard_normal((2, 8, 8, 6))
    return _check(list(dar.named_parameters()), [ff, fb], lambda: ops.sum(ops.mul(dar(ff, fb), proj)), samples, seed)


def check_harmonic_loss(seed: int = 0, samples: Optional[int] = None) -> GradcheckReport:
    rng = np.random.default_rng(seed)
    pred = Tensor(rng.uniform(0.05, 0.95, (2, 6, 6, 1)))
    y = (rng.uniform(size=(2, 6, 6, 1)) > 0.5).astype(np.float64)
    cfg = LossConfig()
    return _check([], [pred], lambda: harmonic_loss_map(pred, y, cfg), samples, seed)


def check_total_loss(seed: int = 0, samples: Optional[int] = None) -> GradcheckReport:
    rng = np.random.default_rng(seed)
    shape = (2, 6, 6, 1)
    sf, sb, yh = (Tensor(rng.uniform(0.05, 0.95, shape)) for _ in range(3))
    y = (rng.uniform(size=shape) > 0.5).astype(np.float64)
    return _check([], [sf, sb, yh], lambda: total_loss(sf, sb, yh, y)[0], samples, seed)


def check_network(seed: int = 0, samples: Optional[int] = 2, extent: int = 32,
                  width: float = 0.125) -> GradcheckReport:
    """Full network at a small extent; a few sampled entries of every parameter tensor."""
    rng = np.random.default_rng(seed)
    net = DCNet(NetworkConfig(extent=extent, width=width, seed=seed))
    x = rng.uniform(size=(2, extent, extent, 1))
    y = np.zeros((2, extent, extent, 1))
    y[:, extent // 4: extent // 2, extent // 4: 3 * extent // 4] = 1.0

    def fn():
        tr = net(x)
        return total_loss(tr.s_f, tr.s_b, tr.y_hat, y)[0]

    params = list(net.named_parameters())
    return gradcheck(fn, [p for _, p in params], step=1e-5, floor=1e-6, samples=samples, seed=seed,
                     names=[k for k, _ in params])


SUITE = {
    "attention_block": check_attention_block,
    "self_reversal": check_self_reversal,
    "dcp": check_dcp,
    "ccf": check_ccf,
    "dar": check_dar,
    "harmonic_loss": check_harmonic_loss,
    "total_loss": check_total_loss,
    "network": check_network,
}


def run_suite(names: Optional[Sequence[str]] = None, seed: int = 0) -> dict:
    """Run the selected checks; returns name -> (report, seconds)."""
    out = {}
    for name in names or SUITE:
        t = time.perf_counter()
        report = SUITE[name](seed=seed)
        out[name] = (report, time.perf_counter() - t)
    return out
