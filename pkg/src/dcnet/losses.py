"""Harmonic loss family, its series expansions, comparators and the training objective."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .autodiff import ops
from .autodiff.tensor import ShapeError, Tensor, as_tensor
from .saliency import background_target

P_MIN, P_MAX = 1e-7, 1.0 - 1e-7


@dataclass
class LossConfig:
    gamma: float = 5.0
    sigma: float = 1e-3
    alpha: float = 0.25
    lambda1: float = 0.5
    lambda2: float = 0.5
    lambda3: float = 1.0
    lambda4: float = 10.0
    eps: float = 1.0
    weighted: bool = True

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        for name in ("lambda1", "lambda2", "lambda3", "lambda4"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


def _clamped(p_t) -> np.ndarray:
    p = np.asarray(p_t, dtype=np.float64)
    if np.any(~np.isfinite(p)) or np.any(p < 0.0) or np.any(p > 1.0):
        raise ValueError("p_t must lie in [0, 1]")
    return np.clip(p, P_MIN, P_MAX)


def harmonic_factor(p_t, gamma: float, sigma: float):
    """Modulating factor ``(1 + sigma) u^(gamma-1) / (sigma + u^gamma)`` with ``u = 1 - p_t``."""
    u = 1.0 - np.asarray(p_t, dtype=np.float64)
    return (1.0 + sigma) * u ** (gamma - 1.0) / (sigma + u ** gamma)


def harmonic_loss(p_t, gamma: float = 5.0, sigma: float = 1e-3, alpha_t=None):
    """Per-pixel harmonic loss; multiplied by ``alpha_t`` when given."""
    p = _clamped(p_t)
    loss = -harmonic_factor(p, gamma, sigma) * np.log(p)
    if alpha_t is not None:
        loss = loss * alpha_t
    return loss if loss.ndim else float(loss)


def harmonic_limit_small_sigma(p_t):
    p = _clamped(p_t)
    return -np.log(p) / (1.0 - p)


def harmonic_limit_large_sigma(p_t, gamma: float):
    p = _clamped(p_t)
    return -((1.0 - p) ** (gamma - 1.0)) * np.log(p)


def cross_entropy(p_t):
    return -np.log(_clamped(p_t))


def focal_loss(p_t, gamma: float = 2.0):
    p = _clamped(p_t)
    return (1.0 - p) ** gamma * -np.log(p)


def comparator_losses(p_t, gamma: float = 2.0) -> dict:
    return {"ce": cross_entropy(p_t), "focal": focal_loss(p_t, gamma)}


# ----------------------------------------------------------- gradient curves

def harmonic_grad(p_t, gamma: float, sigma: float):
    """Closed-form ``-dL_h/dp_t``."""
    p = _clamped(p_t)
    u = 1.0 - p
    den = sigma + u ** gamma
    f = (1.0 + sigma) * u ** (gamma - 1.0) / den
    # df/dp = -df/du
    dfdu = (1.0 + sigma) * ((gamma - 1.0) * u ** (gamma - 2.0) * den - gamma * u ** (2.0 * gamma - 2.0)) / den ** 2
    dldp = dfdu * np.log(p) - f / p
    return -dldp


def ce_grad(p_t):
    return 1.0 / _clamped(p_t)


def focal_grad(p_t, gamma: float):
    p = _clamped(p_t)
    u = 1.0 - p
    return u ** gamma / p - gamma * u ** (gamma - 1.0) * np.log(p)


SERIES_KINDS = ("ce", "harmonic-sigma0", "focal", "harmonic-sigmainf")


def gradient_series(kind: str, p_t: float, gamma: float = 2.0, terms: int = 100) -> float:
    """Truncated power series in ``u = 1 - p_t`` for ``-dL/dp_t``.

    ce:                 sum u^(j-1)
    harmonic-sigma0:    sum (j-1)/j u^(j-2)
    focal:              sum (1 + gamma/j) u^(j+gamma-1)
    harmonic-sigmainf:  sum (1 + (gamma-1)/j) u^(j+gamma-2)
    """
    if p_t <= 0.0 or p_t > 1.0:
        raise ValueError("series needs p_t in (0, 1]")
    if terms < 1:
        raise ValueError("terms must be >= 1")
    return float(np.sum(series_terms(kind, p_t, gamma, terms)))


def series_terms(kind: str, p_t: float, gamma: float, terms: int) -> np.ndarray:
    u = 1.0 - p_t
    j = np.arange(1, terms + 1, dtype=np.float64)
    if kind == "ce":
        return u ** (j - 1)
    if kind == "harmonic-sigma0":
        # the j = 1 coefficient is zero; avoid 0 * u^-1
        out = np.zeros_like(j)
        out[1:] = (j[1:] - 1) / j[1:] * u ** (j[1:] - 2)
        return out
    if kind == "focal":
        return (1.0 + gamma / j) * u ** (j + gamma - 1)
    if kind == "harmonic-sigmainf":
        return (1.0 + (gamma - 1.0) / j) * u ** (j + gamma - 2)
    raise ValueError(f"unknown series kind {kind!r}; expected one of {SERIES_KINDS}")


# ------------------------------------------------------------------- baselines

def topk_loss(p_t, fraction: float = 0.1) -> float:
    """Mean cross-entropy over the hardest ``fraction`` of pixels (evaluation baseline)."""
    ce = np.sort(cross_entropy(np.ravel(p_t)))[::-1]
    k = max(1, int(math.ceil(fraction * ce.size)))
    return float(ce[:k].mean())


def unified_focal_loss(pred, target, weight: float = 0.5, delta: float = 0.6, gamma: float = 0.5) -> float:
    """Symmetric unified focal loss on a binary map (evaluation baseline, numpy only)."""
    p = np.clip(np.asarray(pred, dtype=np.float64), P_MIN, P_MAX)
    y = np.asarray(target, dtype=np.float64)
    probs = [1.0 - p, p]
    labels = [1.0 - y, y]
    weights = [1.0 - delta, delta]
    focal = 0.0
    tversky = 0.0
    for prob, lab, w in zip(probs, labels, weights):
        ce = -lab * np.log(prob)
        focal += w * np.mean((1.0 - prob) ** gamma * ce)
        tp = np.sum(lab * prob)
        fn = np.sum(lab * (1.0 - prob))
        fp = np.sum((1.0 - lab) * prob)
        ti = (tp + 1e-6) / (tp + delta * fn + (1.0 - delta) * fp + 1e-6)
        tversky += (1.0 - ti) ** (1.0 - gamma)
    return float(weight * tversky / 2.0 + (1.0 - weight) * focal)


# -------------------------------------------------------------- tensor losses

def dice_loss(pred, target, eps: float = 1.0) -> Tensor:
    """``1 - (2 sum(PY) + eps) / (sum P + sum Y + eps)`` per sample, averaged over the batch."""
    pred = as_tensor(pred)
    y = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=np.float64)
    if pred.shape != y.shape:
        raise ShapeError("dice_loss", f"prediction {pred.shape} and target {y.shape} differ")
    axes = tuple(range(1, pred.ndim)) if pred.ndim > 2 else None
    if axes is None:
        inter = ops.sum(ops.mul(pred, y))
        denom = ops.add(ops.sum(pred), float(y.sum()) + eps)
        return ops.sub(1.0, ops.div(ops.add(ops.mul(inter, 2.0), eps), denom))
    inter = ops.sum(ops.mul(pred, y), axis=axes)
    denom = ops.add(ops.sum(pred, axis=axes), y.sum(axis=axes) + eps)
    ratio = ops.div(ops.add(ops.mul(inter, 2.0), eps), denom)
    return ops.mean(ops.sub(1.0, ratio))


def harmonic_loss_map(pred, target, cfg: LossConfig) -> Tensor:
    """Pixel-averaged (optionally alpha-weighted) harmonic loss on a probability map."""
    pred = as_tensor(pred)
    y = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=np.float64)
    if pred.shape != y.shape:
        raise ShapeError("harmonic_loss", f"prediction {pred.shape} and target {y.shape} differ")
    p = ops.clip(pred, P_MIN, P_MAX)
    p_t = ops.add(ops.mul(p, 2.0 * y - 1.0), 1.0 - y)  # p where y=1, 1-p where y=0
    u = ops.sub(1.0, p_t)
    num = ops.mul(ops.power(u, cfg.gamma - 1.0), 1.0 + cfg.sigma)
    den = ops.add(ops.power(u, cfg.gamma), cfg.sigma)
    pix = ops.mul(ops.div(num, den), ops.neg(ops.log(p_t)))
    if cfg.weighted:
        pix = ops.mul(pix, cfg.alpha * y + (1.0 - cfg.alpha) * (1.0 - y))
    return ops.mean(pix)


def total_loss(s_f, s_b, y_hat, y, cfg: Optional[LossConfig] = None) -> tuple[Tensor, dict]:
    """Weighted sum of the two saliency Dice terms and the Dice + harmonic segmentation term."""
    cfg = cfg or LossConfig()
    y = np.asarray(y, dtype=np.float64)
    y_bg = background_target(y)
    d_f = dice_loss(s_f, y, cfg.eps)
    d_b = dice_loss(s_b, y_bg, cfg.eps)
    d_c = dice_loss(y_hat, y, cfg.eps)
    h_c = harmonic_loss_map(y_hat, y, cfg)
    seg = ops.add(d_c, ops.mul(h_c, cfg.lambda4))
    total = ops.add(ops.add(ops.mul(d_f, cfg.lambda1), ops.mul(d_b, cfg.lambda2)), ops.mul(seg, cfg.lambda3))
    parts = {
        "dice_fg": d_f.item(),
        "dice_bg": d_b.item(),
        "dice_seg": d_c.item(),
        "harmonic": h_c.item(),
        "total": total.item(),
    }
    return total, parts
