"""Segmentation metrics: Dice, mean IoU, precision and 95th-percentile Hausdorff distance."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

_CROSS = ndimage.generate_binary_structure(2, 1)


@dataclass
class MetricsRecord:
    dice: float
    m_iou: float
    precision: float
    hd95: float

    def to_dict(self) -> dict:
        return asdict(self)


def confusion(pred: np.ndarray, target: np.ndarray) -> tuple[int, int, int, int]:
    p, t = pred.astype(bool), target.astype(bool)
    tp = int(np.count_nonzero(p & t))
    fp = int(np.count_nonzero(p & ~t))
    fn = int(np.count_nonzero(~p & t))
    tn = int(p.size - tp - fp - fn)
    return tp, fp, fn, tn


def boundary(mask: np.ndarray) -> np.ndarray:
    """Pixels of ``mask`` removed by one 4-connected erosion (image border counts as outside)."""
    m = mask.astype(bool)
    return m & ~ndimage.binary_erosion(m, structure=_CROSS, border_value=0)


def surface_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Directed boundary distances a->b and b->a, pooled."""
    ba, bb = boundary(a), boundary(b)
    dt_b = ndimage.distance_transform_edt(~bb)
    dt_a = ndimage.distance_transform_edt(~ba)
    return np.concatenate([dt_b[ba], dt_a[bb]])


def hd95(a: np.ndarray, b: np.ndarray) -> float:
    a, b = np.asarray(a).astype(bool), np.asarray(b).astype(bool)
    if not a.any() and not b.any():
        return 0.0
    if not a.any() or not b.any():
        return float(np.hypot(*a.shape))
    return float(np.percentile(surface_distances(a, b), 95))


def compute_metrics(pred, target, threshold: float = 0.5) -> MetricsRecord:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"prediction {pred.shape} and target {target.shape} differ")
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    p = np.squeeze(pred) >= threshold
    t = np.squeeze(target) >= 0.5
    tp, fp, fn, tn = confusion(p, t)
    if tp + fp + fn == 0:
        return MetricsRecord(1.0, 1.0, 1.0, 0.0)
    dice = 2 * tp / (2 * tp + fp + fn)
    iou_fg = tp / (tp + fp + fn)
    iou_bg = tn / (tn + fp + fn) if tn + fp + fn else 1.0
    precision = tp / (tp + fp) if tp + fp else 0.0
    return MetricsRecord(dice, 0.5 * (iou_fg + iou_bg), precision, hd95(p, t))


def mean_metrics(records) -> MetricsRecord:
    records = list(records)
    return MetricsRecord(*(float(np.mean([getattr(r, f) for r in records])) for f in ("dice", "m_iou", "precision", "hd95")))
