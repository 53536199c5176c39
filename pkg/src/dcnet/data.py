"""Synthetic ultrasound-like samples, PNG/PGM pair IO and intensity histograms."""
from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from PIL import Image
from scipy import ndimage

logger = logging.getLogger(__name__)

PROFILES = {
    # lesion mean, tissue mean, speckle shape (higher = weaker), distractors (min, max), blur sigma
    "easy": dict(lesion=0.25, tissue=0.6, speckle=8.0, distractors=(0, 1), blur=1.0),
    "default": dict(lesion=0.3, tissue=0.55, speckle=4.0, distractors=(1, 3), blur=1.5),
    "hard": dict(lesion=0.35, tissue=0.5, speckle=2.5, distractors=(2, 4), blur=2.0),
}
FG_FRACTION = (0.02, 0.4)


class OrphanFileError(FileNotFoundError):
    def __init__(self, orphans: Sequence[str]):
        super().__init__("unpaired files: " + ", ".join(orphans))
        self.orphans = list(orphans)


@dataclass
class SegSample:
    image: np.ndarray  # (h, w) in [0, 1]
    mask: np.ndarray  # (h, w) in {0, 1}
    tag: str = ""


def min_max(x: np.ndarray) -> np.ndarray:
    lo, hi = float(x.min()), float(x.max())
    if hi - lo < 1e-12:
        return np.zeros_like(x, dtype=np.float64)
    return (x - lo) / (hi - lo)


def _blob(rng, extent, yy, xx, area_frac):
    """Irregular ellipse fully inside the image with the requested area fraction."""
    aspect = rng.uniform(0.6, 1.6)
    area = area_frac * extent * extent
    a = np.sqrt(area / (np.pi * aspect))
    b = a * aspect
    reach = max(a, b) * 1.15
    cy = rng.uniform(reach + 1, extent - reach - 1) if extent - 2 * reach - 2 > 0 else extent / 2
    cx = rng.uniform(reach + 1, extent - reach - 1) if extent - 2 * reach - 2 > 0 else extent / 2
    theta = rng.uniform(0, np.pi)
    dy, dx = yy - cy, xx - cx
    u = (dx * np.cos(theta) + dy * np.sin(theta)) / b
    v = (-dx * np.sin(theta) + dy * np.cos(theta)) / a
    ang = np.arctan2(v, u)
    wobble = 1.0
    for k in (2, 3, 5):
        wobble = wobble + rng.uniform(0.0, 0.08) * np.cos(k * ang + rng.uniform(0, 2 * np.pi))
    return (u * u + v * v) <= wobble ** 2


def _texture(rng, extent, kind):
    yy, xx = np.mgrid[0:extent, 0:extent].astype(np.float64)
    if kind == 0:
        period = rng.uniform(3.0, 5.0)
        ang = rng.uniform(0, np.pi)
        return np.sin(2 * np.pi * (xx * np.cos(ang) + yy * np.sin(ang)) / period)
    if kind == 1:
        p = int(rng.integers(2, 4))
        return np.where(((yy // p) + (xx // p)) % 2 == 0, 1.0, -1.0)
    return np.clip(rng.standard_normal((extent, extent)) * 1.5, -2, 2)


def synthesize_one(rng: np.random.Generator, extent: int, profile: str = "default") -> SegSample:
    prof = PROFILES[profile]
    yy, xx = np.mgrid[0:extent, 0:extent].astype(np.float64)
    while True:
        mask = _blob(rng, extent, yy, xx, rng.uniform(0.04, 0.3))
        frac = mask.mean()
        if FG_FRACTION[0] <= frac <= FG_FRACTION[1]:
            break

    # tissue: layered low-frequency structure
    low = ndimage.gaussian_filter(rng.standard_normal((extent, extent)), sigma=extent / 8, mode="reflect")
    low = low / (np.abs(low).max() + 1e-12)
    layers = 0.06 * np.sin(2 * np.pi * yy / rng.uniform(extent / 4, extent / 2) + rng.uniform(0, 2 * np.pi))
    tissue = prof["tissue"] + 0.12 * low + layers

    # textured distractors with lesion-like mean intensity
    n_dis = int(rng.integers(prof["distractors"][0], prof["distractors"][1] + 1))
    for _ in range(n_dis):
        region = _blob(rng, extent, yy, xx, rng.uniform(0.02, 0.12)) & ~ndimage.binary_dilation(mask, iterations=2)
        tex = _texture(rng, extent, int(rng.integers(0, 3)))
        patch = prof["lesion"] + 0.05 + 0.12 * tex
        soft = ndimage.gaussian_filter(region.astype(np.float64), 1.0)
        tissue = tissue * (1 - soft) + patch * soft

    # smooth hypoechoic lesion with blurred boundary
    lesion_val = prof["lesion"] + 0.04 * ndimage.gaussian_filter(rng.standard_normal((extent, extent)), 3.0)
    soft = ndimage.gaussian_filter(mask.astype(np.float64), prof["blur"])
    img = tissue * (1 - soft) + lesion_val * soft

    k = prof["speckle"]
    speckle = rng.gamma(k, 1.0 / k, size=(extent, extent))
    speckle = ndimage.gaussian_filter(speckle, 0.6)
    img = np.clip(img, 0.01, None) * speckle / speckle.mean()
    return SegSample(min_max(img), mask.astype(np.float64), profile)


def synthesize(count: int, extent: int = 64, seed: int = 0, difficulty: str = "default") -> list[SegSample]:
    if count <= 0:
        raise ValueError("count must be positive")
    if extent % 16:
        raise ValueError(f"extent {extent} not divisible by 16")
    if difficulty not in PROFILES:
        raise ValueError(f"unknown difficulty profile {difficulty!r}")
    rng = np.random.default_rng(seed)
    return [synthesize_one(rng, extent, difficulty) for _ in range(count)]


def stack(samples: Sequence[SegSample]) -> tuple[np.ndarray, np.ndarray]:
    """Samples -> (N, H, W, 1) image and mask arrays."""
    x = np.stack([s.image for s in samples])[..., None]
    y = np.stack([s.mask for s in samples])[..., None]
    return x.astype(np.float64), y.astype(np.float64)


# ----------------------------------------------------------------------- IO

def save_samples(directory, samples: Iterable[SegSample]) -> list[Path]:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for i, s in enumerate(samples):
        name = f"{i:05d}"
        Image.fromarray(np.round(s.image * 255).astype(np.uint8), mode="L").save(out / f"{name}.png")
        Image.fromarray((s.mask > 0.5).astype(np.uint8) * 255, mode="L").save(out / f"{name}_mask.png")
        written.append(out / f"{name}.png")
    return written


def _read_gray(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.float64)


def load_samples(directory, extent: Optional[int] = 64) -> list[SegSample]:
    """Read ``<id>.png|pgm`` / ``<id>_mask.png|pgm`` pairs, rescale and resize."""
    root = Path(directory)
    files = sorted(p for p in root.iterdir() if p.suffix.lower() in (".png", ".pgm"))
    images, masks = {}, {}
    for p in files:
        if p.stem.endswith("_mask"):
            masks[p.stem[: -len("_mask")]] = p
        else:
            images[p.stem] = p
    orphans = sorted(str(images[k]) for k in images.keys() - masks.keys())
    orphans += sorted(str(masks[k]) for k in masks.keys() - images.keys())
    if orphans:
        raise OrphanFileError(orphans)

    samples = []
    for key in sorted(images):
        img = _read_gray(images[key]) / 255.0
        raw = _read_gray(masks[key])
        levels = np.unique(raw)
        if levels.size > 2:
            warnings.warn(f"{masks[key].name}: {levels.size} gray levels, binarizing at 127", stacklevel=2)
        mask = (raw > 127).astype(np.float64)
        if extent is not None and img.shape != (extent, extent):
            img = np.asarray(Image.fromarray(img.astype(np.float32), mode="F").resize((extent, extent), Image.BILINEAR), dtype=np.float64)
            img = np.clip(img, 0.0, 1.0)
            mask = np.asarray(Image.fromarray(mask.astype(np.uint8) * 255, mode="L").resize((extent, extent), Image.NEAREST)) > 127
            mask = mask.astype(np.float64)
        samples.append(SegSample(img, mask, key))
    return samples


# ---------------------------------------------------------------- histograms

def fg_bg_histogram(sample: SegSample, bins: int = 32) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Intensity counts inside and outside the mask over [0, 1]."""
    if bins < 2:
        raise ValueError("bins must be >= 2")
    edges = np.linspace(0.0, 1.0, bins + 1)
    fg = sample.mask > 0.5
    h_fg, _ = np.histogram(sample.image[fg], bins=edges)
    h_bg, _ = np.histogram(sample.image[~fg], bins=edges)
    return h_fg, h_bg, edges


def histogram_intersection(h_a: np.ndarray, h_b: np.ndarray) -> float:
    a = h_a / max(h_a.sum(), 1)
    b = h_b / max(h_b.sum(), 1)
    return float(np.minimum(a, b).sum())


def write_histogram_csv(path, h_fg, h_bg, edges) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_lo", "bin_hi", "foreground", "background"])
        for i in range(len(h_fg)):
            w.writerow([f"{edges[i]:.6f}", f"{edges[i + 1]:.6f}", int(h_fg[i]), int(h_bg[i])])
