"""Synthetic data, image IO, histograms and evaluation metrics."""
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from PIL import Image

from dcnet.data import (
    FG_FRACTION, OrphanFileError, SegSample, fg_bg_histogram, histogram_intersection, load_samples,
    save_samples, stack, synthesize, write_histogram_csv,
)
from dcnet.metrics import compute_metrics, hd95, mean_metrics


# ---------------------------------------------------------------- generator

@pytest.mark.parametrize("difficulty", ["easy", "default", "hard"])
def test_generator_contract(difficulty):
    for s in synthesize(40, extent=64, seed=2, difficulty=difficulty):
        assert s.image.shape == s.mask.shape == (64, 64)
        assert s.image.min() == 0.0 and s.image.max() == 1.0
        assert set(np.unique(s.mask)) <= {0.0, 1.0}
        assert FG_FRACTION[0] <= s.mask.mean() <= FG_FRACTION[1]


def test_generator_determinism():
    a, b = synthesize(5, 32, seed=9), synthesize(5, 32, seed=9)
    for x, y in zip(a, b):
        assert x.image.tobytes() == y.image.tobytes() and x.mask.tobytes() == y.mask.tobytes()
    assert synthesize(1, 32, seed=10)[0].image.tobytes() != a[0].image.tobytes()


def test_generator_errors():
    with pytest.raises(ValueError):
        synthesize(0)
    with pytest.raises(ValueError):
        synthesize(2, extent=40)
    with pytest.raises(ValueError):
        synthesize(2, difficulty="brutal")


def test_histogram_overlap_over_large_draw():
    samples = synthesize(1000, extent=64, seed=0)
    h_fg = sum(fg_bg_histogram(s)[0] for s in samples)
    h_bg = sum(fg_bg_histogram(s)[1] for s in samples)
    assert histogram_intersection(h_fg, h_bg) >= 0.3


def test_stack_shapes():
    x, y = stack(synthesize(3, 32))
    assert x.shape == y.shape == (3, 32, 32, 1)


# ----------------------------------------------------------------------- io

def test_roundtrip_within_quantization(tmp_path):
    samples = synthesize(4, 64, seed=1)
    save_samples(tmp_path, samples)
    loaded = load_samples(tmp_path, extent=64)
    assert len(loaded) == 4
    for a, b in zip(samples, loaded):
        assert np.max(np.abs(a.image - b.image)) <= 1 / 255
        np.testing.assert_array_equal(a.mask, b.mask)


def test_orphan_error(tmp_path):
    save_samples(tmp_path, synthesize(2, 32))
    (tmp_path / "00001_mask.png").unlink()
    with pytest.raises(OrphanFileError) as err:
        load_samples(tmp_path)
    assert err.value.orphans == [str(tmp_path / "00001.png")]


def test_large_pair_resizes(tmp_path):
    rng = np.random.default_rng(0)
    Image.fromarray(rng.integers(0, 256, (512, 512), dtype=np.uint8), mode="L").save(tmp_path / "a.png")
    m = np.zeros((512, 512), np.uint8)
    m[100:300, 200:400] = 255
    Image.fromarray(m, mode="L").save(tmp_path / "a_mask.pgm")
    (s,) = load_samples(tmp_path, extent=64)
    assert s.image.shape == s.mask.shape == (64, 64)
    assert 0 <= s.image.min() and s.image.max() <= 1
    assert s.mask.sum() == pytest.approx(25 * 25, rel=0.1)


def test_gray_mask_warns(tmp_path):
    Image.fromarray(np.full((16, 16), 10, np.uint8), mode="L").save(tmp_path / "b.png")
    Image.fromarray(np.arange(256, dtype=np.uint8).reshape(16, 16), mode="L").save(tmp_path / "b_mask.png")
    with pytest.warns(UserWarning, match="gray levels"):
        (s,) = load_samples(tmp_path, extent=16)
    assert s.mask.sum() == 128


# --------------------------------------------------------------- histograms

def test_histogram_partitions_pixels(tmp_path):
    s = synthesize(1, 64, seed=4)[0]
    h_fg, h_bg, edges = fg_bg_histogram(s, bins=16)
    assert h_fg.sum() == s.mask.sum() and h_bg.sum() == (1 - s.mask).sum()
    assert len(edges) == 17
    write_histogram_csv(tmp_path / "h.csv", h_fg, h_bg, edges)
    assert len((tmp_path / "h.csv").read_text().splitlines()) == 17


def test_histogram_empty_foreground():
    s = SegSample(np.random.default_rng(0).uniform(size=(8, 8)), np.zeros((8, 8)))
    h_fg, h_bg, _ = fg_bg_histogram(s, bins=4)
    assert h_fg.sum() == 0 and h_bg.sum() == 64
    with pytest.raises(ValueError):
        fg_bg_histogram(s, bins=1)


def test_default_profile_has_overlap():
    s = synthesize(20, 64, seed=0)
    assert np.mean([histogram_intersection(*fg_bg_histogram(x)[:2]) for x in s]) > 0


# ------------------------------------------------------------------ metrics

def test_identity_metrics():
    y = np.zeros((8, 8))
    y[2:5, 3:7] = 1
    r = compute_metrics(y, y)
    assert (r.dice, r.m_iou, r.precision, r.hd95) == (1.0, 1.0, 1.0, 0.0)


def test_hand_confusion_example():
    t = np.zeros((4, 4))
    t[0, 0] = t[0, 1] = t[1, 0] = 1
    p = np.zeros((4, 4))
    p[0, 0] = p[0, 1] = p[3, 3] = 1
    r = compute_metrics(p, t)
    assert r.dice == pytest.approx(4 / 6) and r.precision == pytest.approx(2 / 3)
    # tn = 12: background IoU 12/14, foreground IoU 2/4
    assert r.m_iou == pytest.approx(0.5 * (2 / 4 + 12 / 14))


def test_hd95_single_pixels():
    a, b = np.zeros((8, 8)), np.zeros((8, 8))
    a[1, 1] = 1
    b[1, 4] = 1
    assert hd95(a, b) == 3.0
    assert compute_metrics(a, b).hd95 == 3.0


def test_empty_mask_conventions():
    z = np.zeros((6, 8))
    assert compute_metrics(z, z).to_dict() == {"dice": 1.0, "m_iou": 1.0, "precision": 1.0, "hd95": 0.0}
    t = z.copy()
    t[2, 2] = 1
    r = compute_metrics(z, t)
    assert r.dice == 0.0 and r.hd95 == pytest.approx(10.0)


def test_metric_argument_errors():
    with pytest.raises(ValueError):
        compute_metrics(np.zeros((4, 4)), np.zeros((4, 5)))
    with pytest.raises(ValueError):
        compute_metrics(np.zeros((4, 4)), np.zeros((4, 4)), threshold=1.0)


def _brute_boundary(m):
    h, w = m.shape
    out = []
    for i in range(h):
        for j in range(w):
            if not m[i, j]:
                continue
            for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                ii, jj = i + di, j + dj
                if not (0 <= ii < h and 0 <= jj < w) or not m[ii, jj]:
                    out.append((i, j))
                    break
    return out


def brute_metrics(p, t):
    pix = [(i, j) for i in range(p.shape[0]) for j in range(p.shape[1])]
    P = {x for x in pix if p[x]}
    T = {x for x in pix if t[x]}
    tp, fp, fn = len(P & T), len(P - T), len(T - P)
    if not P and not T:
        return 1.0, 1.0, 1.0, 0.0
    dice = 2 * tp / (2 * tp + fp + fn)
    iou_fg = len(P & T) / len(P | T)
    bgP, bgT = set(pix) - P, set(pix) - T
    iou_bg = len(bgP & bgT) / len(bgP | bgT) if bgP | bgT else 1.0
    prec = tp / (tp + fp) if P else 0.0
    if not P or not T:
        return dice, 0.5 * (iou_fg + iou_bg), prec, float(np.hypot(*p.shape))
    bp, bt = _brute_boundary(p), _brute_boundary(t)
    d = [min(np.hypot(a[0] - b[0], a[1] - b[1]) for b in bt) for a in bp]
    d += [min(np.hypot(a[0] - b[0], a[1] - b[1]) for b in bp) for a in bt]
    return dice, 0.5 * (iou_fg + iou_bg), prec, float(np.percentile(d, 95))


def random_mask_pairs(count, seed=0):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        dp, dt = rng.uniform(0, 0.7, 2)
        yield rng.uniform(size=(8, 8)) < dp, rng.uniform(size=(8, 8)) < dt


def test_metrics_match_brute_force():
    for p, t in random_mask_pairs(200):
        r = compute_metrics(p.astype(float), t.astype(float))
        d, miou, prec, h = brute_metrics(p, t)
        assert r.dice == d and r.m_iou == miou and r.precision == prec
        assert abs(r.hd95 - h) <= 1e-9


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31))
def test_metric_symmetry_and_ranges(seed):
    (p, t), = random_mask_pairs(1, seed)
    a = compute_metrics(p.astype(float), t.astype(float))
    b = compute_metrics(t.astype(float), p.astype(float))
    assert a.dice == b.dice and a.hd95 == b.hd95 and a.m_iou == b.m_iou
    for v in (a.dice, a.m_iou, a.precision):
        assert 0.0 <= v <= 1.0
    assert a.hd95 >= 0


def test_mean_metrics():
    m = mean_metrics([compute_metrics(np.ones((2, 2)), np.ones((2, 2))), compute_metrics(np.zeros((2, 2)), np.ones((2, 2)))])
    assert m.dice == 0.5 and m.precision == 0.5
