"""Dependency-aware reinforcement, aggregation units and the auxiliary stream."""
import numpy as np
import pytest

from dcnet.autodiff import ShapeError, Tensor, backward, gradcheck, ops, set_padding
from dcnet.dar import (
    AggregationUnit, AuxiliaryStream, DaR, Prototypes, dar_forward, dependency_attend, pyramid_prototypes,
)
from dcnet.saliency import self_reversal


def _sig(x):
    return 1.0 / (1.0 + np.exp(-x))


def test_zero_key_gives_half_value(rng):
    ff = rng.standard_normal((2, 3, 3, 4))
    v = rng.standard_normal((2, 4))
    out, attn = dependency_attend(ff, np.zeros((2, 4)), v)
    np.testing.assert_array_equal(attn.data, 0.5)
    np.testing.assert_allclose(out.data, np.broadcast_to(0.5 * v[:, None, None, :], out.shape))


def test_zero_value_gives_zero(rng):
    out, _ = dependency_attend(rng.standard_normal((1, 3, 3, 2)), rng.standard_normal((1, 2)), np.zeros((1, 2)))
    np.testing.assert_array_equal(out.data, 0.0)


def test_attend_hand_matrix():
    ff = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [-1.0, 2.0]])
    k = np.array([0.5, -1.0])
    v = np.array([2.0, 3.0])
    a = _sig(ff @ k)
    expected = a[:, None] * v[None, :]
    out, attn = dependency_attend(ff.reshape(1, 2, 2, 2), k[None], v[None])
    np.testing.assert_allclose(out.data.reshape(4, 2), expected, atol=1e-15)
    np.testing.assert_allclose(attn.data.reshape(4), a, atol=1e-15)


def test_attend_shape_error():
    with pytest.raises(ShapeError):
        dependency_attend(np.ones((1, 2, 2, 3)), np.ones((1, 2)), np.ones((1, 3)))


def test_prototypes_zero_input(rng):
    protos = pyramid_prototypes(np.zeros((2, 6, 6, 3)), Prototypes(3, rng))
    np.testing.assert_array_equal(protos.key.data, 0.0)
    np.testing.assert_array_equal(protos.value.data, 0.0)


@pytest.mark.parametrize("h,w", [(4, 4), (8, 12), (16, 8)])
def test_prototype_length(rng, h, w):
    protos = Prototypes(3, rng)(rng.standard_normal((2, h, w, 3)))
    assert protos.key.shape == (2, 3) and protos.value.shape == (2, 3)


def test_prototypes_composition_oracle(rng):
    mod = Prototypes(4, rng)
    x = rng.standard_normal((1, 8, 8, 4))
    got = mod(x)
    for branch, out in ((mod.key, got.key), (mod.value, got.value)):
        feats = np.concatenate([u(x).data for u in branch.units], axis=-1)
        assert [u.conv.dilation for u in branch.units] == [1, 3, 5]
        pooled = feats.mean(axis=(1, 2))
        ref = pooled @ branch.merge.weight.data[0, 0] + branch.merge.bias.data
        np.testing.assert_allclose(out.data, ref, atol=1e-12)


def test_prototypes_cyclic_translation_invariance(rng):
    mod = Prototypes(3, rng)
    set_padding(mod, "cyclic")
    x = rng.standard_normal((1, 8, 8, 3))
    shifted = np.roll(x, (3, -2), axis=(1, 2))
    a, b = mod(x), mod(shifted)
    np.testing.assert_allclose(a.key.data, b.key.data, atol=1e-12)
    np.testing.assert_allclose(a.value.data, b.value.data, atol=1e-12)


def test_dar_output_channels(rng):
    dar = DaR(3, rng=rng)
    out = dar_forward(rng.standard_normal((2, 4, 4, 3)), rng.standard_normal((2, 4, 4, 3)), dar)
    assert out.shape == (2, 4, 4, 6)


def test_zeroed_projection_is_concat(rng):
    dar = DaR(3, rng=rng)
    dar.project.conv.weight.data[...] = 0.0
    ff, fb = rng.standard_normal((2, 4, 4, 3)), rng.standard_normal((2, 4, 4, 3))
    expected = np.concatenate([ff, self_reversal(fb).data], axis=-1)
    np.testing.assert_array_equal(dar(ff, fb).data, expected)
    np.testing.assert_array_equal(DaR(3, enabled=False)(ff, fb).data, expected)


def test_dar_composition(rng):
    dar = DaR(2, rng=rng)
    ff, fb = rng.standard_normal((1, 4, 4, 2)), rng.standard_normal((1, 4, 4, 2))
    rev = fb.max(axis=(1, 2), keepdims=True) - fb
    p = dar.prototypes(rev)
    comp, _ = dependency_attend(ff, p.key, p.value)
    expected = dar.project(comp).data + np.concatenate([ff, rev], axis=-1)
    np.testing.assert_allclose(dar(ff, fb).data, expected, atol=1e-12)


def test_attention_in_open_interval(rng):
    dar = DaR(3, rng=rng)
    dar(rng.standard_normal((2, 4, 4, 3)) * 5, rng.standard_normal((2, 4, 4, 3)) * 5)
    assert np.all(dar.last_attention > 0) and np.all(dar.last_attention < 1)


def test_dar_gradcheck(rng):
    dar = DaR(2, rng=rng)
    ff, fb = Tensor(rng.uniform(-1, 1, (2, 6, 6, 2))), Tensor(rng.uniform(-1, 1, (2, 6, 6, 2)))
    proj = rng.standard_normal((2, 6, 6, 4))
    report = gradcheck(lambda: ops.sum(ops.mul(dar(ff, fb), proj)), [ff, fb] + dar.parameters(),
                       tol=1e-4, samples=10)
    assert report.passed, report


def test_gradients_reach_dilated_units(rng):
    dar = DaR(3, rng=rng)
    proj = rng.standard_normal((2, 8, 8, 6))
    backward(ops.sum(ops.mul(dar(rng.standard_normal((2, 8, 8, 3)), rng.standard_normal((2, 8, 8, 3))), proj)))
    for branch in (dar.prototypes.key, dar.prototypes.value):
        for unit in branch.units:
            assert np.any(unit.conv.weight.grad != 0)


def test_dar_shape_mismatch(rng):
    with pytest.raises(ShapeError):
        DaR(3, rng=rng)(np.ones((1, 4, 4, 3)), np.ones((1, 2, 2, 3)))


def test_aggregation_unit(rng):
    unit = AggregationUnit(5, 7, 4, rng=np.random.default_rng(0))
    xf, xb = rng.standard_normal((2, 8, 8, 5)), rng.standard_normal((2, 8, 8, 7))
    out = unit(xf, xb)
    assert out.shape == (2, 8, 8, 8)
    again = AggregationUnit(5, 7, 4, rng=np.random.default_rng(0))(xf, xb)
    np.testing.assert_array_equal(out.data, again.data)
    assert unit.embed_f.conv.k == 1 and unit.embed_b.conv.k == 3
    staged = unit.dar(unit.embed_f(xf), unit.embed_b(xb))
    np.testing.assert_array_equal(out.data, staged.data)
    with pytest.raises(ShapeError, match="aggregation_unit"):
        unit(xf, np.ones((2, 4, 4, 7)))


def test_auxiliary_stream_shapes(rng):
    aux = AuxiliaryStream([4, 6, 8, 10, 12], rng=rng)
    feats = aux(rng.uniform(size=(1, 32, 32, 2)))
    assert [f.shape[1] for f in feats.contracting] == [16, 8, 4, 2, 2]
    assert [f.shape[1] for f in feats.expanding] == [4, 8, 16, 32]
    assert [f.shape[-1] for f in feats.expanding] == [10, 8, 6, 4]
    with pytest.raises(ShapeError):
        aux(np.zeros((1, 24, 24, 2)))


def test_auxiliary_stream_zero_background(rng):
    aux = AuxiliaryStream([4, 4, 4, 4, 4], rng=rng)
    x = np.concatenate([rng.uniform(size=(1, 16, 16, 1)), np.zeros((1, 16, 16, 1))], axis=-1)
    feats = aux(x)
    for f in feats.contracting + feats.expanding:
        assert np.all(np.isfinite(f.data))
