"""Decomposition subnet: attention blocks, self-reversal and the saliency heads."""
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from scipy.signal import correlate

from dcnet.autodiff import ShapeError, backward, ops
from dcnet.losses import dice_loss
from dcnet.metrics import compute_metrics
from dcnet.saliency import (
    ATTENTION_TABLE, AttentionBlock, DecompositionSubnet, background_target, decompose, scale_channels,
    self_reversal,
)


def _np_bn_relu(x):
    flat = x.reshape(-1, x.shape[-1])
    y = (x - flat.mean(0)) / np.sqrt(flat.var(0) + 1e-5)
    return np.maximum(y, 0.0)


def _np_conv3(x, w):
    n, h, wd, _ = x.shape
    out = np.zeros((n, h, wd, w.shape[-1]))
    for b in range(n):
        for o in range(w.shape[-1]):
            out[b, :, :, o] = sum(correlate(x[b, :, :, i], w[:, :, i, o], mode="same") for i in range(w.shape[2]))
    return out


# ------------------------------------------------------------ self reversal

def test_self_reversal_constant_channel():
    x = np.full((1, 2, 2, 1), 5.0)
    np.testing.assert_array_equal(self_reversal(x).data[0, :, :, 0], np.zeros((2, 2)))


def test_self_reversal_ramp():
    x = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 2, 2, 1)
    np.testing.assert_array_equal(self_reversal(x).data[0, :, :, 0], [[3.0, 2.0], [1.0, 0.0]])


def test_self_reversal_empty_raises():
    with pytest.raises(ShapeError):
        self_reversal(np.zeros((1, 0, 2, 1)))


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (2, 3, 3, 3), elements=st.floats(-100, 100)))
def test_self_reversal_properties(x):
    out = self_reversal(x).data
    assert np.all(out >= 0)
    np.testing.assert_array_equal(out.min(axis=(1, 2)), 0.0)
    twice = self_reversal(out).data
    np.testing.assert_allclose(twice.max(axis=(1, 2)), x.max(axis=(1, 2)) - x.min(axis=(1, 2)), atol=1e-9)


def test_background_target_is_complement():
    y = (np.random.default_rng(0).uniform(size=(2, 8, 8, 1)) > 0.6).astype(float)
    y[1] = 0.0
    bg = background_target(y)
    np.testing.assert_array_equal(bg, 1.0 - y)
    # where a lesion exists this is the literal reversal of the mask
    np.testing.assert_array_equal(bg[0], self_reversal(y[:1]).data[0])


# ---------------------------------------------------------- attention block

def test_channel_weights_sum_to_one(rng):
    block = AttentionBlock(3, 5, 4, rng=rng)
    block(rng.standard_normal((3, 4, 4, 3)))
    np.testing.assert_allclose(block.last_weights.sum(axis=-1), 1.0, atol=1e-12)


def test_zero_input_gives_uniform_weights(rng):
    block = AttentionBlock(3, 5, 4, rng=rng)
    block(np.zeros((2, 4, 4, 3)))
    np.testing.assert_allclose(block.last_weights, 1.0 / 5, atol=1e-15)


def test_attention_block_matches_straight_line(rng):
    block = AttentionBlock(2, 3, 4, rng=rng)
    block.fc.bias.data = rng.standard_normal(3) * 0.1
    x = rng.standard_normal((1, 4, 4, 2))
    got = block(x).data
    bt = _np_bn_relu(np.einsum("nhwi,io->nhwo", x, block.reduce.conv.weight.data[0, 0]))
    z = bt.mean(axis=(1, 2)) @ block.fc.weight.data + block.fc.bias.data
    omega = np.exp(z - z.max()) / np.exp(z - z.max()).sum()
    expected = _np_bn_relu(_np_conv3(bt * omega[:, None, None, :], block.merge.conv.weight.data))
    np.testing.assert_allclose(got, expected, atol=1e-10)


def test_attention_block_channel_mismatch(rng):
    with pytest.raises(ShapeError, match="attention_block"):
        AttentionBlock(3, 4, 4, rng=rng)(np.zeros((1, 4, 4, 2)))


# -------------------------------------------------------------- decompose

def test_decompose_shapes_and_range(rng):
    net = DecompositionSubnet(width=0.125, rng=rng)
    pair = decompose(net, rng.uniform(size=(2, 32, 48, 1)))
    for m in (pair.fg, pair.bg):
        assert m.shape == (2, 32, 48, 1)
        assert np.all(m.data > 0) and np.all(m.data < 1)


def test_decompose_rejects_bad_extent():
    with pytest.raises(ShapeError, match="divisible by 16"):
        DecompositionSubnet(width=0.125)(np.zeros((1, 24, 32, 1)))


def test_channel_table_scaling():
    net = DecompositionSubnet(width=0.25)
    assert net.table == [(8, 16), (16, 32), (32, 64), (64, 16), (16, 8)]
    assert scale_channels(32, 0.0625) == 4  # floor of four channels


def _unit(cin, cout, k):
    return k * k * cin * cout + 2 * cout  # bias-free conv + BN scale/shift


def test_parameter_count_matches_shape_arithmetic():
    t = ATTENTION_TABLE
    inputs = [t[0][0], t[0][1], t[1][1], t[2][1] + t[1][1], t[3][1] + t[0][1]]
    expected = _unit(1, t[0][0], 3)
    for cin, (cmid, cout) in zip(inputs, t):
        expected += _unit(cin, cmid, 1) + cmid * cmid + cmid + _unit(cmid, cout, 3)
    expected += 2 * (t[4][1] + 1)
    assert DecompositionSubnet(width=1.0).num_parameters() == expected


def test_every_parameter_receives_gradient(rng):
    net = DecompositionSubnet(width=0.125, rng=rng)
    x = rng.uniform(size=(2, 32, 32, 1))
    y = np.zeros((2, 32, 32, 1))
    y[:, 8:20, 10:24] = 1.0
    pair = net(x)
    loss = ops.add(dice_loss(pair.fg, y), dice_loss(pair.bg, background_target(y)))
    backward(loss)
    for name, p in net.named_parameters():
        assert p.grad is not None and np.any(p.grad != 0), name


@pytest.mark.slow
def test_trained_foreground_map_beats_background_map():
    from dcnet.autodiff import Adam
    from dcnet.data import stack, synthesize

    images, masks = stack(synthesize(24, extent=32, seed=5))
    net = DecompositionSubnet(width=0.25, rng=np.random.default_rng(0))
    opt = Adam(net.named_parameters(), lr=3e-3)
    for epoch in range(8):
        for i in range(0, 24, 4):
            pair = net(images[i:i + 4])
            y = masks[i:i + 4]
            loss = ops.add(dice_loss(pair.fg, y), dice_loss(pair.bg, background_target(y)))
            opt.zero_grad()
            backward(loss)
            opt.step()
    net.eval()
    pair = net(images)
    d_fg = np.mean([compute_metrics(pair.fg.data[i], masks[i]).dice for i in range(24)])
    d_bg = np.mean([compute_metrics(pair.bg.data[i], masks[i]).dice for i in range(24)])
    assert d_fg > d_bg
