"""Cross-correlation fusion."""
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dcnet.autodiff import ShapeError, Tensor, backward, gradcheck, ops
from dcnet.ccf import CCF, ccf_forward, global_relation_vectors, relation_matrix


def test_gram_matches_double_loop():
    xe = np.array([[[1.0, 2.0], [3.0, -1.0]], [[0.5, 0.0], [2.0, 1.0]]]).reshape(1, 2, 2, 2)
    xd = np.array([[[0.0, 1.0], [1.0, 1.0]], [[-2.0, 3.0], [1.0, 0.5]]]).reshape(1, 2, 2, 2)
    m = relation_matrix(xe, xd).data[0]
    ref = np.zeros((2, 2))
    for p in range(2):
        for q in range(2):
            for i in range(2):
                for j in range(2):
                    ref[p, q] += xe[0, i, j, p] * xd[0, i, j, q]
    np.testing.assert_allclose(m, ref / 4, atol=1e-15)


def test_relation_zero_and_orthonormal(rng):
    xe = rng.standard_normal((1, 4, 4, 3))
    np.testing.assert_array_equal(relation_matrix(xe, np.zeros_like(xe)).data, 0.0)
    q, _ = np.linalg.qr(rng.standard_normal((16, 3)))
    x = q.reshape(1, 4, 4, 3)
    np.testing.assert_allclose(relation_matrix(x, x).data[0], np.eye(3) / 16, atol=1e-15)


def test_relation_symmetric_for_equal_inputs(rng):
    x = rng.standard_normal((2, 4, 4, 5))
    m = relation_matrix(x, x).data
    np.testing.assert_allclose(m, m.transpose(0, 2, 1), atol=1e-15)


def test_relation_shape_mismatch():
    with pytest.raises(ShapeError):
        relation_matrix(np.ones((1, 4, 4, 2)), np.ones((1, 2, 2, 2)))


def test_relation_vectors_examples(rng):
    m = rng.standard_normal((4, 4))
    we, wd = global_relation_vectors(np.zeros((4, 4)), rng.standard_normal(4), rng.standard_normal(4))
    assert not we.data.any() and not wd.data.any()
    we, wd = global_relation_vectors(m, np.ones(4), np.ones(4))
    np.testing.assert_allclose(we.data, m.sum(axis=1))
    np.testing.assert_allclose(wd.data, m.sum(axis=0))
    re, rd = rng.standard_normal(4), rng.standard_normal(4)
    we, wd = global_relation_vectors(m, re, rd)
    np.testing.assert_allclose(we.data, [m[p] @ re for p in range(4)], atol=1e-14)
    np.testing.assert_allclose(wd.data, [m[:, q] @ rd for q in range(4)], atol=1e-14)


def test_relation_vectors_kernel_length():
    with pytest.raises(ShapeError):
        global_relation_vectors(np.ones((3, 3)), np.ones(2), np.ones(3))


@settings(max_examples=40, deadline=None)
@given(st.floats(-10, 10), st.integers(0, 2**31))
def test_relation_bilinear(alpha, seed):
    rng = np.random.default_rng(seed)
    xe, xd = rng.standard_normal((1, 4, 4, 3)), rng.standard_normal((1, 4, 4, 3))
    np.testing.assert_allclose(relation_matrix(alpha * xe, xd).data, alpha * relation_matrix(xe, xd).data,
                               rtol=1e-12, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_relation_vectors_pixel_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    xe, xd = rng.standard_normal((1, 4, 4, 3)), rng.standard_normal((1, 4, 4, 3))
    perm = rng.permutation(16)
    pe = xe.reshape(1, 16, 3)[:, perm].reshape(xe.shape)
    pd = xd.reshape(1, 16, 3)[:, perm].reshape(xd.shape)
    re, rd = rng.standard_normal(3), rng.standard_normal(3)
    a = global_relation_vectors(relation_matrix(xe, xd), re, rd)
    b = global_relation_vectors(relation_matrix(pe, pd), re, rd)
    for x, y in zip(a, b):
        np.testing.assert_allclose(x.data, y.data, atol=1e-12)


def test_ccf_shape_and_ratio_errors(rng):
    fuse = CCF(3, cout=5, rng=rng)
    assert ccf_forward(rng.standard_normal((2, 8, 6, 3)), rng.standard_normal((2, 4, 3, 3)), fuse).shape == (2, 8, 6, 5)
    with pytest.raises(ShapeError, match="half"):
        fuse(np.ones((1, 8, 8, 3)), np.ones((1, 2, 2, 3)))


def test_ccf_zero_decoder_gives_zero(rng):
    fuse = CCF(3, rng=rng)
    out = fuse(rng.standard_normal((2, 4, 4, 3)), np.zeros((2, 2, 2, 3)))
    # both branches are scaled by relation vectors of an all-zero M; BN of zeros is zero, ReLU keeps it
    np.testing.assert_array_equal(out.data, 0.0)


def test_ccf_matches_manual_composition(rng):
    fuse = CCF(2, rng=rng)
    xe, xd = rng.standard_normal((1, 4, 4, 2)), rng.standard_normal((1, 2, 2, 2))
    up = np.repeat(np.repeat(xd, 2, axis=1), 2, axis=2)
    m = np.einsum("nhwp,nhwq->npq", xe, up) / 16
    we = m[0] @ fuse.rho_e.data
    wd = m[0].T @ fuse.rho_d.data
    expected = fuse.merge(np.concatenate([xe * we, up * wd], axis=-1)).data
    np.testing.assert_allclose(fuse(xe, xd).data, expected, atol=1e-12)


def test_ccf_gradcheck(rng):
    fuse = CCF(3, rng=rng)
    xe, xd = Tensor(rng.uniform(-1, 1, (2, 4, 4, 3))), Tensor(rng.uniform(-1, 1, (2, 2, 2, 3)))
    proj = rng.standard_normal((2, 4, 4, 3))
    ts = [xe, xd] + fuse.parameters()
    report = gradcheck(lambda: ops.sum(ops.mul(fuse(xe, xd), proj)), ts, tol=1e-4)
    assert report.passed, report


def test_gradients_reach_both_kernels_and_inputs(rng):
    fuse = CCF(3, rng=rng)
    xe = Tensor(rng.standard_normal((2, 4, 4, 3)), requires_grad=True)
    xd = Tensor(rng.standard_normal((2, 2, 2, 3)), requires_grad=True)
    proj = rng.standard_normal((2, 4, 4, 3))
    backward(ops.sum(ops.mul(fuse(xe, xd), proj)))
    for t in (xe, xd, fuse.rho_e, fuse.rho_d):
        assert np.any(t.grad != 0)
    assert fuse.rho_e is not fuse.rho_d


def test_shared_rho_switch(rng):
    fuse = CCF(3, rng=rng, shared_rho=True)
    assert fuse.rho_e is fuse.rho_d
    assert len([k for k, _ in fuse.named_parameters() if k.startswith("rho")]) == 1


@pytest.mark.parametrize("mode,cin", [("concat", 6), ("add", 3)])
def test_baseline_fusions(rng, mode, cin):
    fuse = CCF(3, mode=mode, rng=rng)
    assert fuse.merge.conv.cin == cin
    assert fuse(rng.standard_normal((1, 4, 4, 3)), rng.standard_normal((1, 2, 2, 3))).shape == (1, 4, 4, 3)
