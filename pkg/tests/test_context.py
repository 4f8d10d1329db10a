"""Tests for self-attention context integration."""

import numpy as np
import pytest

from vidground import autodiff as ad
from vidground import context as cx
from vidground.errors import ConfigError


def test_single_step_self_similarity():
    rng = np.random.default_rng(30)
    p = cx.init_context_params(3, 2, rng)
    hm = rng.standard_normal((1, 3))
    z = cx.relevance_matrix(p, ad.Tensor(hm))
    proj = hm @ p.w.data
    expect = float((proj @ proj.T)[0, 0]) / np.sqrt(2)
    assert z.shape == (1, 1)
    assert z.item() >= 0.0
    np.testing.assert_allclose(z.item(), expect, atol=1e-12)


def test_symmetry_under_shared_projection():
    rng = np.random.default_rng(31)
    p = cx.init_context_params(4, 3, rng)
    z = cx.relevance_matrix(p, ad.Tensor(rng.standard_normal((6, 4))))
    np.testing.assert_allclose(z.data, z.data.T, atol=1e-12)


def test_identity_projection_orthonormal_rows():
    p = cx.ContextParams(w=ad.Tensor(np.eye(3)))
    hm = ad.Tensor(np.eye(3))  # orthonormal rows
    z = cx.relevance_matrix(p, hm)
    np.testing.assert_allclose(z.data, np.eye(3) / np.sqrt(3), atol=1e-15)


def test_single_step_integration():
    rng = np.random.default_rng(32)
    p = cx.init_context_params(3, 3, rng)
    hm = ad.Tensor(rng.standard_normal((1, 3)))
    out = cx.integrate_context(p, hm)
    np.testing.assert_allclose(out.alpha.data, [[1.0]], atol=1e-15)
    np.testing.assert_allclose(out.hhat.data, hm.data, atol=1e-15)
    np.testing.assert_array_equal(out.hc.data, np.concatenate([hm.data, hm.data], axis=1))


def test_identical_rows_give_uniform_attention():
    rng = np.random.default_rng(33)
    p = cx.init_context_params(3, 2, rng)
    row = rng.standard_normal(3)
    hm = ad.Tensor(np.tile(row, (4, 1)))
    out = cx.integrate_context(p, hm)
    np.testing.assert_allclose(out.alpha.data, np.full((4, 4), 0.25), atol=1e-12)
    np.testing.assert_allclose(out.hhat.data, hm.data, atol=1e-12)


def test_alpha_rows_stochastic():
    rng = np.random.default_rng(34)
    p = cx.init_context_params(3, 3, rng)
    out = cx.integrate_context(p, ad.Tensor(rng.standard_normal((5, 3))))
    np.testing.assert_allclose(out.alpha.data.sum(axis=1), np.ones(5), atol=1e-9)


def test_right_block_preserves_states_bit_exactly():
    rng = np.random.default_rng(35)
    p = cx.init_context_params(3, 2, rng)
    hm = rng.standard_normal((5, 3))
    out = cx.integrate_context(p, ad.Tensor(hm))
    np.testing.assert_array_equal(out.hc.data[:, 3:], hm)


def test_no_causal_masking():
    # a strong future frame must receive nonzero weight from position 0
    rng = np.random.default_rng(36)
    p = cx.ContextParams(w=ad.Tensor(np.eye(2)))
    hm = ad.Tensor([[1.0, 0.0], [5.0, 0.0], [1.0, 0.0]])
    out = cx.integrate_context(p, hm)
    assert out.alpha.data[0, 1] > out.alpha.data[0, 0]


def test_gradient_through_context():
    rng = np.random.default_rng(37)
    p = cx.init_context_params(2, 2, rng)
    hm = ad.constant(rng.standard_normal((3, 2)))
    weights = ad.constant(rng.standard_normal((3, 4)))

    def f():
        out = cx.integrate_context(p, hm)
        return ad.sum_all(ad.mul(out.hc, weights))

    report = ad.finite_diff_check(f, p.tensors(), eps=1e-5, tol=1e-4)
    assert report.passed, str(report)


def test_nonpositive_projection_dim_rejected():
    rng = np.random.default_rng(38)
    with pytest.raises(ConfigError):
        cx.init_context_params(3, 0, rng)
    with pytest.raises(ConfigError):
        cx.ContextParams(w=ad.Tensor(np.zeros((3, 0))))
