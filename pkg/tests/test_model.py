"""Tests for the assembled network."""

import numpy as np
import pytest

from vidground import autodiff as ad
from vidground import supervision as sv
from vidground.errors import CheckpointError, ShapeError
from vidground.heads import AnchorSet
from vidground.model import GroundingNetwork


def make_network(seed=100, hidden=3, use_context=True, anchors=(1, 2)):
    return GroundingNetwork(query_dim=4, video_dim=5, hidden=hidden,
                            anchors=AnchorSet(anchors), rng=np.random.default_rng(seed),
                            use_context=use_context)


def make_instance(seed=101, steps=6, words=3):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((steps, 5)), rng.standard_normal((words, 4))


def test_forward_shapes():
    net = make_network()
    feats, query = make_instance()
    grid, extras = net.forward(feats, query, video_id="v", query_id="q",
                               duration=12.0, collect_attention=True)
    assert grid.anchor_scores.shape == (6, 2)
    assert grid.boundary_scores.shape == (6,)
    assert grid.valid.shape == (6, 2)
    assert (grid.video_id, grid.query_id, grid.duration) == ("v", "q", 12.0)
    assert extras["word_attention"].shape == (6, 3)
    assert extras["context_attention"].shape == (6, 6)
    np.testing.assert_allclose(extras["word_attention"].sum(axis=1), np.ones(6),
                               atol=1e-9)


def test_forward_deterministic():
    net = make_network()
    feats, query = make_instance()
    a, _ = net.forward(feats, query)
    b, _ = net.forward(feats, query)
    np.testing.assert_array_equal(a.anchor_scores, b.anchor_scores)
    np.testing.assert_array_equal(a.boundary_scores, b.boundary_scores)


def test_context_ablation_changes_scores():
    feats, query = make_instance()
    with_ctx, _ = make_network(use_context=True).forward(feats, query)
    without, extras = make_network(use_context=False).forward(feats, query,
                                                              collect_attention=True)
    assert "context_attention" not in extras
    assert not np.allclose(with_ctx.anchor_scores, without.anchor_scores)


def test_param_names_unique_and_stable():
    net = make_network()
    names = [t.name for t in net.params()]
    assert len(names) == len(set(names))
    assert names == [t.name for t in make_network().params()]


def test_full_model_gradient_small():
    net = make_network(hidden=2, anchors=(1, 2))
    rng = np.random.default_rng(102)
    feats = rng.standard_normal((3, 5))
    query = rng.standard_normal((2, 4))
    anchors = net.anchors
    labels = sv.build_anchor_labels((1, 2), anchors, 3)
    boundary = sv.build_boundary_labels((1, 2), 3)
    weights = sv.ClassWeights(w0=np.array([1.3, 0.8]), w1=np.array([0.9, 1.1]),
                              b_pos=1.5, b_neg=0.7)

    def f():
        grid, _ = net.forward(feats, query)
        from vidground.supervision import compute_losses
        return compute_losses(grid, labels, boundary, weights, lam=0.5)[2]

    report = ad.finite_diff_check(f, net.params(), eps=1e-5, tol=1e-4)
    assert report.passed, str(report)


def test_state_dict_roundtrip_bit_exact():
    net = make_network()
    feats, query = make_instance()
    before, _ = net.forward(feats, query)
    state = net.state_dict()

    other = make_network(seed=999)  # different init
    other.load_state_dict(state)
    after, _ = other.forward(feats, query)
    np.testing.assert_array_equal(before.anchor_scores, after.anchor_scores)
    np.testing.assert_array_equal(before.boundary_scores, after.boundary_scores)


def test_load_state_dict_validation():
    net = make_network()
    state = net.state_dict()
    state.pop("head.bb")
    with pytest.raises(CheckpointError) as err:
        net.load_state_dict(state)
    assert "head.bb" in str(err.value)

    state = net.state_dict()
    state["head.bb"] = np.zeros(2)
    with pytest.raises(CheckpointError):
        net.load_state_dict(state)

    state = net.state_dict()
    state["mystery"] = np.zeros(1)
    with pytest.raises(CheckpointError):
        net.load_state_dict(state)


def test_forward_shape_validation():
    net = make_network()
    feats, query = make_instance()
    with pytest.raises(ShapeError):
        net.forward(feats[:, :3], query)
    with pytest.raises(ShapeError):
        net.forward(feats, query[:, :2])
