"""Label construction, class weighting, anchor selection, and training losses.

Annotation times in seconds are discretized onto the feature grid; segments
then live in index space, where anchor i ending at step t spans
[t - l_i, t] inclusive.  Anchor cells become positive when their overlap
with the ground truth reaches the IoU threshold, boundary steps when they
fall within a tolerance radius of the discretized start or end.  Both label
kinds are heavily imbalanced, so each of the K anchor classifiers and the
boundary classifier gets inverse-frequency class weights.

The total loss is L = L_a + lambda * L_b: weighted multi-label cross
entropy over valid anchor cells plus weighted binary cross entropy over
boundary steps, each summed over the grid (batch averaging is the
trainer's job).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, ContractError, DataError, ShapeError
from .heads import AnchorSet, ScoreGrid, validity_mask

log = logging.getLogger(__name__)

SCORE_FLOOR = 1e-12  # scores are clamped to [floor, 1-floor] before any log


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def discretize_time(t_seconds: float, duration: float, num_steps: int) -> int:
    """Map a time in seconds onto the feature grid; ties round up."""
    if num_steps < 1:
        raise ContractError(f"need at least one step, got {num_steps}")
    if duration <= 0:
        raise DataError(f"duration must be positive, got {duration}")
    if not 0.0 <= t_seconds <= duration:
        raise DataError(f"annotation time {t_seconds} outside [0, {duration}]")
    idx = _round_half_up(t_seconds / duration * (num_steps - 1))
    return min(max(idx, 0), num_steps - 1)


def index_to_seconds(index: int, duration: float, num_steps: int) -> float:
    """Inverse of discretization; a single-step grid maps everything to 0."""
    if num_steps < 1:
        raise ContractError(f"need at least one step, got {num_steps}")
    if num_steps == 1:
        return 0.0
    return index * duration / (num_steps - 1)


@dataclass
class AnchorLabels:
    """y: T×K booleans (cell positive iff its segment overlaps gt enough)."""

    y: np.ndarray
    valid: np.ndarray


@dataclass
class BoundaryLabels:
    """z: length-T booleans marking steps near the segment start or end."""

    z: np.ndarray


@dataclass
class ClassWeights:
    """Inverse-frequency weights: per anchor index (w0 positive, w1 negative)
    plus one positive/negative pair for the boundary classifier."""

    w0: np.ndarray
    w1: np.ndarray
    b_pos: float
    b_neg: float


def _check_gt(gt, num_steps: int) -> tuple[int, int]:
    s, e = int(gt[0]), int(gt[1])
    if not 0 <= s <= e <= num_steps - 1:
        raise ContractError(f"discretized segment [{s}, {e}] outside grid of {num_steps} steps")
    return s, e


def build_anchor_labels(gt, anchors: AnchorSet, num_steps: int,
                        theta: float = 0.5) -> AnchorLabels:
    """Threshold every valid (t, i) cell on interval IoU with the ground truth.

    ``gt`` is the discretized (start, end) index pair.  Intervals are treated
    as continuous spans, so a cell [t-l, t] against gt [s, e] scores
    overlap / union in index units.
    """
    s, e = _check_gt(gt, num_steps)
    t = np.arange(num_steps, dtype=np.float64).reshape(-1, 1)
    l = np.array(anchors.lengths, dtype=np.float64).reshape(1, -1)
    lo = t - l
    inter = np.maximum(np.minimum(t, e) - np.maximum(lo, s), 0.0)
    # union >= anchor length >= 1, so the division is always safe
    union = np.maximum(t, e) - np.minimum(lo, s)
    iou = inter / union
    valid = validity_mask(num_steps, anchors)
    return AnchorLabels(y=(iou >= theta) & valid, valid=valid)


def build_boundary_labels(gt, num_steps: int, tol_radius: int = 0) -> BoundaryLabels:
    """Mark steps within ``tol_radius`` of the discretized start or end."""
    if tol_radius < 0:
        raise ContractError(f"tolerance radius must be >= 0, got {tol_radius}")
    s, e = _check_gt(gt, num_steps)
    t = np.arange(num_steps)
    return BoundaryLabels(z=(np.abs(t - s) <= tol_radius) | (np.abs(t - e) <= tol_radius))


def _inverse_frequency(n_pos: float, n_neg: float, label: str) -> tuple[float, float]:
    if n_pos == 0 or n_neg == 0:
        log.warning("class %s has %d positives and %d negatives; using weight 1.0 "
                    "(anchor set or labels are likely misdesigned)", label, n_pos, n_neg)
        return 1.0, 1.0
    total = n_pos + n_neg
    return total / (2.0 * n_pos), total / (2.0 * n_neg)


def compute_class_weights(anchor_labels: list[AnchorLabels],
                          boundary_labels: list[BoundaryLabels]) -> ClassWeights:
    """Balance each binary classifier by inverse class frequency.

    Counts run over all supplied training instances; anchor cells outside the
    validity mask never enter the loss, so they are excluded here too.
    """
    if not anchor_labels or not boundary_labels:
        raise ContractError("need at least one labeled instance")
    k = anchor_labels[0].y.shape[1]
    n_pos = np.zeros(k)
    n_val = np.zeros(k)
    for lab in anchor_labels:
        if lab.y.shape[1] != k:
            raise ShapeError(f"inconsistent anchor count: {lab.y.shape[1]} vs {k}")
        n_pos += (lab.y & lab.valid).sum(axis=0)
        n_val += lab.valid.sum(axis=0)
    w0 = np.empty(k)
    w1 = np.empty(k)
    for i in range(k):
        w0[i], w1[i] = _inverse_frequency(n_pos[i], n_val[i] - n_pos[i], f"anchor[{i}]")
    z_pos = sum(int(lab.z.sum()) for lab in boundary_labels)
    z_total = sum(lab.z.size for lab in boundary_labels)
    b_pos, b_neg = _inverse_frequency(z_pos, z_total - z_pos, "boundary")
    return ClassWeights(w0=w0, w1=w1, b_pos=b_pos, b_neg=b_neg)


def compute_losses(grid: ScoreGrid, ylabels: AnchorLabels, zlabels: BoundaryLabels,
                   weights: ClassWeights, lam: float = 1.0):
    """Anchor loss, boundary loss, and their lambda-weighted total.

    Returns three scalar tensors (differentiable when the grid still carries
    its graph tensors).  Scores are clamped away from 0 and 1 before the
    logs, so the result is finite for any input.  With lam = 0 the total is
    bit-identical to the anchor loss.
    """
    if lam < 0:
        raise ContractError(f"lambda must be >= 0, got {lam}")
    steps, k = grid.anchor_scores.shape
    if ylabels.y.shape != (steps, k):
        raise ShapeError(f"anchor labels {ylabels.y.shape} do not match grid {(steps, k)}")
    if zlabels.z.shape != (steps,):
        raise ShapeError(f"boundary labels {zlabels.z.shape} do not match {steps} steps")
    if weights.w0.shape != (k,):
        raise ShapeError(f"class weights cover {weights.w0.shape[0]} anchors, grid has {k}")

    c = grid.c_tensor if grid.c_tensor is not None else ad.constant(grid.anchor_scores)
    b = grid.b_tensor if grid.b_tensor is not None else \
        ad.constant(grid.boundary_scores.reshape(-1, 1))

    y = ylabels.y.astype(np.float64)
    v = grid.valid.astype(np.float64)
    pos_w = ad.constant(y * weights.w0.reshape(1, -1) * v)
    neg_w = ad.constant((1.0 - y) * weights.w1.reshape(1, -1) * v)
    cc = ad.clamp(c, SCORE_FLOOR, 1.0 - SCORE_FLOOR)
    anchor_terms = ad.add(ad.mul(pos_w, ad.log(cc)),
                          ad.mul(neg_w, ad.log(ad.affine(cc, -1.0, 1.0))))
    loss_a = ad.affine(ad.sum_all(anchor_terms), -1.0, 0.0)

    z = zlabels.z.astype(np.float64).reshape(-1, 1)
    zpos_w = ad.constant(z * weights.b_pos)
    zneg_w = ad.constant((1.0 - z) * weights.b_neg)
    bb = ad.clamp(b, SCORE_FLOOR, 1.0 - SCORE_FLOOR)
    boundary_terms = ad.add(ad.mul(zpos_w, ad.log(bb)),
                            ad.mul(zneg_w, ad.log(ad.affine(bb, -1.0, 1.0))))
    loss_b = ad.affine(ad.sum_all(boundary_terms), -1.0, 0.0)

    total = ad.add(loss_a, ad.affine(loss_b, lam, 0.0))
    return loss_a, loss_b, total


@dataclass
class AnchorSelection:
    """Chosen anchor lengths plus the audited fraction of training segments
    that have some anchor within end-aligned IoU 0.5 of their length."""

    anchors: AnchorSet
    coverage: float
    cutoff: float


def select_anchor_set(segment_lengths, num_anchors: int,
                      coverage: float = 0.95) -> AnchorSelection:
    """Place anchors at even quantiles of the truncated length distribution.

    The distribution is cut at the ``coverage`` quantile so rare very long
    segments do not stretch the anchor range, then K lengths are read off at
    quantiles (j+1)/K, deduplicated and floored at 1.  The returned audit is
    the fraction of all training segments whose length is within a factor of
    two of some anchor (end-aligned IoU >= 0.5).
    """
    if num_anchors < 1:
        raise ConfigError(f"need at least one anchor, got {num_anchors}")
    if not 0.0 < coverage <= 1.0:
        raise ConfigError(f"coverage must be in (0, 1], got {coverage}")
    lengths = np.asarray(list(segment_lengths), dtype=np.float64)
    if lengths.size == 0:
        raise ConfigError("cannot select anchors from an empty segment list")

    cutoff = float(np.quantile(lengths, coverage))
    truncated = lengths[lengths <= cutoff]
    if truncated.size == 0:
        truncated = lengths
    qs = [(j + 1) / num_anchors for j in range(num_anchors)]
    raw = [max(1, _round_half_up(float(np.quantile(truncated, q)))) for q in qs]
    chosen = sorted(set(raw))
    if len(chosen) < num_anchors:
        log.warning("segment-length distribution supports only %d distinct anchors "
                    "(requested %d)", len(chosen), num_anchors)
    anchors = AnchorSet(chosen)

    arr = np.array(anchors.lengths, dtype=np.float64).reshape(1, -1)
    col = lengths.reshape(-1, 1)
    ratio = np.minimum(col, arr) / np.maximum(np.maximum(col, arr), 1e-300)
    covered = float((ratio.max(axis=1) >= 0.5).mean())
    return AnchorSelection(anchors=anchors, coverage=covered, cutoff=cutoff)
