"""Anchor and boundary classifier heads over the integrated states.

At every video position t the anchor head emits K sigmoid scores, one per
predefined anchor length, for the segment spanning feature indices
[t - l_i, t] inclusive; the boundary head emits one sigmoid score for
whether t sits on a semantic boundary.  Both heads share their weights
across time.  Cells whose segment would start before index 0 are invalid
and carry a mask bit instead of being clamped, so anchor lengths keep their
meaning; loss and inference skip them.

The resulting score grids are the interchange unit between training,
inference, and offline evaluation, serialized one JSON record per line.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, DataError, ShapeError


@dataclass(frozen=True)
class AnchorSet:
    """Predefined segment lengths in feature-index units, strictly increasing."""

    lengths: tuple[int, ...]

    def __init__(self, lengths):
        ls = tuple(int(v) for v in lengths)
        if len(ls) < 1:
            raise ConfigError("anchor set must contain at least one length")
        if any(l < 1 for l in ls):
            raise ConfigError(f"anchor lengths must be >= 1, got {ls}")
        if any(b <= a for a, b in zip(ls, ls[1:])):
            raise ConfigError(f"anchor lengths must be strictly increasing, got {ls}")
        object.__setattr__(self, "lengths", ls)

    def __len__(self) -> int:
        return len(self.lengths)


def validity_mask(num_steps: int, anchors: AnchorSet) -> np.ndarray:
    """Boolean T×K mask: cell (t, i) is usable iff t - l_i >= 0."""
    t = np.arange(num_steps).reshape(-1, 1)
    l = np.array(anchors.lengths).reshape(1, -1)
    return t - l >= 0


@dataclass
class HeadParams:
    """wc: 2D×K anchor weights, bc: K biases; wb: 2D×1, bb: 1 for the boundary."""

    wc: ad.Tensor
    bc: ad.Tensor
    wb: ad.Tensor
    bb: ad.Tensor

    def __post_init__(self):
        if self.wc.ndim != 2 or self.bc.shape != (self.wc.shape[1],):
            raise ShapeError(f"anchor head shapes disagree: {self.wc.shape} vs {self.bc.shape}")
        if self.wb.shape != (self.wc.shape[0], 1) or self.bb.shape != (1,):
            raise ShapeError(f"boundary head must map {self.wc.shape[0]}->1, "
                             f"got {self.wb.shape} / {self.bb.shape}")

    @property
    def num_anchors(self) -> int:
        return self.wc.shape[1]

    def tensors(self) -> list[ad.Tensor]:
        return [self.wc, self.bc, self.wb, self.bb]


def init_head_params(in_size: int, num_anchors: int, rng: np.random.Generator,
                     name: str = "head") -> HeadParams:
    s = 1.0 / np.sqrt(in_size)
    return HeadParams(
        wc=ad.parameter(rng.uniform(-s, s, size=(in_size, num_anchors)), name=f"{name}.wc"),
        bc=ad.parameter(np.zeros(num_anchors), name=f"{name}.bc"),
        wb=ad.parameter(rng.uniform(-s, s, size=(in_size, 1)), name=f"{name}.wb"),
        bb=ad.parameter(np.zeros(1), name=f"{name}.bb"),
    )


@dataclass
class ScoreGrid:
    """Per-(video, query) localization scores.

    anchor_scores is T×K and boundary_scores length T, all in (0,1); valid
    marks which cells correspond to segments that fit inside the video.
    When produced under an active tape the tensors stay attached so the loss
    can differentiate through them; serialization drops them.
    """

    anchor_lengths: tuple[int, ...]
    anchor_scores: np.ndarray
    boundary_scores: np.ndarray
    valid: np.ndarray
    video_id: str = ""
    query_id: str = ""
    duration: float = 0.0
    c_tensor: ad.Tensor | None = field(default=None, repr=False)
    b_tensor: ad.Tensor | None = field(default=None, repr=False)

    @property
    def num_steps(self) -> int:
        return self.anchor_scores.shape[0]

    @property
    def num_anchors(self) -> int:
        return self.anchor_scores.shape[1]


def localization_scores(head: HeadParams, hc: ad.Tensor, anchors: AnchorSet,
                        video_id: str = "", query_id: str = "",
                        duration: float = 0.0) -> ScoreGrid:
    """Score every (position, anchor) cell and every boundary position.

    C = sigmoid(hc @ wc + bc) row by row, B likewise with the boundary head;
    the same weights serve every timestep.
    """
    if hc.ndim != 2 or hc.shape[0] < 1:
        raise ShapeError(f"need a nonempty T×F state matrix, got shape {hc.shape}")
    if head.num_anchors != len(anchors):
        raise ShapeError(f"head emits {head.num_anchors} scores but anchor set has {len(anchors)}")
    c = ad.sigmoid(ad.matmul_bias(hc, head.wc, head.bc))
    b = ad.sigmoid(ad.matmul_bias(hc, head.wb, head.bb))
    return ScoreGrid(
        anchor_lengths=anchors.lengths,
        anchor_scores=c.data,
        boundary_scores=b.data[:, 0],
        valid=validity_mask(hc.shape[0], anchors),
        video_id=video_id,
        query_id=query_id,
        duration=duration,
        c_tensor=c,
        b_tensor=b,
    )


# ---------------------------------------------------------------------------
# Interchange format: one JSON object per line


def grid_to_record(grid: ScoreGrid) -> dict:
    return {
        "video_id": grid.video_id,
        "query_id": grid.query_id,
        "duration": grid.duration,
        "num_steps": grid.num_steps,
        "anchor_lengths": list(grid.anchor_lengths),
        "anchor_scores": [float(v) for v in grid.anchor_scores.reshape(-1)],
        "boundary_scores": [float(v) for v in grid.boundary_scores],
    }


def grid_from_record(rec: dict) -> ScoreGrid:
    try:
        steps = int(rec["num_steps"])
        lengths = AnchorSet(rec["anchor_lengths"])
        flat = np.asarray(rec["anchor_scores"], dtype=np.float64)
        boundary = np.asarray(rec["boundary_scores"], dtype=np.float64)
        video_id = rec["video_id"]
        query_id = rec["query_id"]
        duration = float(rec["duration"])
    except (KeyError, TypeError, ValueError, ConfigError) as err:
        raise DataError(f"malformed score-grid record: {err}") from err
    k = len(lengths)
    if steps < 1 or flat.size != steps * k or boundary.size != steps:
        raise DataError(f"score-grid sizes disagree: T={steps} K={k} "
                        f"|C|={flat.size} |B|={boundary.size}")
    if duration <= 0:
        raise DataError(f"score-grid duration must be positive, got {duration}")
    return ScoreGrid(
        anchor_lengths=lengths.lengths,
        anchor_scores=flat.reshape(steps, k),
        boundary_scores=boundary,
        valid=validity_mask(steps, lengths),
        video_id=video_id,
        query_id=query_id,
        duration=duration,
    )


def write_score_grids(path, grids) -> None:
    with open(path, "w") as fh:
        for grid in grids:
            fh.write(json.dumps(grid_to_record(grid)) + "\n")


def read_score_grids(path) -> list[ScoreGrid]:
    grids = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as err:
                raise DataError(f"{path}:{lineno}: not valid JSON: {err}") from err
            try:
                grids.append(grid_from_record(rec))
            except DataError as err:
                raise DataError(f"{path}:{lineno}: {err}") from err
    return grids
