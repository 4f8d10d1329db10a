"""Boundary-modulated anchor prediction: fusion, ranking, and NMS.

Each valid anchor cell (t, i) proposes the segment [t - l_i, t].  Its raw
classifier score is lifted by the boundary confidence at the segment's two
ends,

    fused = c + 0.5 * (B[t - l_i] + B[t]),

so segments whose endpoints look like semantic boundaries outrank equally
confident ones that sit mid-action.  Candidates are then ranked globally,
pruned greedily by NMS, and emitted in seconds.

Everything is deterministic: ranking and NMS break score ties by earlier
end step, then smaller anchor index.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DataError, ShapeError
from .heads import AnchorSet, ScoreGrid
from .metrics import temporal_iou
from .supervision import index_to_seconds


@dataclass(frozen=True)
class Candidate:
    """One proposed segment in feature-index units."""

    start: int
    end: int
    score: float
    raw_score: float
    anchor_index: int
    end_step: int

    def interval(self) -> tuple[float, float]:
        return (float(self.start), float(self.end))


@dataclass
class GroundingResult:
    """Ranked, NMS-pruned candidates for one (video, query) pair.

    ``shortfall`` is set when fewer candidates survived than were asked for.
    """

    candidates: list[Candidate]
    shortfall: bool
    video_id: str = ""
    query_id: str = ""
    duration: float = 0.0
    num_steps: int = 0


def fuse_scores(grid: ScoreGrid, anchors: AnchorSet | None = None,
                use_boundary: bool = True) -> np.ndarray:
    """Combine anchor and boundary scores cell by cell.

    Returns a T×K array; invalid cells keep their raw anchor score and must
    stay masked downstream.  With ``use_boundary`` off the raw grid comes
    back unchanged (the anchor-only ablation).
    """
    if anchors is not None and anchors.lengths != grid.anchor_lengths:
        raise ShapeError(f"anchor sets disagree: {anchors.lengths} vs {grid.anchor_lengths}")
    fused = grid.anchor_scores.copy()
    if not use_boundary:
        return fused
    b = grid.boundary_scores
    for i, l in enumerate(grid.anchor_lengths):
        ts = np.arange(l, grid.num_steps)
        fused[ts, i] += 0.5 * (b[ts - l] + b[ts])
    return fused


def _rank_key(c: Candidate):
    return (-c.score, c.end_step, c.anchor_index)


def nms(candidates: list[Candidate], threshold: float) -> list[Candidate]:
    """Greedy suppression: keep the best remaining candidate, drop overlaps.

    A candidate is dropped when its IoU with an already-kept one exceeds
    ``threshold``.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ContractError(f"NMS threshold must be in [0, 1], got {threshold}")
    kept: list[Candidate] = []
    for cand in sorted(candidates, key=_rank_key):
        if all(temporal_iou(cand.interval(), k.interval()) <= threshold for k in kept):
            kept.append(cand)
    return kept


def predict_segments(grid: ScoreGrid, anchors: AnchorSet | None = None,
                     top_m: int = 100, nms_threshold: float = 0.5,
                     top_n: int = 5, use_boundary: bool = True) -> GroundingResult:
    """Full ranking pipeline: fuse, take top-M valid cells, NMS, return top-N.

    The first returned candidate is always the global argmax of the fused
    grid; NMS can only drop lower-ranked overlaps.
    """
    if top_n < 1 or top_m < top_n:
        raise ContractError(f"need M >= N >= 1, got M={top_m} N={top_n}")
    fused = fuse_scores(grid, anchors, use_boundary=use_boundary)
    pool: list[Candidate] = []
    for t, i in zip(*np.nonzero(grid.valid)):
        l = grid.anchor_lengths[i]
        pool.append(Candidate(start=int(t) - l, end=int(t), score=float(fused[t, i]),
                              raw_score=float(grid.anchor_scores[t, i]),
                              anchor_index=int(i), end_step=int(t)))
    pool.sort(key=_rank_key)
    survivors = nms(pool[:top_m], nms_threshold)
    return GroundingResult(
        candidates=survivors[:top_n],
        shortfall=len(survivors) < top_n,
        video_id=grid.video_id,
        query_id=grid.query_id,
        duration=grid.duration,
        num_steps=grid.num_steps,
    )


def result_segments_seconds(result: GroundingResult) -> list[tuple[float, float, float]]:
    """Ranked (start, end, score) triples in seconds."""
    out = []
    for c in result.candidates:
        out.append((index_to_seconds(c.start, result.duration, result.num_steps),
                    index_to_seconds(c.end, result.duration, result.num_steps),
                    c.score))
    return out


# ---------------------------------------------------------------------------
# Results interchange: one JSON record per ranked segment


def write_results(path, results: list[GroundingResult]) -> None:
    with open(path, "w") as fh:
        for res in results:
            for rank, (start, end, score) in enumerate(result_segments_seconds(res), start=1):
                fh.write(json.dumps({
                    "video_id": res.video_id,
                    "query_id": res.query_id,
                    "rank": rank,
                    "start": start,
                    "end": end,
                    "score": score,
                }) + "\n")


def read_results(path) -> dict[str, list[tuple[float, float, float]]]:
    """Load ranked segments keyed by query id, ordered by rank."""
    rows: dict[str, list[tuple[int, float, float, float]]] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                key = rec["query_id"]
                entry = (int(rec["rank"]), float(rec["start"]), float(rec["end"]),
                         float(rec["score"]))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as err:
                raise DataError(f"{path}:{lineno}: malformed result record: {err}") from err
            rows.setdefault(key, []).append(entry)
    out: dict[str, list[tuple[float, float, float]]] = {}
    for key, entries in rows.items():
        entries.sort(key=lambda e: e[0])
        out[key] = [(s, e, sc) for _, s, e, sc in entries]
    return out
