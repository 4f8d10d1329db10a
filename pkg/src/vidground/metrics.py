"""Temporal IoU, recall-at-N over IoU thresholds, mIoU, and a random baseline.

Evaluation runs in seconds, the unit ground truths are annotated in.  A
query counts toward R@N,IoU>=theta when any of its top N predictions
reaches the threshold; mIoU averages the top-1 overlap, scoring queries
with no prediction as 0.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DataError
from .heads import AnchorSet, ScoreGrid, validity_mask


def temporal_iou(a, b) -> float:
    """Intersection over union of two closed intervals.

    Two identical zero-length intervals (the same point) count as a perfect
    match; distinct points do not.
    """
    a_start, a_end = float(a[0]), float(a[1])
    b_start, b_end = float(b[0]), float(b[1])
    if a_start > a_end:
        raise ContractError(f"inverted interval ({a_start}, {a_end})")
    if b_start > b_end:
        raise ContractError(f"inverted interval ({b_start}, {b_end})")
    union = max(a_end, b_end) - min(a_start, b_start)
    if union == 0.0:
        return 1.0  # both are the same single point
    inter = min(a_end, b_end) - max(a_start, b_start)
    return max(inter, 0.0) / union


@dataclass
class EvalReport:
    """Recall table keyed by (N, theta) in percent, plus mIoU and query count."""

    table: dict[tuple[int, float], float]
    miou: float
    num_queries: int
    ns: tuple[int, ...]
    thetas: tuple[float, ...]

    def recall(self, n: int, theta: float) -> float:
        return self.table[(n, theta)]

    def to_text(self) -> str:
        out = io.StringIO()
        width = 12
        out.write("".ljust(6))
        for theta in self.thetas:
            out.write(f"IoU>={theta:g}".rjust(width))
        out.write("\n")
        for n in self.ns:
            out.write(f"R@{n}".ljust(6))
            for theta in self.thetas:
                out.write(f"{self.table[(n, theta)]:.2f}".rjust(width))
            out.write("\n")
        out.write(f"mIoU  {self.miou:.2f}\n")
        out.write(f"queries  {self.num_queries}\n")
        return out.getvalue()

    def to_records(self) -> list[dict]:
        recs = [{"kind": "recall", "n": n, "theta": theta, "value": self.table[(n, theta)]}
                for n in self.ns for theta in self.thetas]
        recs.append({"kind": "miou", "value": self.miou})
        recs.append({"kind": "meta", "num_queries": self.num_queries})
        return recs

    def to_csv(self) -> str:
        lines = ["metric,value"]
        for n in self.ns:
            for theta in self.thetas:
                lines.append(f"R@{n} IoU>={theta:g},{self.table[(n, theta)]:.4f}")
        lines.append(f"mIoU,{self.miou:.4f}")
        lines.append(f"queries,{self.num_queries}")
        return "\n".join(lines) + "\n"


def evaluate(predictions: dict, ground_truths: dict,
             ns=(1, 5), thetas=(0.3, 0.5, 0.7)) -> EvalReport:
    """Score ranked predictions against one ground-truth segment per query.

    ``predictions`` maps query id to a rank-ordered list of (start, end) or
    (start, end, score) tuples in seconds; ``ground_truths`` maps the same
    ids to (start, end).  The two key sets must match exactly; queries may
    have empty prediction lists.
    """
    missing = sorted(set(ground_truths) - set(predictions))
    extra = sorted(set(predictions) - set(ground_truths))
    if missing or extra:
        raise DataError(f"query sets disagree: missing predictions for {missing}, "
                        f"unknown queries {extra}")
    if not ground_truths:
        raise ContractError("cannot evaluate zero queries")
    ns = tuple(int(n) for n in ns)
    thetas = tuple(float(t) for t in thetas)

    table = {(n, theta): 0 for n in ns for theta in thetas}
    iou_top1 = []
    for qid, gt in ground_truths.items():
        ious = [temporal_iou((p[0], p[1]), gt) for p in predictions[qid]]
        iou_top1.append(ious[0] if ious else 0.0)
        for n in ns:
            best = max(ious[:n], default=0.0)
            for theta in thetas:
                if best >= theta:
                    table[(n, theta)] += 1

    count = len(ground_truths)
    return EvalReport(
        table={key: 100.0 * hits / count for key, hits in table.items()},
        miou=100.0 * float(np.mean(iou_top1)),
        num_queries=count,
        ns=ns,
        thetas=thetas,
    )


def random_anchor_baseline(anchors: AnchorSet, num_steps: int, seed: int,
                           duration: float, video_id: str = "",
                           query_id: str = "") -> ScoreGrid:
    """Uniform-random anchor scores with no boundary signal.

    The baseline ranks segments purely by chance; running it through the
    same NMS pipeline gives the floor any trained model must beat.
    """
    rng = np.random.default_rng(seed)
    scores = rng.uniform(0.0, 1.0, size=(num_steps, len(anchors)))
    return ScoreGrid(
        anchor_lengths=anchors.lengths,
        anchor_scores=scores,
        boundary_scores=np.zeros(num_steps),
        valid=validity_mask(num_steps, anchors),
        video_id=video_id,
        query_id=query_id,
        duration=duration,
    )
