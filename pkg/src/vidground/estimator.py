"""Scikit-learn style estimator wrapping the grounding model.

``TemporalGrounder`` exposes the train/predict/evaluate pipeline through the
familiar ``fit`` / ``predict`` / ``score`` surface so it can slot into
sklearn-style experiment harnesses.  Samples are (video, query) pairs; targets
are (start, end) segments in seconds.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import trainer
from .dataio import GroundingPair
from .errors import DataError
from .inference import result_segments_seconds
from .metrics import temporal_iou
from .trainer import TrainConfig


def _as_pairs(X, y=None, prefix: str = "q") -> list[GroundingPair]:
    """Normalize fit/predict inputs to a list of GroundingPair.

    Accepts either GroundingPair instances (targets built in) or
    ``(features, duration, query_vectors)`` tuples with segments supplied
    separately through ``y``.
    """
    if len(X) == 0:
        raise DataError("X is empty")
    if isinstance(X[0], GroundingPair):
        return list(X)
    if y is None:
        # targets are only needed for fit(); predict() passes dummies
        y = [(0.0, 0.0)] * len(X)
    if len(y) != len(X):
        raise DataError(f"X has {len(X)} samples but y has {len(y)}")
    pairs = []
    for i, (sample, seg) in enumerate(zip(X, y)):
        features, duration, query_vectors = sample
        start, end = float(seg[0]), float(seg[1])
        pairs.append(GroundingPair(
            query_id=f"{prefix}{i:04d}", video_id=f"{prefix}v{i:04d}",
            features=np.asarray(features, dtype=np.float64),
            duration=float(duration),
            query_vectors=np.asarray(query_vectors, dtype=np.float64),
            tokens=(), start=start, end=end))
    return pairs


class TemporalGrounder(BaseEstimator):
    """Grounds natural-language queries to temporal segments of a video.

    Parameters mirror TrainConfig; see that class for semantics.  After
    ``fit`` the trained network is available as ``network_`` and the chosen
    anchor lengths as ``anchor_lengths_``.
    """

    def __init__(self, hidden: int = 32, attn_size: int | None = None,
                 ctx_size: int | None = None, num_anchors: int = 8,
                 anchor_lengths: tuple | None = None,
                 anchor_coverage: float = 0.95, theta: float = 0.5,
                 lam: float = 1.0, learning_rate: float = 1e-3,
                 batch_size: int = 8, epochs: int = 10,
                 clip_norm: float = 5.0, seed: int = 0,
                 nms_threshold: float = 0.5, tol_radius: int = 0,
                 top_m: int = 100, top_n: int = 5, use_context: bool = True,
                 use_boundary: bool = True):
        self.hidden = hidden
        self.attn_size = attn_size
        self.ctx_size = ctx_size
        self.num_anchors = num_anchors
        self.anchor_lengths = anchor_lengths
        self.anchor_coverage = anchor_coverage
        self.theta = theta
        self.lam = lam
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.clip_norm = clip_norm
        self.seed = seed
        self.nms_threshold = nms_threshold
        self.tol_radius = tol_radius
        self.top_m = top_m
        self.top_n = top_n
        self.use_context = use_context
        self.use_boundary = use_boundary

    def _config(self) -> TrainConfig:
        config = TrainConfig(**{name: getattr(self, name)
                                for name in TrainConfig.__dataclass_fields__})
        config.validate()
        return config

    def fit(self, X, y=None):
        """Train on (video, query) samples with segment targets in seconds."""
        config = self._config()
        pairs = _as_pairs(X, y, prefix="fit")
        result = trainer.train(config, pairs)
        self.network_ = result.network
        self.anchor_lengths_ = result.anchors.lengths
        self.coverage_ = result.selection.coverage if result.selection else None
        self.history_ = result.history
        self.config_ = config
        return self

    def _check_fitted(self):
        if not hasattr(self, "network_"):
            raise NotFittedError("TemporalGrounder is not fitted; call fit first")

    def predict(self, X) -> np.ndarray:
        """Return the top-1 segment per sample as an (n, 2) array of seconds."""
        ranked = self.predict_ranked(X, top_n=1)
        return np.array([segs[0][:2] for segs in ranked], dtype=np.float64)

    def predict_ranked(self, X, top_n: int | None = None) -> list:
        """Return up to top_n (start, end, score) tuples per sample."""
        self._check_fitted()
        config = self.config_
        if top_n is not None:
            config = TrainConfig.from_dict({**config.to_dict(), "top_n": top_n,
                                            "top_m": max(config.top_m, top_n)})
        pairs = _as_pairs(X, prefix="pred")
        results = trainer.predict_pairs(self.network_, pairs, config)
        return [result_segments_seconds(res) for res in results]

    def score(self, X, y=None) -> float:
        """Mean IoU between top-1 predictions and targets (higher is better)."""
        self._check_fitted()
        pairs = _as_pairs(X, y, prefix="score")
        preds = self.predict(pairs)
        ious = [temporal_iou((s, e), (p.start, p.end))
                for (s, e), p in zip(preds, pairs)]
        return float(np.mean(ious))
