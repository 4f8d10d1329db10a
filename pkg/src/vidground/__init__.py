"""vidground: temporal grounding of language queries in videos.

A self-contained implementation of boundary-aware anchor prediction: a
tape-based autodiff core, LSTM encoders, query-video interaction and
self-attention context layers, anchor/boundary heads, supervision and
losses, boundary-modulated inference, the standard retrieval metrics, and
file-based dataset plumbing with a synthetic corpus generator.
"""

__version__ = "0.1.0"

from .errors import (
    CheckpointError,
    ConfigError,
    ContractError,
    DataError,
    ShapeError,
    TrainingError,
)
from .autodiff import Tape, Tensor, finite_diff_check
from .dataio import (
    DatasetManifest,
    GroundingPair,
    SyntheticConfig,
    generate_synthetic,
    load_embeddings,
    load_manifest,
    load_pairs,
)
from .estimator import TemporalGrounder
from .heads import AnchorSet, ScoreGrid
from .inference import GroundingResult, fuse_scores, nms, predict_segments
from .metrics import EvalReport, evaluate, random_anchor_baseline, temporal_iou
from .model import GroundingNetwork
from .supervision import select_anchor_set
from .trainer import (
    Checkpoint,
    TrainConfig,
    TrainResult,
    load_checkpoint,
    save_checkpoint,
    train,
)

__all__ = [
    "AnchorSet",
    "Checkpoint",
    "CheckpointError",
    "ConfigError",
    "ContractError",
    "DataError",
    "DatasetManifest",
    "EvalReport",
    "GroundingNetwork",
    "GroundingPair",
    "GroundingResult",
    "ScoreGrid",
    "ShapeError",
    "SyntheticConfig",
    "Tape",
    "TemporalGrounder",
    "Tensor",
    "TrainConfig",
    "TrainResult",
    "TrainingError",
    "__version__",
    "evaluate",
    "finite_diff_check",
    "fuse_scores",
    "generate_synthetic",
    "load_checkpoint",
    "load_embeddings",
    "load_manifest",
    "load_pairs",
    "nms",
    "predict_segments",
    "random_anchor_baseline",
    "save_checkpoint",
    "select_anchor_set",
    "temporal_iou",
    "train",
]
