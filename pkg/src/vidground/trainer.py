"""End-to-end optimization: config, Adam, the epoch loop, and checkpoints.

Training minimizes L = L_a + lambda * L_b with per-instance backward passes
(videos differ in length, so there is no padding; gradients are averaged
over the batch), global-norm clipping, and first-order adaptive-moment
updates.  Everything is driven by one seed: parameter init, batch order,
and therefore the final checkpoint are bit-reproducible.

Checkpoints are a single self-checking binary: magic, version, a JSON
header naming every block, the raw float64 payload, and a SHA-256 trailer
over all preceding bytes.  A version or checksum mismatch refuses to load
anything.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .dataio import GroundingPair
from .errors import CheckpointError, ConfigError, TrainingError
from .heads import AnchorSet, ScoreGrid
from .inference import GroundingResult, predict_segments, result_segments_seconds
from .metrics import EvalReport, evaluate
from .model import GroundingNetwork
from .supervision import (AnchorLabels, AnchorSelection, BoundaryLabels,
                          ClassWeights, build_anchor_labels, build_boundary_labels,
                          compute_class_weights, compute_losses, discretize_time,
                          select_anchor_set)

CHECKPOINT_MAGIC = b"VGCK"
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    """Everything a training run needs besides the data."""

    hidden: int = 32
    attn_size: int | None = None      # None → hidden
    ctx_size: int | None = None       # None → hidden
    num_anchors: int = 8              # K for automatic selection
    anchor_lengths: tuple[int, ...] | None = None  # explicit set overrides K
    anchor_coverage: float = 0.95
    theta: float = 0.5
    lam: float = 1.0
    learning_rate: float = 1e-3
    batch_size: int = 8
    epochs: int = 10
    clip_norm: float = 5.0
    seed: int = 0
    nms_threshold: float = 0.5
    tol_radius: int = 0
    top_m: int = 100
    top_n: int = 5
    use_context: bool = True
    use_boundary: bool = True

    def validate(self) -> None:
        if self.hidden < 1:
            raise ConfigError(f"hidden size must be >= 1, got {self.hidden}")
        for label, v in (("attn_size", self.attn_size), ("ctx_size", self.ctx_size)):
            if v is not None and v < 1:
                raise ConfigError(f"{label} must be >= 1, got {v}")
        if self.anchor_lengths is None and self.num_anchors < 1:
            raise ConfigError(f"need at least one anchor, got K={self.num_anchors}")
        if not 0.0 < self.anchor_coverage <= 1.0:
            raise ConfigError(f"anchor coverage must be in (0, 1], got {self.anchor_coverage}")
        if not 0.0 < self.theta <= 1.0:
            raise ConfigError(f"label threshold must be in (0, 1], got {self.theta}")
        if self.lam < 0:
            raise ConfigError(f"lambda must be >= 0, got {self.lam}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError(f"bad batch size {self.batch_size} or epochs {self.epochs}")
        if self.clip_norm <= 0:
            raise ConfigError(f"clip norm must be positive, got {self.clip_norm}")
        if not 0.0 <= self.nms_threshold <= 1.0:
            raise ConfigError(f"NMS threshold must be in [0, 1], got {self.nms_threshold}")
        if self.tol_radius < 0:
            raise ConfigError(f"tolerance radius must be >= 0, got {self.tol_radius}")
        if self.top_n < 1 or self.top_m < self.top_n:
            raise ConfigError(f"need top_m >= top_n >= 1, got {self.top_m}/{self.top_n}")

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["anchor_lengths"] is not None:
            d["anchor_lengths"] = list(d["anchor_lengths"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        kwargs = dict(d)
        if kwargs.get("anchor_lengths") is not None:
            kwargs["anchor_lengths"] = tuple(int(v) for v in kwargs["anchor_lengths"])
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg


class Adam:
    """First-order adaptive-moment updates over a fixed parameter list."""

    def __init__(self, params: list[ad.Tensor], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {p: np.zeros_like(p.data) for p in self.params}
        self.v = {p: np.zeros_like(p.data) for p in self.params}

    def update(self, grads: dict[ad.Tensor, np.ndarray]) -> None:
        self.step_count += 1
        t = self.step_count
        for p in self.params:
            g = grads[p]
            self.m[p] = self.beta1 * self.m[p] + (1.0 - self.beta1) * g
            self.v[p] = self.beta2 * self.v[p] + (1.0 - self.beta2) * g * g
            mhat = self.m[p] / (1.0 - self.beta1 ** t)
            vhat = self.v[p] / (1.0 - self.beta2 ** t)
            p.data = p.data - self.lr * mhat / (np.sqrt(vhat) + self.eps)


def clip_gradients(grads: dict, clip_norm: float) -> float:
    """Scale all gradients in place when their global norm exceeds the limit.

    Below the limit the arrays are untouched (bit-identical to no clipping).
    Returns the pre-clip norm.
    """
    norm = ad.global_norm(grads.values())
    if norm > clip_norm:
        factor = clip_norm / norm
        for key in grads:
            grads[key] = grads[key] * factor
    return norm


@dataclass
class PreparedPair:
    """A training instance with its discretized segment and labels."""

    pair: GroundingPair
    gt_idx: tuple[int, int]
    anchor_labels: AnchorLabels
    boundary_labels: BoundaryLabels


def prepare_pairs(pairs: list[GroundingPair], anchors: AnchorSet,
                  theta: float, tol_radius: int) -> list[PreparedPair]:
    prepared = []
    for p in pairs:
        s = discretize_time(p.start, p.duration, p.num_steps)
        e = discretize_time(p.end, p.duration, p.num_steps)
        prepared.append(PreparedPair(
            pair=p,
            gt_idx=(s, e),
            anchor_labels=build_anchor_labels((s, e), anchors, p.num_steps, theta),
            boundary_labels=build_boundary_labels((s, e), p.num_steps, tol_radius)))
    return prepared


def segment_lengths(pairs: list[GroundingPair]) -> list[int]:
    out = []
    for p in pairs:
        s = discretize_time(p.start, p.duration, p.num_steps)
        e = discretize_time(p.end, p.duration, p.num_steps)
        out.append(e - s)
    return out


def resolve_anchors(config: TrainConfig, pairs: list[GroundingPair]):
    """Explicit anchor lengths from the config, or quantile selection."""
    if config.anchor_lengths is not None:
        return AnchorSet(config.anchor_lengths), None
    selection = select_anchor_set(segment_lengths(pairs), config.num_anchors,
                                  config.anchor_coverage)
    return selection.anchors, selection


@dataclass
class TrainResult:
    network: GroundingNetwork
    optimizer: Adam
    weights: ClassWeights
    anchors: AnchorSet
    history: list[dict]
    epoch: int
    selection: "AnchorSelection | None" = None  # None when lengths were explicit


def train(config: TrainConfig, train_pairs: list[GroundingPair],
          val_pairs: list[GroundingPair] | None = None,
          log_path=None, resume: "Checkpoint | None" = None,
          progress=None) -> TrainResult:
    """Run the full optimization loop.

    With ``resume`` the parameters, optimizer state, and epoch counter pick
    up where the checkpoint left off; ``config.epochs`` stays the total.
    ``progress`` is an optional callable receiving each epoch record.
    """
    config.validate()
    if not train_pairs:
        raise ConfigError("cannot train on an empty pair list")

    seeds = np.random.SeedSequence(config.seed).spawn(2)
    rng_init = np.random.default_rng(seeds[0])
    rng_batch = np.random.default_rng(seeds[1])

    selection = None
    if resume is not None:
        anchors = AnchorSet(resume.anchors)
    else:
        anchors, selection = resolve_anchors(config, train_pairs)
    prepared = prepare_pairs(train_pairs, anchors, config.theta, config.tol_radius)
    weights = compute_class_weights([p.anchor_labels for p in prepared],
                                    [p.boundary_labels for p in prepared])

    query_dim = train_pairs[0].query_vectors.shape[1]
    video_dim = train_pairs[0].features.shape[1]
    network = GroundingNetwork(query_dim, video_dim, config.hidden, anchors, rng_init,
                               attn_size=config.attn_size, ctx_size=config.ctx_size,
                               use_context=config.use_context)
    optimizer = Adam(network.params(), lr=config.learning_rate)
    start_epoch = 0
    if resume is not None:
        _restore_from_checkpoint(resume, network, optimizer)
        start_epoch = resume.epoch
        # keep the batch stream aligned with an uninterrupted run
        for _ in range(start_epoch):
            rng_batch.permutation(len(prepared))

    params = network.params()
    history: list[dict] = []
    log_file = open(log_path, "a") if log_path else None
    try:
        if start_epoch == 0:
            record = {"epoch": 0}
            record.update(_average_losses(network, prepared, weights, config.lam))
            if val_pairs:
                report = evaluate_pairs(network, val_pairs, config, ns=(1,), thetas=(0.7,))
                record["val_r1_at_07"] = report.recall(1, 0.7)
            history.append(record)
            if log_file:
                log_file.write(json.dumps(record) + "\n")
            if progress:
                progress(record)
        for epoch in range(start_epoch, config.epochs):
            order = rng_batch.permutation(len(prepared))
            for lo in range(0, len(order), config.batch_size):
                batch = [prepared[i] for i in order[lo:lo + config.batch_size]]
                grads = {p: np.zeros_like(p.data) for p in params}
                scale = 1.0 / len(batch)
                for item in batch:
                    with ad.Tape() as tape:
                        grid, _ = network.forward(item.pair.features,
                                                  item.pair.query_vectors)
                        la, lb, total = compute_losses(grid, item.anchor_labels,
                                                       item.boundary_labels, weights,
                                                       config.lam)
                        instance_grads = tape.backward(total, params=params)
                    if not np.isfinite(total.item()):
                        ids = [b.pair.query_id for b in batch]
                        raise TrainingError(f"non-finite loss at epoch {epoch + 1} on "
                                            f"batch {ids} (query {item.pair.query_id})")
                    for p in params:
                        grads[p] += instance_grads[p] * scale
                clip_gradients(grads, config.clip_norm)
                optimizer.update(grads)

            # losses are re-evaluated after the epoch's updates so that each
            # record is comparable with the epoch-0 (initialization) record
            record = {"epoch": epoch + 1}
            record.update(_average_losses(network, prepared, weights, config.lam))
            if val_pairs:
                report = evaluate_pairs(network, val_pairs, config, ns=(1,), thetas=(0.7,))
                record["val_r1_at_07"] = report.recall(1, 0.7)
            history.append(record)
            if log_file:
                log_file.write(json.dumps(record) + "\n")
                log_file.flush()
            if progress:
                progress(record)
    finally:
        if log_file:
            log_file.close()

    return TrainResult(network=network, optimizer=optimizer, weights=weights,
                       anchors=anchors, history=history,
                       epoch=max(start_epoch, config.epochs), selection=selection)


def _average_losses(network: GroundingNetwork, prepared: list[PreparedPair],
                    weights: ClassWeights, lam: float) -> dict:
    sums = {"loss": 0.0, "loss_anchor": 0.0, "loss_boundary": 0.0}
    for item in prepared:
        grid, _ = network.forward(item.pair.features, item.pair.query_vectors)
        la, lb, total = compute_losses(grid, item.anchor_labels, item.boundary_labels,
                                       weights, lam)
        sums["loss_anchor"] += la.item()
        sums["loss_boundary"] += lb.item()
        sums["loss"] += total.item()
    return {k: v / len(prepared) for k, v in sums.items()}


# ---------------------------------------------------------------------------
# Prediction / evaluation helpers over pair lists


def score_pairs(network: GroundingNetwork, pairs: list[GroundingPair]) -> list[ScoreGrid]:
    grids = []
    for p in pairs:
        grid, _ = network.forward(p.features, p.query_vectors, video_id=p.video_id,
                                  query_id=p.query_id, duration=p.duration)
        grids.append(grid)
    return grids


def predict_grids(grids: list[ScoreGrid], config: TrainConfig) -> list[GroundingResult]:
    return [predict_segments(g, top_m=config.top_m, nms_threshold=config.nms_threshold,
                             top_n=config.top_n, use_boundary=config.use_boundary)
            for g in grids]


def predict_pairs(network: GroundingNetwork, pairs: list[GroundingPair],
                  config: TrainConfig) -> list[GroundingResult]:
    return predict_grids(score_pairs(network, pairs), config)


def evaluate_pairs(network: GroundingNetwork, pairs: list[GroundingPair],
                   config: TrainConfig, ns=(1, 5), thetas=(0.3, 0.5, 0.7)) -> EvalReport:
    results = predict_pairs(network, pairs, config)
    predictions = {r.query_id: result_segments_seconds(r) for r in results}
    gts = {p.query_id: (p.start, p.end) for p in pairs}
    return evaluate(predictions, gts, ns=ns, thetas=thetas)


# ---------------------------------------------------------------------------
# Checkpoints


@dataclass
class Checkpoint:
    """A complete training snapshot: everything needed to resume or infer."""

    config: dict
    epoch: int
    query_dim: int
    video_dim: int
    anchors: tuple[int, ...]
    params: dict[str, np.ndarray]
    opt_m: dict[str, np.ndarray] = field(default_factory=dict)
    opt_v: dict[str, np.ndarray] = field(default_factory=dict)
    opt_step: int = 0


def make_checkpoint(result: TrainResult, config: TrainConfig) -> Checkpoint:
    network = result.network
    names = {t: t.name for t in network.params()}
    return Checkpoint(
        config=config.to_dict(),
        epoch=result.epoch,
        query_dim=network.query_dim,
        video_dim=network.video_dim,
        anchors=result.anchors.lengths,
        params=network.state_dict(),
        opt_m={names[p]: result.optimizer.m[p].copy() for p in network.params()},
        opt_v={names[p]: result.optimizer.v[p].copy() for p in network.params()},
        opt_step=result.optimizer.step_count,
    )


def network_from_checkpoint(ckpt: Checkpoint) -> tuple[GroundingNetwork, TrainConfig]:
    config = TrainConfig.from_dict(ckpt.config)
    network = GroundingNetwork(ckpt.query_dim, ckpt.video_dim, config.hidden,
                               AnchorSet(ckpt.anchors), np.random.default_rng(0),
                               attn_size=config.attn_size, ctx_size=config.ctx_size,
                               use_context=config.use_context)
    network.load_state_dict(ckpt.params)
    return network, config


def _restore_from_checkpoint(ckpt: Checkpoint, network: GroundingNetwork,
                             optimizer: Adam) -> None:
    network.load_state_dict(ckpt.params)
    names = {t.name: t for t in network.params()}
    for name, tensor in names.items():
        if name not in ckpt.opt_m or name not in ckpt.opt_v:
            raise CheckpointError(f"checkpoint lacks optimizer state for {name}")
        optimizer.m[tensor] = np.asarray(ckpt.opt_m[name], dtype=np.float64).copy()
        optimizer.v[tensor] = np.asarray(ckpt.opt_v[name], dtype=np.float64).copy()
    optimizer.step_count = ckpt.opt_step


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """Write the versioned, checksummed checkpoint binary."""
    blocks = []
    payload = bytearray()
    for kind, table in (("param", ckpt.params), ("adam_m", ckpt.opt_m),
                        ("adam_v", ckpt.opt_v)):
        for name in sorted(table):
            arr = np.ascontiguousarray(table[name], dtype="<f8")
            blocks.append({"name": name, "kind": kind, "shape": list(arr.shape),
                           "offset": len(payload)})
            payload.extend(arr.tobytes())
    header = json.dumps({
        "config": ckpt.config,
        "epoch": ckpt.epoch,
        "query_dim": ckpt.query_dim,
        "video_dim": ckpt.video_dim,
        "anchors": list(ckpt.anchors),
        "opt_step": ckpt.opt_step,
        "blocks": blocks,
    }).encode()
    body = (CHECKPOINT_MAGIC + struct.pack("<I", CHECKPOINT_VERSION)
            + struct.pack("<Q", len(header)) + header + bytes(payload))
    digest = hashlib.sha256(body).digest()
    Path(path).write_bytes(body + digest)


def load_checkpoint(path) -> Checkpoint:
    """Read and verify a checkpoint; any integrity problem loads nothing."""
    try:
        blob = Path(path).read_bytes()
    except OSError as err:
        raise CheckpointError(f"cannot read checkpoint {path}: {err}") from err
    if len(blob) < 48 or blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError(f"{path}: checksum mismatch, file is corrupted")
    version = struct.unpack("<I", body[4:8])[0]
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version} "
                              f"(expected {CHECKPOINT_VERSION})")
    header_len = struct.unpack("<Q", body[8:16])[0]
    try:
        header = json.loads(body[16:16 + header_len])
    except json.JSONDecodeError as err:
        raise CheckpointError(f"{path}: corrupt header: {err}") from err
    payload = body[16 + header_len:]

    tables = {"param": {}, "adam_m": {}, "adam_v": {}}
    for block in header["blocks"]:
        shape = tuple(block["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = block["offset"]
        end = start + count * 8
        if end > len(payload):
            raise CheckpointError(f"{path}: block {block['name']} overruns payload")
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=start)
        tables[block["kind"]][block["name"]] = arr.reshape(shape).astype(np.float64)
    return Checkpoint(
        config=header["config"],
        epoch=int(header["epoch"]),
        query_dim=int(header["query_dim"]),
        video_dim=int(header["video_dim"]),
        anchors=tuple(int(a) for a in header["anchors"]),
        params=tables["param"],
        opt_m=tables["adam_m"],
        opt_v=tables["adam_v"],
        opt_step=int(header["opt_step"]),
    )
