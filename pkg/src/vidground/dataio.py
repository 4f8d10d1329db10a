"""Dataset plumbing: feature files, manifests, embeddings, synthetic data.

Three on-disk formats, each documented bit-exactly in the README:

* Feature file (binary): magic ``VGFT``, then version, T, Dv as little-endian
  uint32, then T*Dv little-endian float32 values row-major.  Widened to
  float64 in memory.
* Manifest (JSONL): one JSON object per line.  The first record is a header
  carrying the split name and the embeddings path; ``video`` records map ids
  to feature files with duration and step count; ``query`` records carry the
  token sequence and the annotated start/end in seconds.
* Embeddings (text): one ``token v1 v2 ... vD`` line per word.

Relative paths resolve against the manifest's directory, or against
``$VIDGROUND_DATA_ROOT`` when that is set.  The synthetic generator emits
all three formats: each query pattern is tied to a fixed feature motif
planted over noise at the ground-truth interval, so the task is learnable
at desk scale and exactly reproducible from its seed.
"""

from __future__ import annotations

import json
import logging
import math
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

log = logging.getLogger(__name__)

FEATURE_MAGIC = b"VGFT"
FEATURE_VERSION = 1
DATA_ROOT_ENV = "VIDGROUND_DATA_ROOT"


# ---------------------------------------------------------------------------
# Feature files


def write_features(path, features: np.ndarray) -> None:
    """Write a T×Dv feature matrix; values are stored as float32."""
    arr = np.ascontiguousarray(features, dtype=np.float32)
    if arr.ndim != 2:
        raise DataError(f"feature matrix must be 2-D, got shape {arr.shape}")
    steps, dim = arr.shape
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<III", FEATURE_VERSION, steps, dim))
        fh.write(arr.tobytes())


def read_features(path) -> np.ndarray:
    """Read a feature file back as float64, validating structure and values."""
    try:
        blob = Path(path).read_bytes()
    except OSError as err:
        raise DataError(f"cannot read feature file {path}: {err}") from err
    if blob[:4] != FEATURE_MAGIC:
        raise DataError(f"{path}: not a feature file (bad magic {blob[:4]!r})")
    if len(blob) < 16:
        raise DataError(f"{path}: truncated header, expected 16 bytes, found {len(blob)}")
    version, steps, dim = struct.unpack("<III", blob[4:16])
    if version != FEATURE_VERSION:
        raise DataError(f"{path}: unsupported feature version {version}")
    expected = 16 + steps * dim * 4
    if len(blob) != expected:
        raise DataError(f"{path}: expected {expected} bytes for {steps}x{dim}, "
                        f"found {len(blob)}")
    values = np.frombuffer(blob, dtype="<f4", offset=16).reshape(steps, dim)
    if not np.all(np.isfinite(values)):
        raise DataError(f"{path}: feature values contain NaN or infinity")
    return values.astype(np.float64)


# ---------------------------------------------------------------------------
# Manifests


@dataclass(frozen=True)
class VideoEntry:
    video_id: str
    feature_path: Path
    duration: float
    num_steps: int


@dataclass(frozen=True)
class QueryAnnotation:
    query_id: str
    video_id: str
    tokens: tuple[str, ...]
    start: float
    end: float


@dataclass
class DatasetManifest:
    """One split: videos, query annotations, and lazily validated features."""

    split: str
    videos: dict[str, VideoEntry]
    queries: list[QueryAnnotation]
    embeddings_path: Path | None
    _cache: dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    def features(self, video_id: str) -> np.ndarray:
        """Feature matrix for one video, checked against the manifest on
        first access and cached after."""
        if video_id not in self.videos:
            raise DataError(f"unknown video id {video_id!r}")
        if video_id not in self._cache:
            entry = self.videos[video_id]
            mat = read_features(entry.feature_path)
            if mat.shape[0] != entry.num_steps:
                raise DataError(f"video {video_id!r}: manifest says {entry.num_steps} steps "
                                f"but {entry.feature_path} holds {mat.shape[0]}")
            self._cache[video_id] = mat
        return self._cache[video_id]


def _resolve(base: Path, rel: str) -> Path:
    p = Path(rel)
    if p.is_absolute():
        return p
    root = os.environ.get(DATA_ROOT_ENV)
    return (Path(root) if root else base) / p


def load_manifest(path) -> DatasetManifest:
    """Parse and validate one split manifest.

    Every problem is reported with the offending record's id; feature files
    themselves are validated lazily on first access.
    """
    path = Path(path)
    base = path.parent
    try:
        lines = path.read_text().splitlines()
    except OSError as err:
        raise DataError(f"cannot read manifest {path}: {err}") from err

    split = ""
    embeddings: Path | None = None
    videos: dict[str, VideoEntry] = {}
    queries: list[QueryAnnotation] = []
    seen_header = False
    seen_queries: set[str] = set()

    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as err:
            raise DataError(f"{path}:{lineno}: not valid JSON: {err}") from err
        kind = rec.get("kind")
        try:
            if kind == "header":
                if seen_header:
                    raise DataError("duplicate header record")
                seen_header = True
                split = str(rec["split"])
                if rec.get("embeddings"):
                    embeddings = _resolve(base, rec["embeddings"])
            elif kind == "video":
                vid = str(rec["video_id"])
                if vid in videos:
                    raise DataError(f"duplicate video id {vid!r}")
                duration = float(rec["duration"])
                steps = int(rec["num_steps"])
                if duration <= 0:
                    raise DataError(f"video {vid!r}: duration must be positive, got {duration}")
                if steps < 1:
                    raise DataError(f"video {vid!r}: num_steps must be >= 1, got {steps}")
                videos[vid] = VideoEntry(video_id=vid,
                                         feature_path=_resolve(base, rec["features"]),
                                         duration=duration, num_steps=steps)
            elif kind == "query":
                qid = str(rec["query_id"])
                if qid in seen_queries:
                    raise DataError(f"duplicate query id {qid!r}")
                seen_queries.add(qid)
                tokens = tuple(str(t) for t in rec["tokens"])
                if not tokens:
                    raise DataError(f"query {qid!r}: empty token sequence")
                queries.append(QueryAnnotation(
                    query_id=qid, video_id=str(rec["video_id"]), tokens=tokens,
                    start=float(rec["start"]), end=float(rec["end"])))
            else:
                raise DataError(f"unknown record kind {kind!r}")
        except (KeyError, TypeError, ValueError) as err:
            raise DataError(f"{path}:{lineno}: malformed {kind or 'record'}: {err}") from err
        except DataError as err:
            raise DataError(f"{path}:{lineno}: {err}") from err

    if not seen_header:
        raise DataError(f"{path}: missing header record")
    for q in queries:
        if q.video_id not in videos:
            raise DataError(f"query {q.query_id!r} references unknown video {q.video_id!r}")
        duration = videos[q.video_id].duration
        if not 0.0 <= q.start <= q.end <= duration:
            raise DataError(f"query {q.query_id!r}: segment [{q.start}, {q.end}] outside "
                            f"[0, {duration}]")
    return DatasetManifest(split=split, videos=videos, queries=queries,
                           embeddings_path=embeddings)


load_dataset = load_manifest  # alias: the manifest object owns lazy feature access


# ---------------------------------------------------------------------------
# Embeddings


@dataclass
class EmbeddingTable:
    """Token to vector map; unknown tokens embed to zeros with a warning."""

    dim: int
    vectors: dict[str, np.ndarray]
    oov_policy: str = "zeros"
    _warned: set = field(default_factory=set, repr=False)

    def embed(self, tokens) -> np.ndarray:
        """Stack token vectors into an N×Dq matrix."""
        tokens = list(tokens)
        if not tokens:
            raise DataError("cannot embed an empty token sequence")
        out = np.zeros((len(tokens), self.dim))
        for row, tok in enumerate(tokens):
            vec = self.vectors.get(tok)
            if vec is None:
                if tok not in self._warned:
                    self._warned.add(tok)
                    log.warning("token %r not in embedding table; using zero vector", tok)
            else:
                out[row] = vec
        return out


def load_embeddings(path) -> EmbeddingTable:
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as err:
        raise DataError(f"cannot read embeddings {path}: {err}") from err
    vectors: dict[str, np.ndarray] = {}
    dim = None
    for lineno, line in enumerate(lines, start=1):
        parts = line.split()
        if not parts:
            continue
        tok = parts[0]
        if tok in vectors:
            raise DataError(f"{path}:{lineno}: duplicate token {tok!r}")
        try:
            vec = np.array([float(v) for v in parts[1:]])
        except ValueError as err:
            raise DataError(f"{path}:{lineno}: bad vector for {tok!r}: {err}") from err
        if vec.size == 0:
            raise DataError(f"{path}:{lineno}: token {tok!r} has no vector")
        if dim is None:
            dim = vec.size
        elif vec.size != dim:
            raise DataError(f"{path}:{lineno}: token {tok!r} has {vec.size} values, "
                            f"expected {dim}")
        vectors[tok] = vec
    if not vectors:
        raise DataError(f"{path}: no embeddings found")
    return EmbeddingTable(dim=dim, vectors=vectors)


# ---------------------------------------------------------------------------
# Training pairs


@dataclass
class GroundingPair:
    """One (video, query) training or evaluation instance."""

    query_id: str
    video_id: str
    features: np.ndarray
    duration: float
    query_vectors: np.ndarray
    tokens: tuple[str, ...]
    start: float
    end: float

    @property
    def num_steps(self) -> int:
        return self.features.shape[0]


def load_pairs(manifest: DatasetManifest, table: EmbeddingTable) -> list[GroundingPair]:
    """Materialize every query with its video features and embedded tokens."""
    pairs = []
    feature_dim = None
    for q in manifest.queries:
        feats = manifest.features(q.video_id)
        if feature_dim is None:
            feature_dim = feats.shape[1]
        elif feats.shape[1] != feature_dim:
            raise DataError(f"video {q.video_id!r}: feature width {feats.shape[1]} "
                            f"differs from {feature_dim}")
        entry = manifest.videos[q.video_id]
        pairs.append(GroundingPair(
            query_id=q.query_id, video_id=q.video_id, features=feats,
            duration=entry.duration, query_vectors=table.embed(q.tokens),
            tokens=q.tokens, start=q.start, end=q.end))
    return pairs


# ---------------------------------------------------------------------------
# Synthetic data


@dataclass
class SyntheticConfig:
    """Knobs for the planted-motif generator.

    Each of ``num_patterns`` query patterns owns a distinct two-token phrase
    and a unit-norm feature motif.  A generated pair plants the motif over
    N(0, 1/snr) noise at a random interval; snr=inf means zero noise.
    """

    train_pairs: int = 40
    val_pairs: int = 10
    test_pairs: int = 10
    num_steps: int = 32
    feature_dim: int = 8
    query_dim: int = 6
    num_patterns: int = 4
    vocab_size: int = 12
    min_len: int = 2
    max_len: int = 10
    snr: float = 4.0
    seed: int = 0

    def validate(self) -> None:
        if min(self.train_pairs, self.val_pairs, self.test_pairs) < 1:
            raise ConfigError("every split needs at least one pair")
        if self.num_steps < 2:
            raise ConfigError(f"need at least two steps, got {self.num_steps}")
        if not 1 <= self.min_len <= self.max_len:
            raise ConfigError(f"need 1 <= min_len <= max_len, got "
                              f"[{self.min_len}, {self.max_len}]")
        if self.max_len > self.num_steps - 1:
            raise ConfigError(f"max segment length {self.max_len} does not fit in "
                              f"{self.num_steps} steps")
        if self.num_patterns < 1:
            raise ConfigError("need at least one pattern")
        if self.vocab_size < 2 * self.num_patterns:
            raise ConfigError(f"vocab of {self.vocab_size} cannot give "
                              f"{self.num_patterns} patterns distinct two-token phrases")
        if min(self.feature_dim, self.query_dim) < 1:
            raise ConfigError("feature and query dimensions must be >= 1")
        if self.snr <= 0:
            raise ConfigError(f"snr must be positive, got {self.snr}")


def _format_float(v: float) -> str:
    return repr(float(v))


def generate_synthetic(config: SyntheticConfig, out_dir) -> dict[str, Path]:
    """Write a complete three-split dataset; byte-identical for a fixed seed.

    Returns the manifest paths keyed by split name plus the embeddings path.
    """
    config.validate()
    out = Path(out_dir)
    (out / "features").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(config.seed)

    # fixed pattern inventory shared by all splits
    vocab = [f"w{i}" for i in range(config.vocab_size)]
    emb = rng.standard_normal((config.vocab_size, config.query_dim)) / np.sqrt(config.query_dim)
    motifs = rng.standard_normal((config.num_patterns, config.feature_dim))
    motifs /= np.linalg.norm(motifs, axis=1, keepdims=True)
    phrases = [(vocab[2 * p], vocab[2 * p + 1]) for p in range(config.num_patterns)]

    emb_path = out / "embeddings.txt"
    with open(emb_path, "w") as fh:
        for i, tok in enumerate(vocab):
            fh.write(tok + " " + " ".join(_format_float(v) for v in emb[i]) + "\n")

    noise_std = 0.0 if math.isinf(config.snr) else 1.0 / config.snr
    duration = float(config.num_steps)
    steps = config.num_steps
    paths: dict[str, Path] = {"embeddings": emb_path}

    for split, count in (("train", config.train_pairs), ("val", config.val_pairs),
                         ("test", config.test_pairs)):
        records = [{"kind": "header", "split": split, "embeddings": "embeddings.txt"}]
        for k in range(count):
            pattern = int(rng.integers(0, config.num_patterns))
            length = int(rng.integers(config.min_len, config.max_len + 1))
            s_idx = int(rng.integers(0, steps - length))
            e_idx = s_idx + length
            feats = noise_std * rng.standard_normal((steps, config.feature_dim))
            feats[s_idx:e_idx + 1] += motifs[pattern]
            feats = feats.astype(np.float32)

            vid = f"{split}_v{k:04d}"
            qid = f"{split}_q{k:04d}"
            rel = f"features/{vid}.vgf"
            write_features(out / rel, feats)
            records.append({"kind": "video", "video_id": vid, "features": rel,
                            "duration": duration, "num_steps": steps})
            records.append({"kind": "query", "query_id": qid, "video_id": vid,
                            "tokens": list(phrases[pattern]),
                            "start": s_idx * duration / (steps - 1),
                            "end": e_idx * duration / (steps - 1)})
        manifest_path = out / f"{split}.jsonl"
        with open(manifest_path, "w") as fh:
            for rec in records:
                fh.write(json.dumps(rec) + "\n")
        paths[split] = manifest_path
    return paths
