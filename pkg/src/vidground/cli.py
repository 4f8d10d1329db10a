"""Command-line pipeline driver.

Subcommands cover the full workflow: generate a synthetic dataset, pick an
anchor set, train, run inference from a checkpoint, evaluate saved results,
and re-fuse saved score grids offline.  All outputs land under ``--out`` with
fixed names (checkpoint.bin, train_log.jsonl, score_grids.jsonl,
results.jsonl, eval_report.*, anchors.json).

Exit codes: 0 success, 2 usage, 3 bad config, 4 bad data, 5 bad checkpoint,
1 anything else.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import dataio, trainer
from .attention import write_alpha_tsv
from .errors import CheckpointError, ConfigError, DataError
from .heads import read_score_grids, write_score_grids
from .inference import predict_segments, read_results, write_results
from .metrics import evaluate
from .supervision import discretize_time, select_anchor_set
from .trainer import TrainConfig


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vidground",
        description="Temporal grounding of language queries in videos.")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-synth", help="write a synthetic dataset")
    gen.add_argument("--out", required=True, type=Path)
    gen.add_argument("--seed", type=int, default=None)
    for flag in ("train-pairs", "val-pairs", "test-pairs", "num-steps",
                 "feature-dim", "query-dim", "num-patterns", "vocab-size",
                 "min-len", "max-len"):
        gen.add_argument(f"--{flag}", type=int, default=None)
    gen.add_argument("--snr", type=float, default=None)

    anc = sub.add_parser("anchors", help="select an anchor set from a split")
    anc.add_argument("--dataset", required=True, type=Path)
    anc.add_argument("--config", type=Path, default=None)
    anc.add_argument("--num-anchors", type=int, default=None)
    anc.add_argument("--coverage", type=float, default=None)
    anc.add_argument("--out", type=Path, default=None)

    tr = sub.add_parser("train", help="train a model and write a checkpoint")
    tr.add_argument("--dataset", required=True, type=Path)
    tr.add_argument("--val-dataset", type=Path, default=None)
    tr.add_argument("--out", required=True, type=Path)
    tr.add_argument("--config", type=Path, default=None)
    tr.add_argument("--seed", type=int, default=None)
    tr.add_argument("--lambda", dest="lam", type=float, default=None)
    tr.add_argument("--resume", type=Path, default=None)

    inf = sub.add_parser("infer", help="score a split with a trained checkpoint")
    inf.add_argument("--checkpoint", required=True, type=Path)
    inf.add_argument("--dataset", required=True, type=Path)
    inf.add_argument("--out", required=True, type=Path)
    inf.add_argument("--nms-threshold", type=float, default=None)
    inf.add_argument("--top-n", type=int, default=None)
    inf.add_argument("--no-boundary", action="store_true")
    inf.add_argument("--dump-attention", action="store_true")

    ev = sub.add_parser("eval", help="score saved results against a split")
    ev.add_argument("--results", required=True, type=Path)
    ev.add_argument("--dataset", required=True, type=Path)
    ev.add_argument("--iou-thresholds", type=str, default="0.3,0.5,0.7")
    ev.add_argument("--ns", type=str, default="1,5")
    ev.add_argument("--out", type=Path, default=None)
    ev.add_argument("--csv", action="store_true")

    fu = sub.add_parser("fuse", help="re-rank saved score grids offline")
    fu.add_argument("--grids", required=True, type=Path)
    fu.add_argument("--out", required=True, type=Path)
    fu.add_argument("--config", type=Path, default=None)
    fu.add_argument("--nms-threshold", type=float, default=None)
    fu.add_argument("--top-n", type=int, default=None)
    fu.add_argument("--no-boundary", action="store_true")

    return parser


# ---------------------------------------------------------------------------
# Shared plumbing


def _read_config_file(path: Path | None) -> TrainConfig:
    if path is None:
        return TrainConfig()
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}")
    if not isinstance(raw, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return TrainConfig.from_dict(raw)


def _override_config(config: TrainConfig, args) -> TrainConfig:
    """Apply command-line flag overrides on top of a config."""
    d = config.to_dict()
    for attr, key in (("seed", "seed"), ("lam", "lam"),
                      ("nms_threshold", "nms_threshold"), ("top_n", "top_n")):
        value = getattr(args, attr, None)
        if value is not None:
            d[key] = value
    if getattr(args, "no_boundary", False):
        d["use_boundary"] = False
    d["top_m"] = max(d["top_m"], d["top_n"])
    return TrainConfig.from_dict(d)


def _load_split(path: Path):
    manifest = dataio.load_manifest(path)
    if manifest.embeddings_path is None:
        raise DataError(f"manifest {path} names no embeddings file")
    table = dataio.load_embeddings(manifest.embeddings_path)
    return manifest, dataio.load_pairs(manifest, table)


def _manifest_segment_lengths(manifest: dataio.DatasetManifest) -> list[int]:
    lengths = []
    for q in manifest.queries:
        video = manifest.videos[q.video_id]
        s = discretize_time(q.start, video.duration, video.num_steps)
        e = discretize_time(q.end, video.duration, video.num_steps)
        lengths.append(e - s)
    return lengths


def _parse_floats(text: str, flag: str) -> tuple[float, ...]:
    try:
        values = tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"{flag} expects comma-separated numbers, got {text!r}")
    if not values:
        raise ConfigError(f"{flag} must name at least one value")
    return values


# ---------------------------------------------------------------------------
# Subcommands


def _cmd_gen_synth(args) -> int:
    kwargs = {}
    for field in ("train_pairs", "val_pairs", "test_pairs", "num_steps",
                  "feature_dim", "query_dim", "num_patterns", "vocab_size",
                  "min_len", "max_len", "snr", "seed"):
        value = getattr(args, field)
        if value is not None:
            kwargs[field] = value
    config = dataio.SyntheticConfig(**kwargs)
    paths = dataio.generate_synthetic(config, args.out)
    for name in ("embeddings", "train", "val", "test"):
        print(f"{name}: {paths[name]}")
    return 0


def _cmd_anchors(args) -> int:
    config = _read_config_file(args.config)
    num_anchors = args.num_anchors if args.num_anchors is not None else config.num_anchors
    coverage = args.coverage if args.coverage is not None else config.anchor_coverage
    manifest = dataio.load_manifest(args.dataset)
    selection = select_anchor_set(_manifest_segment_lengths(manifest),
                                  num_anchors, coverage)
    print("anchors:", " ".join(str(v) for v in selection.anchors.lengths))
    print(f"coverage: {selection.coverage:.4f}")
    print(f"cutoff: {selection.cutoff:.4f}")
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        payload = {"anchors": list(selection.anchors.lengths),
                   "coverage": selection.coverage, "cutoff": selection.cutoff,
                   "num_requested": num_anchors}
        (args.out / "anchors.json").write_text(json.dumps(payload, indent=2) + "\n")
    return 0


def _print_epoch(record: dict) -> None:
    parts = [f"epoch {record['epoch']:>4}", f"loss {record['loss']:.6f}",
             f"anchor {record['loss_anchor']:.6f}",
             f"boundary {record['loss_boundary']:.6f}"]
    if "val_r1_at_07" in record:
        parts.append(f"val R@1,0.7 {record['val_r1_at_07']:.2f}")
    print("  ".join(parts))


def _cmd_train(args) -> int:
    config = _override_config(_read_config_file(args.config), args)
    _, train_pairs = _load_split(args.dataset)
    val_pairs = None
    if args.val_dataset is not None:
        _, val_pairs = _load_split(args.val_dataset)
    resume = trainer.load_checkpoint(args.resume) if args.resume else None

    args.out.mkdir(parents=True, exist_ok=True)
    log_path = args.out / "train_log.jsonl"
    if resume is None and log_path.exists():
        log_path.unlink()  # fresh runs replace stale logs; resumes append

    result = trainer.train(config, train_pairs, val_pairs=val_pairs,
                           log_path=log_path, resume=resume,
                           progress=_print_epoch)
    if result.selection is not None:
        print("anchors:", " ".join(str(v) for v in result.anchors.lengths),
              f"(coverage {result.selection.coverage:.4f})")
    ckpt_path = args.out / "checkpoint.bin"
    trainer.save_checkpoint(trainer.make_checkpoint(result, config), ckpt_path)
    print(f"checkpoint: {ckpt_path}")
    print(f"log: {log_path}")
    return 0


def _cmd_infer(args) -> int:
    ckpt = trainer.load_checkpoint(args.checkpoint)
    network, config = trainer.network_from_checkpoint(ckpt)
    config = _override_config(config, args)
    _, pairs = _load_split(args.dataset)

    args.out.mkdir(parents=True, exist_ok=True)
    attn_dir = args.out / "attention"
    if args.dump_attention:
        attn_dir.mkdir(exist_ok=True)

    grids, results = [], []
    for pair in pairs:
        grid, extras = network.forward(pair.features, pair.query_vectors,
                                       video_id=pair.video_id, query_id=pair.query_id,
                                       duration=pair.duration,
                                       collect_attention=args.dump_attention)
        grids.append(grid)
        results.append(predict_segments(grid, top_m=config.top_m,
                                        nms_threshold=config.nms_threshold,
                                        top_n=config.top_n,
                                        use_boundary=config.use_boundary))
        if args.dump_attention:
            write_alpha_tsv(attn_dir / f"{pair.query_id}.words.tsv",
                            extras["word_attention"])
            if "context_attention" in extras:
                write_alpha_tsv(attn_dir / f"{pair.query_id}.context.tsv",
                                extras["context_attention"])

    grids_path = args.out / "score_grids.jsonl"
    results_path = args.out / "results.jsonl"
    write_score_grids(grids_path, grids)
    write_results(results_path, results)
    print(f"scored {len(pairs)} pairs")
    print(f"grids: {grids_path}")
    print(f"results: {results_path}")
    return 0


def _cmd_eval(args) -> int:
    thetas = _parse_floats(args.iou_thresholds, "--iou-thresholds")
    ns = tuple(int(v) for v in _parse_floats(args.ns, "--ns"))
    predictions = read_results(args.results)
    manifest = dataio.load_manifest(args.dataset)
    ground_truths = {q.query_id: (q.start, q.end) for q in manifest.queries}
    report = evaluate(predictions, ground_truths, ns=ns, thetas=thetas)
    text = report.to_text()
    print(text, end="" if text.endswith("\n") else "\n")
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "eval_report.txt").write_text(text if text.endswith("\n")
                                                  else text + "\n")
        with open(args.out / "eval_report.jsonl", "w") as fh:
            for record in report.to_records():
                fh.write(json.dumps(record) + "\n")
        if args.csv:
            (args.out / "eval_report.csv").write_text(report.to_csv())
    return 0


def _cmd_fuse(args) -> int:
    config = _override_config(_read_config_file(args.config), args)
    grids = read_score_grids(args.grids)
    results = [predict_segments(g, top_m=config.top_m,
                                nms_threshold=config.nms_threshold,
                                top_n=config.top_n,
                                use_boundary=config.use_boundary)
               for g in grids]
    args.out.mkdir(parents=True, exist_ok=True)
    results_path = args.out / "results.jsonl"
    write_results(results_path, results)
    print(f"fused {len(grids)} grids")
    print(f"results: {results_path}")
    return 0


_COMMANDS = {"gen-synth": _cmd_gen_synth, "anchors": _cmd_anchors,
             "train": _cmd_train, "infer": _cmd_infer, "eval": _cmd_eval,
             "fuse": _cmd_fuse}


def run_command(argv) -> int:
    """Parse argv (without the program name) and run one subcommand."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 5
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()
