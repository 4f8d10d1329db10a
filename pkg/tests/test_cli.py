"""End-to-end tests for the command-line pipeline."""

import json

import numpy as np
import pytest

from vidground import cli, dataio, trainer
from vidground.heads import read_score_grids, write_score_grids
from vidground.inference import Candidate, GroundingResult, write_results
from vidground.supervision import discretize_time


def run(*argv):
    return cli.run_command(list(argv))


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    """A dataset generated and a model trained through the CLI."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    work = root / "work"
    assert run("gen-synth", "--out", str(data), "--seed", "5",
               "--train-pairs", "6", "--val-pairs", "3", "--test-pairs", "3",
               "--num-steps", "16", "--feature-dim", "4", "--query-dim", "3",
               "--num-patterns", "2", "--vocab-size", "6",
               "--min-len", "2", "--max-len", "6", "--snr", "8") == 0
    config = root / "config.json"
    config.write_text(json.dumps({"hidden": 4, "num_anchors": 3, "epochs": 2,
                                  "batch_size": 2, "learning_rate": 0.01,
                                  "seed": 3}))
    assert run("train", "--dataset", str(data / "train.jsonl"),
               "--out", str(work), "--config", str(config)) == 0
    return {"root": root, "data": data, "work": work, "config": config}


def test_gen_synth_writes_all_parts(trained):
    data = trained["data"]
    for name in ("embeddings.txt", "train.jsonl", "val.jsonl", "test.jsonl"):
        assert (data / name).exists()
    assert any((data / "features").iterdir())


def test_anchors_prints_and_writes(trained, capsys, tmp_path):
    assert run("anchors", "--dataset", str(trained["data"] / "train.jsonl"),
               "--num-anchors", "2", "--out", str(tmp_path)) == 0
    out = capsys.readouterr().out
    assert "anchors:" in out and "coverage:" in out
    payload = json.loads((tmp_path / "anchors.json").read_text())
    assert payload["num_requested"] == 2
    assert 0.0 <= payload["coverage"] <= 1.0
    assert payload["anchors"] == sorted(payload["anchors"])


def test_train_writes_checkpoint_and_log(trained):
    work = trained["work"]
    assert (work / "checkpoint.bin").exists()
    records = [json.loads(line)
               for line in (work / "train_log.jsonl").read_text().splitlines()]
    assert [r["epoch"] for r in records] == [0, 1, 2]


def test_train_deterministic_checkpoints(trained, tmp_path):
    args = ("train", "--dataset", str(trained["data"] / "train.jsonl"),
            "--config", str(trained["config"]))
    assert run(*args, "--out", str(tmp_path / "a")) == 0
    assert run(*args, "--out", str(tmp_path / "b")) == 0
    a = (tmp_path / "a" / "checkpoint.bin").read_bytes()
    b = (tmp_path / "b" / "checkpoint.bin").read_bytes()
    assert a == b


def test_infer_then_eval_matches_in_process_run(trained, tmp_path, capsys):
    data, work = trained["data"], trained["work"]
    out = tmp_path / "inferred"
    assert run("infer", "--checkpoint", str(work / "checkpoint.bin"),
               "--dataset", str(data / "test.jsonl"), "--out", str(out)) == 0
    assert run("eval", "--results", str(out / "results.jsonl"),
               "--dataset", str(data / "test.jsonl"),
               "--out", str(out), "--csv") == 0
    capsys.readouterr()

    ckpt = trainer.load_checkpoint(work / "checkpoint.bin")
    network, config = trainer.network_from_checkpoint(ckpt)
    manifest = dataio.load_manifest(data / "test.jsonl")
    table = dataio.load_embeddings(manifest.embeddings_path)
    pairs = dataio.load_pairs(manifest, table)
    report = trainer.evaluate_pairs(network, pairs, config)

    cli_rows = {}
    for line in (out / "eval_report.jsonl").read_text().splitlines():
        rec = json.loads(line)
        if rec["kind"] == "recall":
            cli_rows[(rec["n"], rec["theta"])] = rec["value"]
        elif rec["kind"] == "miou":
            cli_rows["miou"] = rec["value"]
    for key, value in report.table.items():
        assert cli_rows[key] == pytest.approx(value, abs=1e-12)
    assert cli_rows["miou"] == pytest.approx(report.miou, abs=1e-12)


def test_eval_perfect_predictor_scores_100(trained, tmp_path, capsys):
    data = trained["data"]
    manifest = dataio.load_manifest(data / "test.jsonl")
    results = []
    for q in manifest.queries:
        video = manifest.videos[q.video_id]
        s = discretize_time(q.start, video.duration, video.num_steps)
        e = discretize_time(q.end, video.duration, video.num_steps)
        cand = Candidate(start=s, end=e, score=1.0, raw_score=1.0,
                         anchor_index=0, end_step=e)
        results.append(GroundingResult(candidates=[cand], shortfall=True,
                                       video_id=q.video_id, query_id=q.query_id,
                                       duration=video.duration,
                                       num_steps=video.num_steps))
    path = tmp_path / "perfect.jsonl"
    write_results(path, results)
    assert run("eval", "--results", str(path),
               "--dataset", str(data / "test.jsonl")) == 0
    out = capsys.readouterr().out
    r1_line = next(line for line in out.splitlines() if line.startswith("R@1"))
    assert r1_line.split()[1:] == ["100.00", "100.00", "100.00"]


def test_fuse_zero_boundary_equals_anchor_only(trained, tmp_path):
    data, work = trained["data"], trained["work"]
    out = tmp_path / "inferred"
    assert run("infer", "--checkpoint", str(work / "checkpoint.bin"),
               "--dataset", str(data / "test.jsonl"), "--out", str(out)) == 0

    grids = read_score_grids(out / "score_grids.jsonl")
    for g in grids:
        g.boundary_scores[:] = 0.0
    zeroed = tmp_path / "zeroed.jsonl"
    write_score_grids(zeroed, grids)

    assert run("fuse", "--grids", str(zeroed), "--out", str(tmp_path / "a")) == 0
    assert run("fuse", "--grids", str(out / "score_grids.jsonl"),
               "--out", str(tmp_path / "b"), "--no-boundary") == 0
    a = (tmp_path / "a" / "results.jsonl").read_text()
    b = (tmp_path / "b" / "results.jsonl").read_text()
    assert a == b


def test_dump_attention_writes_tsv(trained, tmp_path):
    data, work = trained["data"], trained["work"]
    out = tmp_path / "attn"
    assert run("infer", "--checkpoint", str(work / "checkpoint.bin"),
               "--dataset", str(data / "test.jsonl"), "--out", str(out),
               "--dump-attention") == 0
    manifest = dataio.load_manifest(data / "test.jsonl")
    q = manifest.queries[0]
    video = manifest.videos[q.video_id]
    rows = (out / "attention" / f"{q.query_id}.words.tsv").read_text().splitlines()
    assert len(rows) == video.num_steps
    assert len(rows[0].split("\t")) == len(q.tokens)
    weights = np.array([[float(v) for v in r.split("\t")] for r in rows])
    np.testing.assert_allclose(weights.sum(axis=1), 1.0, atol=1e-12)


def test_exit_code_usage():
    assert run("no-such-command") == 2
    assert run("train", "--bogus-flag", "x") == 2


def test_exit_code_config(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run("train", "--dataset", "x", "--out", str(tmp_path),
               "--config", str(bad)) == 3
    unknown = tmp_path / "unknown.json"
    unknown.write_text(json.dumps({"mystery": 1}))
    assert run("train", "--dataset", "x", "--out", str(tmp_path),
               "--config", str(unknown)) == 3


def test_exit_code_data(trained, tmp_path):
    assert run("anchors", "--dataset", str(tmp_path / "nope.jsonl")) == 4


def test_exit_code_checkpoint(trained, tmp_path):
    junk = tmp_path / "junk.bin"
    junk.write_bytes(b"not a checkpoint at all")
    assert run("infer", "--checkpoint", str(junk),
               "--dataset", str(trained["data"] / "test.jsonl"),
               "--out", str(tmp_path)) == 5


def test_console_entry_point(trained, tmp_path):
    import subprocess
    import sys
    proc = subprocess.run([sys.executable, "-m", "vidground.cli", "anchors",
                           "--dataset", str(trained["data"] / "train.jsonl")],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "anchors:" in proc.stdout
