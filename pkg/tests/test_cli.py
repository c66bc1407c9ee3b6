import json
import subprocess
import sys

import pytest

from capora import cli
from capora.cli import dispatch, resolve_seed
from capora.lm import DivergenceError

SMALL_FLAGS = ["--word-embed-dim", "8", "--atom-embed-dim", "8", "--hidden-dim", "8",
               "--max-updates", "6", "--patience", "6", "--minibatch", "64", "--beam-width", "2",
               "--max-len", "12"]


@pytest.fixture
def small_data(tmp_path_factory):
    """A 300-caption toy dataset file."""
    path = tmp_path_factory.mktemp("data") / "toy.jsonl"
    assert dispatch(["toygen", "--n", "300", "--out", str(path)]) == 0
    return path


def test_gradcheck_ok(capsys):
    assert dispatch(["gradcheck", "--seed", "7"]) == 0
    out = capsys.readouterr()
    assert out.out.startswith("max relative error:") and out.out.rstrip().endswith("ok")
    assert json.loads(out.err.split("manifest: ", 1)[1])["seed"] == 7


def test_gradcheck_failure_exit_code(capsys):
    # a huge finite-difference step makes the comparison fail
    assert dispatch(["gradcheck", "--seed", "0", "--step", "0.5"]) == 4
    assert "FAILED" in capsys.readouterr().out


def test_unknown_flag(capsys):
    assert dispatch(["gradcheck", "--bogus"]) == 1
    assert dispatch([]) == 1
    assert dispatch(["sweep-k", "--out", "x", "--ks", "3,x"]) == 1


def test_empty_score_file(tmp_path, capsys):
    p = tmp_path / "empty.json"
    p.write_text(json.dumps({"candidates": [], "references": []}))
    assert dispatch(["score", str(p)]) == 2
    assert dispatch(["score", str(tmp_path / "missing.json")]) == 2
    assert "data error" in capsys.readouterr().err


def test_score_and_manifest(tmp_path, capsys):
    p = tmp_path / "pred.json"
    p.write_text(json.dumps({"candidates": [{"id": "a", "caption": "a dog runs"}],
                             "references": [{"id": "a", "captions": ["a dog runs"]}]}))
    out = tmp_path / "report.json"
    assert dispatch(["score", str(p), "--out", str(out)]) == 0
    assert json.loads(out.read_text())["bleu_1"] == 1.0
    manifest = json.loads((tmp_path / "report.json.manifest.json").read_text())
    assert manifest["subcommand"] == "score" and set(manifest["input_hashes"]) == {"predictions"}
    assert "M-lite" in capsys.readouterr().out


def test_seed_precedence(monkeypatch):
    monkeypatch.delenv("CAPORA_SEED", raising=False)
    assert resolve_seed(None, None) == 0
    assert resolve_seed(None, 5) == 5
    monkeypatch.setenv("CAPORA_SEED", "9")
    assert resolve_seed(None, 5) == 9
    assert resolve_seed(3, 5) == 3
    monkeypatch.setenv("CAPORA_SEED", "nine")
    with pytest.raises(cli.UsageError):
        resolve_seed(None, 5)


def test_env_seed_reaches_manifest(monkeypatch, capsys):
    monkeypatch.setenv("CAPORA_SEED", "11")
    assert dispatch(["gradcheck"]) == 0
    assert json.loads(capsys.readouterr().err.split("manifest: ", 1)[1])["seed"] == 11


def test_toygen_deterministic(tmp_path):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    assert dispatch(["toygen", "--n", "50", "--seed", "3", "--out", str(a), "--atoms-out", str(tmp_path / "t")]) == 0
    assert dispatch(["toygen", "--n", "50", "--seed", "3", "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert len((tmp_path / "t").read_text().splitlines()) == 50


def test_pipeline(small_data, tmp_path, capsys):
    tagged = tmp_path / "tagged.jsonl"
    assert dispatch(["tag", "apply", "--data", str(small_data), "--out", str(tagged)]) == 0
    table = tmp_path / "atoms.tsv"
    assert dispatch(["atoms", "--data", str(small_data), "--k", "5", "--topk-out", str(tmp_path / "top.txt"),
                     "--out", str(table)]) == 0
    assert len((tmp_path / "top.txt").read_text().split("\n")) >= 5
    ckpt = tmp_path / "m.ckpt"
    assert dispatch(["train", "--data", str(small_data), "--k", "5", "--out", str(ckpt), *SMALL_FLAGS]) == 0
    assert (tmp_path / "m.ckpt.log.jsonl").exists() and (tmp_path / "m.ckpt.manifest.json").exists()
    preds = tmp_path / "pred.json"
    assert dispatch(["generate", "--model", str(ckpt), "--beam-width", "2", "--out", str(preds)]) == 0
    assert dispatch(["score", str(preds)]) == 0
    obj = json.loads(preds.read_text())
    assert len(obj["candidates"]) == len(obj["references"]) > 0


def test_generate_bad_checkpoint(tmp_path):
    p = tmp_path / "x.ckpt"
    p.write_bytes(b"garbage\n")
    assert dispatch(["generate", "--model", str(p), "--out", str(tmp_path / "o.json")]) == 2


def test_divergence_exit_code(small_data, tmp_path, monkeypatch, capsys):
    def boom(*a, **kw):
        raise DivergenceError("non-finite loss at update 1")

    monkeypatch.setattr(cli, "train_model", boom)
    assert dispatch(["train", "--data", str(small_data), "--k", "0", "--out", str(tmp_path / "m"), *SMALL_FLAGS]) == 3
    assert "diverged" in capsys.readouterr().err


def test_sweep_then_report(small_data, tmp_path, capsys):
    out = tmp_path / "sweep"
    assert dispatch(["sweep-noise", "--data", str(small_data), "--k", "5", "--rs", "0,1", "--metrics",
                     "bleu_4,cider", "--out", str(out), *SMALL_FLAGS]) == 0
    for name in ("points.csv", "equivalence.json", "manifest.json", "timings.json"):
        assert (out / name).exists()
    assert len((out / "points.csv").read_text().splitlines()) == 5
    capsys.readouterr()
    assert dispatch(["report", "--points", str(out / "points.csv"), "--out", str(tmp_path / "eq.json")]) == 0
    text = capsys.readouterr().out
    assert "0.31 vs 0.35" in text and "Equivalent k" in text
    assert (tmp_path / "eq.json.manifest.json").exists()


def test_report_without_points(capsys):
    assert dispatch(["report"]) == 0
    out = capsys.readouterr()
    assert "0.326 vs 0.40" in out.out and "manifest: " in out.err


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "capora", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.startswith("capora ")


def test_report_missing_points(capsys):
    assert dispatch(["report", "--points", "/nonexistent/points.csv"]) == 2
    assert capsys.readouterr().out == ""
