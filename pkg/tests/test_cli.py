import json
from pathlib import Path

import numpy as np
import pytest

from zeroshot.cli import main
from zeroshot.datasets import FeatureStore, load_features, save_features
from zeroshot.model import ModelConfig, ZeroShotModel, load_checkpoint, save_checkpoint
from zeroshot.textfeat import save_text_features

ROOT = Path(__file__).resolve().parents[1]


def run(*argv) -> int:
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def synth(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth")
    assert run("synth", "--out", root / "data", "--classes", 12, "--per-class", 8,
               "--p", 96, "--d", 16, "--seed", 3) == 0
    assert run("featurize", "--corpus", root / "data" / "corpus", "--out", root / "feat") == 0
    return root


def data_flags(root):
    return ["--features", root / "data" / "features.zsfb", "--texts", root / "feat" / "tfidf.csv"]


def test_synth_outputs(synth):
    info = json.loads((synth / "data" / "synth.json").read_text())
    assert info["n_images"] == 96 and len(info["config_digest"]) == 16
    assert len(load_features(synth / "data" / "features.zsfb")) == 96
    assert len(list((synth / "data" / "corpus").glob("*.txt"))) == 12


def test_featurize_toy_corpus(tmp_path):
    corpus = tmp_path / "corpus"
    corpus.mkdir()
    for c, text in enumerate(["red red beak", "blue wing", "red wing wing"]):
        (corpus / f"{c}.txt").write_text(text)
    assert run("featurize", "--corpus", corpus, "--out", tmp_path / "a") == 0
    rows = [l for l in (tmp_path / "a" / "tfidf.csv").read_text().splitlines()
            if not l.startswith("#")]
    first = [float(v) for v in rows[0].split(",")[1:]]
    assert first == pytest.approx([np.log(3), 0.0, (1 + np.log(2)) * np.log(1.5), 0.0], abs=1e-15)
    assert run("featurize", "--corpus", corpus, "--out", tmp_path / "b") == 0
    for name in ("vocab.tsv", "tfidf.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_featurize_empty_dir(tmp_path, capsys):
    (tmp_path / "empty").mkdir()
    assert run("featurize", "--corpus", tmp_path / "empty", "--out", tmp_path / "o") != 0
    assert str(tmp_path / "empty") in capsys.readouterr().err


def test_train_bundled_config_and_determinism(synth):
    args = ["train", "--config", ROOT / "configs" / "synthetic.json", *data_flags(synth),
            "--n-unseen", 3, "--epochs", 30]
    assert run(*args, "--out", synth / "run1") == 0
    assert run(*args, "--out", synth / "run2") == 0
    a, b = (synth / "run1" / "model.zsmp").read_bytes(), (synth / "run2" / "model.zsmp").read_bytes()
    assert a == b
    lines = (synth / "run1" / "loss.csv").read_text().splitlines()
    assert lines[0].startswith("# config_digest=") and lines[1] == "step,loss"
    losses = [float(l.split(",")[1]) for l in lines[2:]]
    assert losses[-1] < 0.1 * losses[0]
    _, meta = load_checkpoint(synth / "run1" / "model.zsmp")
    assert meta["config"]["epochs"] == 30 and meta["config"]["seed"] == 0


def test_flags_override_config(synth, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"epochs": 1, "hidden": 4, "seed": 1}))
    assert run("train", "--config", cfg, *data_flags(synth), "--seed", 7,
               "--out", tmp_path / "r") == 0
    _, meta = load_checkpoint(tmp_path / "r" / "model.zsmp")
    assert meta["config"]["seed"] == 7 and meta["config"]["hidden"] == 4


def test_invalid_loss_is_usage_error(synth, capsys):
    with pytest.raises(SystemExit) as exc:
        run("train", *data_flags(synth), "--loss", "mse", "--out", synth / "x")
    assert exc.value.code == 2
    err = capsys.readouterr().err
    assert "bce" in err and "hinge" in err and "euclidean" in err


def test_unknown_config_key(synth, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"epoch": 3}))
    assert run("train", "--config", cfg, *data_flags(synth), "--out", tmp_path / "r") == 2


def test_eval_and_queries(synth, capsys):
    run_dir = synth / "run1"
    if not (run_dir / "model.zsmp").exists():
        pytest.skip("depends on test_train_bundled_config_and_determinism")
    common = [*data_flags(synth), "--checkpoint", run_dir / "model.zsmp",
              "--split", run_dir / "split.json"]
    assert run("eval", *common, "--out", run_dir) == 0
    report = json.loads((run_dir / "report.json").read_text())
    assert {"roc_auc_unseen", "pr_auc_seen", "top1_unseen"} <= set(report)
    assert report["meta"]["config_digest"]

    assert run("attributes", *common, "--vocab", synth / "feat" / "vocab.tsv",
               "--class-id", 0, "--out", run_dir) == 0
    sens = json.loads((run_dir / "attributes_0.json").read_text())
    drops = [d["drop"] for d in sens["drops"]]
    assert drops == sorted(drops, reverse=True) and len(drops) == 5
    capsys.readouterr()

    assert run("neighbors", *common, "--class-id", 1, "--count", 500, "--within") == 0
    out = capsys.readouterr()
    ids = [int(i) for i in out.out.split()]
    store = load_features(synth / "data" / "features.zsfb")
    label_of = dict(zip(store.ids.tolist(), store.labels.tolist()))
    assert ids and all(label_of[i] == 1 for i in ids)
    assert "notice" in out.err


def test_missing_checkpoint(synth, capsys):
    assert run("eval", *data_flags(synth), "--checkpoint", synth / "nope.zsmp",
               "--out", synth / "o") == 1
    assert "nope.zsmp" in capsys.readouterr().err


def test_five_fold_mode(synth):
    out = synth / "cv"
    assert run("eval", *data_flags(synth), "--folds", 5, "--n-unseen", 2, "--epochs", 2,
               "--hidden", 8, "--out", out) == 0
    assert sorted(p.name for p in out.glob("*.json")) == [
        *(f"report_fold{i}.json" for i in range(5)), "report_mean.json"]
    folds = [json.loads((out / f"report_fold{i}.json").read_text()) for i in range(5)]
    mean = json.loads((out / "report_mean.json").read_text())
    assert mean["roc_auc_unseen"] == pytest.approx(np.mean([f["roc_auc_unseen"] for f in folds]))


def test_oracle_model_report(tmp_path):
    C = 4
    labels = np.repeat(np.arange(C), 5)
    store = FeatureStore(np.arange(20), labels, np.eye(C)[labels], None, C)
    save_features(store, tmp_path / "f.zsfb")
    save_text_features({c: np.eye(C)[c] for c in range(C)}, tmp_path / "t.csv")
    cfg = ModelConfig("fc", p=C, d=C, k=C, hidden=C, linear=True)
    arrays = {n: (np.eye(C) if n.endswith("weight") else np.zeros(s))
              for n, s in cfg.param_shapes().items()}
    save_checkpoint(ZeroShotModel.from_arrays(cfg, arrays), tmp_path / "m.zsmp")
    assert run("eval", "--features", tmp_path / "f.zsfb", "--texts", tmp_path / "t.csv",
               "--checkpoint", tmp_path / "m.zsmp", "--n-unseen", 1,
               "--out", tmp_path / "r.json") == 0
    report = json.loads((tmp_path / "r.json").read_text())
    for key in ("roc_auc_unseen", "roc_auc_seen", "pr_auc_mean", "top1_seen", "top1_unseen"):
        assert report[key] == 1.0
