import hashlib
import json
import subprocess
import sys

import numpy as np
import pytest
import yaml

from talkncelab.cli import main
from talkncelab.data import GenConfig, generate_corpus, read_manifest
from talkncelab.model import ASDModel, ModelConfig, save_checkpoint

SMOKE_GEN = ["--scenes", "12", "--val", "2", "--test", "2", "--frames", "24", "--size", "16"]
SMOKE_TRAIN = ["--epochs", "2", "--embed-dim", "16", "--hidden-dim", "8"]


def _sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    assert main(["generate", "--seed", "7", "--out", str(out), *SMOKE_GEN]) == 0
    return out


@pytest.fixture(scope="module")
def trained(corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert main(["train", "--seed", "7", "--corpus", str(corpus), "--out", str(out), *SMOKE_TRAIN]) == 0
    return out


def test_generate_creates_dir_and_is_deterministic(corpus, tmp_path, capsys):
    nested = tmp_path / "a" / "b"
    assert main(["generate", "--seed", "7", "--out", str(nested), *SMOKE_GEN]) == 0
    printed = capsys.readouterr().out
    assert "manifest:" in printed and "scenes: 12 (train 8 / val 2 / test 2)" in printed
    for f in sorted(corpus.iterdir()):
        if f.name == "resolved_config.yaml":  # records its own --out
            continue
        assert (nested / f.name).read_bytes() == f.read_bytes(), f.name


def test_generate_stats_match_label_files(tmp_path, capsys):
    assert main(["generate", "--seed", "1", "--scenes", "30", "--size", "8", "--out", str(tmp_path)]) == 0
    line = [ln for ln in capsys.readouterr().out.splitlines() if ln.startswith("active ratio")][0]
    reported = float(line.split()[2])
    labels = [int(row.split("\t")[2]) for f in sorted(tmp_path.glob("*.labels.tsv"))
              for row in f.read_text().splitlines()[1:]]
    assert reported == pytest.approx(np.mean(labels), abs=1e-4)
    assert abs(reported - 0.567) <= 0.05


def test_train_outputs_and_loss_decreases(trained):
    for name in ("checkpoint.safetensors", "train_log.jsonl", "train_summary.json", "training.png",
                 "resolved_config.yaml"):
        assert (trained / name).exists(), name
    summary = json.loads((trained / "train_summary.json").read_text())
    means = summary["epoch_mean_total"]
    assert len(means) == 2 and means[1] < means[0]
    assert summary["tracks_used"] + summary["tracks_skipped"] == 2 * 8 * 2
    records = [json.loads(ln) for ln in (trained / "train_log.jsonl").read_text().splitlines()]
    assert len(records) == 2 * 8
    keys = [(r["epoch"], r["step"]) for r in records]
    assert keys == sorted(keys)
    assert {"l_av", "l_a", "l_v", "l_talknce", "total", "wall_ms", "scene_id"} <= set(records[0])
    resolved = yaml.safe_load((trained / "resolved_config.yaml").read_text())
    assert resolved["gen"]["visual_size"] == 16 and resolved["model"]["visual_size"] == [16, 16]


def test_train_seed_replay_same_checkpoint(corpus, trained, tmp_path):
    assert main(["train", "--seed", "7", "--corpus", str(corpus), "--out", str(tmp_path), *SMOKE_TRAIN]) == 0
    assert _sha(tmp_path / "checkpoint.safetensors") == _sha(trained / "checkpoint.safetensors")


def test_lambda_zero_total_ignores_talknce(corpus, tmp_path):
    args = ["train", "--seed", "7", "--corpus", str(corpus), "--out", str(tmp_path), "--lambda", "0",
            "--epochs", "1", "--embed-dim", "16", "--hidden-dim", "8"]
    assert main(args) == 0
    for ln in (tmp_path / "train_log.jsonl").read_text().splitlines():
        loss = json.loads(ln)
        assert loss["l_talknce"] != 0.0
        assert loss["total"] == loss["l_av"] + 0.5 * loss["l_a"] + 0.5 * loss["l_v"]


def test_evaluate_twice_identical(corpus, trained, tmp_path):
    ckpt = trained / "checkpoint.safetensors"
    before = _sha(ckpt)
    for name in ("a", "b"):
        assert main(["evaluate", "--checkpoint", str(ckpt), "--corpus", str(corpus),
                     "--out", str(tmp_path / name)]) == 0
    for f in ("report.json", "predictions.tsv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    assert _sha(ckpt) == before
    report = json.loads((tmp_path / "a" / "report.json").read_text())
    for key in ("map", "auc", "eer"):
        assert 0.0 <= report[key] <= 1.0
    assert report["n_pos"] + report["n_neg"] == 2 * 2 * 24
    assert report["split"] == "test"
    assert (tmp_path / "a" / "curves.png").exists()
    rows = (tmp_path / "a" / "predictions.tsv").read_text().splitlines()
    assert len(rows) == 1 + 2 * 2 * 24


def test_random_weights_are_at_chance(tmp_path):
    gen = GenConfig(n_scenes=20, n_test=20, T=50, visual_size=16, active_ratio=0.5, seed=11)
    generate_corpus(gen, tmp_path / "c")
    aucs = []
    for seed in range(5):
        ckpt = save_checkpoint(ASDModel(ModelConfig(embed_dim=16, hidden_dim=8, visual_size=(16, 16), seed=seed)),
                               tmp_path / f"r{seed}.safetensors")
        out = tmp_path / f"e{seed}"
        assert main(["evaluate", "--checkpoint", str(ckpt), "--corpus", str(tmp_path / "c"), "--out", str(out)]) == 0
        aucs.append(json.loads((out / "report.json").read_text())["auc"])
    assert all(0.4 <= a <= 0.6 for a in aucs), aucs


def test_evaluate_shape_mismatch_is_runtime_error(corpus, tmp_path, capsys):
    ckpt = save_checkpoint(ASDModel(ModelConfig(embed_dim=8, hidden_dim=4, visual_size=(32, 32))), tmp_path / "m.st")
    code = main(["evaluate", "--checkpoint", str(ckpt), "--corpus", str(corpus), "--out", str(tmp_path / "o")])
    assert code == 2
    assert "checkpoint expects" in capsys.readouterr().err


@pytest.mark.parametrize("axis,rows", [
    ("lambda", ["lambda=0.15", "lambda=0.3", "lambda=0.6"]),
    ("placement", ["none (baseline)", "before_fusion", "after_fusion"]),
    ("sampling", ["act/act", "act/act+inact", "act+inact/act", "act+inact/act+inact"]),
])
def test_ablate_rows(corpus, tmp_path, axis, rows):
    args = ["ablate", "--axis", axis, "--seed", "7", "--corpus", str(corpus), "--out", str(tmp_path),
            "--epochs", "1", "--embed-dim", "8", "--hidden-dim", "4"]
    assert main(args) == 0
    table = (tmp_path / f"ablation_{axis}.tsv").read_text().splitlines()
    assert table[0] == "setting\tmap\tauc\teer"
    assert [ln.split("\t")[0] for ln in table[1:]] == rows
    assert (tmp_path / f"ablation_{axis}.png").exists()


def test_gradcheck_pass_and_report(tmp_path, capsys):
    assert main(["gradcheck", "--skip-model", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert out.strip().endswith("PASS")
    doc = json.loads((tmp_path / "gradcheck.json").read_text())
    assert doc[0]["passed"] and doc[0]["max_rel_err"] < 1e-4 and doc[0]["n_checked"] > 0


def test_gradcheck_small_tau_still_passes(capsys):
    assert main(["gradcheck", "--skip-model", "--tau", "0.05"]) == 0
    assert capsys.readouterr().out.strip().endswith("PASS")


def test_gradcheck_corrupted_gradient_fails(capsys):
    assert main(["gradcheck", "--skip-model", "--seeds", "5", "--corrupt"]) == 2
    out = capsys.readouterr().out
    assert "FAIL" in out and "worst at" in out


def test_usage_errors_exit_1(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["train", "--no-such-flag"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main(["ablate", "--axis", "depth", "--corpus", "x", "--out", "y"])
    assert exc.value.code == 1
    assert main(["generate"]) == 1  # --out missing
    bad = tmp_path / "bad.yaml"
    bad.write_text("optim:\n  momentum: 0.9\n")
    assert main(["generate", "--config", str(bad), "--out", str(tmp_path / "o")]) == 1
    assert "momentum" in capsys.readouterr().err


def test_runtime_errors_exit_2(tmp_path):
    assert main(["train", "--corpus", str(tmp_path / "missing"), "--out", str(tmp_path / "o")]) == 2


def test_config_precedence(tmp_path):
    cfg = tmp_path / "run.yaml"
    cfg.write_text("seed: 3\ngen:\n  n_scenes: 5\n  T: 16\n  visual_size: 8\n  active_ratio: 0.4\n")
    out = tmp_path / "o"
    assert main(["generate", "--config", str(cfg), "--frames", "12", "--out", str(out)]) == 0
    resolved = yaml.safe_load((out / "resolved_config.yaml").read_text())
    assert resolved["gen"]["T"] == 12  # flag beats file
    assert resolved["gen"]["n_scenes"] == 5 and resolved["gen"]["active_ratio"] == 0.4  # file beats default
    assert resolved["gen"]["seed"] == 3 and resolved["model"]["seed"] == 3
    assert resolved["gen"]["n_speakers"] == 2  # default
    doc = read_manifest(out)
    assert len(doc["scenes"]) == 5 and doc["scenes"][0]["T"] == 12


def test_console_script_exit_codes(tmp_path):
    run = [sys.executable, "-m", "talkncelab.cli"]
    assert subprocess.run(run + ["--help"], capture_output=True).returncode == 0
    assert subprocess.run(run + ["bogus"], capture_output=True).returncode == 1
    res = subprocess.run(run + ["evaluate", "--checkpoint", str(tmp_path / "x"), "--corpus", str(tmp_path),
                                "--out", str(tmp_path / "o")], capture_output=True, text=True)
    assert res.returncode == 2 and "manifest not found" in res.stderr


def test_train_without_validation_split(tmp_path, capsys):
    assert main(["generate", "--scenes", "3", "--frames", "16", "--size", "8", "--out", str(tmp_path / "c")]) == 0
    assert main(["train", "--corpus", str(tmp_path / "c"), "--out", str(tmp_path / "t"), "--epochs", "2",
                 "--embed-dim", "8", "--hidden-dim", "4"]) == 0
    assert "no validation split" in capsys.readouterr().out
    summary = json.loads((tmp_path / "t" / "train_summary.json").read_text())
    assert summary["best_val_map"] is None and summary["val_map"] == []
    means = summary["epoch_mean_total"]
    assert summary["best_epoch"] == 1 + int(np.argmin(means))
