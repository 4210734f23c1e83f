"""Command-line interface: generate, train, evaluate, ablate, gradcheck.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np
import torch

from . import plotting
from .config import SECTIONS, ConfigError, RunConfig, load_config_file, resolve, with_corpus_shapes
from .data.io import ManifestError, generate_corpus, load_split, read_manifest, validate_manifest
from .data.avsf import AVSFError
from .experiment import ABLATION_AXES, ablation_settings, train_and_score
from .gradcheck import check_full_model, check_talknce
from .metrics import write_predictions, write_report
from .model import load_checkpoint, save_checkpoint
from .talknce import DENOMINATORS, DIRECTIONS, PLACEMENTS, SAMPLINGS
from .train import TrainingDiverged, evaluate_model

log = logging.getLogger("talkncelab")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _default(section: str, key: str):
    for f in fields(SECTIONS[section]):
        if f.name == key:
            return f.default
    raise KeyError(key)


def _opt(p, flag: str, dest: str, typ, help: str, **kw):
    section, key = dest.split(".")
    default = _default(section, key)
    if isinstance(default, tuple):
        default = ",".join(map(str, default))
    p.add_argument(flag, dest=dest, type=typ, default=None, help=f"{help} (default: {default})", **kw)


def _pair(text: str) -> tuple[str, str]:
    parts = tuple(s.strip() for s in text.split(","))
    if len(parts) != 2 or any(s not in SAMPLINGS for s in parts):
        raise argparse.ArgumentTypeError(f"expected VISUAL,AUDIO from {SAMPLINGS}, got {text!r}")
    return parts


def _common(p):
    p.add_argument("--config", type=Path, help="YAML config file (flags override its values)")
    p.add_argument("--seed", type=int, default=None, help="seed for generation, init and shuffling (default: 0)")
    p.add_argument("--out", type=Path, default=None, help="output directory")


def _gen_flags(p):
    _opt(p, "--scenes", "gen.n_scenes", int, "number of scenes")
    _opt(p, "--speakers", "gen.n_speakers", int, "on-screen speakers per scene")
    _opt(p, "--frames", "gen.T", int, "video frames per scene")
    _opt(p, "--fps", "gen.fps", float, "video frame rate")
    _opt(p, "--sample-rate", "gen.sample_rate_hz", int, "audio sample rate")
    _opt(p, "--active-ratio", "gen.active_ratio", float, "expected fraction of speaking frames")
    _opt(p, "--snr-db", "gen.snr_db", float, "speech-to-noise ratio in dB ('inf' for none)")
    _opt(p, "--size", "gen.visual_size", int, "face crop height and width")
    _opt(p, "--mel-bins", "gen.mel_bins", int, "mel filters")
    _opt(p, "--val", "gen.n_val", int, "validation scenes")
    _opt(p, "--test", "gen.n_test", int, "test scenes")
    _opt(p, "--idle-motion", "gen.idle_motion", float, "chance of non-speaking mouth motion per silent stretch")
    _opt(p, "--distractor", "gen.distractor", float, "chance of an off-screen talker")


def _train_flags(p):
    p.add_argument("--corpus", dest="paths.corpus", type=Path, default=None, help="corpus directory")
    _opt(p, "--epochs", "optim.epochs", int, "training epochs")
    _opt(p, "--lr", "optim.lr", float, "Adam learning rate")
    _opt(p, "--weight-decay", "optim.weight_decay", float, "Adam weight decay")
    _opt(p, "--batch-scenes", "optim.batch_scenes", int, "scenes per optimizer step")
    _opt(p, "--lambda", "weights.lambda_talknce", float, "TalkNCE weight")
    _opt(p, "--lambda-a", "weights.lambda_a", float, "audio auxiliary loss weight")
    _opt(p, "--lambda-v", "weights.lambda_v", float, "visual auxiliary loss weight")
    _opt(p, "--tau", "talknce.tau", float, "temperature")
    _opt(p, "--denominator", "talknce.denominator", str, "denominator form", choices=DENOMINATORS)
    _opt(p, "--direction", "talknce.direction", str, "anchoring", choices=DIRECTIONS)
    _opt(p, "--sampling", "talknce.sampling", _pair, "VISUAL,AUDIO frame sets")
    _opt(p, "--placement", "talknce.placement", str, "where the loss is applied", choices=PLACEMENTS)
    _opt(p, "--embed-dim", "model.embed_dim", int, "embedding size C")
    _opt(p, "--hidden-dim", "model.hidden_dim", int, "hidden size of encoder/temporal layers")
    _opt(p, "--temporal", "model.temporal_kind", str, "temporal model",
         choices=("bilstm", "gru", "self_attention"))
    _opt(p, "--heads", "model.attention_heads", int, "attention heads")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="talkncelab", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="progress logging")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)

    p = sub.add_parser("generate", help="write a synthetic corpus")
    _common(p)
    _gen_flags(p)

    p = sub.add_parser("train", help="train a model on a corpus")
    _common(p)
    _train_flags(p)

    p = sub.add_parser("evaluate", help="score a checkpoint on a corpus split")
    _common(p)
    p.add_argument("--checkpoint", dest="paths.checkpoint", type=Path, default=None, help="checkpoint file")
    p.add_argument("--corpus", dest="paths.corpus", type=Path, default=None, help="corpus directory")
    p.add_argument("--split", default="test", choices=("train", "val", "test"), help="split (default: test)")

    p = sub.add_parser("ablate", help="train one run per ablation setting")
    _common(p)
    p.add_argument("--axis", required=True, choices=ABLATION_AXES, help="ablation axis")
    _train_flags(p)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    _common(p)
    p.add_argument("--seeds", type=int, default=100, help="random TalkNCE instances (default: 100)")
    _opt(p, "--tau", "talknce.tau", float, "temperature")
    _opt(p, "--denominator", "talknce.denominator", str, "denominator form", choices=DENOMINATORS)
    _opt(p, "--direction", "talknce.direction", str, "anchoring", choices=DIRECTIONS)
    p.add_argument("--skip-model", action="store_true", help="only check the TalkNCE gradient")
    p.add_argument("--corrupt", action="store_true", help=argparse.SUPPRESS)
    return parser


def _overrides(args) -> dict:
    out: dict = {}
    for dest, value in vars(args).items():
        if "." in dest and value is not None:
            section, key = dest.split(".")
            if isinstance(value, Path):
                value = str(value)
            out.setdefault(section, {})[key] = value
    if args.seed is not None:
        out["seed"] = args.seed
    if args.out is not None:
        out.setdefault("paths", {})["out"] = str(args.out)
    return out


def _resolve(args) -> RunConfig:
    file_doc = load_config_file(args.config) if args.config else None
    return resolve(file_doc, _overrides(args))


def _need(value, what: str):
    if not value:
        raise UsageError(f"{what} is required (flag or config file)")
    return value


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _corpus(cfg: RunConfig) -> dict:
    doc = read_manifest(_need(cfg.paths.corpus, "--corpus"))
    validate_manifest(doc)
    return doc


def cmd_generate(cfg: RunConfig) -> int:
    out = Path(_need(cfg.paths.out, "--out"))
    doc = generate_corpus(cfg.gen, out)
    cfg.dump(out / "resolved_config.yaml")
    scenes = load_split(doc, None)
    ratio = float(np.mean([s.label_matrix().mean() for s in scenes]))
    counts = {k: sum(e["split"] == k for e in doc["scenes"]) for k in ("train", "val", "test")}
    print(f"manifest: {out / 'manifest.json'}")
    print(f"scenes: {len(scenes)} (train {counts['train']} / val {counts['val']} / test {counts['test']})")
    print(f"active ratio: {ratio:.4f} (configured {cfg.gen.active_ratio})")
    return 0


def cmd_train(cfg: RunConfig) -> int:
    out = Path(_need(cfg.paths.out, "--out"))
    doc = _corpus(cfg)
    cfg = with_corpus_shapes(cfg, doc.get("gen_config"))
    out.mkdir(parents=True, exist_ok=True)
    cfg.dump(out / "resolved_config.yaml")
    train_scenes, val_scenes = load_split(doc, "train"), load_split(doc, "val")
    if not train_scenes:
        raise ManifestError("corpus has no training scenes")

    with open(out / "train_log.jsonl", "w", encoding="utf-8") as fh:
        def write(rec):
            fh.write(json.dumps(rec.to_dict(), sort_keys=True) + "\n")

        outcome = train_and_score(cfg, train_scenes, val_scenes, log=write)
    res = outcome.result
    ckpt = save_checkpoint(outcome.model, out / "checkpoint.safetensors",
                           extra={"best_epoch": res.best_epoch, "best_val_map": res.best_val_map})
    summary = {
        "best_epoch": res.best_epoch,
        "best_val_map": res.best_val_map,
        "epoch_mean_total": res.epoch_means,
        "val_map": res.val_maps,
        "tracks_used": res.tracks_used,
        "tracks_skipped": res.tracks_skipped,
        "checkpoint_sha256": _sha256(ckpt),
    }
    (out / "train_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    plotting.plot_training(res.epoch_means, res.val_maps if val_scenes else [], out / "training.png")
    print(f"checkpoint: {ckpt}")
    if res.best_val_map is None:
        print(f"best epoch {res.best_epoch} (lowest training loss; no validation split)")
    else:
        print(f"best epoch {res.best_epoch}, val mAP {res.best_val_map:.4f}")
    print(f"talknce tracks used {res.tracks_used}, skipped (too few active frames) {res.tracks_skipped}")
    return 0


def cmd_evaluate(cfg: RunConfig, split: str) -> int:
    out = Path(_need(cfg.paths.out, "--out"))
    ckpt = Path(_need(cfg.paths.checkpoint, "--checkpoint"))
    doc = _corpus(cfg)
    model, _ = load_checkpoint(ckpt)
    gen = doc.get("gen_config") or {}
    if gen and (tuple(model.cfg.visual_size) != (gen["visual_size"],) * 2 or model.cfg.mel_bins != gen["mel_bins"]):
        raise ValueError(
            f"checkpoint expects {model.cfg.visual_size} crops / {model.cfg.mel_bins} mel bins, corpus has "
            f"{gen['visual_size']} / {gen['mel_bins']}"
        )
    scenes = load_split(doc, split)
    if not scenes:
        raise ManifestError(f"corpus has no '{split}' scenes")
    report, sf = evaluate_model(model, scenes)
    out.mkdir(parents=True, exist_ok=True)
    cfg.dump(out / "resolved_config.yaml")
    write_predictions(sf, out / "predictions.tsv")
    write_report(report, out / "report.json", extra={"split": split, "checkpoint_sha256": _sha256(ckpt)})
    plotting.plot_curves(sf, out / "curves.png", title=f"{split}: mAP {100 * report.map:.1f}%")
    print(f"mAP {report.map:.4f}  AUC {report.auc:.4f}  EER {report.eer:.4f}  "
          f"(pos {report.n_pos}, neg {report.n_neg})")
    return 0


def cmd_ablate(cfg: RunConfig, axis: str) -> int:
    out = Path(_need(cfg.paths.out, "--out"))
    doc = _corpus(cfg)
    cfg = with_corpus_shapes(cfg, doc.get("gen_config"))
    out.mkdir(parents=True, exist_ok=True)
    cfg.dump(out / "resolved_config.yaml")
    train_scenes, val_scenes = load_split(doc, "train"), load_split(doc, "val")
    test_scenes = load_split(doc, "test") or val_scenes
    if not train_scenes or not test_scenes:
        raise ManifestError("ablation needs train scenes and test (or val) scenes")

    rows = []
    for label, run_cfg in ablation_settings(axis, cfg):
        log.info("ablation %s: %s", axis, label)
        rep = train_and_score(run_cfg, train_scenes, val_scenes, test_scenes, setting=label).report
        rows.append({"setting": label, "map": rep.map, "auc": rep.auc, "eer": rep.eer})

    with open(out / f"ablation_{axis}.tsv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["setting", "map", "auc", "eer"])
        for r in rows:
            w.writerow([r["setting"], f"{r['map']:.6f}", f"{r['auc']:.6f}", f"{r['eer']:.6f}"])
    plotting.plot_ablation(rows, axis, out / f"ablation_{axis}.png")
    print(f"{'setting':<20} {'mAP':>7} {'AUC':>7} {'EER':>7}")
    for r in rows:
        print(f"{r['setting']:<20} {100 * r['map']:7.2f} {100 * r['auc']:7.2f} {100 * r['eer']:7.2f}")
    return 0


def cmd_gradcheck(cfg: RunConfig, seeds: int, skip_model: bool, corrupt: bool) -> int:
    checks = [check_talknce(range(seeds), cfg.talknce, corrupt=corrupt)]
    if not skip_model:
        checks.append(check_full_model(seed=cfg.seed, loss_cfg=cfg.talknce, corrupt=corrupt))
    for c in checks:
        print(c.line())
    if cfg.paths.out:
        out = Path(cfg.paths.out)
        out.mkdir(parents=True, exist_ok=True)
        doc = [{"name": c.name, "passed": c.passed, "max_rel_err": c.max_rel_err,
                "tolerance": c.tolerance, "worst": c.worst, "n_checked": c.n_checked} for c in checks]
        (out / "gradcheck.json").write_text(json.dumps(doc, indent=2) + "\n")
    ok = all(c.passed for c in checks)
    print("PASS" if ok else "FAIL")
    return 0 if ok else 2


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    torch.set_num_threads(1)
    try:
        cfg = _resolve(args)
        if args.command == "generate":
            return cmd_generate(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, args.split)
        if args.command == "ablate":
            return cmd_ablate(cfg, args.axis)
        return cmd_gradcheck(cfg, args.seeds, args.skip_model, args.corrupt)
    except (UsageError, ConfigError) as exc:
        print(f"talkncelab: error: {exc}", file=sys.stderr)
        return 1
    except (ManifestError, AVSFError, TrainingDiverged, ValueError, OSError) as exc:
        print(f"talkncelab: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
