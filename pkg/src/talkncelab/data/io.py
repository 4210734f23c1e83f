"""On-disk corpus: AVSF arrays, label tables and a JSON manifest."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from ..core import AudioClip, FrameLabels, Scene, VisualClip
from .avsf import read_array, write_array
from .synth import GenConfig, synthesize_scene

MANIFEST_VERSION = 1
MANIFEST_NAME = "manifest.json"


class ManifestError(ValueError):
    pass


class UnsupportedManifestVersion(ManifestError):
    pass


def save_scene(scene: Scene, out_dir) -> dict:
    """Write one scene's arrays and labels; return its manifest entry."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sid = scene.scene_id
    entry = {
        "scene_id": sid,
        "split": scene.split,
        "T": scene.T,
        "n_s": scene.n_speakers,
        "track_ids": list(scene.visual.track_ids),
        "sample_rate_hz": scene.audio.sample_rate_hz,
        "frame_rate_hz": scene.labels[0].frame_rate_hz if scene.labels else 25.0,
        "visual": f"{sid}.visual.avsf",
        "audio": f"{sid}.audio.avsf",
        "mel": f"{sid}.mel.avsf" if scene.audio.mel is not None else None,
        "labels": f"{sid}.labels.tsv",
    }
    write_array(out_dir / entry["visual"], scene.visual.frames)
    write_array(out_dir / entry["audio"], scene.audio.waveform)
    if scene.audio.mel is not None:
        write_array(out_dir / entry["mel"], scene.audio.mel)
    with open(out_dir / entry["labels"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["frame_idx", "speaker_id", "label"])
        for track, lab in zip(scene.visual.track_ids, scene.labels):
            for t, y in enumerate(lab.values):
                w.writerow([t, track, int(y)])
    return entry


def _read_labels(path: Path, track_ids, T: int) -> np.ndarray:
    out = np.full((len(track_ids), T), -1, dtype=np.int8)
    row_of = {tid: k for k, tid in enumerate(track_ids)}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh, delimiter="\t")
        if reader.fieldnames != ["frame_idx", "speaker_id", "label"]:
            raise ManifestError(f"{path}: unexpected label header {reader.fieldnames}")
        for rec in reader:
            try:
                out[row_of[rec["speaker_id"]], int(rec["frame_idx"])] = int(rec["label"])
            except (KeyError, IndexError, ValueError) as exc:
                raise ManifestError(f"{path}: bad label row {rec}") from exc
    if (out < 0).any():
        raise ManifestError(f"{path}: missing labels for some (speaker, frame) pairs")
    return out


def load_scene(entry: dict, root) -> Scene:
    root = Path(root)
    T, n_s = int(entry["T"]), int(entry["n_s"])
    frames = read_array(root / entry["visual"])
    if frames.ndim != 4 or frames.shape[:2] != (n_s, T):
        raise ManifestError(
            f"{root / entry['visual']}: shape {frames.shape} does not match n_s={n_s}, T={T}"
        )
    wav = read_array(root / entry["audio"])
    mel = read_array(root / entry["mel"]) if entry.get("mel") else None
    if mel is not None and mel.shape[0] != 4 * T:
        raise ManifestError(f"{root / entry['mel']}: {mel.shape[0]} mel frames, expected {4 * T}")
    labels = _read_labels(root / entry["labels"], entry["track_ids"], T)
    fps = float(entry["frame_rate_hz"])
    return Scene(
        visual=VisualClip(frames, tuple(entry["track_ids"])),
        audio=AudioClip(wav, int(entry["sample_rate_hz"]), mel=mel),
        labels=tuple(FrameLabels(row, frame_rate_hz=fps) for row in labels),
        scene_id=entry["scene_id"],
        split=entry.get("split", "train"),
    )


def write_manifest(out_dir, entries: list[dict], gen_config: GenConfig | None = None) -> Path:
    out_dir = Path(out_dir)
    doc = {
        "version": MANIFEST_VERSION,
        "gen_config": asdict(gen_config) if gen_config is not None else None,
        "scenes": entries,
    }
    path = out_dir / MANIFEST_NAME
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def read_manifest(path) -> dict:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    if not path.exists():
        raise ManifestError(f"manifest not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: not valid JSON ({exc})") from exc
    if doc.get("version") != MANIFEST_VERSION:
        raise UnsupportedManifestVersion(
            f"{path}: unsupported manifest version {doc.get('version')!r} (supported: {MANIFEST_VERSION})"
        )
    doc["root"] = str(path.parent)
    return doc


def validate_manifest(doc: dict) -> None:
    root = Path(doc["root"])
    for entry in doc["scenes"]:
        for key in ("visual", "audio", "mel", "labels"):
            if entry.get(key) and not (root / entry[key]).exists():
                raise ManifestError(f"scene {entry['scene_id']}: missing file {root / entry[key]}")


def load_split(doc: dict, split: str | None) -> list[Scene]:
    root = doc["root"]
    return [load_scene(e, root) for e in doc["scenes"] if split is None or e["split"] == split]


def generate_corpus(cfg: GenConfig, out_dir) -> dict:
    """Generate every scene, write it under ``out_dir`` and return the manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = [save_scene(synthesize_scene(cfg, i), out_dir) for i in range(cfg.n_scenes)]
    return read_manifest(write_manifest(out_dir, entries, cfg))
