"""Deterministic training and evaluation loops (one scene per forward pass)."""

from __future__ import annotations

import copy
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import torch

from .core import Scene
from .metrics import MetricReport, ScoredFrames, average_precision, evaluate_scores
from .model import ASDModel, compute_losses, scene_tensors
from .objective import LossBreakdown, LossWeights
from .talknce import TalkNCEConfig


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class OptimConfig:
    kind: str = "adam"
    lr: float = 1e-3
    weight_decay: float = 1e-4
    epochs: int = 25
    batch_scenes: int = 1

    def __post_init__(self):
        if self.kind != "adam":
            raise ValueError("only the adam optimizer is supported")
        if self.lr <= 0 or self.weight_decay < 0 or self.epochs < 1 or self.batch_scenes < 1:
            raise ValueError("lr > 0, weight_decay >= 0, epochs >= 1 and batch_scenes >= 1 required")


@dataclass
class TrainLogRecord:
    epoch: int
    step: int
    scene_id: str
    loss: LossBreakdown
    wall_ms: float

    def to_dict(self) -> dict:
        return {"epoch": self.epoch, "step": self.step, "scene_id": self.scene_id,
                **self.loss.to_dict(), "wall_ms": round(self.wall_ms, 3)}


@dataclass
class TrainResult:
    best_state: dict
    best_epoch: int
    best_val_map: float | None  # None when trained without a validation split
    epoch_means: list = field(default_factory=list)
    val_maps: list = field(default_factory=list)
    tracks_skipped: int = 0
    tracks_used: int = 0


def _set_determinism():
    torch.use_deterministic_algorithms(True)


@torch.no_grad()
def predict(model: ASDModel, scenes: list[Scene], cache: dict | None = None) -> ScoredFrames:
    """Pooled p_av scores for every (scene, speaker, frame)."""
    model.eval()
    dtype = next(model.parameters()).dtype
    parts = []
    for scene in scenes:
        mel, frames, labels = cache[scene.scene_id] if cache else scene_tensors(scene, dtype)
        if frames.shape[2:] != model.cfg.visual_size or mel.shape[1] != model.cfg.mel_bins:
            raise ValueError(
                f"scene {scene.scene_id}: input shapes {tuple(frames.shape[2:])}/{mel.shape[1]} mel bins "
                f"do not match model config {model.cfg.visual_size}/{model.cfg.mel_bins}"
            )
        out = model(mel, frames)
        ids = [(scene.scene_id, tid, t) for tid in scene.visual.track_ids for t in range(scene.T)]
        parts.append(ScoredFrames(out.p_av.double().numpy().reshape(-1),
                                  labels.numpy().reshape(-1).astype(np.int64), ids))
    return ScoredFrames.concat(parts)


def evaluate_model(model: ASDModel, scenes: list[Scene], cache: dict | None = None
                   ) -> tuple[MetricReport, ScoredFrames]:
    sf = predict(model, scenes, cache)
    return evaluate_scores(sf), sf


def train(model: ASDModel, train_scenes: list[Scene], val_scenes: list[Scene],
          loss_cfg: TalkNCEConfig, weights: LossWeights, optim: OptimConfig, seed: int = 0,
          log: Callable[[TrainLogRecord], None] | None = None) -> TrainResult:
    """Adam over whole scenes; keeps the state with the best validation mAP.

    Raises:
        TrainingDiverged: a non-finite loss, naming the scene and step.
    """
    _set_determinism()
    dtype = next(model.parameters()).dtype
    cache = {s.scene_id: scene_tensors(s, dtype) for s in list(train_scenes) + list(val_scenes)}
    opt = torch.optim.Adam(model.parameters(), lr=optim.lr, weight_decay=optim.weight_decay)
    rng = np.random.default_rng(seed)
    result = TrainResult(best_state=copy.deepcopy(model.state_dict()), best_epoch=0, best_val_map=None)
    best_score = -math.inf

    step = 0
    for epoch in range(1, optim.epochs + 1):
        model.train()
        totals = []
        order = rng.permutation(len(train_scenes))
        opt.zero_grad()
        for n, i in enumerate(order, start=1):
            scene = train_scenes[i]
            t0 = time.perf_counter()
            mel, frames, labels = cache[scene.scene_id]
            _, breakdown, total = compute_losses(model, mel, frames, labels, loss_cfg, weights)
            if not math.isfinite(breakdown.total):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, step {step}, scene {scene.scene_id}")
            (total / optim.batch_scenes).backward()
            if n % optim.batch_scenes == 0 or n == len(order):
                opt.step()
                opt.zero_grad()
            step += 1
            totals.append(breakdown.total)
            result.tracks_skipped += breakdown.n_tracks_skipped
            result.tracks_used += breakdown.n_tracks_used
            if log is not None:
                log(TrainLogRecord(epoch, step, scene.scene_id, breakdown, 1e3 * (time.perf_counter() - t0)))
        result.epoch_means.append(float(np.mean(totals)))

        # without a validation split, fall back to the lowest mean training loss
        if val_scenes:
            val_map = average_precision(predict(model, val_scenes, cache))
            result.val_maps.append(val_map)
            score = val_map
        else:
            score = -result.epoch_means[-1]
        if score > best_score:
            best_score = score
            result.best_val_map = val_map if val_scenes else None
            result.best_epoch = epoch
            result.best_state = copy.deepcopy(model.state_dict())
    return result
