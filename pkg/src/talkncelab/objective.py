"""Composite training objective: classification losses plus weighted TalkNCE."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

EPS = 1e-7


@dataclass(frozen=True)
class LossWeights:
    lambda_a: float = 0.5
    lambda_v: float = 0.5
    lambda_talknce: float = 0.3

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not (math.isfinite(value) and value >= 0):
                raise ValueError(f"{name} must be finite and >= 0, got {value}")


@dataclass(frozen=True)
class LossBreakdown:
    l_av: float
    l_a: float
    l_v: float
    l_talknce: float
    total: float
    n_tracks_used: int = 0
    n_tracks_skipped: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def frame_bce(predictions, labels) -> float:
    """Mean binary cross-entropy over frames, predictions clamped to [EPS, 1-EPS]."""
    p = np.asarray(predictions, dtype=np.float64)
    y = np.asarray(getattr(labels, "values", labels), dtype=np.float64)
    if p.shape != y.shape:
        raise ValueError(f"predictions shape {p.shape} does not match labels shape {y.shape}")
    p = np.clip(p, EPS, 1.0 - EPS)
    return float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log1p(-p))))


def compose(l_av: float, l_a: float, l_v: float, l_talknce: float, w: LossWeights,
            n_tracks_used: int = 0, n_tracks_skipped: int = 0) -> LossBreakdown:
    """Total = l_av + lambda_a*l_a + lambda_v*l_v + lambda_talknce*l_talknce."""
    parts = (l_av, l_a, l_v, l_talknce)
    if not all(math.isfinite(x) for x in parts):
        raise ValueError(f"non-finite loss component in {parts}")
    model_loss = l_av + w.lambda_a * l_a + w.lambda_v * l_v
    total = model_loss + w.lambda_talknce * l_talknce if w.lambda_talknce else model_loss
    return LossBreakdown(float(l_av), float(l_a), float(l_v), float(l_talknce), float(total),
                         int(n_tracks_used), int(n_tracks_skipped))
