"""Talk-aware frame-level contrastive loss (TalkNCE).

For one speaker track, the visual embedding of frame i and the audio
embedding of the same frame form the positive pair; audio embeddings of the
other selected frames of the same track are negatives. Only frames chosen by
the sampling rule (by default the active speaking frames) take part.

Three routes are provided:

* :func:`talknce_loss` -- vectorised, log-sum-exp stabilised.
* :func:`talknce_grad` -- analytic gradient w.r.t. the raw (unnormalised)
  embeddings, including the L2-normalisation Jacobian.
* :func:`talknce_oracle` -- literal nested-loop evaluation, no stabilisation.
  Only meant for tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .core import EmbeddingSequence, FrameLabels

DENOMINATORS = ("exclusive_as_written", "inclusive_standard")
DIRECTIONS = ("video_anchored", "symmetric")
SAMPLINGS = ("active", "all")
PLACEMENTS = ("before_fusion", "after_fusion")


class NotEnoughActiveFrames(ValueError):
    """Raised when a track has too few anchor frames for the loss to be defined."""


class ZeroNormError(ValueError):
    pass


@dataclass(frozen=True)
class TalkNCEConfig:
    tau: float = 1.0
    denominator: str = "exclusive_as_written"
    direction: str = "video_anchored"
    sampling: tuple[str, str] = ("active", "active")  # (visual, audio)
    placement: str = "before_fusion"

    def __post_init__(self):
        if not (self.tau > 0 and math.isfinite(self.tau)):
            raise ValueError(f"tau must be positive and finite, got {self.tau}")
        if self.denominator not in DENOMINATORS:
            raise ValueError(f"denominator must be one of {DENOMINATORS}")
        if self.direction not in DIRECTIONS:
            raise ValueError(f"direction must be one of {DIRECTIONS}")
        sampling = tuple(self.sampling)
        if len(sampling) != 2 or any(s not in SAMPLINGS for s in sampling):
            raise ValueError(f"sampling must be a (visual, audio) pair drawn from {SAMPLINGS}")
        object.__setattr__(self, "sampling", sampling)
        if self.placement not in PLACEMENTS:
            raise ValueError(f"placement must be one of {PLACEMENTS}")

    @property
    def exclusive(self) -> bool:
        return self.denominator == "exclusive_as_written"

    @property
    def min_anchors(self) -> int:
        return 2 if self.exclusive else 1


@dataclass(frozen=True)
class SimilarityMatrix:
    s: np.ndarray
    normalized: bool = True


class Selection(NamedTuple):
    visual: np.ndarray
    audio: np.ndarray


def _as_array(e) -> tuple[np.ndarray, str]:
    if isinstance(e, EmbeddingSequence):
        return e.data, e.track_id
    arr = np.asarray(e, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"embedding must be 2-D (T, C), got shape {arr.shape}")
    return arr, ""


def _labels_array(labels) -> np.ndarray:
    if isinstance(labels, FrameLabels):
        return labels.values
    return np.asarray(labels)


def _unit_rows(x: np.ndarray, rows: np.ndarray, what: str, track: str):
    sub = x[rows]
    norms = np.linalg.norm(sub, axis=1)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise ZeroNormError(
            f"zero-norm {what} embedding at frame {int(rows[zero[0]])} of track {track!r}"
        )
    return sub / norms[:, None], norms


def similarity(e_v, e_a) -> SimilarityMatrix:
    """Cosine similarity between every visual frame and every audio frame."""
    v, track_v = _as_array(e_v)
    a, track_a = _as_array(e_a)
    if v.shape[1] != a.shape[1]:
        raise ValueError(f"embedding dimension mismatch: {v.shape[1]} vs {a.shape[1]}")
    uv, _ = _unit_rows(v, np.arange(v.shape[0]), "visual", track_v)
    ua, _ = _unit_rows(a, np.arange(a.shape[0]), "audio", track_a)
    return SimilarityMatrix(uv @ ua.T)


def select_frames(labels, cfg: TalkNCEConfig) -> Selection:
    lab = _labels_array(labels)
    every = np.arange(lab.shape[0])
    active = np.flatnonzero(lab == 1)
    vis = active if cfg.sampling[0] == "active" else every
    aud = active if cfg.sampling[1] == "active" else every
    return Selection(vis, aud)


def _prepare(e_v, e_a, labels, cfg: TalkNCEConfig):
    v, track = _as_array(e_v)
    a, _ = _as_array(e_a)
    lab = _labels_array(labels)
    if v.shape != a.shape:
        raise ValueError(f"visual/audio shape mismatch: {v.shape} vs {a.shape}")
    if lab.shape[0] != v.shape[0]:
        raise ValueError(f"labels length {lab.shape[0]} does not match T={v.shape[0]}")
    sel = select_frames(lab, cfg)
    anchors = np.intersect1d(sel.visual, sel.audio)
    if anchors.size < cfg.min_anchors:
        raise NotEnoughActiveFrames(
            f"track {track!r}: {anchors.size} anchor frames, need >= {cfg.min_anchors}"
        )
    return v, a, sel, anchors, track


def _anchored_term(S: np.ndarray, rows: np.ndarray, cols: np.ndarray, tau: float, exclusive: bool):
    """Mean InfoNCE term with anchors on the rows of S and candidates on its columns.

    ``rows[k]``/``cols[k]`` locate the positive of anchor k. Returns the loss
    and d loss / d S.
    """
    n = rows.size
    logits = S[rows] / tau  # (n, n_cand)
    mask = np.ones_like(logits, dtype=bool)
    if exclusive:
        mask[np.arange(n), cols] = False
    masked = np.where(mask, logits, -np.inf)
    m = masked.max(axis=1, keepdims=True)
    ex = np.where(mask, np.exp(masked - m), 0.0)
    z = ex.sum(axis=1, keepdims=True)
    lse = (m + np.log(z))[:, 0]
    pos = logits[np.arange(n), cols]
    loss = float(np.mean(lse - pos))

    dS = np.zeros_like(S)
    dlogits = ex / z
    dlogits[np.arange(n), cols] -= 1.0
    np.add.at(dS, rows, dlogits / (n * tau))
    return loss, dS


def _loss_and_grads(e_v, e_a, labels, cfg: TalkNCEConfig, need_grad: bool):
    v, a, sel, anchors, track = _prepare(e_v, e_a, labels, cfg)
    uv, nv = _unit_rows(v, sel.visual, "visual", track)
    ua, na = _unit_rows(a, sel.audio, "audio", track)
    S = uv @ ua.T  # rows: selected visual frames, cols: selected audio frames
    r = np.searchsorted(sel.visual, anchors)
    c = np.searchsorted(sel.audio, anchors)

    loss, dS = _anchored_term(S, r, c, cfg.tau, cfg.exclusive)
    if cfg.direction == "symmetric":
        loss_a, dS_t = _anchored_term(S.T, c, r, cfg.tau, cfg.exclusive)
        loss = 0.5 * (loss + loss_a)
        dS = 0.5 * (dS + dS_t.T)

    if not need_grad:
        return loss, sel, None, None

    def through_norm(du, u, norms):
        return (du - u * np.sum(du * u, axis=1, keepdims=True)) / norms[:, None]

    g_v = np.zeros_like(v)
    g_a = np.zeros_like(a)
    g_v[sel.visual] = through_norm(dS @ ua, uv, nv)
    g_a[sel.audio] = through_norm(dS.T @ uv, ua, na)
    return loss, sel, g_v, g_a


def talknce_loss(e_v, e_a, labels, cfg: TalkNCEConfig | None = None) -> tuple[float, Selection]:
    """TalkNCE loss of one track.

    Args:
        e_v: (T, C) visual embeddings of the track.
        e_a: (T, C) audio embeddings paired frame-by-frame with ``e_v``.
        labels: per-frame 0/1 speaking labels, length T.
        cfg: loss variant; defaults to the as-written form with tau=1.

    Returns:
        ``(loss, selection)`` where selection holds the visual and audio
        frame indices that took part.

    Raises:
        NotEnoughActiveFrames: fewer anchors than the variant needs.
    """
    cfg = cfg or TalkNCEConfig()
    loss, sel, _, _ = _loss_and_grads(e_v, e_a, labels, cfg, need_grad=False)
    return loss, sel


def talknce_grad(e_v, e_a, labels, cfg: TalkNCEConfig | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of :func:`talknce_loss` w.r.t. ``e_v`` and ``e_a`` (both T x C)."""
    cfg = cfg or TalkNCEConfig()
    _, _, g_v, g_a = _loss_and_grads(e_v, e_a, labels, cfg, need_grad=True)
    return g_v, g_a


def talknce_value_and_grad(e_v, e_a, labels, cfg: TalkNCEConfig | None = None):
    cfg = cfg or TalkNCEConfig()
    loss, _, g_v, g_a = _loss_and_grads(e_v, e_a, labels, cfg, need_grad=True)
    return loss, g_v, g_a


def talknce_oracle(e_v, e_a, labels, cfg: TalkNCEConfig | None = None) -> float:
    """Literal triple-loop evaluation of the loss. Test use only."""
    cfg = cfg or TalkNCEConfig()
    v, a, sel, anchors, _ = _prepare(e_v, e_a, labels, cfg)

    def cos(i, j):
        dot = nvi = naj = 0.0
        for k in range(v.shape[1]):
            dot += v[i][k] * a[j][k]
            nvi += v[i][k] * v[i][k]
            naj += a[j][k] * a[j][k]
        return dot / (math.sqrt(nvi) * math.sqrt(naj))

    def one_direction(anchor_list, candidates, sim):
        total = 0.0
        for i in anchor_list:
            num = math.exp(sim(i, i) / cfg.tau)
            den = 0.0
            for j in candidates:
                if cfg.exclusive and j == i:
                    continue
                den += math.exp(sim(i, j) / cfg.tau)
            total += math.log(num / den)
        return -total / len(anchor_list)

    anchor_list = [int(i) for i in anchors]
    loss = one_direction(anchor_list, [int(j) for j in sel.audio], cos)
    if cfg.direction == "symmetric":
        mirror = one_direction(anchor_list, [int(i) for i in sel.visual], lambda j, i: cos(i, j))
        loss = 0.5 * (loss + mirror)
    return loss
