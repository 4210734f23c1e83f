"""Deterministic synthetic audio-visual scenes.

Each on-screen speaker has a binary activity chain. While a speaker talks, a
latent content sequence drives both the mouth shape rendered into the face
crop and the envelope/formant of that speaker's voice in the shared audio.
Silent faces either stay still or make non-speaking mouth movements drawn
from the same distribution, and an optional off-screen talker adds audio
that matches no face. Telling who is speaking therefore needs the
audio-visual correspondence, not just mouth motion or audio energy.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ..core import AudioClip, FrameLabels, Scene, VisualClip
from .mel import mel_frontend

SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class GenConfig:
    n_scenes: int = 20
    n_speakers: int = 2
    T: int = 100
    fps: float = 25.0
    sample_rate_hz: int = 16000
    active_ratio: float = 0.567
    snr_db: float = 10.0
    latent_dim: int = 2
    seed: int = 0
    visual_size: int = 112
    mel_bins: int = 13
    n_val: int = 0
    n_test: int = 0
    mean_active_run: float = 12.0  # frames
    idle_motion: float = 0.5  # chance a silent stretch shows non-speaking mouth motion
    distractor: float = 0.5  # chance of an off-screen talker in a scene
    pixel_noise: float = 0.03

    def __post_init__(self):
        if not 0.0 < self.active_ratio < 1.0:
            raise ValueError("active_ratio must lie in (0, 1)")
        if self.T < 4:
            raise ValueError("T must be >= 4")
        if self.n_speakers < 1 or self.n_scenes < 1:
            raise ValueError("n_speakers and n_scenes must be >= 1")
        if self.latent_dim not in (1, 2):
            raise ValueError("latent_dim must be 1 (opening) or 2 (opening, width)")
        if self.n_val < 0 or self.n_test < 0 or self.n_val + self.n_test > self.n_scenes:
            raise ValueError("n_val + n_test must not exceed n_scenes")
        if self.fps <= 0 or self.sample_rate_hz <= 0 or self.visual_size < 8:
            raise ValueError("fps, sample_rate_hz must be positive and visual_size >= 8")
        if self.mean_active_run < 1.0:
            raise ValueError("mean_active_run must be >= 1 frame")

    @property
    def n_train(self) -> int:
        return self.n_scenes - self.n_val - self.n_test

    def split_of(self, index: int) -> str:
        if index < self.n_train:
            return "train"
        if index < self.n_train + self.n_val:
            return "val"
        return "test"


def scene_id_for(index: int) -> str:
    return f"s{index:05d}"


def _activity(rng, T: int, p: float, run: float) -> np.ndarray:
    """Two-state Markov chain with stationary P(active) = p."""
    p_off = 1.0 / run
    p_on = min(1.0, p_off * p / (1.0 - p))
    state = rng.random() < p
    out = np.empty(T, dtype=np.int8)
    flips = rng.random(T)
    for t in range(T):
        out[t] = state
        state = (flips[t] >= p_off) if state else (flips[t] < p_on)
    return out


def _content(rng, T: int, dim: int, rho: float = 0.6) -> np.ndarray:
    """Fast-varying latent in (0, 1)^dim, shape (T, dim)."""
    x = np.empty((T, dim))
    x[0] = rng.standard_normal(dim)
    scale = math.sqrt(1.0 - rho * rho)
    noise = rng.standard_normal((T, dim))
    for t in range(1, T):
        x[t] = rho * x[t - 1] + scale * noise[t]
    return 1.0 / (1.0 + np.exp(-1.8 * x))


def _render_track(rng, opening, width, size: int, noise: float) -> np.ndarray:
    T = opening.shape[0]
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) + 0.5
    bg = rng.uniform(0.15, 0.35)
    skin = rng.uniform(0.6, 0.8)
    cx = size / 2 + rng.normal(0, 0.04 * size)
    cy = size / 2 + rng.normal(0, 0.04 * size)
    jitter = rng.normal(0, 0.015 * size, size=(T, 2))
    fx = (cx + jitter[:, 0])[:, None, None]
    fy = (cy + jitter[:, 1])[:, None, None]

    def ellipse(x0, y0, rx, ry):
        # anti-aliased coverage, edge ramp of about 1.5 px
        d = np.sqrt(((xx - x0) / rx) ** 2 + ((yy - y0) / ry) ** 2)
        return np.clip(0.5 + (1.0 - d) * np.minimum(rx, ry) / 1.5, 0.0, 1.0)

    face = ellipse(fx, fy, 0.34 * size, 0.44 * size)
    rx = (0.10 + 0.07 * width)[:, None, None] * size
    ry = (0.015 + 0.10 * opening)[:, None, None] * size
    mouth = ellipse(fx, fy + 0.2 * size, rx, ry)
    img = bg + (skin - bg) * face
    img = img + (0.08 - img) * mouth
    img = img + rng.normal(0.0, noise, size=img.shape)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def _voice(rng, n_samples: int, sr: int, fps: float, loud, formant_shift, t_frames: int):
    """Harmonic source with frame-rate envelope and formant, interpolated per sample."""
    f0 = rng.uniform(100.0, 220.0)
    base_formant = math.exp(rng.uniform(math.log(400.0), math.log(2400.0)))
    t = np.arange(n_samples) / sr
    frame_t = (np.arange(t_frames) + 0.5) / fps
    env = np.interp(t, frame_t, loud)
    formant = base_formant * (1.0 + 0.35 * (np.interp(t, frame_t, formant_shift) - 0.5))
    n_harm = int(min(sr / 2 - 200, 4500) // f0)
    sig = np.zeros(n_samples)
    phases = rng.uniform(0, 2 * np.pi, n_harm)
    for h in range(1, n_harm + 1):
        fh = h * f0
        weight = np.exp(-0.5 * ((fh - formant) / (0.25 * formant)) ** 2)
        sig += weight * np.sin(2 * np.pi * fh * t + phases[h - 1])
    sig /= max(1e-9, math.sqrt(np.mean(sig ** 2)))
    return 0.1 * env * sig


def synthesize_scene(cfg: GenConfig, index: int) -> Scene:
    """Build scene ``index`` of the corpus; depends only on (cfg, index)."""
    rng = np.random.default_rng([cfg.seed, index])
    T, sr, fps = cfg.T, cfg.sample_rate_hz, cfg.fps
    n_samples = int(math.ceil(T / fps * sr))
    frame_len = sr / fps

    labels, frames, opening_all, comps = [], [], [], []
    for _ in range(cfg.n_speakers):
        act = _activity(rng, T, cfg.active_ratio, cfg.mean_active_run)
        speech = _content(rng, T, 2)
        idle = _content(rng, T, 2)
        moving = _segment_flags(rng, act, cfg.idle_motion)
        still = np.stack([0.08 + 0.04 * rng.random(T), 0.5 + 0.05 * rng.standard_normal(T)], axis=1)
        quiet = np.where(moving[:, None], idle, still)
        lips = np.where(act[:, None] == 1, speech, quiet)
        width = lips[:, 1] if cfg.latent_dim == 2 else np.full(T, 0.5)
        frames.append(_render_track(rng, lips[:, 0], width, cfg.visual_size, cfg.pixel_noise))
        shift = speech[:, 1] if cfg.latent_dim == 2 else np.full(T, 0.5)
        comps.append(_voice(rng, n_samples, sr, fps, speech[:, 0] * act, shift, T))
        labels.append(FrameLabels(act, frame_rate_hz=fps))
        opening_all.append(lips[:, 0])

    speech_mix = np.sum(comps, axis=0)
    audio = speech_mix.copy()
    if rng.random() < cfg.distractor:
        act = _activity(rng, T, 0.5, cfg.mean_active_run)
        other = _content(rng, T, 2)
        audio += _voice(rng, n_samples, sr, fps, other[:, 0] * act, other[:, 1], T)
    if math.isfinite(cfg.snr_db):
        power = max(float(np.mean(audio ** 2)), 1e-8)
        audio += rng.normal(0.0, math.sqrt(power / 10 ** (cfg.snr_db / 10.0)), n_samples)

    mel = mel_frontend(audio, sr, T, fps=fps, n_mels=cfg.mel_bins)
    idx = np.clip((np.arange(n_samples) // frame_len).astype(np.int64), 0, T - 1)
    env = np.stack([np.sqrt(np.bincount(idx, weights=c ** 2, minlength=T) / np.bincount(idx, minlength=T))
                    for c in comps])
    sid = scene_id_for(index)
    return Scene(
        visual=VisualClip(np.stack(frames), tuple(f"{sid}_spk{k}" for k in range(cfg.n_speakers))),
        audio=AudioClip(audio.astype(np.float32), sr, mel=mel.astype(np.float32)),
        labels=tuple(labels),
        scene_id=sid,
        split=cfg.split_of(index),
        extras={"opening": np.stack(opening_all), "voice_rms": env},
    )


def _segment_flags(rng, act: np.ndarray, prob: float) -> np.ndarray:
    """Per-frame flag: True inside silent stretches that show idle mouth motion."""
    out = np.zeros(act.shape[0], dtype=bool)
    t = 0
    while t < act.shape[0]:
        end = t
        while end < act.shape[0] and act[end] == act[t]:
            end += 1
        if act[t] == 0 and rng.random() < prob:
            out[t:end] = True
        t = end
    return out


def generate_scenes(cfg: GenConfig, workers: int = 1) -> list[Scene]:
    """All scenes of the corpus in index order, optionally built on a thread pool."""
    if workers <= 1:
        return [synthesize_scene(cfg, i) for i in range(cfg.n_scenes)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda i: synthesize_scene(cfg, i), range(cfg.n_scenes)))
