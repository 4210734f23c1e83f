"""Domain types shared across the package.

All containers are immutable after construction; arrays are copied and
flagged read-only so they can be shared between workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np


class Modality(str, Enum):
    AUDIO = "audio"
    VISUAL = "visual"
    FUSED = "fused"


def _frozen(arr, dtype=None) -> np.ndarray:
    out = np.array(arr, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class FrameLabels:
    """Per-frame binary speaking labels for one speaker track."""

    values: np.ndarray
    frame_rate_hz: float = 25.0

    def __post_init__(self):
        vals = _frozen(self.values)
        if vals.ndim != 1:
            raise ValueError(f"labels must be 1-D, got shape {vals.shape}")
        if vals.size and not np.all((vals == 0) | (vals == 1)):
            raise ValueError("labels must contain only 0 and 1")
        if not self.frame_rate_hz > 0:
            raise ValueError("frame_rate_hz must be positive")
        object.__setattr__(self, "values", _frozen(vals, np.int8))

    def __len__(self) -> int:
        return int(self.values.shape[0])

    @property
    def n_active(self) -> int:
        return int(self.values.sum())

    def __eq__(self, other):
        if not isinstance(other, FrameLabels):
            return NotImplemented
        return self.frame_rate_hz == other.frame_rate_hz and np.array_equal(
            self.values, other.values
        )


@dataclass(frozen=True)
class EmbeddingSequence:
    """A T x C embedding stream for one modality of one track."""

    data: np.ndarray
    modality: Modality = Modality.VISUAL
    track_id: str = ""

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise ValueError(f"embedding must be 2-D (T, C), got shape {data.shape}")
        if data.shape[1] <= 0:
            raise ValueError("embedding dimension C must be positive")
        if not np.all(np.isfinite(data)):
            raise ValueError(f"non-finite entries in embedding of track {self.track_id!r}")
        object.__setattr__(self, "data", _frozen(data))
        object.__setattr__(self, "modality", Modality(self.modality))

    @property
    def T(self) -> int:
        return int(self.data.shape[0])

    @property
    def C(self) -> int:
        return int(self.data.shape[1])


@dataclass(frozen=True)
class VisualClip:
    """Grayscale face crops, shape (n_s, T, H, W), values in [0, 1]."""

    frames: np.ndarray
    track_ids: tuple[str, ...]

    def __post_init__(self):
        frames = np.asarray(self.frames)
        if frames.ndim != 4:
            raise ValueError(f"visual clip must be (n_s, T, H, W), got shape {frames.shape}")
        if len(self.track_ids) != frames.shape[0]:
            raise ValueError("one track id per speaker is required")
        if frames.size and (frames.min() < 0.0 or frames.max() > 1.0):
            raise ValueError("visual frames must lie in [0, 1]")
        object.__setattr__(self, "frames", _frozen(frames, np.float32))
        object.__setattr__(self, "track_ids", tuple(str(t) for t in self.track_ids))

    @property
    def n_speakers(self) -> int:
        return int(self.frames.shape[0])

    @property
    def T(self) -> int:
        return int(self.frames.shape[1])


@dataclass(frozen=True)
class AudioClip:
    waveform: np.ndarray
    sample_rate_hz: int
    mel: np.ndarray | None = None

    def __post_init__(self):
        wav = np.asarray(self.waveform)
        if wav.ndim != 1:
            raise ValueError("waveform must be 1-D")
        if int(self.sample_rate_hz) <= 0:
            raise ValueError("sample_rate_hz must be a positive integer")
        object.__setattr__(self, "waveform", _frozen(wav, np.float32))
        object.__setattr__(self, "sample_rate_hz", int(self.sample_rate_hz))
        if self.mel is not None:
            mel = np.asarray(self.mel)
            if mel.ndim != 2:
                raise ValueError("mel must be 2-D (4T, C_mel)")
            object.__setattr__(self, "mel", _frozen(mel, np.float32))


@dataclass(frozen=True)
class Scene:
    """One audio stream plus n_s face tracks over T video frames."""

    visual: VisualClip
    audio: AudioClip
    labels: tuple[FrameLabels, ...]
    scene_id: str
    split: str = "train"
    extras: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(self.labels))
        if len(self.labels) != self.visual.n_speakers:
            raise ValueError(
                f"scene {self.scene_id}: {len(self.labels)} label tracks for "
                f"{self.visual.n_speakers} speakers"
            )
        for k, lab in enumerate(self.labels):
            if len(lab) != self.visual.T:
                raise ValueError(
                    f"scene {self.scene_id}: track {k} has {len(lab)} labels, expected T={self.visual.T}"
                )
        if self.audio.mel is not None and self.audio.mel.shape[0] != 4 * self.visual.T:
            raise ValueError(
                f"scene {self.scene_id}: mel has {self.audio.mel.shape[0]} frames, "
                f"expected 4*T={4 * self.visual.T}"
            )

    @property
    def T(self) -> int:
        return self.visual.T

    @property
    def n_speakers(self) -> int:
        return self.visual.n_speakers

    def label_matrix(self) -> np.ndarray:
        return np.stack([lab.values for lab in self.labels]).astype(np.float32)

    def __eq__(self, other):
        if not isinstance(other, Scene):
            return NotImplemented
        mel_eq = (self.audio.mel is None and other.audio.mel is None) or (
            self.audio.mel is not None
            and other.audio.mel is not None
            and np.array_equal(self.audio.mel, other.audio.mel)
        )
        return (
            self.scene_id == other.scene_id
            and self.split == other.split
            and self.visual.track_ids == other.visual.track_ids
            and np.array_equal(self.visual.frames, other.visual.frames)
            and self.audio.sample_rate_hz == other.audio.sample_rate_hz
            and np.array_equal(self.audio.waveform, other.audio.waveform)
            and mel_eq
            and self.labels == other.labels
        )


def active_indices(labels: FrameLabels | Sequence[int] | np.ndarray) -> np.ndarray:
    """Ascending frame indices whose label is 1."""
    values = labels.values if isinstance(labels, FrameLabels) else np.asarray(labels)
    return np.flatnonzero(values == 1)


def gather_frames(e: EmbeddingSequence, idx) -> EmbeddingSequence:
    idx = np.asarray(idx, dtype=np.int64).reshape(-1)
    if idx.size and (idx.min() < 0 or idx.max() >= e.T):
        bad = idx[(idx < 0) | (idx >= e.T)][0]
        raise IndexError(f"frame index {bad} out of range for T={e.T} (track {e.track_id!r})")
    return EmbeddingSequence(e.data[idx], modality=e.modality, track_id=e.track_id)
