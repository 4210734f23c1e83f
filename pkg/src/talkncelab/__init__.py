"""Talk-aware contrastive loss laboratory for active speaker detection."""

from .core import (
    AudioClip,
    EmbeddingSequence,
    FrameLabels,
    Modality,
    Scene,
    VisualClip,
    active_indices,
    gather_frames,
)
from .objective import LossBreakdown, LossWeights, compose, frame_bce
from .talknce import (
    NotEnoughActiveFrames,
    TalkNCEConfig,
    similarity,
    talknce_grad,
    talknce_loss,
    talknce_oracle,
)

__version__ = "0.1.0"

__all__ = [
    "AudioClip", "EmbeddingSequence", "FrameLabels", "Modality", "Scene", "VisualClip",
    "active_indices", "gather_frames",
    "LossBreakdown", "LossWeights", "compose", "frame_bce",
    "NotEnoughActiveFrames", "TalkNCEConfig", "similarity", "talknce_grad", "talknce_loss", "talknce_oracle",
]
