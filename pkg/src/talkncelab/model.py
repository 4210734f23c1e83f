"""Representative four-stage ASD network.

audio/visual encoders -> cross-attention fusion (audio repeated per speaker)
-> channel concatenation -> per-speaker temporal model -> sigmoid heads.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import NamedTuple

import numpy as np
import torch
from torch import Tensor, nn
import torch.nn.functional as F
from safetensors import safe_open
from safetensors.torch import save_file

from .core import Scene
from .objective import EPS, LossBreakdown, LossWeights, compose
from .talknce import NotEnoughActiveFrames, TalkNCEConfig, talknce_value_and_grad

META_KEY = "talkncelab"

TEMPORAL_KINDS = ("bilstm", "gru", "self_attention")


@dataclass(frozen=True)
class ModelConfig:
    embed_dim: int = 128
    mel_bins: int = 13
    visual_size: tuple[int, int] = (112, 112)
    temporal_kind: str = "bilstm"
    attention_heads: int = 1
    hidden_dim: int = 64
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "visual_size", tuple(int(v) for v in self.visual_size))
        if self.embed_dim <= 0 or self.hidden_dim <= 0 or self.mel_bins <= 0:
            raise ValueError("embed_dim, hidden_dim and mel_bins must be positive")
        if len(self.visual_size) != 2 or min(self.visual_size) <= 0:
            raise ValueError("visual_size must be two positive integers")
        if self.temporal_kind not in TEMPORAL_KINDS:
            raise ValueError(f"temporal_kind must be one of {TEMPORAL_KINDS}")
        if self.attention_heads < 1 or self.embed_dim % self.attention_heads:
            raise ValueError("attention_heads must divide embed_dim")

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


class ForwardOutput(NamedTuple):
    e_a: Tensor  # (T, C)
    e_v: Tensor  # (n_s, T, C)
    f_a: Tensor  # (n_s, T, C)
    f_v: Tensor  # (n_s, T, C)
    f_av: Tensor  # (n_s, T, 2C)
    p_av: Tensor  # (n_s, T)
    p_a: Tensor
    p_v: Tensor


class AudioEncoder(nn.Module):
    """(4T, C_mel) log-mel -> (T, C); the only temporal reduction is a stride-4 average pool."""

    def __init__(self, mel_bins: int, embed_dim: int, hidden: int):
        super().__init__()
        self.conv1 = nn.Conv1d(mel_bins, hidden, 5, padding=2, padding_mode="replicate")
        self.conv2 = nn.Conv1d(hidden, embed_dim, 3, padding=1, padding_mode="replicate")
        self.pool = nn.AvgPool1d(4)
        self.proj = nn.Conv1d(embed_dim, embed_dim, 1)

    def forward(self, mel: Tensor) -> Tensor:
        if mel.ndim != 2 or mel.shape[0] % 4:
            raise ValueError(f"mel must be (4T, C_mel) with frame count divisible by 4, got {tuple(mel.shape)}")
        # per-utterance mean/variance normalisation
        x = mel - mel.mean(dim=0, keepdim=True)
        x = x / (x.std(dim=0, unbiased=False, keepdim=True) + 1e-5)
        x = x.T.unsqueeze(0)
        x = F.gelu(self.conv1(x))
        x = F.gelu(self.conv2(x))
        x = self.proj(self.pool(x))
        return x[0].T


class VisualEncoder(nn.Module):
    """(n_s, T, H, W) grayscale crops -> (n_s, T, C), weights shared across speakers."""

    def __init__(self, embed_dim: int):
        super().__init__()
        self.conv1 = nn.Conv2d(1, 8, 3, stride=2, padding=1)
        self.conv2 = nn.Conv2d(8, 16, 3, stride=2, padding=1)
        self.conv3 = nn.Conv2d(16, 32, 3, stride=2, padding=1)
        self.frame_proj = nn.Linear(32, embed_dim)
        self.temporal = nn.Conv1d(embed_dim, embed_dim, 3, padding=1, padding_mode="replicate")

    def forward(self, frames: Tensor) -> Tensor:
        if frames.ndim != 4:
            raise ValueError(f"frames must be (n_s, T, H, W), got {tuple(frames.shape)}")
        n_s, T, H, W = frames.shape
        x = (frames.reshape(n_s * T, 1, H, W) - 0.5) / 0.25
        x = F.gelu(self.conv1(x))
        x = F.gelu(self.conv2(x))
        x = F.gelu(self.conv3(x))
        x = self.frame_proj(x.mean(dim=(2, 3))).reshape(n_s, T, -1)
        return self.temporal(x.transpose(1, 2)).transpose(1, 2)


class CrossAttention(nn.Module):
    """softmax(Q K^T / sqrt(d) + b[|t - t'|]) V along time, no residual or output projection.

    ``b`` is a learnable per-head bias over clipped time offsets, zero at init.
    """

    def __init__(self, dim: int, heads: int, max_offset: int = 16):
        super().__init__()
        self.heads = heads
        self.max_offset = max_offset
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(dim, dim)
        self.v = nn.Linear(dim, dim)
        self.offset_bias = nn.Parameter(torch.zeros(heads, max_offset + 1))

    def forward(self, query: Tensor, context: Tensor) -> tuple[Tensor, Tensor]:
        B, T, C = query.shape
        h, d = self.heads, C // self.heads

        def split(x):
            return x.reshape(B, -1, h, d).transpose(1, 2)

        q, k, v = split(self.q(query)), split(self.k(context)), split(self.v(context))
        t_q = torch.arange(T, device=query.device)
        t_k = torch.arange(context.shape[1], device=query.device)
        offset = (t_q[:, None] - t_k[None, :]).abs().clamp(max=self.max_offset)
        logits = q @ k.transpose(-1, -2) / math.sqrt(d) + self.offset_bias[:, offset]
        weights = torch.softmax(logits, dim=-1)
        out = (weights @ v).transpose(1, 2).reshape(B, T, C)
        return out, weights


class TemporalModel(nn.Module):
    def __init__(self, kind: str, dim: int, hidden: int, heads: int):
        super().__init__()
        self.kind = kind
        if kind == "bilstm":
            self.rnn = nn.LSTM(dim, hidden, batch_first=True, bidirectional=True)
            out_dim = 2 * hidden
        elif kind == "gru":
            self.rnn = nn.GRU(dim, hidden, batch_first=True, bidirectional=True)
            out_dim = 2 * hidden
        else:
            self.attn = nn.TransformerEncoderLayer(dim, heads, dim_feedforward=hidden, dropout=0.0,
                                                   batch_first=True)
            out_dim = dim
        self.out = nn.Linear(out_dim, 1)

    def forward(self, x: Tensor) -> Tensor:
        if self.kind == "self_attention":
            T, C = x.shape[1], x.shape[2]
            pos = torch.arange(T, dtype=x.dtype, device=x.device)[:, None]
            freq = torch.exp(-math.log(1e4) * torch.arange(0, C, 2, dtype=x.dtype) / C)
            pe = torch.zeros(T, C, dtype=x.dtype)
            pe[:, 0::2] = torch.sin(pos * freq)
            pe[:, 1::2] = torch.cos(pos * freq[: C // 2])
            h = self.attn(x + pe)
        else:
            h, _ = self.rnn(x)
        return self.out(h)[..., 0]


class ASDModel(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        C = cfg.embed_dim
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(cfg.seed)
            self.audio_encoder = AudioEncoder(cfg.mel_bins, C, cfg.hidden_dim)
            self.visual_encoder = VisualEncoder(C)
            self.attn_audio = CrossAttention(C, cfg.attention_heads)
            self.attn_visual = CrossAttention(C, cfg.attention_heads)
            self.temporal = TemporalModel(cfg.temporal_kind, 2 * C, cfg.hidden_dim, cfg.attention_heads)
            self.head_a = nn.Linear(C, 1)
            self.head_v = nn.Linear(C, 1)

    def encode_audio(self, mel: Tensor) -> Tensor:
        return self.audio_encoder(mel)

    def encode_visual(self, frames: Tensor) -> Tensor:
        return self.visual_encoder(frames)

    def fuse(self, e_a: Tensor, e_v: Tensor, return_weights: bool = False):
        if e_a.shape != e_v.shape[1:]:
            raise ValueError(f"audio {tuple(e_a.shape)} and visual {tuple(e_v.shape)} embeddings disagree")
        e_a_rep = e_a.unsqueeze(0).expand(e_v.shape[0], -1, -1)
        f_a, w_a = self.attn_audio(e_a_rep, e_v)
        f_v, w_v = self.attn_visual(e_v, e_a_rep)
        f_av = torch.cat([f_a, f_v], dim=-1)
        if return_weights:
            return f_a, f_v, f_av, (w_a, w_v)
        return f_a, f_v, f_av

    def temporal_and_heads(self, f_av: Tensor, f_a: Tensor, f_v: Tensor):
        p_av = torch.sigmoid(self.temporal(f_av))
        p_a = torch.sigmoid(self.head_a(f_a)[..., 0])
        p_v = torch.sigmoid(self.head_v(f_v)[..., 0])
        return p_av, p_a, p_v

    def forward(self, mel: Tensor, frames: Tensor) -> ForwardOutput:
        e_a = self.encode_audio(mel)
        e_v = self.encode_visual(frames)
        if e_v.shape[1] != e_a.shape[0]:
            raise ValueError(f"visual T={e_v.shape[1]} but audio gives T={e_a.shape[0]}")
        f_a, f_v, f_av = self.fuse(e_a, e_v)
        p_av, p_a, p_v = self.temporal_and_heads(f_av, f_a, f_v)
        return ForwardOutput(e_a, e_v, f_a, f_v, f_av, p_av, p_a, p_v)


class _TalkNCEFunction(torch.autograd.Function):
    """Loss value and gradient come from the numpy implementation."""

    @staticmethod
    def forward(ctx, e_v, e_a, labels, cfg):
        loss, g_v, g_a = talknce_value_and_grad(
            e_v.detach().cpu().double().numpy(), e_a.detach().cpu().double().numpy(), labels, cfg
        )
        ctx.save_for_backward(torch.from_numpy(g_v).to(e_v.dtype), torch.from_numpy(g_a).to(e_a.dtype))
        return e_v.new_tensor(loss)

    @staticmethod
    def backward(ctx, grad):
        g_v, g_a = ctx.saved_tensors
        return grad * g_v, grad * g_a, None, None


def talknce_torch(e_v: Tensor, e_a: Tensor, labels: np.ndarray, cfg: TalkNCEConfig) -> Tensor:
    return _TalkNCEFunction.apply(e_v, e_a, np.asarray(labels), cfg)


def bce_torch(p: Tensor, y: Tensor) -> Tensor:
    p = p.clamp(EPS, 1.0 - EPS)
    return -(y * torch.log(p) + (1.0 - y) * torch.log1p(-p)).mean()


def scene_tensors(scene: Scene, dtype=torch.float32):
    if scene.audio.mel is None:
        raise ValueError(f"scene {scene.scene_id} has no mel features")
    mel = torch.from_numpy(np.array(scene.audio.mel)).to(dtype)
    frames = torch.from_numpy(np.array(scene.visual.frames)).to(dtype)
    labels = torch.from_numpy(scene.label_matrix()).to(dtype)
    return mel, frames, labels


def compute_losses(model: ASDModel, mel: Tensor, frames: Tensor, labels: Tensor,
                   loss_cfg: TalkNCEConfig, weights: LossWeights):
    """Run the network and return (outputs, breakdown, differentiable total)."""
    out = model(mel, frames)
    n_s = labels.shape[0]
    l_av = torch.stack([bce_torch(out.p_av[k], labels[k]) for k in range(n_s)]).mean()
    l_a = torch.stack([bce_torch(out.p_a[k], labels[k]) for k in range(n_s)]).mean()
    l_v = torch.stack([bce_torch(out.p_v[k], labels[k]) for k in range(n_s)]).mean()

    lab_np = labels.detach().cpu().numpy().astype(np.int8)
    nce_terms, skipped = [], 0
    for k in range(n_s):
        if loss_cfg.placement == "before_fusion":
            v, a = out.e_v[k], out.e_a
        else:
            v, a = out.f_v[k], out.f_a[k]
        try:
            nce_terms.append(talknce_torch(v, a, lab_np[k], loss_cfg))
        except NotEnoughActiveFrames:
            skipped += 1
    l_nce = torch.stack(nce_terms).mean() if nce_terms else out.p_av.new_zeros(())

    total = l_av + weights.lambda_a * l_a + weights.lambda_v * l_v
    if weights.lambda_talknce:
        total = total + weights.lambda_talknce * l_nce
    breakdown = compose(float(l_av.detach()), float(l_a.detach()), float(l_v.detach()), float(l_nce.detach()), weights,
                        n_tracks_used=len(nce_terms), n_tracks_skipped=skipped)
    return out, breakdown, total


def forward(model: ASDModel, scene: Scene, loss_cfg: TalkNCEConfig | None = None,
            weights: LossWeights | None = None) -> tuple[ForwardOutput, LossBreakdown]:
    dtype = next(model.parameters()).dtype
    mel, frames, labels = scene_tensors(scene, dtype)
    out, breakdown, _ = compute_losses(model, mel, frames, labels, loss_cfg or TalkNCEConfig(),
                                       weights or LossWeights())
    return out, breakdown


def save_checkpoint(model: ASDModel, path, extra: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tensors = {k: v.detach().contiguous().clone() for k, v in model.state_dict().items()}
    # one metadata key: safetensors does not fix the order of several
    doc = {"model_config": asdict(model.cfg), "extra": extra or {}}
    save_file(tensors, str(path), metadata={META_KEY: json.dumps(doc, sort_keys=True)})
    return path


def load_checkpoint(path) -> tuple[ASDModel, dict]:
    path = Path(path)
    with safe_open(str(path), framework="pt") as fh:
        meta = fh.metadata() or {}
        if META_KEY not in meta:
            raise ValueError(f"{path}: not a talkncelab checkpoint (no {META_KEY!r} metadata)")
        state = {k: fh.get_tensor(k) for k in fh.keys()}
    doc = json.loads(meta[META_KEY])
    cfg = ModelConfig.from_dict(doc["model_config"])
    model = ASDModel(cfg)
    model.load_state_dict(state)
    model = model.to(next(iter(state.values())).dtype)
    return model, doc["extra"]
