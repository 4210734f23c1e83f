"""Central finite-difference checks for the TalkNCE gradient and the full model."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .model import ASDModel, ModelConfig, compute_losses
from .objective import LossWeights
from .talknce import TalkNCEConfig, talknce_grad, talknce_loss

REL_FLOOR = 1e-6


def rel_error(analytic, numeric, floor: float = REL_FLOOR) -> np.ndarray:
    """|a - n| / max(|a|, |n|, floor), elementwise."""
    a, n = np.asarray(analytic, dtype=np.float64), np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


@dataclass
class CheckResult:
    name: str
    max_rel_err: float
    tolerance: float
    worst: str = ""
    n_checked: int = 0
    details: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_err < self.tolerance)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        msg = f"{status} {self.name}: max rel err {self.max_rel_err:.3e} (tol {self.tolerance:.0e}, {self.n_checked} coords)"
        if not self.passed:
            msg += f"; worst at {self.worst}"
        return msg


def random_instance(seed: int, T: int = 6, C: int = 4, min_active: int = 3):
    rng = np.random.default_rng(seed)
    e_v = rng.standard_normal((T, C))
    e_a = rng.standard_normal((T, C))
    labels = (rng.random(T) < 0.6).astype(np.int8)
    labels[rng.choice(T, size=min_active, replace=False)] = 1
    return e_v, e_a, labels


def fd_talknce(e_v, e_a, labels, cfg: TalkNCEConfig, h: float = 1e-5):
    """Central-difference gradient of talknce_loss w.r.t. both inputs."""
    out = []
    for which in (0, 1):
        x = [np.array(e_v, dtype=np.float64), np.array(e_a, dtype=np.float64)]
        g = np.zeros_like(x[which])
        for idx in np.ndindex(g.shape):
            orig = x[which][idx]
            x[which][idx] = orig + h
            plus = talknce_loss(x[0], x[1], labels, cfg)[0]
            x[which][idx] = orig - h
            minus = talknce_loss(x[0], x[1], labels, cfg)[0]
            x[which][idx] = orig
            g[idx] = (plus - minus) / (2 * h)
        out.append(g)
    return out[0], out[1]


def check_talknce(seeds=range(100), cfg: TalkNCEConfig | None = None, tolerance: float = 1e-4,
                  corrupt: bool = False, T: int = 6, C: int = 4) -> CheckResult:
    cfg = cfg or TalkNCEConfig()
    worst, where, n = 0.0, "", 0
    for seed in seeds:
        e_v, e_a, labels = random_instance(seed, T, C)
        g_v, g_a = talknce_grad(e_v, e_a, labels, cfg)
        if corrupt:
            g_v = g_v.copy()
            g_v[np.argmax(labels)] *= 1.5
        n_v, n_a = fd_talknce(e_v, e_a, labels, cfg)
        for name, ga, gn in (("e_v", g_v, n_v), ("e_a", g_a, n_a)):
            err = rel_error(ga, gn)
            n += err.size
            k = np.unravel_index(int(np.argmax(err)), err.shape)
            if err[k] > worst:
                worst = float(err[k])
                where = f"seed={seed} {name}{list(map(int, k))} analytic={ga[k]:.6e} numeric={gn[k]:.6e}"
    return CheckResult(f"talknce tau={cfg.tau} {cfg.denominator}/{cfg.direction}", worst, tolerance, where, n)


def tiny_model_config(seed: int = 0) -> ModelConfig:
    return ModelConfig(embed_dim=8, mel_bins=4, visual_size=(8, 8), hidden_dim=4, seed=seed)


def tiny_inputs(seed: int = 0, T: int = 6, n_s: int = 1, mel_bins: int = 4, size: int = 8):
    rng = np.random.default_rng(seed)
    mel = torch.from_numpy(rng.standard_normal((4 * T, mel_bins)))
    frames = torch.from_numpy(rng.random((n_s, T, size, size)))
    labels = np.zeros((n_s, T))
    labels[:, : T // 2 + 1] = 1
    labels = torch.from_numpy(rng.permuted(labels, axis=1))
    return mel, frames, labels


def check_full_model(seed: int = 0, tolerance: float = 1e-3, h: float = 1e-6,
                     loss_cfg: TalkNCEConfig | None = None, weights: LossWeights | None = None,
                     corrupt: bool = False) -> CheckResult:
    """Autograd (with the analytic TalkNCE backward) vs central differences on every parameter."""
    loss_cfg = loss_cfg or TalkNCEConfig()
    weights = weights or LossWeights()
    model = ASDModel(tiny_model_config(seed)).double()
    mel, frames, labels = tiny_inputs(seed)

    def total():
        return compute_losses(model, mel, frames, labels, loss_cfg, weights)[2]

    model.zero_grad()
    total().backward()
    worst, where, n = 0.0, "", 0
    with torch.no_grad():
        for name, p in model.named_parameters():
            analytic = p.grad.detach().numpy().copy()
            if corrupt and name.startswith("audio_encoder"):
                analytic *= 1.01
            numeric = np.zeros_like(analytic)
            flat = p.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + h
                plus = total().item()
                flat[i] = orig - h
                minus = total().item()
                flat[i] = orig
                numeric.reshape(-1)[i] = (plus - minus) / (2 * h)
            err = rel_error(analytic, numeric, floor=1e-5)
            n += err.size
            k = int(np.argmax(err))
            if err.reshape(-1)[k] > worst:
                worst = float(err.reshape(-1)[k])
                where = f"{name}[{k}] analytic={analytic.reshape(-1)[k]:.6e} numeric={numeric.reshape(-1)[k]:.6e}"
    return CheckResult("full model (tiny config)", worst, tolerance, where, n)
