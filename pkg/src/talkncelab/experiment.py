"""Train-and-score helpers shared by the CLI and the acceptance experiments."""

from __future__ import annotations

from dataclasses import dataclass, replace

from .config import RunConfig
from .core import Scene
from .metrics import MetricReport
from .model import ASDModel
from .train import TrainResult, evaluate_model, train

ABLATION_AXES = ("lambda", "placement", "sampling")


@dataclass
class RunOutcome:
    setting: str
    model: ASDModel
    result: TrainResult
    report: MetricReport | None


def ablation_settings(axis: str, base: RunConfig) -> list[tuple[str, RunConfig]]:
    """(label, config) per setting, mirroring the three ablation axes."""
    if axis == "lambda":
        return [(f"lambda={lam}", replace(base, weights=replace(base.weights, lambda_talknce=lam)))
                for lam in (0.15, 0.3, 0.6)]
    if axis == "placement":
        lam = base.weights.lambda_talknce or 0.3
        out = [("none (baseline)", replace(base, weights=replace(base.weights, lambda_talknce=0.0)))]
        for where in ("before_fusion", "after_fusion"):
            out.append((where, replace(base, talknce=replace(base.talknce, placement=where),
                                       weights=replace(base.weights, lambda_talknce=lam))))
        return out
    if axis == "sampling":
        short = {"active": "act", "all": "act+inact"}
        return [(f"{short[v]}/{short[a]}", replace(base, talknce=replace(base.talknce, sampling=(v, a))))
                for v, a in (("active", "active"), ("active", "all"), ("all", "active"), ("all", "all"))]
    raise ValueError(f"axis must be one of {ABLATION_AXES}, got {axis!r}")


def train_and_score(cfg: RunConfig, train_scenes: list[Scene], val_scenes: list[Scene],
                    test_scenes: list[Scene] | None = None, setting: str = "", log=None) -> RunOutcome:
    model = ASDModel(cfg.model)
    result = train(model, train_scenes, val_scenes, cfg.talknce, cfg.weights, cfg.optim,
                   seed=cfg.seed, log=log)
    model.load_state_dict(result.best_state)
    report = evaluate_model(model, test_scenes)[0] if test_scenes else None
    return RunOutcome(setting, model, result, report)
