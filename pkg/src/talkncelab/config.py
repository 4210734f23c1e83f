"""Run configuration: defaults < YAML config file < command-line flags."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import yaml

from .data.synth import GenConfig
from .model import ModelConfig
from .objective import LossWeights
from .talknce import TalkNCEConfig
from .train import OptimConfig

SECTIONS = {
    "gen": GenConfig,
    "model": ModelConfig,
    "talknce": TalkNCEConfig,
    "weights": LossWeights,
    "optim": OptimConfig,
}


@dataclass(frozen=True)
class Paths:
    corpus: str | None = None
    checkpoint: str | None = None
    out: str | None = None


@dataclass(frozen=True)
class RunConfig:
    gen: GenConfig = field(default_factory=GenConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    talknce: TalkNCEConfig = field(default_factory=TalkNCEConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    optim: OptimConfig = field(default_factory=OptimConfig)
    seed: int = 0
    paths: Paths = field(default_factory=Paths)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"]["visual_size"] = list(d["model"]["visual_size"])
        d["talknce"]["sampling"] = list(d["talknce"]["sampling"])
        return d

    def dump(self, path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=True), encoding="utf-8")


class ConfigError(ValueError):
    pass


def _section(cls, values: dict, where: str):
    known = {f.name for f in fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown keys in [{where}]: {sorted(unknown)}")
    return values


def load_config_file(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    doc = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    allowed = set(SECTIONS) | {"seed", "paths"}
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigError(f"{path}: unknown sections {sorted(unknown)}")
    return doc


def resolve(file_doc: dict | None = None, overrides: dict | None = None) -> RunConfig:
    """Merge a parsed config file and flag overrides (``{"section": {...}}``) onto defaults.

    A top-level ``seed`` seeds both corpus generation and model init unless a
    section sets its own seed.
    """
    merged: dict = {name: {} for name in SECTIONS}
    merged["paths"] = {}
    for layer in (file_doc or {}, overrides or {}):
        for key, value in layer.items():
            if key == "seed":
                merged["seed"] = value
            elif isinstance(value, dict):
                merged.setdefault(key, {}).update({k: v for k, v in value.items() if v is not None})

    seed = int(merged.get("seed", 0))
    try:
        built = {}
        for name, cls in SECTIONS.items():
            vals = dict(_section(cls, merged[name], name))
            if name in ("gen", "model"):
                vals.setdefault("seed", seed)
            if name == "talknce" and "sampling" in vals:
                vals["sampling"] = tuple(vals["sampling"])
            built[name] = cls(**vals)
        paths = Paths(**_section(Paths, merged["paths"], "paths"))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return RunConfig(seed=seed, paths=paths, **built)


def with_corpus_shapes(cfg: RunConfig, gen_doc: dict | None) -> RunConfig:
    """Align the model's input shapes with the corpus it will read."""
    if not gen_doc:
        return cfg
    gen = GenConfig(**gen_doc)
    model = replace(cfg.model, visual_size=(gen.visual_size, gen.visual_size), mel_bins=gen.mel_bins)
    return replace(cfg, gen=gen, model=model)
