"""Run configuration: one JSON file drives every subcommand.

Sections: model (architecture), train (optimization), decode
(generation defaults), paths (data files and output locations).
Unknown keys are rejected, and the resolved config echoes back as valid
JSON that reproduces the run.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError
from .model import ModelConfig, Variant
from .training import TrainConfig


@dataclass
class ModelSection:
    regions: int = 8
    feature_dim: int = 16
    hidden: int = 48
    word_dim: int = 24
    sentiment_dim: int = 12
    vocab_cap: int = 9703
    min_count: int = 1
    variant: str = "full"
    dropout_rate: float = 0.5
    attention_hidden: int = 24


@dataclass
class TrainSection:
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 32
    epochs: int = 10
    lambda_att: float = 1.0
    lambda_l2: float = 1.0
    dropout_rate: float | None = None
    seed: int = 0
    selection_metric: str = "cider"
    grad_clip: float = 5.0


@dataclass
class DecodeSection:
    max_len: int = 20
    beam_width: int = 1
    length_penalty: float = 0.0
    suppress_unk: bool = False


@dataclass
class PathsSection:
    features: str | None = None
    train_captions: str | None = None
    val_captions: str | None = None
    test_captions: str | None = None
    lexicon: str | None = None
    checkpoint_dir: str | None = None
    out_dir: str | None = None


_SECTIONS = {
    "model": ModelSection,
    "train": TrainSection,
    "decode": DecodeSection,
    "paths": PathsSection,
}


def _build_section(cls, data: dict, section: str):
    allowed = {f.name for f in fields(cls)}
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {sorted(unknown)}")
    return cls(**data)


@dataclass
class RunConfig:
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    decode: DecodeSection = field(default_factory=DecodeSection)
    paths: PathsSection = field(default_factory=PathsSection)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        unknown = set(data) - set(_SECTIONS)
        if unknown:
            raise ConfigError(f"unknown top-level config key(s): {sorted(unknown)}")
        kwargs = {}
        for name, section_cls in _SECTIONS.items():
            section = data.get(name, {})
            if not isinstance(section, dict):
                raise ConfigError(f"config section [{name}] must be an object")
            kwargs[name] = _build_section(section_cls, section, name)
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        cfg = cls.from_dict(data)
        # relative paths are anchored at the config file, so configs travel
        base = Path(path).resolve().parent
        for f in fields(PathsSection):
            value = getattr(cfg.paths, f.name)
            if value is not None and not Path(value).is_absolute():
                setattr(cfg.paths, f.name, str(base / value))
        return cfg

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def model_config(self, vocab_size: int) -> ModelConfig:
        m = self.model
        return ModelConfig(
            regions=m.regions, feature_dim=m.feature_dim, hidden=m.hidden,
            word_dim=m.word_dim, sentiment_dim=m.sentiment_dim,
            vocab_size=vocab_size, variant=Variant(m.variant),
            dropout_rate=m.dropout_rate, attention_hidden=m.attention_hidden)

    def train_config(self) -> TrainConfig:
        t = self.train
        return TrainConfig(
            learning_rate=t.learning_rate, beta1=t.beta1, beta2=t.beta2,
            adam_eps=t.adam_eps, batch_size=t.batch_size, epochs=t.epochs,
            lambda_att=t.lambda_att, lambda_l2=t.lambda_l2,
            dropout_rate=t.dropout_rate, seed=t.seed,
            selection_metric=t.selection_metric, grad_clip=t.grad_clip,
            max_len=self.decode.max_len)
