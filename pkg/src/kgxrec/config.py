"""Experiment configuration: ``key=value`` files plus command-line overrides."""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Iterable

from kgxrec.model import ModelConfig


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    lr: float = 1e-3
    adam_eps: float = 1e-8
    beta1: float = 0.9
    beta2: float = 0.999
    clip_norm: float = 1.0
    batch_size: int = 16
    epochs: int = 20
    seed: int = 0
    train_ratio: float = 0.6
    valid_ratio: float = 0.2
    test_ratio: float = 0.2
    top_k: int = 10
    eval_fraction: float = 1.0
    beam: int = 5

    def __post_init__(self):
        if abs(self.train_ratio + self.valid_ratio + self.test_ratio - 1.0) > 1e-9:
            raise ConfigError("split ratios must sum to 1")
        if self.clip_norm <= 0:
            raise ConfigError("clip_norm must be > 0")
        if self.batch_size < 1 or self.top_k < 1 or self.epochs < 0:
            raise ConfigError("batch_size and top_k must be >= 1, epochs >= 0")
        if not 0.0 < self.eval_fraction <= 1.0:
            raise ConfigError("eval_fraction must be in (0, 1]")

    @property
    def ratios(self) -> tuple[float, float, float]:
        return self.train_ratio, self.valid_ratio, self.test_ratio


@dataclass
class ExperimentConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    dataset: str = ""
    out: str = "runs/default"

    def to_lines(self) -> list[str]:
        lines = [f"dataset={self.dataset}", f"out={self.out}"]
        lines += [f"{f.name}={getattr(self.model, f.name)}" for f in fields(self.model)
                  if f.name != "vocab_size"]
        lines += [f"{f.name}={getattr(self.train, f.name)}" for f in fields(self.train)]
        return lines


_MODEL_KEYS = {f.name for f in fields(ModelConfig)} - {"vocab_size"}
_TRAIN_KEYS = {f.name for f in fields(TrainConfig)}
_TOP_KEYS = {"dataset", "out"}


def _coerce(value: str, like):
    if isinstance(like, bool):
        low = value.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    if isinstance(like, int):
        return int(value)
    if isinstance(like, float):
        return float(value)
    return value


def parse_pairs(lines: Iterable[str], source: str = "<config>") -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def apply(cfg: ExperimentConfig, pairs: dict[str, str]) -> ExperimentConfig:
    unknown = sorted(set(pairs) - _MODEL_KEYS - _TRAIN_KEYS - _TOP_KEYS)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    model_kw, train_kw, top_kw = {}, {}, {}
    try:
        for key, value in pairs.items():
            if key in _MODEL_KEYS:
                model_kw[key] = _coerce(value, getattr(cfg.model, key))
            elif key in _TRAIN_KEYS:
                train_kw[key] = _coerce(value, getattr(cfg.train, key))
            else:
                top_kw[key] = value
        return replace(cfg, model=replace(cfg.model, **model_kw),
                       train=replace(cfg.train, **train_kw), **top_kw)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path: str | Path | None = None, overrides: Iterable[str] = ()) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if path is not None:
        text = Path(path).read_text(encoding="utf-8")
        cfg = apply(cfg, parse_pairs(text.splitlines(), str(path)))
    return apply(cfg, parse_pairs(overrides, "<overrides>"))
