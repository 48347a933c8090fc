"""Run configuration: one YAML file, five sections, unknown keys rejected.

Sections are model / train / data / loss / eval; every field has a
default, so an empty file is a valid desk-scale run. Fail-fast on keys
that match nothing — a typo in "weight_decay" must not silently train
with the default.
"""

from dataclasses import dataclass, field, fields, replace

import yaml

from .errors import ConfigError
from .losses import LossConfig, validate_loss_config
from .model import ModelConfig
from .train import TrainConfig

SECTIONS = ("model", "train", "data", "loss", "eval")


@dataclass(frozen=True)
class DataConfig:
    dir: str | None = None  # dataset directory; None -> generate on the fly
    synth_n: int = 10
    size: int = 64
    seed: int = 0


@dataclass(frozen=True)
class EvalConfig:
    threshold: float = 0.5
    grid: int = 99  # threshold-sweep resolution for ODS/OIS


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)


def _build_section(cls, name: str, raw, skip=()):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"section {name!r} must be a mapping, "
                          f"got {type(raw).__name__}")
    allowed = {f.name for f in fields(cls)} - set(skip)
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"section {name!r}: unknown keys "
                          f"{sorted(unknown)}")
    coerced = {k: tuple(v) if isinstance(v, list) else v
               for k, v in raw.items()}
    try:
        return cls(**coerced)
    except TypeError as exc:
        raise ConfigError(f"section {name!r}: {exc}") from None


def run_config_from_dict(raw: dict) -> RunConfig:
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"config root must be a mapping, "
                          f"got {type(raw).__name__}")
    unknown = set(raw) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config sections {sorted(unknown)}; "
                          f"expected {list(SECTIONS)}")
    model = _build_section(ModelConfig, "model", raw.get("model"))
    loss = _build_section(LossConfig, "loss", raw.get("loss"))
    validate_loss_config(loss)
    # loss lives in its own section, so it is not settable inside train
    train = _build_section(TrainConfig, "train", raw.get("train"),
                           skip=("loss",))
    train = replace(train, loss=loss)
    data = _build_section(DataConfig, "data", raw.get("data"))
    evl = _build_section(EvalConfig, "eval", raw.get("eval"))
    if not 0.0 <= evl.threshold <= 1.0:
        raise ConfigError(f"eval.threshold must be in [0,1], "
                          f"got {evl.threshold}")
    if evl.grid < 1:
        raise ConfigError(f"eval.grid must be >= 1, got {evl.grid}")
    return RunConfig(model=model, train=train, data=data, eval=evl)


def load_run_config(path: str) -> RunConfig:
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: malformed YAML: {exc}") from None
    return run_config_from_dict(raw)
