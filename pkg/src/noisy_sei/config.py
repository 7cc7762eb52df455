"""Pipeline configuration: nested dataclasses loaded from YAML.

Two configs ship with the package: ``desk`` (CPU-sized defaults) and
``fullscale`` (the full-scale published settings).
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import yaml

from .augment import AugmentConfig
from .cvnn import EncoderConfig
from .moco import MoCoConfig
from .rescue import RescueConfig

MODES = ("full", "no_rescue", "baseline")
SELECTIONS = ("best_val", "last")


@dataclass(frozen=True)
class DataConfig:
    num_classes: int = 4
    samples_per_class: int = 200
    signal_length: int = 128
    snr_db: float = 25.0
    fading_coeff_std: float = 0.1
    seed: int = 0
    eta: float = 0.0
    noise_seed: int | None = None  # defaults to ``seed``
    split_ratios: tuple[float, float, float] = (0.6, 0.2, 0.2)
    path: str | None = None  # read a split SEIS file instead of simulating


@dataclass(frozen=True)
class KnnConfig:
    k: int = 20
    theta: float = 0.4
    n_min: int = 35


@dataclass(frozen=True)
class FinalConfig:
    epochs: int = 40
    lr: float = 1e-3
    batch_size: int = 64
    hidden_dim: int = 256
    dropout: float = 0.5
    selection: str = "best_val"
    init_from_moco: bool = False

    def __post_init__(self):
        if self.selection not in SELECTIONS:
            raise ValueError(f"selection must be one of {SELECTIONS}, got {self.selection!r}")


@dataclass(frozen=True)
class PipelineConfig:
    data: DataConfig = field(default_factory=DataConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    moco: MoCoConfig = field(default_factory=MoCoConfig)
    knn: KnnConfig = field(default_factory=KnnConfig)
    rescue: RescueConfig = field(default_factory=RescueConfig)
    final: FinalConfig = field(default_factory=FinalConfig)
    mode: str = "full"
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")

    def to_dict(self) -> dict:
        return json.loads(json.dumps(dataclasses.asdict(self)))

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def replace(self, **sections) -> "PipelineConfig":
        """Shallow section override, e.g. ``cfg.replace(mode="baseline", data={"eta": 0.4})``."""
        updates = {}
        for name, value in sections.items():
            current = getattr(self, name)
            if dataclasses.is_dataclass(current) and isinstance(value, dict):
                value = dataclasses.replace(current, **_coerce(type(current), value))
            updates[name] = value
        return dataclasses.replace(self, **updates)


def _coerce(cls, values: dict) -> dict:
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(values) - set(known)
    if unknown:
        raise KeyError(f"unknown keys for {cls.__name__}: {sorted(unknown)}")
    out = {}
    for k, v in values.items():
        if isinstance(v, list):
            v = tuple(v)
        out[k] = v
    return out


def from_dict(d: dict) -> PipelineConfig:
    sections = {f.name: f for f in dataclasses.fields(PipelineConfig)}
    unknown = set(d) - set(sections)
    if unknown:
        raise KeyError(f"unknown config sections: {sorted(unknown)}")
    kwargs = {}
    for name, value in d.items():
        default = sections[name].default_factory() if sections[name].default_factory is not dataclasses.MISSING else None
        if dataclasses.is_dataclass(default):
            kwargs[name] = type(default)(**_coerce(type(default), value or {}))
        else:
            kwargs[name] = value
    return PipelineConfig(**kwargs)


def load_config(path_or_name: str | Path) -> PipelineConfig:
    """Load a YAML config file, or a shipped config by name (``desk`` / ``fullscale``)."""
    p = Path(path_or_name)
    if p.exists():
        text = p.read_text()
    else:
        text = resources.files("noisy_sei.configs").joinpath(f"{path_or_name}.yaml").read_text()
    return from_dict(yaml.safe_load(text) or {})


def dump_config(cfg: PipelineConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)
