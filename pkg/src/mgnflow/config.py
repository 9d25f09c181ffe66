"""Run configuration: one JSON or YAML document drives every pipeline stage.

Top-level sections: ``seed``, ``out``, ``data``, ``mesh``, ``geo``, ``fluid``,
``schedule``, ``features``, ``variable``, ``model``, ``train``, ``eval``.
Unknown keys anywhere are rejected.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Any

import yaml

from .dataset import GeoConfig, MeshConfig, ScenarioConfig
from .errors import InvalidConfig
from .graph import VARIABLES, canonical_features
from .simulator import FluidProps, Schedule
from .training import LR_PRESETS, TrainConfig


@dataclass(frozen=True)
class DataConfig:
    n_train: int = 10
    n_test: int = 2

    def __post_init__(self):
        if self.n_train < 0 or self.n_test < 0:
            raise InvalidConfig("sample counts must be >= 0")


@dataclass(frozen=True)
class ModelSection:
    latent: int = 100
    layers: int = 10
    cheb_order: int = 8
    variant: str = "mgn_lstm"


@dataclass(frozen=True)
class EvalConfig:
    horizons: tuple[int, ...] = (11, 19)
    p_init: float = 10e6
    export: bool = True


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    out: str = "run"
    data: DataConfig = field(default_factory=DataConfig)
    mesh: MeshConfig = field(default_factory=MeshConfig)
    geo: GeoConfig = field(default_factory=GeoConfig)
    fluid: FluidProps = field(default_factory=FluidProps)
    schedule: Schedule = field(default_factory=Schedule)
    features: str = "baseline"
    variable: str = "s_g"
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self):
        object.__setattr__(self, "features", canonical_features(self.features))
        if self.variable not in VARIABLES:
            raise InvalidConfig(f"variable must be one of {VARIABLES}")

    @property
    def scenario(self) -> ScenarioConfig:
        return ScenarioConfig(self.mesh, self.geo, self.fluid, self.schedule)

    def data_identity(self) -> dict:
        """Settings that define a dataset; their hash ties checkpoints to data."""
        return to_dict(self.scenario) | {"features": self.features}

    def to_dict(self) -> dict:
        return to_dict(self)


def _tupleize(v):
    if isinstance(v, list):
        return tuple(_tupleize(x) for x in v)
    return v


def _build(cls, data: Any, where: str):
    if not isinstance(data, dict):
        raise InvalidConfig(f"{where or 'config'}: expected a mapping, got {type(data).__name__}")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise InvalidConfig(f"{where or 'config'}: unknown key(s) {', '.join(unknown)}")
    defaults = cls()
    kwargs = {}
    for name, value in data.items():
        current = getattr(defaults, name)
        path = f"{where}.{name}" if where else name
        if is_dataclass(current):
            kwargs[name] = _build(type(current), value or {}, path)
        else:
            kwargs[name] = _tupleize(value)
    try:
        return cls(**kwargs)
    except InvalidConfig:
        raise
    except (TypeError, ValueError) as exc:
        raise InvalidConfig(f"{where or 'config'}: {exc}") from None


def to_dict(obj) -> Any:
    if is_dataclass(obj):
        return {f.name: to_dict(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, (tuple, list)):
        return [to_dict(x) for x in obj]
    return obj


def _expand_presets(doc: dict) -> dict:
    train = doc.get("train")
    if isinstance(train, dict) and "lr_preset" in train:
        train = dict(train)
        name = train.pop("lr_preset")
        if name not in LR_PRESETS:
            raise InvalidConfig(f"train.lr_preset must be one of {sorted(LR_PRESETS)}")
        train.setdefault("lr", LR_PRESETS[name][0])
        train.setdefault("lr_floor", LR_PRESETS[name][1])
        doc = dict(doc, train=train)
    return doc


def from_dict(doc: dict | None) -> RunConfig:
    return _build(RunConfig, _expand_presets(doc or {}), "")


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Read a JSON/YAML document (``None`` means all defaults) and apply dotted overrides."""
    doc: dict = {}
    if path is not None:
        text = Path(path).read_text()
        try:
            doc = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
        except (json.JSONDecodeError, yaml.YAMLError) as exc:
            raise InvalidConfig(f"{path}: cannot parse: {exc}") from None
        doc = doc or {}
    for key, value in (overrides or {}).items():
        node = doc
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise InvalidConfig(f"override {key}: {p} is not a section")
        node[parts[-1]] = value
    return from_dict(doc)


def replace_in(cfg: RunConfig, **changes) -> RunConfig:
    return dataclasses.replace(cfg, **changes)
