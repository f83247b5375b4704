"""Run configuration: one YAML file with a block per pipeline stage.

Unknown keys are rejected at every level. Block seeds default to the global
``seed``. ``apply_overrides`` takes ``section.key=value`` strings from the
command line; values are parsed as YAML scalars.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .catch_sim import ArmState, Workspace
from .flight_sim import ObjectParams, ThrowConfig
from .nae import TrainConfig
from .naedf import NaedfConfig


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    n: int = 200
    object_id: str = "synthetic"
    split_fraction: float = 0.9
    seed: int = 0
    throw: ThrowConfig = field(default_factory=lambda: ThrowConfig(
        position_low=(-5.0, -0.1, 1.5), position_high=(-4.8, 0.1, 1.7),
        elevation_range=(35.0, 45.0), spin_rate_range=(0.0, 30.0)))
    params: ObjectParams = field(default_factory=lambda: ObjectParams(
        mass=0.1, drag_coefficient=0.8, reference_area=0.012, magnus_coefficient=0.1))


@dataclass
class EvalConfig:
    precision_m: float = 0.01
    nae_context: int = 24
    nae_mode: str = "kinematic"
    error_frames: int = 60


@dataclass
class CatchConfig:
    n_throws: int = 30
    seed: int = 7
    basket_radius: float = 0.10
    workspace: Workspace = field(default_factory=lambda: Workspace(
        center=(-1.2, 0.0, 0.4), inner_radius=0.2, outer_radius=0.85))
    arm: ArmState = field(default_factory=lambda: ArmState(position=(-1.6, 0.0, 1.0)))


def _default_naedf() -> NaedfConfig:
    return NaedfConfig(gamma=1.0, det_mode="logdet", filter_frames=3, horizon=36, epochs=20)


@dataclass
class RunConfig:
    seed: int = 0
    output_dir: str = "runs/default"
    data: DataConfig = field(default_factory=DataConfig)
    nae: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=30, k=24, prefix=24))
    naedf: NaedfConfig = field(default_factory=_default_naedf)
    evaluation: EvalConfig = field(default_factory=EvalConfig)
    catch: CatchConfig = field(default_factory=CatchConfig)

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))

    def hash(self) -> str:
        """Short digest of the resolved config, embedded in every artifact."""
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]

    def dump(self, path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))


def _plain(x):
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    return x


def _build(cls, raw: Any, where: str):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(raw).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls) if f.init}
    unknown = sorted(set(raw) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    kwargs = {}
    for name, value in raw.items():
        tp = hints[name]
        if dataclasses.is_dataclass(tp):
            # merge onto the block's default so partial blocks keep other defaults
            default = dataclasses.asdict(getattr(cls(), name)) if _has_defaults(cls) else {}
            merged = {**default, **(value or {})}
            kwargs[name] = _build(tp, merged, f"{where}.{name}")
        elif isinstance(value, list):
            kwargs[name] = tuple(value)
        elif tp is float and isinstance(value, str):
            # YAML 1.1 reads exponents without a dot (1e-3) as strings
            try:
                kwargs[name] = float(value)
            except ValueError:
                raise ConfigError(f"{where}.{name}: expected a number, got {value!r}") from None
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where}: {e}") from None


def _has_defaults(cls) -> bool:
    return all(f.default is not dataclasses.MISSING or f.default_factory is not dataclasses.MISSING
               for f in dataclasses.fields(cls) if f.init)


def config_from_dict(raw: dict | None) -> RunConfig:
    raw = dict(raw or {})
    seed = raw.get("seed", 0)
    for block in ("data", "nae", "naedf"):
        section = raw.get(block)
        if section is None:
            section = raw[block] = {}
        if isinstance(section, dict) and "seed" not in section:
            section["seed"] = seed
    return _build(RunConfig, raw, "config")


def load_config(path=None, overrides: list[str] | None = None) -> RunConfig:
    raw: dict = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"config not found: {path}")
        try:
            raw = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"{path}: {e}") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
    apply_overrides(raw, overrides or [])
    return config_from_dict(raw)


def apply_overrides(raw: dict, overrides: list[str]) -> dict:
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        node = raw
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {item!r}: {p} is not a section")
        node[parts[-1]] = yaml.safe_load(value)
    return raw
