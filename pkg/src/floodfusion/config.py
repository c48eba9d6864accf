"""Declarative run configuration: one JSON document with `scene`, `train`,
`metrics` and `infer` sections.  Unknown keys anywhere are rejected with
their key path (fail-fast config hygiene); CLI flags override file values.
"""
from __future__ import annotations

import dataclasses
import json

from .synthsim import SceneParams
from .trainer import TrainConfig

CONFIG_SCHEMA = 1

_METRIC_KEYS = {"min_visits", "monsoon_window"}
_INFER_KEYS = {"exclude_start", "exclude_end"}
_TRAIN_KEYS = {f.name for f in dataclasses.fields(TrainConfig)}
_SCENE_KEYS = {f.name for f in dataclasses.fields(SceneParams)}


class ConfigError(ValueError):
    def __init__(self, message: str, path: str = ""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


@dataclasses.dataclass
class RunConfig:
    scene: dict = dataclasses.field(default_factory=dict)
    train: dict = dataclasses.field(default_factory=dict)
    metrics: dict = dataclasses.field(default_factory=dict)
    infer: dict = dataclasses.field(default_factory=dict)

    def scene_params(self, **overrides) -> SceneParams:
        merged = {**self.scene, **_drop_none(overrides)}
        return SceneParams(**merged)

    def train_config(self, **overrides) -> TrainConfig:
        merged = {**self.train, **_drop_none(overrides)}
        if "leave_out_year" not in merged:
            raise ConfigError("leave_out_year is required", "train")
        return TrainConfig(**merged)


def _drop_none(d: dict) -> dict:
    return {k: v for k, v in d.items() if v is not None}


def _check_keys(section: dict, allowed, path: str):
    if not isinstance(section, dict):
        raise ConfigError("section must be an object", path)
    for key in section:
        if key not in allowed:
            raise ConfigError(f"unknown key {key!r}", f"{path}.{key}")


def load_config(path: str) -> RunConfig:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("top level must be an object")
    if doc.get("schema_version") != CONFIG_SCHEMA:
        raise ConfigError(
            f"unsupported schema_version {doc.get('schema_version')!r}",
            "schema_version")
    known = {"schema_version", "scene", "train", "metrics", "infer"}
    for key in doc:
        if key not in known:
            raise ConfigError(f"unknown key {key!r}", key)
    _check_keys(doc.get("scene", {}), _SCENE_KEYS, "scene")
    _check_keys(doc.get("train", {}), _TRAIN_KEYS, "train")
    _check_keys(doc.get("metrics", {}), _METRIC_KEYS, "metrics")
    _check_keys(doc.get("infer", {}), _INFER_KEYS, "infer")
    cfg = RunConfig(scene=doc.get("scene", {}), train=doc.get("train", {}),
                    metrics=doc.get("metrics", {}),
                    infer=doc.get("infer", {}))
    # surface bad field values now, not at first use
    try:
        SceneParams(**cfg.scene)
        if cfg.train:
            TrainConfig(**{"leave_out_year": 0, **cfg.train})
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg
