"""Run configuration: one JSON document, validated before any compute."""

from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from .layers import ModelSpec, SpecError
from .transforms import TransformConfigError, parse_transform_set


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key path."""


@dataclass
class SyntheticConfig:
    classes: int = 4
    size: int = 16
    train_per_class: int = 250
    test_per_class: int = 100
    noise: float = 0.3
    density: float = 0.3
    block: int = 1
    max_shift: int = 0
    prototype_seed: int = 0


@dataclass
class DatasetConfig:
    kind: str = "synthetic"  # synthetic | idx
    name: str = ""
    train_images: Optional[str] = None
    train_labels: Optional[str] = None
    test_images: Optional[str] = None
    test_labels: Optional[str] = None
    train_subsample: Optional[int] = None
    test_subsample: Optional[int] = None
    subsample_seed: int = 0
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)


@dataclass
class GarBlock:
    k_s: int = 20
    c_alpha: float = 0.1
    c_beta: float = 1.0
    c_F: float = 1e-6
    eps: float = 1e-8


@dataclass
class TrainBlock:
    batch_size: int = 400
    epochs: int = 100
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    relabel_every_epoch: bool = True
    checkpoint_every: int = 0


@dataclass
class EvalBlock:
    k: int = 10
    restarts: int = 10
    tap: str = "latent"
    split: str = "test"


@dataclass
class DiagnoseBlock:
    sample_m: int = 500
    tau_percentile: float = 90.0


@dataclass
class AblateBlock:
    sets: list = field(default_factory=list)
    repeats: int = 1


@dataclass
class RunConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: str = "2*(32x3x3)-MP2x2-Drop(0.2)-2*(64x3x3)-MP2x2-Drop(0.3)-FC 2048-Drop(0.5)-FC 8*20"
    transforms: list = field(
        default_factory=lambda: ["identity", "rot90", "rot180", "rot270", "fliph", "fliph_rot90", "fliph_rot180", "fliph_rot270"]
    )
    transform_params: dict = field(default_factory=dict)
    gar: GarBlock = field(default_factory=GarBlock)
    train: TrainBlock = field(default_factory=TrainBlock)
    eval: EvalBlock = field(default_factory=EvalBlock)
    diagnose: DiagnoseBlock = field(default_factory=DiagnoseBlock)
    ablate: AblateBlock = field(default_factory=AblateBlock)
    output_dir: str = "runs/default"
    seed: int = 0

    # ------------------------------------------------------------ derived

    @property
    def n_p(self) -> int:
        return len(self.transforms)

    def model_spec(self) -> ModelSpec:
        return ModelSpec.parse(self.model)

    def validate(self) -> None:
        try:
            spec = self.model_spec()
        except SpecError as exc:
            raise ConfigError(f"model: {exc}") from exc
        try:
            parse_transform_set(list(self.transforms), self.transform_params)
        except TransformConfigError as exc:
            raise ConfigError(f"transforms: {exc}") from exc
        if spec.n_p != self.n_p or spec.k_s != self.gar.k_s:
            raise ConfigError(
                f"model: final layer 'FC {spec.n_p}*{spec.k_s}' must equal n_p*k_s = {self.n_p}*{self.gar.k_s} "
                "(n_p is the number of transforms, k_s is gar.k_s)"
            )
        if self.dataset.kind not in ("synthetic", "idx"):
            raise ConfigError(f"dataset.kind: expected 'synthetic' or 'idx', got {self.dataset.kind!r}")
        if self.dataset.kind == "idx" and not self.dataset.train_images:
            raise ConfigError("dataset.train_images: required for idx datasets")
        if self.train.epochs < 1:
            raise ConfigError("train.epochs: must be >= 1")
        if self.train.batch_size < self.n_p:
            raise ConfigError(f"train.batch_size: must be >= n_p ({self.n_p})")
        if self.eval.k < 1:
            raise ConfigError("eval.k: must be >= 1")
        if self.eval.tap not in ("latent", "presoftmax", "softmax"):
            raise ConfigError(f"eval.tap: unknown tap {self.eval.tap!r}")
        if self.eval.split not in ("train", "test"):
            raise ConfigError("eval.split: expected 'train' or 'test'")
        if min(self.gar.c_alpha, self.gar.c_beta, self.gar.c_F) < 0 or self.gar.eps <= 0:
            raise ConfigError("gar: weights must be >= 0 and eps > 0")
        if not 0 <= self.diagnose.tau_percentile <= 100:
            raise ConfigError("diagnose.tau_percentile: must lie in [0, 100]")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


# ---------------------------------------------------------------- loading

def _build(cls, data: Any, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or '<root>'}: expected an object")
    hints = typing.get_type_hints(cls)
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        where = f"{path}." if path else ""
        raise ConfigError(f"unknown key(s): {', '.join(where + k for k in unknown)}")
    kwargs = {}
    for name, value in data.items():
        hint = hints[name]
        key = f"{path}.{name}" if path else name
        if dataclasses.is_dataclass(hint):
            kwargs[name] = _build(hint, value, key)
        else:
            kwargs[name] = _coerce(hint, value, key)
    return cls(**kwargs)


def _coerce(hint, value, key):
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin is typing.Union and type(None) in args:
        if value is None:
            return None
        hint = next(a for a in args if a is not type(None))
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected true/false, got {value!r}")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(f"{key}: expected a string, got {value!r}")
        return value
    if hint is list and not isinstance(value, list):
        raise ConfigError(f"{key}: expected a list, got {value!r}")
    if hint is dict and not isinstance(value, dict):
        raise ConfigError(f"{key}: expected an object, got {value!r}")
    return value


def config_from_dict(data: dict) -> RunConfig:
    cfg = _build(RunConfig, data, "")
    cfg.validate()
    return cfg


def apply_overrides(data: dict, overrides: list[str]) -> dict:
    """Apply ``key.path=value`` overrides; values parse as JSON, else as strings."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = data
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"--set {key}: {p} is not an object")
        node[parts[-1]] = value
    return data


def load_config(path, overrides: Optional[list[str]] = None) -> RunConfig:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return config_from_dict(apply_overrides(data, overrides or []))
