"""Flat, dotted-key run configuration shared by every subcommand."""

from __future__ import annotations

import dataclasses
import json
from importlib import resources
from pathlib import Path

from .controller import RLGSConfig
from .dataset import TEST_EVERY, DatasetConfig
from .trainer import HyperParams, TrainConfig


class ConfigError(ValueError):
    pass


SEARCH_DEFAULTS = {
    "search.n_trials": 16,
    "search.range_factor": 10.0,
    "search.n_startup": 8,
    "search.gamma": 0.25,
    "search.n_candidates": 24,
}


def _section(prefix: str, cls, skip=()) -> dict:
    out = {}
    for f in dataclasses.fields(cls):
        if f.name in skip:
            continue
        default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
        out[f"{prefix}.{f.name}"] = list(default) if isinstance(default, tuple) else default
    return out


def defaults() -> dict:
    cfg = {"seed": 0, "output_dir": "runs/out"}
    cfg.update(_section("train", TrainConfig, skip=("seed",)))
    cfg.update(_section("hp", HyperParams))
    cfg.update(_section("rlgs", RLGSConfig, skip=("force_zero_action", "pin_default", "audit")))
    cfg.update(SEARCH_DEFAULTS)
    cfg.update(_section("data", DatasetConfig))
    return cfg


def default_config_path() -> Path:
    return Path(str(resources.files("rlgs2d") / "configs" / "default.json"))


def _coerce(key: str, value, template):
    if isinstance(value, str) and not isinstance(template, str):
        text = value.strip()
        if isinstance(template, bool):
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ConfigError(f"{key}: expected a boolean, got {value!r}")
        if text.lower() in ("none", "null"):
            return None
        try:
            value = json.loads(text)
        except json.JSONDecodeError as exc:
            if template is None:
                # optional string settings such as a file path
                return value
            raise ConfigError(f"{key}: cannot parse {value!r}") from exc
    if isinstance(template, bool) and not isinstance(value, bool):
        raise ConfigError(f"{key}: expected a boolean, got {value!r}")
    if isinstance(template, int) and not isinstance(template, bool) and isinstance(value, float) and value.is_integer():
        value = int(value)
    if isinstance(template, float) and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    return value


class RunConfig:
    """All effective settings of one run, keyed ``section.name``."""

    def __init__(self, values: dict | None = None):
        self.values = defaults()
        if values:
            self.update(values)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be a JSON object")
        return cls({k: v for k, v in raw.items() if not k.startswith("_")})

    def update(self, values: dict) -> "RunConfig":
        for key, value in values.items():
            if key not in self.values:
                raise ConfigError(f"unknown config key {key!r}")
            self.values[key] = _coerce(key, value, self.values[key])
        return self

    def __getitem__(self, key):
        return self.values[key]

    def _pick(self, prefix: str) -> dict:
        n = len(prefix) + 1
        return {k[n:]: v for k, v in self.values.items() if k.startswith(prefix + ".")}

    def train_config(self) -> TrainConfig:
        return TrainConfig(seed=self["seed"], **self._pick("train"))

    def hyperparams(self) -> HyperParams:
        return HyperParams(**self._pick("hp"))

    def rlgs_config(self, **overrides) -> RLGSConfig:
        return RLGSConfig(**{**self._pick("rlgs"), **overrides})

    def dataset_config(self) -> DatasetConfig:
        d = self._pick("data")
        for k in ("scale_range", "gt_scale_range", "gt_region"):
            d[k] = tuple(d[k])
        return DatasetConfig(**d)

    def validate(self) -> "RunConfig":
        try:
            train = self.train_config().validate()
            self.hyperparams().validate()
            rl = self.rlgs_config().validate()
            data = self.dataset_config()
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        if train.total_iters % rl.K:
            raise ConfigError(f"rlgs.K={rl.K} must divide train.total_iters={train.total_iters}")
        pool = data.views - len(range(0, data.views, TEST_EVERY))
        if rl.reward_set_len >= pool:
            raise ConfigError(f"rlgs.reward_set_len={rl.reward_set_len} must be below the training pool size {pool}")
        if data.views < 10:
            raise ConfigError("data.views must be at least 10")
        if self["search.n_trials"] < 1:
            raise ConfigError("search.n_trials must be at least 1")
        return self

    def to_json(self) -> str:
        return json.dumps(self.values, indent=2, sort_keys=True)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")
