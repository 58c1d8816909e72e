"""Run configuration: one JSON file drives every CLI command."""

from __future__ import annotations

import copy
import json
import os
from dataclasses import dataclass, field, fields
from typing import Any

from .model import ModelConfig
from .synth import SyntheticSpec
from .train import TrainConfig


class ConfigError(ValueError):
    pass


_TOP_LEVEL = {"seed", "head", "n_classes", "paths", "synthetic", "model", "train", "export", "data"}
_SYNTH_REQUIRED = ("n_classes", "images_per_class", "n_subjects")
_TRAIN_FIELDS = {"lr", "batch_size", "max_iterations", "convergence_eps", "iteration_unit", "max_seconds",
                 "conv_dtype"}
_EXPORT_DEFAULTS = {"sample_per_class": 100, "split": "test", "grid_size": 64, "n_topomap_classes": 10,
                    "idw_power": 2.0}
_DATA_DEFAULTS = {"n_channels": 128, "n_samples": 440, "win_len": 220, "overlap": 0.9,
                  "fractions": [0.8, 0.1, 0.1]}


@dataclass
class RunConfig:
    raw: dict
    seed: int
    head: str
    paths: dict = field(default_factory=dict)

    # -- sections ---------------------------------------------------------
    @property
    def n_classes(self) -> int:
        if "n_classes" in self.raw:
            return int(self.raw["n_classes"])
        if "synthetic" in self.raw and "n_classes" in self.raw["synthetic"]:
            return int(self.raw["synthetic"]["n_classes"])
        raise ConfigError("missing config field: n_classes (or synthetic.n_classes)")

    def synthetic(self) -> SyntheticSpec:
        sec = self.raw.get("synthetic")
        if sec is None:
            raise ConfigError("missing config field: synthetic")
        for name in _SYNTH_REQUIRED:
            if name not in sec:
                raise ConfigError(f"missing config field: synthetic.{name}")
        known = {f.name for f in fields(SyntheticSpec)} - {"seed"}
        bad = set(sec) - known
        if bad:
            raise ConfigError(f"unknown config field(s): {', '.join('synthetic.' + b for b in sorted(bad))}")
        kw = dict(sec)
        if "band" in kw:
            kw["band"] = tuple(kw["band"])
        try:
            return SyntheticSpec(seed=self.seed, **kw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid synthetic section: {exc}") from exc

    def data(self) -> dict:
        sec = dict(_DATA_DEFAULTS)
        sec.update(self.raw.get("data", {}))
        bad = set(sec) - set(_DATA_DEFAULTS)
        if bad:
            raise ConfigError(f"unknown config field(s): {', '.join('data.' + b for b in sorted(bad))}")
        return sec

    def model(self) -> ModelConfig:
        sec = dict(self.raw.get("model", {}))
        for key in ("head", "n_classes"):
            if key in sec:
                raise ConfigError(f"model.{key} is set at the top level, not in the model section")
        d = self.data()
        sec.setdefault("n_channels", d["n_channels"])
        sec.setdefault("win_len", d["win_len"])
        try:
            return ModelConfig.from_dict({**sec, "head": self.head, "n_classes": self.n_classes})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid model section: {exc}") from exc

    def train(self) -> TrainConfig:
        sec = dict(self.raw.get("train", {}))
        bad = set(sec) - _TRAIN_FIELDS
        if bad:
            raise ConfigError(f"unknown config field(s): {', '.join('train.' + b for b in sorted(bad))}")
        if sec.get("convergence_eps") == "inf":
            sec["convergence_eps"] = float("inf")
        try:
            return TrainConfig(head=self.head, seed=self.seed, n_classes=self.n_classes, **sec)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid train section: {exc}") from exc

    def export(self) -> dict:
        sec = dict(_EXPORT_DEFAULTS)
        sec.update(self.raw.get("export", {}))
        bad = set(sec) - set(_EXPORT_DEFAULTS)
        if bad:
            raise ConfigError(f"unknown config field(s): {', '.join('export.' + b for b in sorted(bad))}")
        return sec

    def path(self, name: str, override: str | None = None) -> str:
        if override:
            return override
        if name not in self.paths:
            raise ConfigError(f"missing config field: paths.{name}")
        return self.paths[name]

    def echo(self) -> dict:
        """Resolved configuration written into every output artifact."""
        out = copy.deepcopy(self.raw)
        out["seed"] = self.seed
        out["head"] = self.head
        return out


def parse_config(raw: Any, seed: int | None = None, head: str | None = None, base_dir: str = ".") -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    bad = set(raw) - _TOP_LEVEL
    if bad:
        raise ConfigError(f"unknown config field(s): {', '.join(sorted(bad))}")
    if seed is None:
        if "seed" not in raw:
            raise ConfigError("missing config field: seed")
        seed = raw["seed"]
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError("seed must be a non-negative integer")
    head = head or raw.get("head", "bilstm")
    if head not in ("bilstm", "transformer"):
        raise ConfigError(f"head must be 'bilstm' or 'transformer', got {head!r}")
    paths = {k: (v if os.path.isabs(v) else os.path.join(base_dir, v)) for k, v in raw.get("paths", {}).items()}
    return RunConfig(raw=raw, seed=seed, head=head, paths=paths)


def load_config(path: str, seed: int | None = None, head: str | None = None) -> RunConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return parse_config(raw, seed, head, base_dir=os.path.dirname(os.path.abspath(path)))
