"""Run configuration: one JSON document, validated before any work.

Layout (every section optional except ``data`` for ``gen``)::

    {
      "seed": 1,
      "out": "runs/demo",
      "dataset": "runs/demo/dataset.json",
      "anchor": "runs/base/checkpoint.json",
      "seeds": [1, 2, 3],
      "data": {"latent_dim": 16, "noise": 0.3, ...},
      "train": {"scenario": "oss", "variant": "rm", "epochs": 40, ...},
      "encoder": {"mode": "pooled", "hidden": 16, "lam": 9.0, "align_dim": 8},
      "margin": {"gamma": 0.2, "alpha": 0.5},
      "soft_margin": {"d_y": 1.0},
      "eval": {"split": "test", "md_mode": "mean", "checkpoint": "..."}
    }

Unknown keys are rejected at every level.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .cohort import TrainConfig
from .data import LatentSpec
from .encoders import InteractionConfig
from .losses import MarginConfig, SoftMarginConfig


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


TRAIN_KEYS = ("scenario", "variant", "raw", "branches", "epochs", "batch_size", "lr",
              "decay_epoch", "decay", "md_mode", "beta0")
ENCODER_KEYS = {"mode": str, "hidden": int, "lam": float, "align_dim": int}
EVAL_KEYS = {"split": str, "md_mode": str, "checkpoint": str}
TOP_KEYS = {"seed", "out", "dataset", "anchor", "seeds", "data", "train", "encoder",
            "margin", "soft_margin", "eval"}


@dataclass
class RunConfig:
    seed: int = 1
    out: str = "runs/default"
    dataset: str | None = None
    anchor: str | None = None
    seeds: list[int] = field(default_factory=list)
    data: LatentSpec | None = None
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: dict = field(default_factory=lambda: {"split": "test", "md_mode": "mean", "checkpoint": None})

    @property
    def dataset_path(self) -> Path:
        return Path(self.dataset) if self.dataset else Path(self.out) / "dataset.json"

    def for_seed(self, seed: int) -> "RunConfig":
        return dataclasses.replace(self, seed=seed, train=dataclasses.replace(self.train, seed=seed))


def _check_type(name: str, value, kind) -> None:
    ok = isinstance(value, kind) and not isinstance(value, bool)
    if kind is float:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    if not ok:
        raise ConfigError(name, f"expected {kind.__name__}, got {type(value).__name__}")


def _section(doc: dict, name: str, allowed) -> dict:
    sec = doc.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(name, "expected an object")
    for key in sec:
        if key not in allowed:
            raise ConfigError(f"{name}.{key}", "unknown key")
    return sec


def _dataclass_section(doc: dict, name: str, cls, required=()):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    sec = _section(doc, name, fields)
    for key in required:
        if key not in sec:
            raise ConfigError(f"{name}.{key}", "required field missing")
    for key, value in sec.items():
        default = fields[key].default
        kind = float if isinstance(default, float) else int if isinstance(default, int) else None
        if key in required and kind is None:
            kind = int
        if kind is not None:
            _check_type(f"{name}.{key}", value, kind)
    try:
        return cls(**sec)
    except (TypeError, ValueError) as e:
        raise ConfigError(name, str(e)) from None


def parse(doc: dict) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("<root>", "expected a JSON object")
    for key in doc:
        if key not in TOP_KEYS:
            raise ConfigError(key, "unknown key")
    seed = doc.get("seed", 1)
    _check_type("seed", seed, int)
    if not 0 <= seed < 2 ** 64:
        raise ConfigError("seed", "must be an unsigned 64-bit integer")
    seeds = doc.get("seeds", [])
    if not isinstance(seeds, list):
        raise ConfigError("seeds", "expected a list")
    for i, s in enumerate(seeds):
        _check_type(f"seeds[{i}]", s, int)

    data = _dataclass_section(doc, "data", LatentSpec, required=("latent_dim",)) if "data" in doc else None
    margin = _dataclass_section(doc, "margin", MarginConfig)
    soft = _dataclass_section(doc, "soft_margin", SoftMarginConfig)

    enc = _section(doc, "encoder", ENCODER_KEYS)
    for key, value in enc.items():
        _check_type(f"encoder.{key}", value, ENCODER_KEYS[key])
    try:
        interaction = InteractionConfig(enc.get("lam", 9.0), enc.get("align_dim", 8))
    except ValueError as e:
        raise ConfigError("encoder", str(e)) from None
    if enc.get("mode", "pooled") not in ("pooled", "interaction"):
        raise ConfigError("encoder.mode", "must be 'pooled' or 'interaction'")

    tr = _section(doc, "train", TRAIN_KEYS)
    defaults = TrainConfig()
    for key, value in tr.items():
        if key == "variant" and value is None:
            continue
        _check_type(f"train.{key}", value, type(getattr(defaults, key)))
    try:
        train = TrainConfig(**tr, seed=seed, mode=enc.get("mode", "pooled"),
                            hidden=enc.get("hidden", 16), interaction=interaction,
                            margin=margin, soft=soft)
    except ValueError as e:
        raise ConfigError("train", str(e)) from None
    if train.variant is not None and train.variant not in ("rs", "rm", "as", "am", "rm_soft", "am_soft"):
        raise ConfigError("train.variant", f"unknown variant {train.variant!r}")

    ev = _section(doc, "eval", EVAL_KEYS)
    for key, value in ev.items():
        _check_type(f"eval.{key}", value, EVAL_KEYS[key])
    evald = {"split": "test", "md_mode": "mean", "checkpoint": None, **ev}

    for key in ("out", "dataset", "anchor"):
        if key in doc and doc[key] is not None:
            _check_type(key, doc[key], str)
    return RunConfig(seed=seed, out=doc.get("out", "runs/default"), dataset=doc.get("dataset"),
                     anchor=doc.get("anchor"), seeds=seeds, data=data, train=train, eval=evald)


def load(path) -> RunConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ConfigError("<file>", f"invalid JSON: {e}") from None
    return parse(doc)
