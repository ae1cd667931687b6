"""Run configuration: every hyperparameter, dataset knob and ablation toggle.

Files use a flat ``key = value`` format, one key per line, ``#`` comments.
Unknown keys are rejected by name.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError

METHODS = ("adaembed", "supervised")
DATASETS = ("blobs", "moons", "csv")
WARMUP_DATA = ("source+target", "source")
STRATEGIES = ("knn", "confidence")


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.replace(";", ",").split(",") if v.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.replace(";", ",").split(",") if v.strip())


@dataclass
class RunConfig:
    # method and objective weights
    method: str = "adaembed"
    lambda_entropy: float = 0.2
    lambda_t: float = 2.0
    lambda_c: float = 0.1
    classifier_temperature: float = 0.05
    contrastive_temperature: float = 0.05
    ema_momentum: float = 0.95
    k: int = 10
    conf_threshold: float = 0.9
    queue_size: int = 1000
    pseudo_labeling: bool = True
    pseudo_label_strategy: str = "knn"
    store_labeled_target: bool = False
    paper_literal_infonce: bool = False
    mean_over_selected: bool = False
    # optimization
    base_lr: float = 0.05
    encoder_lr_mult: float = 0.1
    momentum_mu: float = 0.9
    weight_decay: float = 1e-4
    epochs: int = 50
    warmup_epochs: int = 5
    warmup_data: str = "source+target"
    batch_source: int = 8
    batch_target: int = 8
    batch_unlabeled: int = 16
    # model
    hidden: tuple[int, ...] = (64, 64)
    feature_dim: int = 16
    # data
    dataset: str = "blobs"
    data_csv: str = ""
    n_classes: int = 3
    input_dim: int = 4
    n_per_domain: int = 300
    radius: float = 3.0
    rotation_degrees: float = 30.0
    scale: tuple[float, ...] = (1.0,)
    translation: tuple[float, ...] = (0.0,)
    noise_sigma: float = 0.0
    class_prior: tuple[float, ...] = ()
    shots: int = 0
    # augmentation
    jitter_sigma: float = 0.1
    scale_low: float = 0.9
    scale_high: float = 1.1
    dropout_prob: float = 0.1
    # harness
    seed: int = 0
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    shots_list: tuple[int, ...] = (0, 1, 3, 5)
    export_features: bool = False
    diagnostics: bool = True

    def __post_init__(self):
        self.validate()

    @property
    def uda(self) -> bool:
        return self.shots == 0

    @property
    def batch_sizes(self) -> tuple[int, int, int]:
        return (self.batch_source, 0 if self.uda else self.batch_target, self.batch_unlabeled)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def validate(self) -> None:
        def need(cond: bool, key: str, msg: str) -> None:
            if not cond:
                raise ConfigError(f"{key}: {msg}")

        need(self.method in METHODS, "method", f"must be one of {METHODS}")
        need(self.dataset in DATASETS, "dataset", f"must be one of {DATASETS}")
        need(self.warmup_data in WARMUP_DATA, "warmup_data", f"must be one of {WARMUP_DATA}")
        need(self.pseudo_label_strategy in STRATEGIES, "pseudo_label_strategy", f"must be one of {STRATEGIES}")
        for key in ("lambda_entropy", "lambda_t", "lambda_c", "weight_decay", "noise_sigma", "jitter_sigma"):
            v = getattr(self, key)
            need(math.isfinite(v) and v >= 0, key, "must be a finite nonnegative number")
        for key in ("classifier_temperature", "contrastive_temperature", "base_lr", "encoder_lr_mult", "radius"):
            v = getattr(self, key)
            need(math.isfinite(v) and v > 0, key, "must be positive")
        need(0 <= self.ema_momentum <= 1, "ema_momentum", "must lie in [0, 1]")
        need(0 <= self.momentum_mu < 1, "momentum_mu", "must lie in [0, 1)")
        need(0 <= self.conf_threshold <= 1, "conf_threshold", "must lie in [0, 1]")
        need(0 <= self.dropout_prob < 1, "dropout_prob", "must lie in [0, 1)")
        need(0 <= self.scale_low <= self.scale_high, "scale_low", "need 0 <= scale_low <= scale_high")
        for key in ("k", "queue_size", "batch_source", "batch_unlabeled", "feature_dim", "input_dim", "epochs"):
            need(getattr(self, key) >= 1, key, "must be a positive integer")
        for key in ("batch_target", "warmup_epochs", "shots"):
            need(getattr(self, key) >= 0, key, "must be a nonnegative integer")
        need(self.shots == 0 or self.batch_target >= 1, "batch_target", "must be positive when shots > 0")
        need(self.n_classes >= 2, "n_classes", "must be at least 2")
        need(all(h >= 1 for h in self.hidden), "hidden", "widths must be positive")
        need(all(s > 0 for s in self.scale), "scale", "factors must be positive")
        need(len(self.scale) in (1, self.input_dim), "scale", "needs 1 or input_dim values")
        need(len(self.translation) in (1, self.input_dim), "translation", "needs 1 or input_dim values")
        if self.class_prior:
            need(len(self.class_prior) == self.n_classes, "class_prior", f"needs {self.n_classes} values")
            need(all(p >= 0 for p in self.class_prior) and abs(sum(self.class_prior) - 1) < 1e-9, "class_prior", "must be nonnegative and sum to 1")
        need(len(self.seeds) >= 1, "seeds", "must list at least one seed")
        need(len(self.shots_list) >= 1, "shots_list", "must list at least one value")
        need(self.dataset != "csv" or bool(self.data_csv), "data_csv", "required when dataset = csv")
        need(self.dataset != "moons" or self.n_classes == 2, "n_classes", "two-moons is binary")

    # ------------------------------------------------------------------
    # serialization
    # ------------------------------------------------------------------

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out

    def to_text(self) -> str:
        lines = ["# resolved run configuration"]
        for f in fields(self):
            lines.append(f"{f.name} = {_format(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_dict(cls, values: dict) -> "RunConfig":
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            kwargs[key] = _coerce(key, known[key], raw)
        return cls(**kwargs)

    @classmethod
    def from_text(cls, text: str, source: str = "<config>") -> "RunConfig":
        return cls.from_dict(parse_text(text, source))

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        path = Path(path)
        return cls.from_text(path.read_text(), source=str(path))


def parse_text(text: str, source: str = "<config>") -> dict[str, str]:
    """Raw ``key -> value`` strings from the flat config format."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        values[key] = value
    return values


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


_BOOLS = {"true": True, "yes": True, "1": True, "on": True, "false": False, "no": False, "0": False, "off": False}


def _coerce(key: str, f: dataclasses.Field, raw):
    if not isinstance(raw, str):
        if isinstance(raw, list):
            return tuple(raw)
        return raw
    kind = f.type
    try:
        if kind == "bool":
            if raw.lower() not in _BOOLS:
                raise ValueError(raw)
            return _BOOLS[raw.lower()]
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "tuple[int, ...]":
            return _ints(raw)
        if kind == "tuple[float, ...]":
            return _floats(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind}") from None
