"""Flat ``key = value`` experiment configuration files."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from typing import Optional

from isomax.errors import ContractError, ParseError
from isomax.network import TrainConfig

DATASET_KEYS = (
    "dataset",
    "n_classes",
    "per_class",
    "dim",
    "radius",
    "sigma",
    "ring_min",
    "ring_max",
    "ood_count",
    "train_fraction",
    "min_separation",
    "train_path",
    "test_path",
    "out_path",
    "label_column",
    "train_images",
    "train_labels",
    "test_images",
    "test_labels",
    "out_images",
    "out_labels",
    "max_train",
    "max_test",
    "max_out",
)


@dataclass
class ExperimentConfig:
    # data
    dataset: str = "synthetic"
    n_classes: int = 4
    per_class: int = 250
    dim: int = 2
    radius: float = 4.0
    sigma: float = 0.5
    ring_min: float = 7.0
    ring_max: float = 9.0
    ood_count: int = 1000
    train_fraction: float = 0.8
    min_separation: Optional[float] = None
    train_path: Optional[str] = None
    test_path: Optional[str] = None
    out_path: Optional[str] = None
    label_column: str = "label"
    train_images: Optional[str] = None
    train_labels: Optional[str] = None
    test_images: Optional[str] = None
    test_labels: Optional[str] = None
    out_images: Optional[str] = None
    out_labels: Optional[str] = None
    max_train: Optional[int] = None
    max_test: Optional[int] = None
    max_out: Optional[int] = None
    # model
    hidden: tuple = (64, 64)
    embedding_dim: int = 16
    head: str = "isomax"
    entropic_scale: float = 10.0
    score: str = "entropic"
    inference_temperature: float = 1.0
    # training
    lr0: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    epochs: int = 200
    batch_size: int = 64
    lr_decay_factor: float = 10.0
    lr_milestones: tuple = (100, 150)
    # protocol
    seeds: tuple = (0, 1, 2, 3, 4)
    output_dir: str = "runs/experiment"

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        self.lr_milestones = tuple(int(m) for m in self.lr_milestones)
        self.seeds = tuple(int(s) for s in self.seeds)
        self.validate()

    def validate(self):
        if self.dataset not in ("synthetic", "csv", "idx"):
            raise ContractError(f"dataset must be synthetic, csv or idx, got {self.dataset!r}")
        if self.head not in ("softmax", "isomax"):
            raise ContractError(f"head must be softmax or isomax, got {self.head!r}")
        if self.score not in ("entropic", "max_prob"):
            raise ContractError(f"score must be entropic or max_prob, got {self.score!r}")
        if not self.entropic_scale > 0:
            raise ContractError("entropic_scale must be positive")
        if not self.inference_temperature > 0:
            raise ContractError("inference_temperature must be positive")
        if not self.seeds:
            raise ContractError("at least one seed is required")
        if self.dataset == "csv" and not (self.train_path and self.out_path):
            raise ContractError("csv datasets need train_path and out_path")
        if self.dataset == "idx" and not (
            self.train_images and self.train_labels and self.test_images and self.test_labels
            and self.out_images
        ):
            raise ContractError("idx datasets need train/test images+labels and out_images")
        self.train_config(0)

    def train_config(self, seed):
        return TrainConfig(
            lr0=self.lr0,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            epochs=self.epochs,
            batch_size=self.batch_size,
            lr_decay_factor=self.lr_decay_factor,
            lr_milestones=self.lr_milestones,
            seed=seed,
        )

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out

    def dataset_spec(self):
        return {k: getattr(self, k) for k in DATASET_KEYS}

    def config_hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def _int_list(text):
    text = text.strip().strip("[]")
    return tuple(int(v) for v in text.replace(",", " ").split()) if text else ()


def _optional(conv):
    def parse(text):
        return None if text.strip().lower() in ("", "none", "null") else conv(text)

    return parse


# Field annotations are strings because of postponed evaluation.
_CONVERTERS = {
    "int": int,
    "float": float,
    "str": str,
    "tuple": _int_list,
    "Optional[float]": _optional(float),
    "Optional[int]": _optional(int),
    "Optional[str]": _optional(str),
}


FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}


def parse_config(text, path="<config>", **overrides):
    """Parse ``key = value`` lines into an ExperimentConfig.

    Blank lines and ``#`` comments are ignored; unknown keys are an error.
    """
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"expected 'key = value', got {raw.strip()!r}", path, lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in FIELDS:
            raise ParseError(f"unknown key {key!r}", path, lineno)
        try:
            values[key] = _CONVERTERS[FIELDS[key].type](value)
        except ValueError as exc:
            raise ParseError(f"bad value for {key}: {exc}", path, lineno) from None
    values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return ExperimentConfig(**values)
    except ContractError as exc:
        raise ParseError(str(exc), path) from None


def load_config(path, **overrides):
    with open(path) as fh:
        return parse_config(fh.read(), str(path), **overrides)


def format_config(cfg):
    """Inverse of ``parse_config``: one ``key = value`` line per field."""
    lines = []
    for name, v in cfg.to_dict().items():
        if isinstance(v, list):
            v = ", ".join(str(x) for x in v)
        elif v is None:
            v = "none"
        lines.append(f"{name} = {v}")
    return "\n".join(lines) + "\n"


def default_config(**changes):
    """Near-separable 2-D benchmark (ring [7, 9]) with the separation guard on."""
    base = dict(min_separation=1.0, output_dir="runs/default")
    base.update(changes)
    return ExperimentConfig(**base)


def hard_config(**changes):
    """Overlapping-tails benchmark: 8-D, sigma 1, OOD shell [5, 7]."""
    base = dict(dim=8, sigma=1.0, ring_min=5.0, ring_max=7.0, output_dir="runs/hard")
    base.update(changes)
    return ExperimentConfig(**base)
