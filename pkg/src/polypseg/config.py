"""Experiment configuration.

The file is YAML holding flat dotted keys, e.g.::

    dataset.root: data/CVC-ClinicDB
    model.encoder: densenet169
    train.epochs: 50
    augment: [{op: vflip, p: 0.5}, {op: hflip, p: 0.5}]

Nested mappings are accepted and flattened on load. ``config_hash`` is the
SHA-256 of the canonical (sorted-key, compact) JSON form of the flat mapping.
"""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import yaml

from .augment import AugmentationPolicy
from .errors import ConfigError
from .models.encoders import encoder_names
from .models.unet import BASELINES, DEFAULT_DECODER_CHANNELS
from .preprocess import IMAGENET_MEAN, IMAGENET_STD, NormalizationSpec, PreprocessConfig
from .training import TrainConfig

DEFAULTS: dict[str, Any] = {
    "dataset.root": None,
    "dataset.pattern": "*",
    "split.seed": 0,
    "split.test_fraction": 0.2,
    "split.val_fraction": 0.1,
    "split.manifest": None,
    "preprocess.crop": "500x500",
    "preprocess.input": "512x512",
    "preprocess.interpolation": "bicubic",
    "preprocess.imagenet": True,
    "preprocess.zscore": False,
    "preprocess.imagenet_mean": list(IMAGENET_MEAN),
    "preprocess.imagenet_std": list(IMAGENET_STD),
    "preprocess.epsilon": 1e-7,
    "augment": [{"op": op, "p": 0.5} for op in ("vflip", "hflip", "filter", "contrast", "brightness")],
    "augment.seed": 0,
    "augment.brightness_factor": 0.5,
    "augment.contrast_factor": 0.5,
    "model.encoder": "densenet169",
    "model.pretrained": False,
    "model.weights": None,
    "model.decoder_channels": list(DEFAULT_DECODER_CHANNELS),
    "model.base_channels": 64,
    "model.depth": 4,
    "model.seed": 0,
    "model.freeze_encoder": False,
    "train.lr": 1e-5,
    "train.beta1": 0.9,
    "train.beta2": 0.999,
    "train.batch_size": 2,
    "train.epochs": 50,
    "train.loss": "bce_plus_dice",
    "train.seed": 0,
    "train.grad_clip": None,
    "train.cache_samples": False,
    "train.select_on": "val_dice",
    "eval.threshold": 0.5,
    "eval.split": "test",
    "eval.batch_size": 2,
    "output.dir": "runs",
}


def flatten(data: dict, prefix: str = "") -> dict:
    flat = {}
    for key, value in data.items():
        full = f"{prefix}{key}"
        if isinstance(value, dict) and full != "augment":
            flat.update(flatten(value, full + "."))
        else:
            flat[full] = value
    return flat


def _canonical(value):
    if isinstance(value, (list, tuple)):
        return [_canonical(v) for v in value]
    if isinstance(value, dict):
        return {str(k): _canonical(v) for k, v in sorted(value.items())}
    return value


@dataclass
class ExperimentConfig:
    values: dict

    @classmethod
    def from_dict(cls, data: dict | None) -> "ExperimentConfig":
        flat = flatten(data or {})
        unknown = sorted(set(flat) - set(DEFAULTS))
        if unknown:
            raise ConfigError(f"unknown config key {unknown[0]!r}", key=unknown[0])
        values = copy.deepcopy(DEFAULTS)
        for key, value in flat.items():
            # YAML 1.1 reads "1e-5" as a string
            if isinstance(DEFAULTS[key], float) and isinstance(value, str):
                try:
                    value = float(value)
                except ValueError:
                    raise ConfigError(f"{key} must be a number, got {value!r}", key=key) from None
            values[key] = value
        cfg = cls(values)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | Path | None) -> "ExperimentConfig":
        if path is None:
            return cls.from_dict({})
        path = Path(path)
        try:
            data = yaml.safe_load(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}", key="--config") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"config {path} is not valid YAML: {exc}", key="--config") from exc
        if data is not None and not isinstance(data, dict):
            raise ConfigError(f"config {path} must be a mapping", key="--config")
        return cls.from_dict(data)

    def with_overrides(self, overrides: dict) -> "ExperimentConfig":
        data = dict(self.values)
        data.update(flatten(overrides))
        return ExperimentConfig.from_dict(data)

    def __getitem__(self, key):
        return self.values[key]

    def to_yaml(self) -> str:
        return yaml.safe_dump(_canonical(self.values), sort_keys=True, default_flow_style=None)

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_yaml(), encoding="utf-8")
        return path

    @property
    def config_hash(self) -> str:
        canon = json.dumps(_canonical(self.values), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()

    # -- typed views ---------------------------------------------------------

    def validate(self):
        self.preprocess()
        self.augmentation()
        self.train_config()
        for key in ("split.test_fraction", "split.val_fraction"):
            if not isinstance(self[key], (int, float)) or not 0 < self[key] < 1:
                raise ConfigError(f"{key} must lie strictly between 0 and 1", key=key)
        if self["model.encoder"] not in encoder_names() + list(BASELINES):
            raise ConfigError(f"unknown encoder {self['model.encoder']!r}", key="model.encoder")
        if self["eval.split"] not in ("train", "val", "test"):
            raise ConfigError("eval.split must be train, val or test", key="eval.split")
        if not 0.0 <= float(self["eval.threshold"]) <= 1.0:
            raise ConfigError("eval.threshold must be in [0, 1]", key="eval.threshold")

    def _typed(self, key, fn):
        try:
            return fn(self[key])
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key}: {self[key]!r} ({exc})", key=key) from exc

    def preprocess(self) -> PreprocessConfig:
        norm = NormalizationSpec(
            apply_zscore=self._typed("preprocess.zscore", bool),
            apply_imagenet=self._typed("preprocess.imagenet", bool),
            imagenet_mean=self._typed("preprocess.imagenet_mean", tuple),
            imagenet_std=self._typed("preprocess.imagenet_std", tuple),
            epsilon=self._typed("preprocess.epsilon", float),
        )
        try:
            return PreprocessConfig(
                crop_target=self["preprocess.crop"],
                network_input=self["preprocess.input"],
                interpolation=self["preprocess.interpolation"],
                normalization=norm,
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"bad preprocess size: {exc}", key="preprocess.input") from exc

    def augmentation(self) -> AugmentationPolicy:
        ops = self["augment"] or []
        if not isinstance(ops, list) or not all(isinstance(o, dict) for o in ops):
            raise ConfigError("augment must be a list of {op, p} mappings", key="augment")
        return AugmentationPolicy(
            ops=list(ops),
            seed=self._typed("augment.seed", int),
            brightness_factor=self._typed("augment.brightness_factor", float),
            contrast_factor=self._typed("augment.contrast_factor", float),
        )

    def train_config(self, checkpoint_dir=None, log=print) -> TrainConfig:
        clip = self["train.grad_clip"]
        return TrainConfig(
            learning_rate=self._typed("train.lr", float),
            beta1=self._typed("train.beta1", float),
            beta2=self._typed("train.beta2", float),
            batch_size=self._typed("train.batch_size", int),
            epochs=self._typed("train.epochs", int),
            loss=self["train.loss"],
            seed=self._typed("train.seed", int),
            augmentation=self.augmentation() if self["augment"] else None,
            preprocess=self.preprocess(),
            checkpoint_dir=checkpoint_dir,
            select_on=self["train.select_on"],
            grad_clip=None if clip is None else self._typed("train.grad_clip", float),
            threshold=float(self["eval.threshold"]),
            cache_samples=self._typed("train.cache_samples", bool),
            log=log,
        )

    @property
    def model_name(self) -> str:
        return self["model.encoder"]

    @property
    def output_dir(self) -> Path:
        return Path(self["output.dir"])

    @property
    def run_dir(self) -> Path:
        return self.output_dir / self.model_name

    @property
    def manifest_path(self) -> Path:
        return Path(self["split.manifest"]) if self["split.manifest"] else self.output_dir / "manifest.csv"

    def dataset_root(self) -> Path:
        root = self["dataset.root"]
        if not root:
            raise ConfigError("dataset.root is not set", key="dataset.root")
        path = Path(root)
        if not path.is_dir():
            raise ConfigError(f"dataset.root {path} does not exist", key="dataset.root")
        return path
