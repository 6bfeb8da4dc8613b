"""Deterministic geometry and intensity preprocessing.

Pipeline for one frame: center crop -> bicubic resize to the network input
size -> float conversion -> normalization. Masks follow the same geometry
with nearest-neighbour resampling so they stay binary.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import cv2
import numpy as np

from .errors import ConfigError, ShapeMismatchError

# Standard ImageNet RGB statistics on the 0-255 scale.
IMAGENET_MEAN = (123.675, 116.28, 103.53)
IMAGENET_STD = (58.395, 57.12, 57.375)


def parse_size(value) -> tuple[int, int]:
    """Parse ``"WIDTHxHEIGHT"`` (or a 2-sequence) into ``(width, height)``."""
    if isinstance(value, str):
        parts = value.lower().split("x")
        if len(parts) != 2:
            raise ValueError(f"size must look like WIDTHxHEIGHT, got {value!r}")
        w, h = (int(p.strip()) for p in parts)
    else:
        w, h = (int(v) for v in value)
    return w, h


def format_size(size: tuple[int, int]) -> str:
    return f"{size[0]}x{size[1]}"


@dataclass
class NormalizationSpec:
    apply_zscore: bool = False
    apply_imagenet: bool = True
    imagenet_mean: tuple[float, float, float] = IMAGENET_MEAN
    imagenet_std: tuple[float, float, float] = IMAGENET_STD
    epsilon: float = 1e-7

    def __post_init__(self):
        self.imagenet_mean = tuple(float(v) for v in self.imagenet_mean)
        self.imagenet_std = tuple(float(v) for v in self.imagenet_std)
        if len(self.imagenet_mean) != 3 or len(self.imagenet_std) != 3:
            raise ConfigError("imagenet mean/std need 3 components", key="preprocess.imagenet_mean")
        if min(self.imagenet_std) <= 0:
            raise ConfigError("imagenet_std components must be > 0", key="preprocess.imagenet_std")
        if self.epsilon <= 0:
            raise ConfigError("epsilon must be > 0", key="preprocess.epsilon")


@dataclass
class PreprocessConfig:
    crop_target: tuple[int, int] = (500, 500)
    network_input: tuple[int, int] = (512, 512)
    interpolation: str = "bicubic"
    normalization: NormalizationSpec = field(default_factory=NormalizationSpec)

    def __post_init__(self):
        self.crop_target = parse_size(self.crop_target)
        self.network_input = parse_size(self.network_input)
        if self.interpolation != "bicubic":
            raise ConfigError(f"unsupported interpolation {self.interpolation!r}", key="preprocess.interpolation")
        if any(d <= 0 for d in self.crop_target):
            raise ConfigError("crop size must be positive", key="preprocess.crop")
        if any(d <= 0 or d % 32 for d in self.network_input):
            raise ConfigError(
                f"network input {format_size(self.network_input)} must be positive multiples of 32",
                key="preprocess.input",
            )


def center_crop(image: np.ndarray, target: tuple[int, int]) -> np.ndarray:
    """Centered ``target = (width, height)`` window of an H x W (x C) array."""
    tw, th = parse_size(target)
    h, w = image.shape[:2]
    if tw > w or th > h:
        raise ShapeMismatchError(f"crop {tw}x{th} exceeds source {w}x{h}")
    left, top = (w - tw) // 2, (h - th) // 2
    return image[top : top + th, left : left + tw]


def crop_box(source: tuple[int, int], target: tuple[int, int]) -> tuple[int, int, int, int]:
    """``(left, top, width, height)`` of :func:`center_crop` for a source ``(w, h)``."""
    (w, h), (tw, th) = source, target
    return (w - tw) // 2, (h - th) // 2, tw, th


def resize_bicubic(image: np.ndarray, target: tuple[int, int]) -> np.ndarray:
    """Bicubic resize to ``(width, height)``; returns float64."""
    tw, th = parse_size(target)
    if tw <= 0 or th <= 0:
        raise ValueError(f"resize target must be positive, got {tw}x{th}")
    src = np.asarray(image, dtype=np.float64)
    if src.shape[1] == tw and src.shape[0] == th:
        return src.copy()
    out = cv2.resize(src, (tw, th), interpolation=cv2.INTER_CUBIC)
    if src.ndim == 3 and out.ndim == 2:
        out = out[..., None]
    return out


def resize_mask(mask: np.ndarray, target: tuple[int, int]) -> np.ndarray:
    """Nearest-neighbour resize of a label mask, re-binarized to {0, 1}."""
    tw, th = parse_size(target)
    if tw <= 0 or th <= 0:
        raise ValueError(f"resize target must be positive, got {tw}x{th}")
    src = (np.asarray(mask) > 0).astype(np.uint8)
    if src.shape[1] == tw and src.shape[0] == th:
        return src.copy()
    out = cv2.resize(src, (tw, th), interpolation=cv2.INTER_NEAREST_EXACT)
    return (out > 0).astype(np.uint8)


def zscore_normalize(image: np.ndarray, epsilon: float = 1e-7) -> np.ndarray:
    """Per-image standardization over all pixels and channels."""
    x = np.asarray(image, dtype=np.float64)
    if x.size == 0:
        raise ValueError("cannot standardize an empty image")
    return (x - x.mean()) / (x.std() + epsilon)


def imagenet_normalize(image: np.ndarray, spec: NormalizationSpec | None = None) -> np.ndarray:
    spec = spec or NormalizationSpec()
    x = np.asarray(image, dtype=np.float64)
    if x.ndim != 3 or x.shape[-1] != 3:
        raise ShapeMismatchError(f"expected H x W x 3 RGB image, got shape {x.shape}")
    return (x - np.asarray(spec.imagenet_mean)) / np.asarray(spec.imagenet_std)


def normalize(image: np.ndarray, spec: NormalizationSpec) -> np.ndarray:
    """ImageNet normalization, then optionally z-score, per ``spec`` flags."""
    x = np.asarray(image, dtype=np.float64)
    if spec.apply_imagenet:
        x = imagenet_normalize(x, spec)
    if spec.apply_zscore:
        x = zscore_normalize(x, spec.epsilon)
    return x


def prepare_geometry(image, mask, config: PreprocessConfig):
    """Crop and resize an (image, mask) pair. ``mask`` may be None.

    Returns the image as float64 on the 0-255 scale and the mask as uint8.
    """
    image = resize_bicubic(center_crop(image, config.crop_target), config.network_input)
    np.clip(image, 0.0, 255.0, out=image)
    if mask is not None:
        mask = resize_mask(center_crop(mask, config.crop_target), config.network_input)
    return image, mask


def restore_geometry(mask: np.ndarray, source: tuple[int, int], config: PreprocessConfig) -> np.ndarray:
    """Map a network-resolution mask back onto the original ``(w, h)`` frame.

    Nearest-neighbour un-resize to the crop size, then zero padding where the
    crop removed border columns/rows.
    """
    left, top, cw, ch = crop_box(source, config.crop_target)
    crop = resize_mask(mask, (cw, ch))
    out = np.zeros((source[1], source[0]), dtype=np.uint8)
    out[top : top + ch, left : left + cw] = crop
    return out
