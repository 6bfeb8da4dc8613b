"""Training-time augmentation of (image, mask) pairs.

Geometric ops move image and mask together; photometric ops touch the image
only. Images are treated as float arrays on the 0-255 scale. All randomness
comes from an explicit :class:`numpy.random.Generator`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import ndimage

from .dataset import ImageSample
from .errors import ConfigError
from .preprocess import resize_bicubic, resize_mask

PIXEL_MAX = 255.0
BLUR_SIGMA = 1.0
BLUR_TRUNCATE = 2.0  # radius 2 -> 5x5 kernel at sigma 1
SHARPEN_AMOUNT = 1.0


def _with(sample: ImageSample, image=None, mask=None) -> ImageSample:
    return ImageSample(
        sample.id,
        sample.image if image is None else image,
        sample.mask if mask is None else mask,
    )


def vertical_flip(sample: ImageSample) -> ImageSample:
    return _with(sample, sample.image[::-1].copy(), sample.mask[::-1].copy())


def horizontal_flip(sample: ImageSample) -> ImageSample:
    return _with(sample, sample.image[:, ::-1].copy(), sample.mask[:, ::-1].copy())


def rotate90(sample: ImageSample, rng: np.random.Generator) -> ImageSample:
    """Rotate by a random multiple of 90 degrees (180 only for non-square frames)."""
    h, w = sample.mask.shape
    k = int(rng.integers(1, 4)) if h == w else 2
    return _with(
        sample,
        np.rot90(sample.image, k, axes=(0, 1)).copy(),
        np.rot90(sample.mask, k, axes=(0, 1)).copy(),
    )


def zoom(sample: ImageSample, rng: np.random.Generator, scale_range=(0.8, 1.0)) -> ImageSample:
    """Random crop covering ``scale`` of each side, resized back to full size."""
    h, w = sample.mask.shape
    s = rng.uniform(*scale_range)
    ch, cw = max(1, int(round(h * s))), max(1, int(round(w * s)))
    top = int(rng.integers(0, h - ch + 1))
    left = int(rng.integers(0, w - cw + 1))
    image = resize_bicubic(sample.image[top : top + ch, left : left + cw], (w, h))
    mask = resize_mask(sample.mask[top : top + ch, left : left + cw], (w, h))
    return _with(sample, np.clip(image, 0.0, PIXEL_MAX), mask)


def gaussian_blur(image: np.ndarray) -> np.ndarray:
    x = np.asarray(image, dtype=np.float64)
    sigma = (BLUR_SIGMA, BLUR_SIGMA) + (0.0,) * (x.ndim - 2)
    return ndimage.gaussian_filter(x, sigma=sigma, truncate=BLUR_TRUNCATE, mode="reflect")


def sharpen(image: np.ndarray) -> np.ndarray:
    """Unsharp mask: ``x + amount * (x - blur(x))``, clipped."""
    x = np.asarray(image, dtype=np.float64)
    return np.clip(x + SHARPEN_AMOUNT * (x - gaussian_blur(x)), 0.0, PIXEL_MAX)


def random_filter(image: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    return gaussian_blur(image) if rng.random() < 0.5 else sharpen(image)


def adjust_contrast(image: np.ndarray, scale: float) -> np.ndarray:
    x = np.asarray(image, dtype=np.float64)
    mean = x.mean()
    return np.clip(mean + scale * (x - mean), 0.0, PIXEL_MAX)


def adjust_brightness(image: np.ndarray, scale: float) -> np.ndarray:
    return np.clip(np.asarray(image, dtype=np.float64) * scale, 0.0, PIXEL_MAX)


def _check_factor(factor: float):
    if factor <= 0:
        raise ValueError(f"factor must be > 0, got {factor}")


def random_contrast(image: np.ndarray, factor: float, rng: np.random.Generator) -> np.ndarray:
    """Stretch around the image mean by a scale drawn from ``[1 - factor, 1 + factor]``."""
    _check_factor(factor)
    return adjust_contrast(image, rng.uniform(1.0 - factor, 1.0 + factor))


def random_brightness(image: np.ndarray, factor: float, rng: np.random.Generator) -> np.ndarray:
    """Multiply intensities by a scale drawn from ``[1 - factor, 1 + factor]``."""
    _check_factor(factor)
    return adjust_brightness(image, rng.uniform(1.0 - factor, 1.0 + factor))


GEOMETRIC_OPS = {"vflip", "hflip", "rotate90", "zoom"}
PHOTOMETRIC_OPS = {"filter", "contrast", "brightness"}
OP_NAMES = ("vflip", "hflip", "filter", "contrast", "brightness", "rotate90", "zoom")


@dataclass(frozen=True)
class AugmentOp:
    name: str
    p: float = 0.5
    params: dict = field(default_factory=dict)


def default_ops(p: float = 0.5) -> list[AugmentOp]:
    return [AugmentOp(name, p) for name in ("vflip", "hflip", "filter", "contrast", "brightness")]


@dataclass
class AugmentationPolicy:
    ops: list[AugmentOp] = field(default_factory=default_ops)
    seed: int = 0
    brightness_factor: float = 0.5
    contrast_factor: float = 0.5

    def __post_init__(self):
        ops = []
        for op in self.ops:
            if isinstance(op, dict):
                op = dict(op)
                name = op.pop("op", op.pop("name", None))
                p = op.pop("p", 0.5)
                op = AugmentOp(name, float(p), op)
            if op.name not in OP_NAMES:
                raise ConfigError(f"unknown augmentation op {op.name!r}", key="augment")
            if not 0.0 <= op.p <= 1.0:
                raise ConfigError(f"probability of {op.name!r} must be in [0, 1]", key="augment")
            ops.append(op)
        self.ops = ops
        if self.brightness_factor <= 0 or self.contrast_factor <= 0:
            raise ConfigError("augmentation factors must be > 0", key="augment")

    def rng(self, call_index: int) -> np.random.Generator:
        """Generator for the ``call_index``-th application of this policy."""
        return np.random.default_rng([int(self.seed), int(call_index)])

    def to_list(self) -> list[dict]:
        return [{"op": op.name, "p": op.p, **op.params} for op in self.ops]


def _photometric(fn: Callable[[np.ndarray], np.ndarray]):
    def apply(sample: ImageSample, rng, policy, params):
        return _with(sample, image=fn(sample.image, rng, policy, params))

    return apply


_DISPATCH = {
    "vflip": lambda s, rng, policy, params: vertical_flip(s),
    "hflip": lambda s, rng, policy, params: horizontal_flip(s),
    "rotate90": lambda s, rng, policy, params: rotate90(s, rng),
    "zoom": lambda s, rng, policy, params: zoom(s, rng, tuple(params.get("scale", (0.8, 1.0)))),
    "filter": _photometric(lambda x, rng, policy, params: random_filter(x, rng)),
    "contrast": _photometric(
        lambda x, rng, policy, params: random_contrast(x, params.get("factor", policy.contrast_factor), rng)
    ),
    "brightness": _photometric(
        lambda x, rng, policy, params: random_brightness(x, params.get("factor", policy.brightness_factor), rng)
    ),
}


def apply_policy(sample: ImageSample, policy: AugmentationPolicy, rng: np.random.Generator) -> ImageSample:
    """Apply ``policy.ops`` in order, each firing with its probability.

    One uniform draw decides each op, whether it fires or not, so the stream
    consumed per op is stable.
    """
    out = _with(sample, np.asarray(sample.image, dtype=np.float64))
    for op in policy.ops:
        fn = _DISPATCH.get(op.name)
        if fn is None:
            raise ConfigError(f"unknown augmentation op {op.name!r}", key="augment")
        if rng.random() < op.p:
            out = fn(out, rng, policy, op.params)
    return out
