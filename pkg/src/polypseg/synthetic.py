"""Synthetic colonoscopy-like frames for tests, demos and smoke runs.

Each frame is a reddish textured background with a black vertical margin and
one brighter elliptical "polyp"; the mask marks the ellipse.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


def synthetic_pair(rng: np.random.Generator, size=(574, 500), margin: int = 30):
    w, h = size
    yy, xx = np.mgrid[0:h, 0:w]
    base = np.array([150.0, 70.0, 60.0]) + rng.normal(0, 6, size=3)
    shading = 25.0 * np.sin(xx / w * np.pi)[..., None] * np.cos(yy / h * np.pi / 2)[..., None]
    image = base + shading + rng.normal(0, 8, size=(h, w, 3))

    cx = rng.uniform(0.3, 0.7) * w
    cy = rng.uniform(0.3, 0.7) * h
    rx = rng.uniform(0.08, 0.2) * min(w, h)
    ry = rx * rng.uniform(0.7, 1.3)
    theta = rng.uniform(0, np.pi)
    dx, dy = xx - cx, yy - cy
    u = (dx * np.cos(theta) + dy * np.sin(theta)) / rx
    v = (-dx * np.sin(theta) + dy * np.cos(theta)) / ry
    mask = (u**2 + v**2 <= 1.0).astype(np.uint8)
    image[mask == 1] += np.array([60.0, 45.0, 20.0])
    if margin:
        image[:, :margin] = 0.0
        mask[:, :margin] = 0
    return np.clip(image, 0, 255).astype(np.uint8), mask


def make_synthetic_dataset(root: str | Path, n: int = 10, size=(574, 500), seed: int = 0,
                           ext: str = ".png", margin: int = 30) -> Path:
    """Write ``n`` image/mask pairs under ``root/images`` and ``root/masks``.

    Masks are stored as 0/255 grayscale.
    """
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    for i in range(n):
        image, mask = synthetic_pair(rng, size, margin)
        name = f"{i + 1:03d}{ext}"
        Image.fromarray(image).save(root / "images" / name)
        Image.fromarray(mask * 255).save(root / "masks" / name)
    return root
