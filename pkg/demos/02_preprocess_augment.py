"""
Preprocessing and augmentation of one frame
===========================================

A 574x500 frame is center-cropped to 500x500, resized to 512x512 and
normalized. Augmentations then run on the resized pair.
"""

import numpy as np

from polypseg.augment import AugmentationPolicy, apply_policy
from polypseg.dataset import ImageSample
from polypseg.preprocess import PreprocessConfig, crop_box, normalize, prepare_geometry, restore_geometry
from polypseg.synthetic import synthetic_pair

rng = np.random.default_rng(0)
image, mask = synthetic_pair(rng, size=(574, 500))
print("raw", image.shape, mask.shape, "foreground", mask.mean().round(3))

cfg = PreprocessConfig()  # crop 500x500, network input 512x512
print("crop box (left, top, w, h):", crop_box((574, 500), cfg.crop_target))

img512, mask512 = prepare_geometry(image, mask, cfg)
print("resized", img512.shape, mask512.shape, "mask values", np.unique(mask512))

x = normalize(img512, cfg.normalization)
print("normalized channel means", x.mean(axis=(0, 1)).round(3))

# the default policy: vertical/horizontal flip, blur-or-sharpen, contrast, brightness, each p=0.5
policy = AugmentationPolicy(seed=42)
sample = ImageSample("demo", img512, mask512)
for call in range(3):
    out = apply_policy(sample, policy, policy.rng(call))
    print(f"call {call}: mean intensity {out.image.mean():6.1f}, foreground {out.mask.mean():.3f}")

# the same call index always replays the same augmentation
a = apply_policy(sample, policy, policy.rng(1))
b = apply_policy(sample, policy, policy.rng(1))
print("replay identical:", np.array_equal(a.image, b.image))

# predictions map back to the original frame: unresize, then zero-pad the cropped columns
back = restore_geometry(mask512, (574, 500), cfg)
print("restored", back.shape, "agreement with source mask", (back == mask).mean().round(4))
