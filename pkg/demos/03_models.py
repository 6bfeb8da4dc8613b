"""
Encoders and U-Net models
=========================

Every registered backbone exposes five feature taps at strides 2 to 32.
The decoder upsamples the deepest tap and concatenates the shallower ones.
"""

import numpy as np

from polypseg.models import build_model, forward, list_encoders

for spec in list_encoders():
    print(f"{spec.name:<18} {spec.family:<18} taps {spec.tap_channels}")

# pretrained=False keeps this offline; pass pretrained=True (and weights_path) for ImageNet init
model = build_model("resnet34", input_size=(128, 128), seed=0)
print(model.architecture)
print("parameters:", sum(p.numel() for p in model.parameters()))

batch = np.random.default_rng(0).normal(size=(2, 128, 128, 3)).astype(np.float32)
probs = forward(model, batch)
print("output", probs.shape, probs.min(), probs.max())

# the reference baselines
for name in ("unet_baseline", "segnet_baseline"):
    m = build_model(name, (128, 128), base_channels=16)
    print(name, forward(m, batch).shape, "skip concatenations:", m.architecture["skip_concatenations"])

# input sizes must be multiples of 32
try:
    build_model("resnet34", (500, 500))
except ValueError as exc:
    print(type(exc).__name__, exc)
