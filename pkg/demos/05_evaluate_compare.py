"""
Evaluating and comparing models
===============================

Each model gets a per-image report. Reports are tabulated side by side,
optionally next to the published reference numbers.
"""

import tempfile
from pathlib import Path

import numpy as np

from polypseg.dataset import scan_dataset, split_manifest
from polypseg.evaluation import compare, evaluate, predict
from polypseg.models import build_model
from polypseg.preprocess import PreprocessConfig
from polypseg.synthetic import make_synthetic_dataset

work = Path(tempfile.mkdtemp(prefix="polypseg-eval-"))
root = make_synthetic_dataset(work / "data", n=10, size=(160, 140), margin=10)
manifest = split_manifest(scan_dataset(root), 0.3, 0.2, seed=1)
prep = PreprocessConfig(crop_target=(128, 128), network_input=(64, 64))

# untrained networks, plus a plain callable: anything mapping N x H x W x 3 to probabilities works
models = {
    "unet_baseline": build_model("unet_baseline", (64, 64), base_channels=8),
    "resnet34": build_model("resnet34", (64, 64)),
}
reports = [evaluate(m, manifest, preprocess=prep, model_name=name) for name, m in models.items()]


def bright_pixels(batch):
    """Pixels brighter than average in the red channel."""
    red = batch[..., 0]
    return (red > red.mean(axis=(1, 2), keepdims=True) + 0.5).astype(np.float32)[..., None]


reports.append(evaluate(bright_pixels, manifest, preprocess=prep, model_name="threshold_rule"))

for r in reports:
    r.write(work / "runs" / r.model_name)
    print(r.model_name, "mean dice", round(r.aggregate_mean.dice, 3), "pooled dice", round(r.aggregate_pooled.dice, 3))

table = compare(reports, include_reference=True)
print(table.render())

# one full-resolution mask
out = predict(bright_pixels, root / "images" / "001.png", work / "001_pred.png", preprocess=prep)
print("mask written to", out)
