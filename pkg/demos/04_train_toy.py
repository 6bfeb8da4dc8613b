"""
Training on a toy dataset
=========================

Ten synthetic frames, a small U-Net and a few dozen epochs. The loop keeps
best.ckpt (highest validation Dice), last.ckpt and history.csv.
"""

import tempfile
from pathlib import Path

from polypseg.augment import AugmentationPolicy
from polypseg.dataset import scan_dataset, split_manifest
from polypseg.models import build_model, load_checkpoint
from polypseg.preprocess import PreprocessConfig
from polypseg.synthetic import make_synthetic_dataset
from polypseg.training import TrainConfig, resume, train

work = Path(tempfile.mkdtemp(prefix="polypseg-demo-"))
root = make_synthetic_dataset(work / "data", n=10, size=(160, 140), margin=10)

manifest = split_manifest(scan_dataset(root), test_fraction=0.2, val_fraction_of_trainval=0.25, seed=0)
manifest.save(work / "manifest.csv")
print({s: len(manifest.ids(s)) for s in ("train", "val", "test")})

prep = PreprocessConfig(crop_target=(128, 128), network_input=(64, 64))
config = TrainConfig(
    learning_rate=3e-3, epochs=30, batch_size=2, loss="bce_plus_dice",
    augmentation=AugmentationPolicy(seed=0), preprocess=prep, checkpoint_dir=work / "ckpt",
)
model = build_model("unet_baseline", (64, 64), base_channels=8, seed=0)
best, history = train(model, manifest, config)
print("best epoch", history.best.epoch, "val dice", round(history.best.val_dice, 4))

# carry on from last.ckpt for ten more epochs
config.epochs = 40
config.log = None
best, history = resume(work / "ckpt" / "last.ckpt", manifest, config, encoder_name="unet_baseline")
print("epochs recorded:", history.records[0].epoch, "to", history.records[-1].epoch)

restored = load_checkpoint(work / "ckpt" / "best.ckpt")
print("restored", restored.architecture["name"], "from", work / "ckpt" / "best.ckpt")
