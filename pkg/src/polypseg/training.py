"""Adam training loop with online augmentation and validation-driven selection."""
from __future__ import annotations

import csv
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from . import metrics
from .augment import AugmentationPolicy, apply_policy
from .dataset import DatasetManifest, ImageSample, load_sample
from .errors import (
    ArchitectureMismatchError,
    ConfigError,
    EmptySplitError,
    NonFiniteLossError,
    ShapeMismatchError,
)
from .models import ModelCheckpoint, SegmentationNet, read_checkpoint
from .models.unet import to_tensor
from .preprocess import PreprocessConfig, normalize, prepare_geometry

LOSSES = ("bce", "dice_loss", "bce_plus_dice")
DICE_SMOOTH = 1.0
PROB_EPS = 1e-7
HISTORY_COLUMNS = ("epoch", "train_loss", "val_loss", "val_dice", "val_jaccard", "seconds")


def loss_fn(pred, target, kind: str = "bce_plus_dice"):
    """Training loss between probabilities ``pred`` and a binary ``target``.

    ``dice_loss`` is ``1 - (2 sum(p t) + 1) / (sum(p) + sum(t) + 1)`` over the
    whole batch. Tensors in, tensor out (differentiable); arrays in, float out.
    """
    if kind not in LOSSES:
        raise ConfigError(f"unknown loss {kind!r}; expected one of {LOSSES}", key="train.loss")
    as_numpy = not isinstance(pred, torch.Tensor)
    p = torch.as_tensor(pred, dtype=torch.float64) if as_numpy else pred
    t = torch.as_tensor(target, dtype=p.dtype, device=p.device)
    if p.shape != t.shape:
        raise ShapeMismatchError(f"pred shape {tuple(p.shape)} != target shape {tuple(t.shape)}")
    p = p.clamp(PROB_EPS, 1.0 - PROB_EPS)
    total = p.new_zeros(())
    if kind in ("bce", "bce_plus_dice"):
        # written out so NaN probabilities surface as a NaN loss instead of a torch error
        total = total - (t * torch.log(p) + (1.0 - t) * torch.log1p(-p)).mean()
    if kind in ("dice_loss", "bce_plus_dice"):
        inter = (p * t).sum()
        total = total + 1.0 - (2.0 * inter + DICE_SMOOTH) / (p.sum() + t.sum() + DICE_SMOOTH)
    return float(total) if as_numpy else total


@dataclass
class TrainConfig:
    learning_rate: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    batch_size: int = 2
    epochs: int = 50
    loss: str = "bce_plus_dice"
    seed: int = 0
    augmentation: AugmentationPolicy | None = field(default_factory=AugmentationPolicy)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    checkpoint_dir: Path | None = None
    select_on: str = "val_dice"
    grad_clip: float | None = None
    threshold: float = 0.5
    cache_samples: bool = False
    log: Callable[[str], None] | None = print

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning rate must be > 0", key="train.lr")
        for key, b in (("train.beta1", self.beta1), ("train.beta2", self.beta2)):
            if not 0.0 <= b < 1.0:
                raise ConfigError(f"{key} must be in [0, 1)", key=key)
        if self.batch_size < 1:
            raise ConfigError("batch size must be >= 1", key="train.batch_size")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1", key="train.epochs")
        if self.loss not in LOSSES:
            raise ConfigError(f"unknown loss {self.loss!r}", key="train.loss")
        if self.select_on != "val_dice":
            raise ConfigError("only val_dice selection is supported", key="train.select_on")
        if self.checkpoint_dir is not None:
            self.checkpoint_dir = Path(self.checkpoint_dir)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_dice: float
    val_jaccard: float
    seconds: float


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def append(self, record: EpochRecord):
        if self.records and record.epoch != self.records[-1].epoch + 1:
            raise ValueError(f"epoch {record.epoch} does not follow {self.records[-1].epoch}")
        self.records.append(record)

    @property
    def best(self) -> EpochRecord | None:
        return max(self.records, key=lambda r: r.val_dice, default=None)

    def to_rows(self) -> list[dict]:
        return [asdict(r) for r in self.records]

    @classmethod
    def from_rows(cls, rows) -> "TrainHistory":
        return cls([EpochRecord(**{k: (int if k == "epoch" else float)(v) for k, v in r.items()}) for r in rows])

    def save_csv(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=HISTORY_COLUMNS, lineterminator="\n")
            writer.writeheader()
            for row in self.to_rows():
                writer.writerow(row)
        return path


# -- data ----------------------------------------------------------------------


def prepare_arrays(sample: ImageSample, preprocess: PreprocessConfig,
                   policy: AugmentationPolicy | None = None, rng: np.random.Generator | None = None):
    """Geometry, optional augmentation, then normalization.

    Returns ``(image H x W x 3 float32, mask H x W uint8)`` at the network
    input size.
    """
    image, mask = prepare_geometry(sample.image, sample.mask, preprocess)
    if policy is not None:
        aug = apply_policy(ImageSample(sample.id, image, mask), policy, rng)
        image, mask = aug.image, aug.mask
    return normalize(image, preprocess.normalization).astype(np.float32), mask


class _SampleSource:
    def __init__(self, manifest: DatasetManifest, preprocess: PreprocessConfig, cache: bool):
        self.manifest, self.preprocess, self.cache = manifest, preprocess, cache
        self._store: dict[str, ImageSample] = {}

    def geometry(self, sample_id: str) -> ImageSample:
        """Sample cropped and resized to the network input (0-255 float image)."""
        if sample_id in self._store:
            return self._store[sample_id]
        raw = load_sample(self.manifest, sample_id)
        image, mask = prepare_geometry(raw.image, raw.mask, self.preprocess)
        sample = ImageSample(sample_id, image.astype(np.float32), mask)
        if self.cache:
            self._store[sample_id] = sample
        return sample

    def arrays(self, sample_id, policy=None, rng=None):
        s = self.geometry(sample_id)
        image, mask = s.image, s.mask
        if policy is not None:
            aug = apply_policy(ImageSample(sample_id, image.astype(np.float64), mask), policy, rng)
            image, mask = aug.image, aug.mask
        return normalize(image, self.preprocess.normalization).astype(np.float32), mask


def _batches(ids, batch_size):
    for start in range(0, len(ids), batch_size):
        yield ids[start : start + batch_size]


def _stack(items, dtype):
    images = np.stack([im for im, _ in items])
    masks = np.stack([m for _, m in items])[..., None].astype(np.float32)
    return to_tensor(images, dtype), torch.from_numpy(masks).permute(0, 3, 1, 2).to(dtype)


def validate(model: SegmentationNet, source: _SampleSource, ids, config: TrainConfig):
    """Eval-mode loss and per-image mean Dice/Jaccard, without augmentation."""
    model.eval()
    dtype = next(model.parameters()).dtype
    losses, dices, jaccards = [], [], []
    with torch.no_grad():
        for batch_ids in _batches(ids, config.batch_size):
            x, y = _stack([source.arrays(i) for i in batch_ids], dtype)
            probs = model(x)
            losses.append(float(loss_fn(probs, y, config.loss)) * len(batch_ids))
            pred = metrics.binarize(probs.cpu().numpy(), config.threshold)
            truth = y.cpu().numpy().astype(np.uint8)
            for p, t in zip(pred, truth):
                c = metrics.confusion(p[0], t[0])
                dices.append(metrics.dice(c))
                jaccards.append(metrics.jaccard(c))
    return sum(losses) / len(ids), float(np.mean(dices)), float(np.mean(jaccards))


# -- training ------------------------------------------------------------------


def _optimizer(model, config: TrainConfig):
    params = [p for p in model.parameters() if p.requires_grad]
    return torch.optim.Adam(params, lr=config.learning_rate, betas=(config.beta1, config.beta2))


def _check_inputs(model: SegmentationNet, manifest: DatasetManifest, config: TrainConfig):
    for split in ("train", "val"):
        if not manifest.ids(split):
            raise EmptySplitError(f"manifest has an empty {split} split")
    if tuple(model.input_size) != tuple(config.preprocess.network_input):
        raise ConfigError(
            f"model input {model.input_size} != preprocess input {config.preprocess.network_input}",
            key="preprocess.input",
        )


def _metadata(epoch, config, history, best_val_dice, config_hash):
    return {
        "epoch": epoch,
        "seed": config.seed,
        "config_hash": config_hash,
        "best_val_dice": best_val_dice,
        "history": history.to_rows(),
    }


def steps_per_epoch(n_train: int, batch_size: int) -> int:
    return math.ceil(n_train / batch_size)


def _run(model, optimizer, manifest, config: TrainConfig, history: TrainHistory, start_epoch: int,
         best: ModelCheckpoint | None, config_hash: str):
    source = _SampleSource(manifest, config.preprocess, config.cache_samples)
    train_ids, val_ids = manifest.ids("train"), manifest.ids("val")
    dtype = next(model.parameters()).dtype
    policy = config.augmentation
    ckdir = config.checkpoint_dir
    best_dice = best.metadata.get("best_val_dice", -1.0) if best is not None else -1.0
    n = len(train_ids)

    for epoch in range(start_epoch + 1, config.epochs + 1):
        t0 = time.perf_counter()
        model.train()
        order = np.random.default_rng([config.seed, epoch]).permutation(n)
        epoch_ids = [train_ids[i] for i in order]
        running, seen = 0.0, 0
        for step, batch_ids in enumerate(_batches(epoch_ids, config.batch_size)):
            items = []
            for offset, sample_id in enumerate(batch_ids):
                position = step * config.batch_size + offset
                rng = policy.rng((epoch - 1) * n + position) if policy is not None else None
                items.append(source.arrays(sample_id, policy, rng))
            x, y = _stack(items, dtype)
            probs = model(x)
            loss = loss_fn(probs, y, config.loss)
            if not torch.isfinite(loss):
                global_step = (epoch - 1) * steps_per_epoch(n, config.batch_size) + step
                if ckdir is not None:
                    ModelCheckpoint.from_model(
                        model, _metadata(epoch - 1, config, history, best_dice, config_hash),
                        optimizer.state_dict(),
                    ).save(ckdir / "last_finite.ckpt")
                raise NonFiniteLossError(
                    f"non-finite loss at step {global_step} (epoch {epoch}), batch {batch_ids}",
                    step=global_step, batch_ids=list(batch_ids),
                )
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            if config.grad_clip is not None:
                torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
            optimizer.step()
            running += loss.item() * len(batch_ids)
            seen += len(batch_ids)

        val_loss, val_dice, val_jaccard = validate(model, source, val_ids, config)
        record = EpochRecord(epoch, running / seen, val_loss, val_dice, val_jaccard, time.perf_counter() - t0)
        history.append(record)
        improved = val_dice > best_dice
        if improved:
            best_dice = val_dice
        meta = _metadata(epoch, config, history, best_dice, config_hash)
        if improved:
            best = ModelCheckpoint.from_model(model, meta)
            if ckdir is not None:
                best.save(ckdir / "best.ckpt")
        if ckdir is not None:
            ModelCheckpoint.from_model(model, meta, optimizer.state_dict()).save(ckdir / "last.ckpt")
            history.save_csv(ckdir / "history.csv")
        if config.log is not None:
            config.log(
                f"epoch {epoch}/{config.epochs} train_loss={record.train_loss:.4f} "
                f"val_loss={val_loss:.4f} val_dice={val_dice:.4f} val_jaccard={val_jaccard:.4f} "
                f"time={record.seconds:.1f}s"
            )
    return best, history


def train(model: SegmentationNet, manifest: DatasetManifest, config: TrainConfig,
          config_hash: str = "") -> tuple[ModelCheckpoint, TrainHistory]:
    """Train ``model`` in place for ``config.epochs`` shuffled passes over the train split.

    Returns the checkpoint with the highest validation Dice and the history.
    With ``config.checkpoint_dir`` set, ``best.ckpt``, ``last.ckpt`` (with
    optimizer state, for :func:`resume`) and ``history.csv`` are kept on disk.
    """
    _check_inputs(model, manifest, config)
    optimizer = _optimizer(model, config)
    return _run(model, optimizer, manifest, config, TrainHistory(), 0, None, config_hash)


def resume(checkpoint: ModelCheckpoint | str | Path, manifest: DatasetManifest, config: TrainConfig,
           encoder_name: str | None = None, model: SegmentationNet | None = None,
           config_hash: str = "") -> tuple[ModelCheckpoint, TrainHistory]:
    """Continue training from a ``last.ckpt``-style checkpoint up to ``config.epochs``.

    The stored history is extended; new records start at the stored epoch + 1.
    Pass ``model`` to have the stored parameters loaded into it and trained in
    place, otherwise a fresh model is rebuilt from the descriptor.
    """
    ckpt = checkpoint if isinstance(checkpoint, ModelCheckpoint) else read_checkpoint(checkpoint)
    if encoder_name is not None and ckpt.architecture.get("encoder") != encoder_name:
        raise ArchitectureMismatchError(
            f"checkpoint holds {ckpt.architecture.get('encoder')!r}, config asks for {encoder_name!r}"
        )
    if ckpt.optimizer_state is None:
        raise ArchitectureMismatchError("checkpoint has no optimizer state; resume needs a last.ckpt")
    if model is None:
        model = ckpt.build_model()
    else:
        try:
            model.load_state_dict(ckpt.state_dict, strict=True)
        except RuntimeError as exc:
            raise ArchitectureMismatchError(f"checkpoint does not fit the given model: {str(exc)[:300]}") from exc
    _check_inputs(model, manifest, config)
    optimizer = _optimizer(model, config)
    optimizer.load_state_dict(ckpt.optimizer_state)
    history = TrainHistory.from_rows(ckpt.metadata.get("history", []))
    start = int(ckpt.metadata.get("epoch", len(history)))

    best = None
    if ckpt.path is not None and (ckpt.path.parent / "best.ckpt").exists():
        best = read_checkpoint(ckpt.path.parent / "best.ckpt")
    elif history.records:
        best = ModelCheckpoint.from_model(model, dict(ckpt.metadata))
    return _run(model, optimizer, manifest, config, history, start, best, config_hash)
