"""Test-split evaluation, comparison tables and full-resolution mask export."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence, Union

import numpy as np
import torch
from PIL import Image

from . import metrics
from .dataset import DatasetManifest, load_sample, read_rgb
from .errors import ConfigError, EmptySplitError, ShapeMismatchError, UnwritableOutputError
from .metrics import ConfusionCounts, MetricsResult
from .models import SegmentationNet, forward
from .preprocess import PreprocessConfig, normalize, prepare_geometry, restore_geometry

Predictor = Union[SegmentationNet, Callable[[np.ndarray], np.ndarray]]

# Accuracy, Dice, Jaccard (%) as published for CVC-ClinicDB, keyed by model name.
PUBLISHED_RESULTS = {
    "unet_baseline": (97.92, 75.86, 63.53),
    "segnet_baseline": (95.12, 68.39, 61.57),
    "resnet34": (98.09, 88.08, 79.22),
    "resnet50": (98.77, 86.06, 77.62),
    "resnet152": (98.9, 87.67, 79.22),
    "densenet121": (98.72, 85.42, 77.35),
    "densenet169": (99.15, 90.87, 83.82),
    "densenet201": (98.85, 87.54, 80.2),
    "inceptionv3": (99.08, 89.63, 81.84),
    "inceptionresnetv2": (99.1, 90.42, 83.16),
    "se_resnext50": (98.79, 86.61, 79.05),
    "se_resnext101": (98.9, 87.63, 80.09),
}
# Prior polyp-segmentation results quoted for comparison; None = not reported.
PUBLISHED_PRIOR_WORK = {
    "li_2017": (96.98, None, None),
    "akbari_2018": (97.7, 81.0, None),
    "qadir_2019": (None, 70.42, 61.24),
    "nguyen_lee_2018": (None, 88.9, 89.35),
    "kang_gwak_2019": (None, None, 69.46),
}


@dataclass
class ImageMetrics:
    id: str
    dice: float
    jaccard: float
    accuracy: float
    counts: ConfusionCounts = field(default_factory=ConfusionCounts)


@dataclass
class MetricsReport:
    model_name: str
    per_image: list[ImageMetrics]
    aggregate_mean: MetricsResult
    aggregate_pooled: MetricsResult
    config_hash: str = ""
    n_test: int = 0
    split: str = "test"
    threshold: float = 0.5

    @classmethod
    def from_per_image(cls, model_name, per_image, **kwargs) -> "MetricsReport":
        if not per_image:
            raise EmptySplitError("no images to aggregate")
        mean = MetricsResult(
            dice=float(np.mean([r.dice for r in per_image])),
            jaccard=float(np.mean([r.jaccard for r in per_image])),
            accuracy=float(np.mean([r.accuracy for r in per_image])),
        )
        pooled_counts = sum((r.counts for r in per_image), ConfusionCounts())
        return cls(model_name, list(per_image), mean, metrics.scores(pooled_counts),
                   n_test=len(per_image), **kwargs)

    @property
    def pooled_counts(self) -> ConfusionCounts:
        return sum((r.counts for r in self.per_image), ConfusionCounts())

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        per_image = [
            ImageMetrics(r["id"], r["dice"], r["jaccard"], r["accuracy"], ConfusionCounts(**r["counts"]))
            for r in d["per_image"]
        ]
        return cls(
            model_name=d["model_name"],
            per_image=per_image,
            aggregate_mean=MetricsResult(**d["aggregate_mean"]),
            aggregate_pooled=MetricsResult(**d["aggregate_pooled"]),
            config_hash=d.get("config_hash", ""),
            n_test=d["n_test"],
            split=d.get("split", "test"),
            threshold=d.get("threshold", 0.5),
        )

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        return cls.from_dict(json.loads(text))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["id", "dice", "jaccard", "accuracy"])
        for r in self.per_image:
            w.writerow([r.id, repr(r.dice), repr(r.jaccard), repr(r.accuracy)])
        for label, agg in (("mean", self.aggregate_mean), ("pooled", self.aggregate_pooled)):
            w.writerow([label, repr(agg.dice), repr(agg.jaccard), repr(agg.accuracy)])
        return buf.getvalue()

    def write(self, out_dir: str | Path) -> Path:
        """Write ``report.json`` and ``report.csv`` into ``out_dir``."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(self.to_json(), encoding="utf-8")
        (out / "report.csv").write_text(self.to_csv(), encoding="utf-8")
        return out

    @classmethod
    def read(cls, path: str | Path) -> "MetricsReport":
        path = Path(path)
        if path.is_dir():
            path = path / "report.json"
        return cls.from_json(path.read_text(encoding="utf-8"))


def _predict_batch(model: Predictor, images: np.ndarray) -> np.ndarray:
    if isinstance(model, torch.nn.Module):
        probs = forward(model, images)
    else:
        probs = np.asarray(model(images))
    if probs.ndim == 4:
        probs = probs[..., 0]
    return probs


def _model_name(model: Predictor) -> str:
    arch = getattr(model, "architecture", None)
    return arch["encoder"] if isinstance(arch, dict) else getattr(model, "name", type(model).__name__)


def evaluate(model: Predictor, manifest: DatasetManifest, split: str = "test", threshold: float = 0.5,
             preprocess: PreprocessConfig | None = None, model_name: str | None = None,
             batch_size: int = 2, config_hash: str = "", export_dir: str | Path | None = None) -> MetricsReport:
    """Score ``model`` on one split of ``manifest``.

    Ground truth is the mask under the same crop/resize as the image, so the
    comparison happens at the network input resolution. ``model`` may be a
    network or any callable mapping a normalized ``N x H x W x 3`` batch to
    probabilities. With ``export_dir``, predicted masks are also written at
    the original frame resolution as ``<id>.png``.
    """
    preprocess = preprocess or PreprocessConfig()
    if split not in ("train", "val", "test"):
        raise ValueError(f"split must be 'train', 'val' or 'test', got {split!r}")
    ids = manifest.ids(split)
    if not ids:
        raise EmptySplitError(f"manifest has an empty {split} split")
    input_size = getattr(model, "input_size", None)
    if input_size is not None and tuple(input_size) != tuple(preprocess.network_input):
        raise ConfigError(
            f"model expects {input_size}, preprocessing produces {preprocess.network_input}",
            key="preprocess.input",
        )
    per_image = []
    for start in range(0, len(ids), batch_size):
        batch_ids = ids[start : start + batch_size]
        images, truths, sources = [], [], []
        for sample_id in batch_ids:
            raw = load_sample(manifest, sample_id)
            image, mask = prepare_geometry(raw.image, raw.mask, preprocess)
            images.append(normalize(image, preprocess.normalization).astype(np.float32))
            truths.append(mask)
            sources.append((raw.image.shape[1], raw.image.shape[0]))
        probs = _predict_batch(model, np.stack(images))
        for sample_id, prob, truth, source in zip(batch_ids, probs, truths, sources):
            pred = metrics.binarize(prob, threshold)
            counts = metrics.confusion(pred, truth)
            per_image.append(ImageMetrics(sample_id, metrics.dice(counts), metrics.jaccard(counts),
                                          metrics.accuracy(counts), counts))
            if export_dir is not None:
                write_mask(restore_geometry(pred, source, preprocess), Path(export_dir) / f"{sample_id}.png")
    return MetricsReport.from_per_image(
        model_name or _model_name(model), per_image,
        config_hash=config_hash, split=split, threshold=float(threshold),
    )


# -- comparison ----------------------------------------------------------------

COLUMNS = ("accuracy", "dice", "jaccard")


@dataclass
class ComparisonRow:
    model: str
    accuracy_pct: float | None
    dice_pct: float | None
    jaccard_pct: float | None
    best: tuple[str, ...] = ()
    reference: bool = False


@dataclass
class ComparisonTable:
    rows: list[ComparisonRow]

    def best_model(self, column: str) -> list[str]:
        return [r.model for r in self.rows if column in r.best]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["model", "accuracy_pct", "dice_pct", "jaccard_pct", "best_flags"])
        for r in self.rows:
            w.writerow([r.model] + [_fmt(getattr(r, f"{c}_pct")) for c in COLUMNS] + ["|".join(r.best)])
        return buf.getvalue()

    def render(self) -> str:
        lines = [f"{'model':<28}{'Accuracy (%)':>14}{'DICE (%)':>12}{'Jaccard (%)':>14}"]
        for r in self.rows:
            cells = []
            for c, width in zip(COLUMNS, (14, 12, 14)):
                text = _fmt(getattr(r, f"{c}_pct")) or "-"
                cells.append(f"{text + ('*' if c in r.best else ''):>{width}}")
            lines.append(f"{r.model:<28}" + "".join(cells))
        return "\n".join(lines)


def _fmt(value):
    return "" if value is None else f"{value:.2f}"


def reference_rows(include_prior_work: bool = False) -> list[ComparisonRow]:
    rows = [ComparisonRow(f"published:{name}", *vals, reference=True) for name, vals in PUBLISHED_RESULTS.items()]
    if include_prior_work:
        rows += [ComparisonRow(f"published:{name}", *vals, reference=True)
                 for name, vals in PUBLISHED_PRIOR_WORK.items()]
    return rows


def compare(reports: Sequence[MetricsReport], aggregate: str = "mean",
            include_reference: bool = False) -> ComparisonTable:
    """Rows sorted by model name; the best value of each column is flagged.

    ``aggregate`` picks the per-image mean (default) or pixel-pooled scores.
    Percentages are rounded to 2 decimals and flags are decided on the
    rounded values, so displayed ties share the flag. Published reference
    rows, when included, never take part in flagging.
    """
    if not reports:
        raise ValueError("compare needs at least one report")
    if aggregate not in ("mean", "pooled"):
        raise ValueError("aggregate must be 'mean' or 'pooled'")
    rows = []
    for rep in sorted(reports, key=lambda r: r.model_name):
        agg = rep.aggregate_mean if aggregate == "mean" else rep.aggregate_pooled
        rows.append(ComparisonRow(rep.model_name, round(100 * agg.accuracy, 2),
                                  round(100 * agg.dice, 2), round(100 * agg.jaccard, 2)))
    best = {c: max(getattr(r, f"{c}_pct") for r in rows) for c in COLUMNS}
    for r in rows:
        r.best = tuple(c for c in COLUMNS if getattr(r, f"{c}_pct") == best[c])
    if include_reference:
        rows += reference_rows(include_prior_work=True)
    return ComparisonTable(rows)


# -- mask export ---------------------------------------------------------------


def write_mask(mask: np.ndarray, path: str | Path) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray((np.asarray(mask) > 0).astype(np.uint8) * 255).save(path)
    except OSError as exc:
        raise UnwritableOutputError(f"cannot write {path}: {exc}", path=str(path)) from exc
    return path


def predict(model: Predictor, image_path: str | Path, output_path: str | Path, threshold: float = 0.5,
            preprocess: PreprocessConfig | None = None) -> Path:
    """Segment one frame and write a 0/255 mask at the frame's original size."""
    preprocess = preprocess or PreprocessConfig()
    raw = read_rgb(image_path)
    source = (raw.shape[1], raw.shape[0])
    if source[0] < preprocess.crop_target[0] or source[1] < preprocess.crop_target[1]:
        raise ShapeMismatchError(f"{image_path}: {source} is smaller than the crop {preprocess.crop_target}")
    image, _ = prepare_geometry(raw, None, preprocess)
    batch = normalize(image, preprocess.normalization).astype(np.float32)[None]
    pred = metrics.binarize(_predict_batch(model, batch)[0], threshold)
    return write_mask(restore_geometry(pred, source, preprocess), output_path)
