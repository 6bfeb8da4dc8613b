"""Image/mask pair discovery, train/val/test splitting and sample loading.

Layout on disk::

    <root>/images/<id>.<ext>
    <root>/masks/<id>.<ext>

The manifest is persisted as CSV (``id,image_path,mask_path,split``) preceded
by a single ``#`` sidecar line that records the seed, the split fractions and
the source resolution.
"""
from __future__ import annotations

import csv
import fnmatch
import io
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import (
    ConfigError,
    DatasetTooSmallError,
    DimensionMismatchError,
    EmptyDatasetError,
    MissingMaskError,
    OrphanMaskError,
    UnknownIdError,
    UnreadableFileError,
)

IMAGE_EXTENSIONS = (".png", ".bmp", ".tif", ".tiff")
SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    image_path: str
    mask_path: str


@dataclass
class ImageSample:
    """One RGB frame and its binary mask (0 background, 1 polyp)."""

    id: str
    image: np.ndarray  # H x W x 3, uint8
    mask: np.ndarray  # H x W, uint8 in {0, 1}

    def __post_init__(self):
        if self.image.shape[:2] != self.mask.shape[:2]:
            raise DimensionMismatchError(
                f"sample {self.id!r}: image {self.image.shape[:2]} vs mask {self.mask.shape[:2]}"
            )


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    split: dict[str, str] = field(default_factory=dict)
    seed: int | None = None
    test_fraction: float | None = None
    val_fraction: float | None = None
    source_resolution: tuple[int, int] | None = None  # (width, height)

    def __len__(self):
        return len(self.entries)

    @property
    def is_split(self) -> bool:
        return bool(self.split)

    def entry(self, sample_id: str) -> ManifestEntry:
        for e in self.entries:
            if e.id == sample_id:
                return e
        raise UnknownIdError(f"unknown sample id {sample_id!r}")

    def ids(self, split: str | None = None) -> list[str]:
        if split is None:
            return [e.id for e in self.entries]
        if split not in SPLITS:
            raise ValueError(f"split must be one of {SPLITS}, got {split!r}")
        return [e.id for e in self.entries if self.split.get(e.id) == split]

    # -- persistence -------------------------------------------------------

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        res = "" if self.source_resolution is None else "%dx%d" % self.source_resolution
        buf.write(
            f"# seed={'' if self.seed is None else self.seed}"
            f" test_fraction={'' if self.test_fraction is None else repr(float(self.test_fraction))}"
            f" val_fraction={'' if self.val_fraction is None else repr(float(self.val_fraction))}"
            f" source_resolution={res}\n"
        )
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["id", "image_path", "mask_path", "split"])
        for e in self.entries:
            writer.writerow([e.id, e.image_path, e.mask_path, self.split.get(e.id, "")])
        return buf.getvalue()

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_csv_text(), encoding="utf-8")
        return path

    @classmethod
    def load(cls, path: str | Path) -> "DatasetManifest":
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise UnreadableFileError(f"cannot read manifest {path}: {exc}", path=str(path)) from exc
        lines = text.splitlines()
        meta: dict[str, str] = {}
        if lines and lines[0].startswith("#"):
            for token in lines[0][1:].split():
                key, _, value = token.partition("=")
                meta[key] = value
            lines = lines[1:]
        entries, split = [], {}
        for row in csv.DictReader(lines):
            entries.append(ManifestEntry(row["id"], row["image_path"], row["mask_path"]))
            if row.get("split"):
                split[row["id"]] = row["split"]
        res = meta.get("source_resolution") or None
        return cls(
            entries=entries,
            split=split,
            seed=int(meta["seed"]) if meta.get("seed") else None,
            test_fraction=float(meta["test_fraction"]) if meta.get("test_fraction") else None,
            val_fraction=float(meta["val_fraction"]) if meta.get("val_fraction") else None,
            source_resolution=tuple(int(v) for v in res.split("x")) if res else None,
        )


def _index_dir(directory: Path, pattern: str) -> dict[str, Path]:
    found: dict[str, Path] = {}
    for path in sorted(directory.iterdir()):
        if not path.is_file() or path.suffix.lower() not in IMAGE_EXTENSIONS:
            continue
        if not fnmatch.fnmatch(path.name, pattern):
            continue
        if path.stem in found:
            raise UnreadableFileError(
                f"duplicate id {path.stem!r}: {found[path.stem]} and {path}", path=str(path)
            )
        found[path.stem] = path
    return found


def _image_size(path: Path) -> tuple[int, int]:
    try:
        with Image.open(path) as im:
            im.verify()
        with Image.open(path) as im:
            return im.size
    except (OSError, UnidentifiedImageError, SyntaxError) as exc:
        raise UnreadableFileError(f"unreadable file {path}: {exc}", path=str(path)) from exc


def scan_dataset(root_dir: str | Path, naming_convention: str = "*") -> DatasetManifest:
    """Pair every ``images/<id>`` with ``masks/<id>`` under ``root_dir``.

    ``naming_convention`` is a glob applied to file names in both directories;
    the id of a file is its stem. Entries come back sorted by id.
    """
    root = Path(root_dir)
    image_dir, mask_dir = root / "images", root / "masks"
    for d in (image_dir, mask_dir):
        if not d.is_dir():
            raise EmptyDatasetError(f"missing directory {d}", path=str(d))
    images = _index_dir(image_dir, naming_convention)
    masks = _index_dir(mask_dir, naming_convention)
    if not images and not masks:
        raise EmptyDatasetError(f"no image/mask files under {root}", path=str(root))
    for sample_id in sorted(images):
        if sample_id not in masks:
            raise MissingMaskError(
                f"image {images[sample_id]} has no mask (id {sample_id!r})",
                path=str(images[sample_id]),
            )
    for sample_id in sorted(masks):
        if sample_id not in images:
            raise OrphanMaskError(
                f"mask {masks[sample_id]} has no image (id {sample_id!r})",
                path=str(masks[sample_id]),
            )

    entries, sizes = [], Counter()
    for sample_id in sorted(images):
        sizes[_image_size(images[sample_id])] += 1
        _image_size(masks[sample_id])
        entries.append(ManifestEntry(sample_id, str(images[sample_id]), str(masks[sample_id])))
    resolution = next(iter(sizes)) if len(sizes) == 1 else None
    return DatasetManifest(entries=entries, source_resolution=resolution)


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def split_manifest(
    manifest: DatasetManifest,
    test_fraction: float = 0.2,
    val_fraction_of_trainval: float = 0.1,
    seed: int = 0,
) -> DatasetManifest:
    """Assign each entry to exactly one of train/val/test.

    Ids are sorted before a seeded permutation, so the result depends only on
    the set of ids and ``seed``. Test takes ``round(n * test_fraction)``
    entries; validation takes ``round(n_trainval * val_fraction_of_trainval)``
    of the remainder.
    """
    for key, value in (("split.test_fraction", test_fraction), ("split.val_fraction", val_fraction_of_trainval)):
        if not 0.0 < float(value) < 1.0:
            raise ConfigError(f"{key} must lie strictly between 0 and 1, got {value}", key=key)
    if len(manifest) == 0:
        raise EmptyDatasetError("cannot split an empty manifest")

    ids = sorted(e.id for e in manifest.entries)
    n = len(ids)
    n_test = _round_half_up(n * test_fraction)
    n_val = _round_half_up((n - n_test) * val_fraction_of_trainval)
    n_train = n - n_test - n_val
    if min(n_test, n_val, n_train) < 1:
        raise DatasetTooSmallError(
            f"{n} entries give an empty split (train={n_train}, val={n_val}, test={n_test})"
        )

    order = np.random.default_rng(seed).permutation(n)
    shuffled = [ids[i] for i in order]
    split = {}
    for i, sample_id in enumerate(shuffled):
        split[sample_id] = "test" if i < n_test else "val" if i < n_test + n_val else "train"
    return replace(
        manifest,
        entries=sorted(manifest.entries, key=lambda e: e.id),
        split=split,
        seed=int(seed),
        test_fraction=float(test_fraction),
        val_fraction=float(val_fraction_of_trainval),
    )


def read_rgb(path: str | Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()
    except (OSError, UnidentifiedImageError) as exc:
        raise UnreadableFileError(f"unreadable file {path}: {exc}", path=str(path)) from exc


def read_mask(path: str | Path) -> np.ndarray:
    """Read a mask file; any nonzero pixel becomes 1."""
    try:
        with Image.open(path) as im:
            if im.mode in ("RGB", "RGBA", "P"):
                raw = np.asarray(im.convert("RGB")).max(axis=-1)
            else:
                raw = np.asarray(im)
    except (OSError, UnidentifiedImageError) as exc:
        raise UnreadableFileError(f"unreadable file {path}: {exc}", path=str(path)) from exc
    if raw.ndim == 3:
        raw = raw.max(axis=-1)
    return (raw > 0).astype(np.uint8)


def load_sample(manifest: DatasetManifest, sample_id: str) -> ImageSample:
    entry = manifest.entry(sample_id)
    image = read_rgb(entry.image_path)
    mask = read_mask(entry.mask_path)
    if image.shape[:2] != mask.shape:
        raise DimensionMismatchError(
            f"sample {sample_id!r}: image is {image.shape[1]}x{image.shape[0]}, "
            f"mask is {mask.shape[1]}x{mask.shape[0]}",
            path=entry.mask_path,
        )
    return ImageSample(sample_id, image, mask)
