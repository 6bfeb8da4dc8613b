"""Single-file model checkpoints.

Layout::

    POLYPSEG-CHECKPOINT\\n
    {"format_version": "1", "architecture": {...}, "metadata": {...},
     "payload_bytes": N, "payload_sha256": "..."}\\n
    <N bytes of torch.save({"state_dict": ..., "optimizer": ...})>

The first two lines are plain text, so ``head -2 model.ckpt`` shows what the
file holds.
"""
from __future__ import annotations

import hashlib
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import torch

from ..errors import ArchitectureMismatchError, CorruptCheckpointError, UnreadableFileError
from .unet import SegmentationNet, build_from_architecture

MAGIC = b"POLYPSEG-CHECKPOINT\n"
FORMAT_VERSION = "1"


@dataclass
class ModelCheckpoint:
    architecture: dict
    state_dict: dict
    metadata: dict = field(default_factory=dict)
    optimizer_state: dict | None = None
    path: Path | None = None

    @classmethod
    def from_model(cls, model: SegmentationNet, metadata: dict | None = None, optimizer_state=None):
        state = {k: v.detach().clone() for k, v in model.state_dict().items()}
        return cls(dict(model.architecture), state, dict(metadata or {}), optimizer_state)

    def build_model(self) -> SegmentationNet:
        model = build_from_architecture(self.architecture)
        try:
            model.load_state_dict(self.state_dict, strict=True)
        except RuntimeError as exc:
            raise ArchitectureMismatchError(
                f"parameters do not fit architecture {self.architecture.get('name')!r}: {str(exc)[:300]}"
            ) from exc
        model.eval()
        return model

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        buf = io.BytesIO()
        torch.save({"state_dict": self.state_dict, "optimizer": self.optimizer_state}, buf)
        payload = buf.getvalue()
        header = {
            "format_version": FORMAT_VERSION,
            "architecture": self.architecture,
            "metadata": self.metadata,
            "payload_bytes": len(payload),
            "payload_sha256": hashlib.sha256(payload).hexdigest(),
        }
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(path.suffix + ".tmp")
        with open(tmp, "wb") as fh:
            fh.write(MAGIC)
            fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
            fh.write(payload)
        tmp.replace(path)
        self.path = path
        return path


def read_checkpoint(path: str | Path) -> ModelCheckpoint:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise UnreadableFileError(f"cannot read checkpoint {path}: {exc}", path=str(path)) from exc
    if not raw.startswith(MAGIC):
        raise CorruptCheckpointError(f"{path} is not a checkpoint (bad magic)")
    end = raw.find(b"\n", len(MAGIC))
    if end < 0:
        raise CorruptCheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(raw[len(MAGIC) : end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCheckpointError(f"{path}: unreadable header ({exc})") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise CorruptCheckpointError(f"{path}: unsupported format version {header.get('format_version')!r}")
    payload = raw[end + 1 :]
    if len(payload) != header.get("payload_bytes") or (
        hashlib.sha256(payload).hexdigest() != header.get("payload_sha256")
    ):
        raise CorruptCheckpointError(
            f"{path}: payload is {len(payload)} bytes, header promises {header.get('payload_bytes')}"
        )
    try:
        blob = torch.load(io.BytesIO(payload), map_location="cpu", weights_only=True)
    except Exception as exc:
        raise CorruptCheckpointError(f"{path}: cannot decode parameters ({exc})") from exc
    return ModelCheckpoint(
        architecture=header["architecture"],
        state_dict=blob["state_dict"],
        metadata=header.get("metadata", {}),
        optimizer_state=blob.get("optimizer"),
        path=path,
    )


def save_checkpoint(model: SegmentationNet, path: str | Path, metadata: dict | None = None,
                    optimizer_state=None) -> ModelCheckpoint:
    ckpt = ModelCheckpoint.from_model(model, metadata, optimizer_state)
    ckpt.save(path)
    return ckpt


def load_checkpoint(path: str | Path, expected_architecture: dict | None = None) -> SegmentationNet:
    """Rebuild the model stored at ``path`` in evaluation mode.

    If ``expected_architecture`` is given, it must agree with the stored
    descriptor on every key it names.
    """
    ckpt = read_checkpoint(path)
    if expected_architecture is not None:
        check_architecture(ckpt.architecture, expected_architecture)
    return ckpt.build_model()


def check_architecture(stored: dict, expected: dict):
    diffs = {k: (stored.get(k), v) for k, v in expected.items() if stored.get(k) != v}
    if diffs:
        detail = ", ".join(f"{k}: stored {a!r} vs expected {b!r}" for k, (a, b) in diffs.items())
        raise ArchitectureMismatchError(f"architecture mismatch ({detail})")
