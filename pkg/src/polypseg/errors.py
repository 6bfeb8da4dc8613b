"""Exception hierarchy.

Every error carries a short machine-readable ``kind`` and the process exit
code the CLI should use when it escapes to the top level.
"""
from __future__ import annotations


class PolypSegError(Exception):
    kind = "error"
    exit_code = 4

    def __init__(self, message: str, **details):
        super().__init__(message)
        self.details = details


class ConfigError(PolypSegError, ValueError):
    kind = "invalid-config"
    exit_code = 2

    def __init__(self, message: str, key: str | None = None, **details):
        super().__init__(message, key=key, **details)
        self.key = key


class DataError(PolypSegError):
    kind = "data-error"
    exit_code = 3


class EmptyDatasetError(DataError):
    kind = "empty-dataset"


class MissingMaskError(DataError):
    kind = "missing-mask"


class OrphanMaskError(DataError):
    kind = "orphan-mask"


class UnreadableFileError(DataError):
    kind = "unreadable-file"


class UnwritableOutputError(DataError):
    kind = "unwritable-output"


class UnknownIdError(DataError, KeyError):
    kind = "unknown-id"

    def __str__(self):
        return self.args[0]


class DimensionMismatchError(DataError):
    kind = "dimension-mismatch"


class DatasetTooSmallError(DataError):
    kind = "dataset-too-small"


class EmptySplitError(DataError):
    kind = "empty-split"


class ModelError(PolypSegError):
    kind = "model-error"


class UnknownEncoderError(ModelError, KeyError):
    kind = "unknown-encoder"

    def __str__(self):
        return self.args[0]


class InvalidInputSizeError(ModelError, ValueError):
    kind = "invalid-input-size"


class PretrainedWeightsUnavailableError(ModelError):
    kind = "pretrained-weights-unavailable"


class ShapeMismatchError(PolypSegError, ValueError):
    kind = "shape-mismatch"


class CorruptCheckpointError(ModelError):
    kind = "corrupt-checkpoint"


class ArchitectureMismatchError(ModelError):
    kind = "architecture-mismatch"


class NonFiniteLossError(PolypSegError, FloatingPointError):
    kind = "non-finite-loss"
