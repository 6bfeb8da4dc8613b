"""Prediction stubs with known outputs."""
import numpy as np

from polypseg.dataset import load_sample
from polypseg.preprocess import prepare_geometry


class ReplayStub:
    """Returns pre-computed masks in manifest order, one batch per call.

    ``evaluate`` walks a split in ``manifest.ids(split)`` order, so queueing
    the matching masks turns the stub into an oracle predictor.
    """

    name = "stub"

    def __init__(self, masks):
        self.queue = [np.asarray(m, dtype=np.float32) for m in masks]

    def __call__(self, images):
        out = np.stack(self.queue[: len(images)])
        del self.queue[: len(images)]
        return out[..., None]


def truth_masks(manifest, split, preprocess):
    masks = []
    for sample_id in manifest.ids(split):
        s = load_sample(manifest, sample_id)
        masks.append(prepare_geometry(s.image, s.mask, preprocess)[1])
    return masks


def ground_truth_stub(manifest, split, preprocess):
    return ReplayStub(truth_masks(manifest, split, preprocess))


ACCEPTANCE_LINES: list[str] = []


class criterion:
    """Context manager that logs one PASS/FAIL line for an acceptance criterion."""

    def __init__(self, number, title):
        self.number, self.title = number, title
        self.detail = ""

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        status = "PASS" if exc_type is None else "FAIL"
        line = f"[{status}] criterion {self.number}: {self.title}"
        if self.detail:
            line += f" ({self.detail})"
        if exc_type is not None and exc is not None:
            line += f": {str(exc).splitlines()[0] if str(exc) else exc_type.__name__}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return False
