import numpy as np
import pytest
from helpers import ACCEPTANCE_LINES

from polypseg.dataset import scan_dataset, split_manifest
from polypseg.preprocess import PreprocessConfig
from polypseg.synthetic import make_synthetic_dataset


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """10 synthetic 160x140 frames."""
    return make_synthetic_dataset(tmp_path_factory.mktemp("synthetic") / "data", n=10, size=(160, 140), margin=10)


@pytest.fixture(scope="session")
def small_preprocess():
    return PreprocessConfig(crop_target=(128, 128), network_input=(128, 128))


@pytest.fixture(scope="session")
def small_manifest(small_dataset):
    return split_manifest(scan_dataset(small_dataset), 0.3, 0.2, seed=3)
