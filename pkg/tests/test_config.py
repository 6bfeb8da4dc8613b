import pytest

from polypseg.config import DEFAULTS, ExperimentConfig
from polypseg.errors import ConfigError


def test_defaults_are_valid():
    cfg = ExperimentConfig.from_dict({})
    assert cfg["train.lr"] == 1e-5
    assert cfg.train_config().batch_size == 2
    assert cfg.preprocess().network_input == (512, 512)


def test_nested_yaml_and_float_strings(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("train:\n  lr: 1e-4\n  epochs: 3\nmodel.encoder: resnet34\n")
    cfg = ExperimentConfig.load(path)
    assert cfg["train.lr"] == 1e-4 and cfg["train.epochs"] == 3
    assert cfg.model_name == "resnet34"


def test_unknown_key_is_named():
    with pytest.raises(ConfigError) as info:
        ExperimentConfig.from_dict({"train.learning_rate": 0.1})
    assert info.value.key == "train.learning_rate"


@pytest.mark.parametrize("key,value", [
    ("model.encoder", "alexnet"),
    ("split.test_fraction", 1.5),
    ("preprocess.input", "500x500"),
    ("train.loss", "focal"),
    ("augment", [{"op": "warp", "p": 0.5}]),
    ("eval.threshold", 2.0),
])
def test_invalid_values(key, value):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({key: value})


def test_round_trip_and_hash(tmp_path):
    cfg = ExperimentConfig.from_dict({"model.encoder": "vgg16", "train.epochs": 7})
    again = ExperimentConfig.load(cfg.save(tmp_path / "c.yaml"))
    assert again.values == cfg.values
    assert again.config_hash == cfg.config_hash
    assert cfg.with_overrides({"train.epochs": 8}).config_hash != cfg.config_hash
    assert set(cfg.values) == set(DEFAULTS)


def test_missing_dataset_root():
    with pytest.raises(ConfigError) as info:
        ExperimentConfig.from_dict({}).dataset_root()
    assert info.value.key == "dataset.root"
