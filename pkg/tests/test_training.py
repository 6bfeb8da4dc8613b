import hashlib
import math

import numpy as np
import pytest
import torch

from polypseg import training
from polypseg.augment import AugmentationPolicy, AugmentOp
from polypseg.dataset import DatasetManifest, scan_dataset
from polypseg.errors import ArchitectureMismatchError, ConfigError, EmptySplitError, NonFiniteLossError
from polypseg.models import build_model, read_checkpoint
from polypseg.preprocess import PreprocessConfig
from polypseg.training import TrainConfig, loss_fn, resume, steps_per_epoch, train

TINY = PreprocessConfig(crop_target=(128, 128), network_input=(32, 32))


def assign(manifest, train_n, val_n):
    ids = manifest.ids()
    split = {i: "train" for i in ids[:train_n]}
    split.update({i: "val" for i in ids[train_n : train_n + val_n]})
    split.update({i: "test" for i in ids[train_n + val_n :]})
    return DatasetManifest(manifest.entries, split)


@pytest.fixture(scope="module")
def tiny_manifest(small_dataset):
    return assign(scan_dataset(small_dataset), 5, 2)


def tiny_model(seed=0):
    return build_model("unet_baseline", (32, 32), base_channels=4, depth=2, seed=seed)


def tiny_config(**kw):
    base = dict(learning_rate=1e-3, epochs=1, preprocess=TINY, log=None, seed=1,
                augmentation=AugmentationPolicy(seed=2))
    base.update(kw)
    return TrainConfig(**base)


def param_hash(model):
    h = hashlib.sha256()
    for k, v in model.state_dict().items():
        h.update(k.encode())
        h.update(v.detach().cpu().numpy().tobytes())
    return h.hexdigest()


def test_bce_at_half_is_ln2():
    p = np.full((4, 4), 0.5)
    t = (np.arange(16).reshape(4, 4) % 2).astype(float)
    assert loss_fn(p, t, "bce") == pytest.approx(math.log(2), abs=1e-12)


def test_dice_loss_limits():
    t = np.zeros((1, 1, 4, 4))
    t[..., :2, :] = 1
    assert loss_fn(t, t, "dice_loss") == pytest.approx(0.0, abs=1e-6)
    # all-wrong prediction: 1 - 1 / (|t| + 1)
    assert loss_fn(np.zeros_like(t), t, "dice_loss") == pytest.approx(1 - 1 / 9, abs=1e-6)


def test_combined_loss_is_sum_and_differentiable():
    p = torch.rand(2, 1, 4, 4, dtype=torch.float64, requires_grad=True)
    t = (torch.rand(2, 1, 4, 4) > 0.5).double()
    total = loss_fn(p, t, "bce_plus_dice")
    assert total.item() == pytest.approx((loss_fn(p, t, "bce") + loss_fn(p, t, "dice_loss")).item(), abs=1e-12)
    total.backward()
    assert torch.isfinite(p.grad).all()


def test_bad_loss_and_config_values():
    with pytest.raises(ConfigError):
        loss_fn(np.zeros(3), np.zeros(3), "focal")
    with pytest.raises(ConfigError):
        TrainConfig(learning_rate=0)
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=0)


def test_steps_per_epoch():
    assert steps_per_epoch(240, 2) == 120
    assert steps_per_epoch(5, 2) == 3


def test_each_train_sample_once_per_epoch(tiny_manifest, monkeypatch):
    seen = []
    original = training._SampleSource.arrays

    def spy(self, sample_id, policy=None, rng=None):
        if policy is not None:
            seen.append(sample_id)
        return original(self, sample_id, policy, rng)

    monkeypatch.setattr(training._SampleSource, "arrays", spy)
    calls = []
    model = tiny_model()
    model.register_forward_hook(lambda m, i, o: calls.append(m.training))
    train(model, tiny_manifest, tiny_config(epochs=2))
    train_ids = tiny_manifest.ids("train")
    assert sorted(seen[:5]) == sorted(train_ids) and sorted(seen[5:]) == sorted(train_ids)
    assert seen[:5] != seen[5:]  # reshuffled between epochs
    assert sum(calls) == 2 * steps_per_epoch(5, 2)


def test_single_adam_step_decreases_loss(small_dataset):
    manifest = assign(scan_dataset(small_dataset), 2, 1)
    source = training._SampleSource(manifest, TINY, cache=True)
    x, y = training._stack([source.arrays(i) for i in manifest.ids("train")], torch.float32)
    successes = 0
    for seed in range(10):
        model = tiny_model(seed).train()
        opt = torch.optim.Adam(model.parameters(), lr=1e-5, betas=(0.9, 0.999))
        before = loss_fn(model(x), y)
        opt.zero_grad()
        before.backward()
        opt.step()
        with torch.no_grad():
            after = loss_fn(model(x), y)
        successes += after.item() < before.item()
    assert successes >= 9


def test_best_checkpoint_matches_history(tiny_manifest, tmp_path):
    best, history = train(tiny_model(), tiny_manifest, tiny_config(epochs=3, checkpoint_dir=tmp_path))
    assert [r.epoch for r in history.records] == [1, 2, 3]
    top = max(r.val_dice for r in history.records)
    assert best.metadata["best_val_dice"] == top
    on_disk = read_checkpoint(tmp_path / "best.ckpt")
    assert on_disk.metadata["epoch"] == history.best.epoch
    assert (tmp_path / "history.csv").read_text().count("\n") == 4
    assert read_checkpoint(tmp_path / "last.ckpt").optimizer_state is not None


def test_non_finite_loss_aborts_and_keeps_last_finite(tiny_manifest, tmp_path):
    model = tiny_model()
    calls = {"n": 0}

    def poison(module, inputs, output):
        if module.training:
            calls["n"] += 1
            if calls["n"] >= 4:
                return output * float("nan")
        return output

    model.register_forward_hook(poison)
    with pytest.raises(NonFiniteLossError) as info:
        train(model, tiny_manifest, tiny_config(epochs=3, checkpoint_dir=tmp_path))
    assert info.value.details["step"] == 3
    assert len(info.value.details["batch_ids"]) >= 1
    saved = read_checkpoint(tmp_path / "last_finite.ckpt")
    assert saved.metadata["epoch"] == 1
    assert all(torch.isfinite(v).all() for v in saved.state_dict.values() if v.is_floating_point())


def test_resume_equals_uninterrupted(tiny_manifest, tmp_path):
    straight = tiny_model()
    train(straight, tiny_manifest, tiny_config(epochs=2, checkpoint_dir=tmp_path / "a"))

    first = tiny_model()
    train(first, tiny_manifest, tiny_config(epochs=1, checkpoint_dir=tmp_path / "b"))
    resumed = tiny_model(seed=99)
    _, history = resume(tmp_path / "b" / "last.ckpt", tiny_manifest,
                        tiny_config(epochs=2, checkpoint_dir=tmp_path / "b"), model=resumed)
    assert [r.epoch for r in history.records] == [1, 2]
    assert param_hash(resumed) == param_hash(straight)


def test_resume_rejects_other_encoder(tiny_manifest, tmp_path):
    train(tiny_model(), tiny_manifest, tiny_config(checkpoint_dir=tmp_path))
    with pytest.raises(ArchitectureMismatchError):
        resume(tmp_path / "last.ckpt", tiny_manifest, tiny_config(epochs=2), encoder_name="resnet34")
    with pytest.raises(ArchitectureMismatchError):
        resume(tmp_path / "best.ckpt", tiny_manifest, tiny_config(epochs=2))


def test_empty_validation_split(small_dataset):
    manifest = assign(scan_dataset(small_dataset), 5, 0)
    with pytest.raises(EmptySplitError):
        train(tiny_model(), manifest, tiny_config())


def test_input_size_must_match_preprocess(tiny_manifest):
    with pytest.raises(ConfigError):
        train(build_model("unet_baseline", (64, 64), base_channels=4, depth=2), tiny_manifest, tiny_config())


def test_no_augmentation_path(tiny_manifest):
    policy = AugmentationPolicy([AugmentOp("vflip", 0.0)])
    a, b = tiny_model(), tiny_model()
    train(a, tiny_manifest, tiny_config(augmentation=policy))
    train(b, tiny_manifest, tiny_config(augmentation=None))
    assert param_hash(a) == param_hash(b)
