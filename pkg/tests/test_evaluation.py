import numpy as np
import pytest
from helpers import ReplayStub, ground_truth_stub, truth_masks
from PIL import Image

from polypseg.dataset import read_mask
from polypseg.errors import ConfigError, UnreadableFileError
from polypseg.evaluation import (
    PUBLISHED_RESULTS,
    ImageMetrics,
    MetricsReport,
    compare,
    evaluate,
    predict,
    reference_rows,
)
from polypseg.metrics import ConfusionCounts
from polypseg.models import build_model


def test_ground_truth_stub_scores_one(small_manifest, small_preprocess):
    stub = ground_truth_stub(small_manifest, "test", small_preprocess)
    report = evaluate(stub, small_manifest, preprocess=small_preprocess, batch_size=2)
    assert report.n_test == len(small_manifest.ids("test"))
    for agg in (report.aggregate_mean, report.aggregate_pooled):
        assert agg.dice == 1.0 and agg.jaccard == 1.0 and agg.accuracy == 1.0


def test_all_background_stub(small_manifest, small_preprocess):
    truths = truth_masks(small_manifest, "test", small_preprocess)
    stub = ReplayStub([np.zeros_like(t) for t in truths])
    report = evaluate(stub, small_manifest, preprocess=small_preprocess)
    for row, truth in zip(report.per_image, truths):
        assert row.dice == 0.0 and row.jaccard == 0.0
        assert row.accuracy == pytest.approx(np.mean(truth == 0), abs=1e-15)


def test_pooled_uses_summed_counts(small_manifest, small_preprocess):
    truths = truth_masks(small_manifest, "test", small_preprocess)
    rng = np.random.default_rng(0)
    preds = [(rng.random(t.shape) > 0.5).astype(np.uint8) for t in truths]
    report = evaluate(ReplayStub(preds), small_manifest, preprocess=small_preprocess)
    tp = sum(int(((p == 1) & (t == 1)).sum()) for p, t in zip(preds, truths))
    tn = sum(int(((p == 0) & (t == 0)).sum()) for p, t in zip(preds, truths))
    total = sum(t.size for t in truths)
    assert report.pooled_counts.tp == tp
    assert report.aggregate_pooled.accuracy == pytest.approx((tp + tn) / total, abs=1e-15)
    assert report.aggregate_mean.dice == pytest.approx(np.mean([r.dice for r in report.per_image]))


def test_threshold_is_applied(small_manifest, small_preprocess):
    truths = truth_masks(small_manifest, "test", small_preprocess)
    half = [t * 0.6 for t in truths]
    assert evaluate(ReplayStub(half), small_manifest, threshold=0.5,
                    preprocess=small_preprocess).aggregate_mean.dice == 1.0
    assert evaluate(ReplayStub(half), small_manifest, threshold=0.7,
                    preprocess=small_preprocess).aggregate_mean.dice == 0.0


def test_model_input_must_match(small_manifest, small_preprocess):
    model = build_model("unet_baseline", (64, 64), base_channels=4)
    with pytest.raises(ConfigError):
        evaluate(model, small_manifest, preprocess=small_preprocess)


def test_real_model_and_mask_export(small_manifest, small_preprocess, tmp_path):
    model = build_model("unet_baseline", (128, 128), base_channels=4, depth=2)
    report = evaluate(model, small_manifest, preprocess=small_preprocess, export_dir=tmp_path)
    assert report.model_name == "unet_baseline"
    for sample_id in small_manifest.ids("test"):
        mask = np.asarray(Image.open(tmp_path / f"{sample_id}.png"))
        assert mask.shape == (140, 160)
        assert set(np.unique(mask)) <= {0, 255}


def _report(name, dice, jaccard, accuracy):
    rows = [ImageMetrics("a", dice, jaccard, accuracy, ConfusionCounts(1, 1, 1, 1))]
    return MetricsReport.from_per_image(name, rows)


def test_report_round_trip(tmp_path, small_manifest, small_preprocess):
    report = evaluate(ground_truth_stub(small_manifest, "test", small_preprocess), small_manifest,
                      preprocess=small_preprocess, config_hash="abc")
    assert MetricsReport.from_json(report.to_json()) == report
    report.write(tmp_path)
    assert MetricsReport.read(tmp_path) == report
    lines = (tmp_path / "report.csv").read_text().splitlines()
    assert lines[0] == "id,dice,jaccard,accuracy"
    assert lines[-2].startswith("mean,") and lines[-1].startswith("pooled,")


def test_compare_sorts_and_flags():
    table = compare([_report("b", 0.9, 0.8, 0.95), _report("a", 0.85, 0.8, 0.99)])
    assert [r.model for r in table.rows] == ["a", "b"]
    assert table.best_model("dice") == ["b"]
    assert table.best_model("accuracy") == ["a"]
    assert sorted(table.best_model("jaccard")) == ["a", "b"]
    csv = table.to_csv().splitlines()
    assert csv[0] == "model,accuracy_pct,dice_pct,jaccard_pct,best_flags"
    assert csv[1] == "a,99.00,85.00,80.00,accuracy|jaccard"


def test_compare_single_row_and_reference():
    table = compare([_report("x", 0.5, 1 / 3, 0.9)], include_reference=True)
    assert table.rows[0].best == ("accuracy", "dice", "jaccard")
    refs = [r for r in table.rows if r.reference]
    assert len(refs) == len(PUBLISHED_RESULTS) + 5
    assert all(not r.best for r in refs)
    assert "published:densenet169" in table.render()


def test_reference_table_values():
    ref = {r.model: r for r in reference_rows()}
    r = ref["published:densenet169"]
    assert (r.accuracy_pct, r.dice_pct, r.jaccard_pct) == (99.15, 90.87, 83.82)
    assert max(PUBLISHED_RESULTS, key=lambda k: PUBLISHED_RESULTS[k][1]) == "densenet169"


def test_predict_writes_full_resolution_mask(small_dataset, small_preprocess, tmp_path):
    image = small_dataset / "images" / "001.png"
    always = lambda batch: np.ones(batch.shape[:3] + (1,), np.float32)  # noqa: E731
    out = predict(always, image, tmp_path / "pred.png", preprocess=small_preprocess)
    mask = np.asarray(Image.open(out))
    assert mask.shape == (140, 160)
    assert set(np.unique(mask)) == {0, 255}
    # foreground exactly on the 128x128 crop window
    assert mask[6:134, 16:144].min() == 255
    assert mask.sum() == 255 * 128 * 128
    np.testing.assert_array_equal(read_mask(out), (mask > 0).astype(np.uint8))


def test_predict_missing_image(tmp_path, small_preprocess):
    with pytest.raises(UnreadableFileError):
        predict(lambda b: b[..., :1], tmp_path / "nope.png", tmp_path / "o.png", preprocess=small_preprocess)
