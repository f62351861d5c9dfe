import math

import numpy as np
import pandas as pd
import pytest

from freecond.errors import ConflictError, DimensionError, DomainError, ParseError
from freecond.grid import LatentGrid, MaskGrid
from freecond.metrics import (
    PSNR_SENTINEL,
    ScoreTable,
    changed_mask,
    ingest_external_scores,
    iou,
    masked_region_metrics,
    psnr,
)


def _loop_iou(a: np.ndarray, b: np.ndarray) -> float:
    both = either = 0
    for i in range(a.shape[0]):
        for j in range(a.shape[1]):
            both += int(a[i, j] == 1 and b[i, j] == 1)
            either += int(a[i, j] == 1 or b[i, j] == 1)
    return both / either


def _loop_psnr(a: np.ndarray, b: np.ndarray, max_value: float) -> float:
    total = 0.0
    for index in np.ndindex(a.shape):
        total += (a[index] - b[index]) ** 2
    return 10 * math.log10(max_value**2 / (total / a.size))


def _write(path, text: str):
    path.write_text(text, encoding="utf-8")
    return path


def test_iou_trivial_cases():
    a = MaskGrid(np.array([[1.0, 1.0, 0.0]]))
    b = MaskGrid(np.array([[1.0, 0.0, 0.0]]))
    assert iou(a, a) == 1.0
    assert iou(MaskGrid(np.array([[1.0, 0.0]])), MaskGrid(np.array([[0.0, 1.0]]))) == 0.0
    assert iou(a, b) == 0.5


def test_iou_errors():
    with pytest.raises(DomainError):
        iou(MaskGrid.zeros(2, 2), MaskGrid.zeros(2, 2))
    with pytest.raises(DimensionError):
        iou(MaskGrid.ones(2, 2), MaskGrid.ones(3, 3))
    with pytest.raises(DomainError):
        iou(MaskGrid(np.full((2, 2), 0.5)), MaskGrid.ones(2, 2))


def test_iou_matches_pixel_loop(rng):
    for _ in range(100):
        a = rng.integers(0, 2, size=(8, 8)).astype(float)
        b = rng.integers(0, 2, size=(8, 8)).astype(float)
        a[0, 0] = 1.0
        assert iou(MaskGrid(a), MaskGrid(b)) == _loop_iou(a, b)
        assert iou(MaskGrid(a), MaskGrid(b)) == iou(MaskGrid(b), MaskGrid(a))


def test_iou_is_translation_invariant():
    a = np.zeros((8, 8))
    b = np.zeros((8, 8))
    a[1:4, 1:4] = 1.0
    b[2:5, 1:3] = 1.0
    moved_a = np.roll(a, (2, 3), axis=(0, 1))
    moved_b = np.roll(b, (2, 3), axis=(0, 1))
    assert iou(MaskGrid(a), MaskGrid(b)) == iou(MaskGrid(moved_a), MaskGrid(moved_b))


def test_psnr_of_identical_images_is_the_sentinel():
    image = LatentGrid(np.full((3, 4, 4), 0.3))
    assert psnr(image, image) == PSNR_SENTINEL
    assert math.isinf(PSNR_SENTINEL)


def test_psnr_of_black_and_white_is_zero():
    black = np.zeros((4, 4), dtype=np.uint8)
    white = np.full((4, 4), 255, dtype=np.uint8)
    assert psnr(black, white, 255.0) == pytest.approx(0.0, abs=1e-12)


def test_psnr_with_unit_mse():
    a = np.zeros((2, 2))
    b = np.array([[1.0, -1.0], [1.0, -1.0]])
    assert psnr(a, b, 255.0) == pytest.approx(48.1308, abs=1e-3)


def test_psnr_matches_pixel_loop(rng):
    for _ in range(100):
        a = rng.uniform(size=(8, 8))
        b = rng.uniform(size=(8, 8))
        value = psnr(a, b, 1.0)
        assert abs(value - _loop_psnr(a, b, 1.0)) <= 1e-9
        assert value == psnr(b, a, 1.0)


def test_psnr_decreases_with_error():
    a = np.zeros((4, 4))
    assert psnr(a, np.full((4, 4), 0.1), 1.0) > psnr(a, np.full((4, 4), 0.2), 1.0)


def test_psnr_errors():
    with pytest.raises(DimensionError):
        psnr(np.zeros((2, 2)), np.zeros((3, 3)), 1.0)
    with pytest.raises(DomainError):
        psnr(np.zeros((2, 2)), np.ones((2, 2)), 0.0)


def test_changed_mask_uses_the_largest_channel_change():
    reference = LatentGrid(np.zeros((3, 2, 2)))
    values = np.zeros((3, 2, 2))
    values[2, 0, 1] = 0.5
    values[0, 1, 1] = 0.01
    changed = changed_mask(LatentGrid(values), reference, threshold=0.02)
    np.testing.assert_array_equal(changed.values, [[0.0, 1.0], [0.0, 0.0]])


def test_region_metrics_of_an_unchanged_image():
    image = LatentGrid(np.full((3, 4, 4), 0.5))
    metrics = masked_region_metrics(image, image, MaskGrid(np.eye(4)))
    assert metrics == {"psnr_outside": PSNR_SENTINEL, "changed_fraction_inside": 0.0}


def test_region_metrics_ignore_changes_inside_the_mask():
    reference = LatentGrid(np.full((3, 4, 4), 0.5))
    mask = np.zeros((4, 4))
    mask[1:3, 1:3] = 1.0
    output = reference.values.copy()
    output[:, 1, 1] = 1.0
    metrics = masked_region_metrics(LatentGrid(output), reference, MaskGrid(mask))
    assert metrics["psnr_outside"] == PSNR_SENTINEL
    assert metrics["changed_fraction_inside"] == 0.25


def test_region_metrics_match_pixel_loop(rng):
    reference = rng.uniform(size=(3, 4, 4))
    output = rng.uniform(size=(3, 4, 4))
    mask = np.zeros((4, 4))
    mask[0:2, 1:4] = 1.0
    total = count = changed = 0
    for i in range(4):
        for j in range(4):
            if mask[i, j] == 0:
                for c in range(3):
                    total += (output[c, i, j] - reference[c, i, j]) ** 2
                    count += 1
            elif max(abs(output[c, i, j] - reference[c, i, j]) for c in range(3)) > 0.02:
                changed += 1
    metrics = masked_region_metrics(LatentGrid(output), LatentGrid(reference), MaskGrid(mask), 0.02, 1.0)
    assert metrics["psnr_outside"] == pytest.approx(10 * math.log10(1.0 / (total / count)), abs=1e-9)
    assert metrics["changed_fraction_inside"] == changed / 6


def test_region_metrics_need_both_regions():
    image = LatentGrid(np.zeros((3, 2, 2)))
    with pytest.raises(DomainError):
        masked_region_metrics(image, image, MaskGrid.zeros(2, 2))
    with pytest.raises(DomainError):
        masked_region_metrics(image, image, MaskGrid.ones(2, 2))


def test_header_only_csv_adds_nothing(tmp_path):
    table = ingest_external_scores(_write(tmp_path / "scores.csv", "sample,method,metric,value\n"))
    assert len(table) == 0


def test_external_rows_are_tagged(tmp_path):
    path = _write(tmp_path / "scores.csv", "sample,method,metric,value\ns1,freecond,clip,18.27\n")
    rows = ingest_external_scores(path).rows
    assert rows.loc[0, "provenance"] == "external"
    assert rows.loc[0, "value"] == 18.27


def test_duplicate_triple_names_both_lines(tmp_path):
    path = _write(
        tmp_path / "scores.csv",
        "sample,method,metric,value\ns1,m,clip,1.0\ns2,m,clip,2.0\ns1,m,clip,3.0\n",
    )
    with pytest.raises(ConflictError, match=r"line 4.*line 2"):
        ingest_external_scores(path)


def test_computed_and_external_scores_conflict(tmp_path):
    table = ScoreTable()
    table.add("s1", "m", "clip", 1.0)
    path = _write(tmp_path / "scores.csv", "sample,method,metric,value\ns1,m,clip,1.0\n")
    with pytest.raises(ConflictError):
        ingest_external_scores(path, table)


@pytest.mark.parametrize(
    "text, line",
    [
        ("sample,method,metric,value\ns1,m,clip,abc\n", 2),
        ("sample,method,metric,value\ns1,m,clip,1.0\ns2,m,clip\n", 3),
        ("sample,method,metric,value\ns1,m,clip,1.0\ns2,m,clip,1.0,extra\n", 3),
        ("sample,method,metric,value\ns1,m,clip,1.0\n\ns2,m,clip,2.0\n", 3),
        ("sample,method,score,value\n", 1),
    ],
)
def test_malformed_rows_report_their_line(tmp_path, text, line):
    with pytest.raises(ParseError) as error:
        ingest_external_scores(_write(tmp_path / "scores.csv", text))
    assert error.value.line == line


def test_aggregate_means():
    table = ScoreTable()
    table.add("s1", "m", "clip", 0.4)
    single = table.aggregate()
    assert single.loc[0, "mean"] == 0.4
    table.add("s2", "m", "clip", 0.6)
    assert table.aggregate().loc[0, "mean"] == pytest.approx(0.5)


def test_aggregate_counts_sentinels_separately():
    table = ScoreTable()
    for sample, value in (("s1", PSNR_SENTINEL), ("s2", 20.0), ("s3", 30.0)):
        table.add(sample, "m", "psnr", value)
    row = table.aggregate().iloc[0]
    assert row["mean"] == 25.0
    assert row["count"] == 2
    assert row["sentinels"] == 1


def test_aggregate_of_empty_table():
    with pytest.raises(DomainError):
        ScoreTable().aggregate()


def test_export_and_ingest_keep_the_aggregate(tmp_path):
    table = ScoreTable()
    table.add("s1", "baseline", "psnr", PSNR_SENTINEL)
    table.add("s1", "freecond", "psnr", 31.25)
    table.add("s2", "freecond", "psnr", 1 / 3)
    table.add("s1", "freecond", "iou", 0.7)
    path = table.export(tmp_path / "metrics.csv")
    assert path.read_text().splitlines()[0] == "sample,method,metric,value"
    pd.testing.assert_frame_equal(ingest_external_scores(path).aggregate(), table.aggregate())


def test_summary_is_method_by_metric():
    table = ScoreTable()
    table.add("s1", "baseline", "clip", 11.45)
    table.add("s1", "freecond", "clip", 18.27)
    summary = table.summary()
    assert summary.loc["freecond", "clip"] == 18.27


@pytest.mark.parametrize(
    "text, error",
    [
        ("sample,method,metric,value\na,m,clip,1\nb,m,clip,2\na,m,clip,3\n", ConflictError),
        ("sample,method,metric,value\na,m,clip,1\nb,m,clip,oops\n", ParseError),
        ("sample,method,metric,value\nc,m,clip,1\nseen,m,clip,2\n", ConflictError),
    ],
)
def test_rejected_file_leaves_the_table_unchanged(tmp_path, text, error):
    table = ScoreTable()
    table.add("seen", "m", "clip", 0.5)
    before = table.rows
    with pytest.raises(error):
        ingest_external_scores(_write(tmp_path / "scores.csv", text), table)
    assert len(table) == 1
    pd.testing.assert_frame_equal(table.rows, before)


def test_merge_is_all_or_nothing():
    table = ScoreTable()
    table.add("s1", "m", "clip", 1.0)
    other = ScoreTable()
    other.add("s2", "m", "clip", 2.0)
    other.add("s1", "m", "clip", 3.0)
    with pytest.raises(ConflictError):
        table.merge(other)
    assert len(table) == 1
    other = ScoreTable()
    other.add("s2", "m", "clip", 2.0)
    assert len(table.merge(other)) == 2


def test_iou_is_symmetric(rng):
    for _ in range(100):
        a = MaskGrid(rng.integers(0, 2, size=(6, 6)).astype(float))
        b = MaskGrid(rng.integers(0, 2, size=(6, 6)).astype(float))
        if a.count() + b.count() == 0:
            continue
        assert iou(a, b) == iou(b, a)
