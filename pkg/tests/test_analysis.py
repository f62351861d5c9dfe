import hashlib

import numpy as np
import pandas as pd
import pytest

from freecond.analysis import (
    ConditionInputs,
    MaskPlacement,
    build_condition_pair,
    channel_influence,
    ci_reports,
    delta_ci,
    extract_attention_map,
    extract_self_attention_map,
    load_shift_records,
    mask_placement_classify,
    mfc_ci_response,
    run_dilation_experiment,
    run_shift_experiment,
    summarize_channels,
)
from freecond.conditioning import FreeCondParams, mask_image
from freecond.data_handler import load_test_case
from freecond.errors import DimensionError, DomainError
from freecond.grid import LatentGrid, MaskGrid
from freecond.sampler import inpaint
from freecond.utils import metadata


def _small_inputs(rng) -> tuple[LatentGrid, MaskGrid]:
    image = LatentGrid(rng.uniform(size=(3, 16, 16)))
    values = np.zeros((16, 16))
    values[4:12, 0:8] = 1.0
    return image, MaskGrid(values, binary=True)


def test_channel_sum_is_the_masked_mean_logit(rng):
    for _ in range(100):
        q = rng.normal(size=(16, 8))
        k = rng.normal(size=8)
        m = rng.uniform(size=16) * rng.integers(0, 2, size=16)
        m[rng.integers(0, 16)] = 1.0
        masked_mean = np.sum(m * (q @ k)) / m.sum()
        assert abs(channel_influence(q, m, k).sum() - masked_mean) <= 1e-9


def test_channel_influence_on_an_empty_region():
    with pytest.raises(DomainError, match="empty region"):
        channel_influence(np.ones((4, 2)), np.zeros(4), np.ones(2))


def test_channel_influence_checks_shapes():
    with pytest.raises(DimensionError):
        channel_influence(np.ones((4, 2)), np.ones(3), np.ones(2))


def test_delta_ci_of_identical_conditions_is_zero(rng, small_weights):
    image, mask = _small_inputs(rng)
    run_l, _, region = build_condition_pair(image, mask, small_weights, 5)
    delta = delta_ci(run_l, run_l, "a dog", small_weights, region)
    assert delta.shape == (8, 16)
    assert np.all(delta == 0.0)


def test_delta_ci_of_a_single_token(rng, small_weights):
    image, mask = _small_inputs(rng)
    run_l, run_n, region = build_condition_pair(image, mask, small_weights, 5)
    full = delta_ci(run_l, run_n, "a dog", small_weights, region)
    row = delta_ci(run_l, run_n, "a dog", small_weights, region, token_index=2)
    np.testing.assert_array_equal(row, full[2])
    assert np.any(full != 0.0)
    with pytest.raises(IndexError):
        delta_ci(run_l, run_n, "a dog", small_weights, region, token_index=8)


def test_delta_ci_requires_shared_noise(rng, small_weights):
    image, mask = _small_inputs(rng)
    run_l, _, region = build_condition_pair(image, mask, small_weights, 5)
    other = ConditionInputs(LatentGrid(run_l.z_t.values + 1.0), run_l.mask_condition, run_l.image_condition)
    with pytest.raises(DomainError):
        delta_ci(run_l, other, "a dog", small_weights, region)


def test_zero_mask_companion_sees_the_unmasked_image(rng, small_weights):
    image, mask = _small_inputs(rng)
    run_l, run_n, region = build_condition_pair(image, mask, small_weights, 5)
    assert run_l.z_t == run_n.z_t
    assert run_n.mask_condition.count() == 0
    assert region.count() == 4
    assert run_l.image_condition != run_n.image_condition


def test_report_shape_and_columns(rng, small_weights):
    image, mask = _small_inputs(rng)
    report = ci_reports(image, mask, "a dog", small_weights, 5)
    assert list(report.columns) == metadata.csv_columns("ci_report")
    assert len(report) == 8 * 16 * 2
    assert set(report["region"]) == {"inside-M", "outside-M"}
    assert (report["t"] == 6).all()
    labels = report.drop_duplicates("token_index").set_index("token_index")["token_label"]
    assert labels[1] == "a" and labels[2] == "dog"


def test_report_of_selected_tokens(rng, small_weights):
    image, mask = _small_inputs(rng)
    report = ci_reports(image, mask, "a dog", small_weights, 5, tokens=[1, 2], layer="cross")
    assert len(report) == 2 * 16 * 2
    assert set(report["layer"]) == {"cross"}
    with pytest.raises(IndexError):
        ci_reports(image, mask, "a dog", small_weights, 5, tokens=[9])


def test_same_companion_gives_zero_delta(rng, small_weights):
    image, mask = _small_inputs(rng)
    report = ci_reports(image, mask, "a dog", small_weights, 5, companion="same")
    assert (report["delta_ci"] == 0.0).all()


def test_report_of_a_full_mask_has_no_outside_region(rng, small_weights):
    image, _ = _small_inputs(rng)
    with pytest.raises(DomainError, match="empty region"):
        ci_reports(image, MaskGrid.ones(16, 16), "a dog", small_weights, 5)


def test_summarize_channels_splits_the_sum(rng, small_weights):
    image, mask = _small_inputs(rng)
    report = ci_reports(image, mask, "a dog", small_weights, 5, tokens=[1])
    summary = summarize_channels(report, 10)
    assert list(summary.columns) == ["token_index", "token_label", "region", "first_10", "rest"]
    inside = summary.set_index("region").loc["inside-M"]
    total = report.loc[report["region"] == "inside-M", "delta_ci"].sum()
    assert inside["first_10"] + inside["rest"] == pytest.approx(total, abs=1e-12)


def test_mfc_response_matches_report_at_baseline(rng, small_weights):
    image, mask = _small_inputs(rng)
    params = FreeCondParams(T=6)
    pd.testing.assert_frame_equal(
        mfc_ci_response(image, mask, "a dog", params, small_weights, 5),
        ci_reports(image, mask, "a dog", small_weights, 5),
    )
    scaled = mfc_ci_response(image, mask, "a dog", FreeCondParams(alpha=3.0, T=6), small_weights, 5)
    baseline = ci_reports(image, mask, "a dog", small_weights, 5)
    assert not np.array_equal(scaled["delta_ci"].to_numpy(), baseline["delta_ci"].to_numpy())


def test_attention_maps_cover_every_position(rng, small_weights):
    image, mask = _small_inputs(rng)
    result = inpaint(image, mask, "a dog", FreeCondParams(T=6), small_weights, 5, capture_attention=True)
    record = result.attention[0].cross_attention
    maps = [extract_attention_map(record, token).values for token in range(8)]
    assert maps[0].shape == (4, 4)
    np.testing.assert_allclose(np.sum(maps, axis=0), 1.0, atol=1e-12)
    with pytest.raises(IndexError):
        extract_attention_map(record, 8)
    self_map = extract_self_attention_map(result.attention[0].self_attention, 3)
    assert self_map.values.sum() == pytest.approx(1.0, abs=1e-12)


def test_mask_placement():
    object_values = np.zeros((8, 8))
    object_values[2:4, 2:4] = 1.0
    obj = MaskGrid(object_values, binary=True)
    half = np.zeros((8, 8))
    half[2:4, 2:3] = 1.0
    assert mask_placement_classify(obj, MaskGrid.ones(8, 8)) is MaskPlacement.FULLY_MASKED
    assert mask_placement_classify(obj, MaskGrid(half, binary=True)) is MaskPlacement.PARTIALLY_MASKED
    assert mask_placement_classify(obj, MaskGrid.zeros(8, 8)) is MaskPlacement.NOT_MASKED
    with pytest.raises(DomainError):
        mask_placement_classify(MaskGrid.zeros(8, 8), obj)
    with pytest.raises(DimensionError):
        mask_placement_classify(obj, MaskGrid.ones(4, 4))


def test_shift_experiment_uncovers_the_object(default_weights):
    case = load_test_case(1)
    params = FreeCondParams.default()
    experiment = run_shift_experiment(case.image, case.object_mask, case.prompt, 25, params, default_weights, 42)
    assert experiment.placements["original"] is MaskPlacement.FULLY_MASKED
    assert experiment.placements["shifted"] is MaskPlacement.PARTIALLY_MASKED
    original_condition = mask_image(case.image, case.object_mask)
    shifted_condition = mask_image(case.image, experiment.shifted_mask)
    assert np.count_nonzero(original_condition.values) != np.count_nonzero(shifted_condition.values)
    original, shifted = load_shift_records(experiment.records_json())
    assert original == experiment.original.record
    assert shifted == experiment.shifted.record


def test_shift_out_of_the_image_is_rejected(small_weights):
    values = np.zeros((16, 16))
    values[4:8, 4:8] = 1.0
    image = LatentGrid(np.zeros((3, 16, 16)))
    with pytest.raises(DomainError):
        run_shift_experiment(image, MaskGrid(values), "a dog", 40, FreeCondParams(T=6), small_weights, 1)


def test_dilation_experiment(rng, small_weights):
    image, mask = _small_inputs(rng)
    params = FreeCondParams(T=6)
    results = run_dilation_experiment(image, mask, "a dog", [0, 2], params, small_weights, 5)
    assert [radius for radius, _ in results] == [0, 2]
    assert results[0][1].image == inpaint(image, mask, "a dog", params, small_weights, 5).image
    assert results[1][1].image != results[0][1].image


def test_channel_influence_is_linear_in_queries_and_key(rng):
    m = rng.uniform(size=16)
    for _ in range(20):
        q1, q2 = rng.normal(size=(2, 16, 8))
        k1, k2 = rng.normal(size=(2, 8))
        a, b = rng.normal(size=2)
        combined_q = channel_influence(a * q1 + b * q2, m, k1)
        expected_q = a * channel_influence(q1, m, k1) + b * channel_influence(q2, m, k1)
        assert np.max(np.abs(combined_q - expected_q)) <= 1e-9
        combined_k = channel_influence(q1, m, a * k1 + b * k2)
        expected_k = a * channel_influence(q1, m, k1) + b * channel_influence(q1, m, k2)
        assert np.max(np.abs(combined_k - expected_k)) <= 1e-9


@pytest.mark.parametrize("scale", [0.25, 3.0, 1000.0])
def test_channel_influence_ignores_the_region_scale(rng, scale):
    q = rng.normal(size=(16, 8))
    k = rng.normal(size=8)
    m = rng.integers(0, 2, size=16).astype(float)
    m[0] = 1.0
    np.testing.assert_allclose(channel_influence(q, scale * m, k), channel_influence(q, m, k), rtol=1e-12, atol=1e-15)


def _rectangle(top: int, left: int, height: int, width: int, size: int = 20) -> MaskGrid:
    values = np.zeros((size, size))
    values[top : top + height, left : left + width] = 1.0
    return MaskGrid(values, binary=True)


def test_mask_placement_ignores_a_common_translation(rng):
    for _ in range(100):
        obj = rng.integers(0, 6, size=2), rng.integers(1, 6, size=2)
        hole = rng.integers(0, 6, size=2), rng.integers(1, 6, size=2)
        dy, dx = rng.integers(0, 8, size=2)
        before = mask_placement_classify(_rectangle(*obj[0], *obj[1]), _rectangle(*hole[0], *hole[1]))
        after = mask_placement_classify(
            _rectangle(obj[0][0] + dy, obj[0][1] + dx, *obj[1]),
            _rectangle(hole[0][0] + dy, hole[0][1] + dx, *hole[1]),
        )
        assert before is after


def test_default_attention_heatmap(default_weights, golden):
    case = load_test_case(0)
    result = inpaint(case.image, case.mask, case.prompt, FreeCondParams.default(), default_weights, 42,
                     capture_attention=True)
    first = result.attention[0]
    assert first.t == default_weights.config.timesteps
    heatmap = extract_attention_map(first.cross_attention, 1).values
    digest = hashlib.sha256(np.ascontiguousarray(heatmap, dtype="<f8").tobytes()).hexdigest()
    golden("attention_heatmap_case_0_seed42_token_1", digest)
