import json
import math

import numpy as np
import pytest

from freecond.conditioning import FreeCondParams, make_mask_condition, mask_image
from freecond.data_handler import load_test_case
from freecond.errors import DimensionError, DomainError, IntegrityError, NonFiniteError
from freecond.grid import LatentGrid, MaskGrid
from freecond.sampler import (
    RunRecord,
    SamplerSchedule,
    cfg_combine,
    denoise_step,
    inpaint,
    sample_initial_noise,
    to_model_range,
    to_pixel_range,
)
from freecond.toynet import decode_latent, encode_image, predict_noise


def _baseline_inpaint(image, mask, prompt, w, weights, seed) -> LatentGrid:
    """Plain inpainting with classifier-free guidance and unmodified conditions."""
    zc = encode_image(mask_image(to_model_range(image), mask), weights)
    mc = make_mask_condition(mask, weights.config.latent_factor)
    schedule = SamplerSchedule.cosine(weights.config.timesteps)
    z = sample_initial_noise(zc.shape, seed)
    for t, t_prev in schedule.steps():
        eps_cond = predict_noise(z, zc, mc, t, prompt, weights)
        eps_uncond = predict_noise(z, zc, mc, t, "", weights)
        z = denoise_step(z, cfg_combine(eps_uncond, eps_cond, w), t, t_prev, schedule)
    return to_pixel_range(decode_latent(z, weights))


def _small_inputs(rng) -> tuple[LatentGrid, MaskGrid]:
    image = LatentGrid(rng.uniform(size=(3, 16, 16)))
    values = np.zeros((16, 16))
    values[4:12, 4:12] = 1.0
    return image, MaskGrid(values, binary=True)


def _small_params(**changes) -> FreeCondParams:
    return FreeCondParams(**{"T": 6} | changes)


def test_cfg_collapses_at_zero_and_one(rng):
    uncond = LatentGrid(rng.normal(size=(4, 4, 4)))
    cond = LatentGrid(rng.normal(size=(4, 4, 4)))
    assert cfg_combine(uncond, cond, 1.0) == cond
    assert cfg_combine(uncond, cond, 0.0) == uncond


def test_cfg_is_affine_in_w(rng):
    uncond = LatentGrid(rng.normal(size=(4, 4, 4)))
    cond = LatentGrid(rng.normal(size=(4, 4, 4)))
    for w in (0.5, 2.0, 7.5, 15.0):
        expected = uncond.values + w * (cond.values - uncond.values)
        assert np.max(np.abs(cfg_combine(uncond, cond, w).values - expected)) <= 1e-9


def test_cfg_rejects_mismatched_shapes():
    with pytest.raises(DimensionError):
        cfg_combine(LatentGrid(np.zeros((4, 4, 4))), LatentGrid(np.zeros((4, 2, 2))), 1.0)


def test_cosine_schedule():
    schedule = SamplerSchedule.cosine(50)
    assert schedule.alpha_bar(0) == 1.0
    assert np.all(np.diff(schedule.alpha_bars) <= 0)
    assert schedule.alpha_bar(50) >= 1e-4
    assert schedule.steps()[0] == (50, 49)
    assert schedule.steps()[-1] == (1, 0)
    assert len(schedule.steps()) == 50


def test_denoise_step_requires_decreasing_time(rng):
    z = LatentGrid(rng.normal(size=(4, 4, 4)))
    schedule = SamplerSchedule.cosine(10)
    with pytest.raises(DomainError):
        denoise_step(z, z, 3, 3, schedule)


def test_last_step_returns_clean_estimate(rng):
    z = LatentGrid(rng.normal(size=(4, 4, 4)))
    eps = LatentGrid(rng.normal(size=(4, 4, 4)))
    schedule = SamplerSchedule.cosine(10)
    alpha_bar = schedule.alpha_bar(1)
    expected = (z.values - math.sqrt(1 - alpha_bar) * eps.values) / math.sqrt(alpha_bar)
    np.testing.assert_allclose(denoise_step(z, eps, 1, 0, schedule).values, expected, atol=1e-12)


def test_initial_noise_is_seeded():
    first = sample_initial_noise((4, 8, 8), 42)
    assert first == sample_initial_noise((4, 8, 8), 42)
    assert first != sample_initial_noise((4, 8, 8), 43)


@pytest.mark.parametrize("index", [0, 1, 2])
def test_baseline_parameters_reduce_to_plain_inpainting(index, default_weights):
    case = load_test_case(index)
    params = FreeCondParams(w=15.0, alpha=1.0, beta=0.0, gamma=math.pi, t_fc=0, T=50)
    result = inpaint(case.image, case.mask, case.prompt, params, default_weights, 42)
    expected = _baseline_inpaint(case.image, case.mask, case.prompt, 15.0, default_weights, 42)
    assert np.max(np.abs(result.image.values - expected.values)) == 0.0


def test_default_output_checksum(default_weights, golden):
    case = load_test_case(0)
    result = inpaint(case.image, case.mask, case.prompt, FreeCondParams.default(), default_weights, 42)
    golden("inpaint_case_0_seed42", result.record.output_checksum)


def test_mask_scaling_changes_the_output(rng, small_weights):
    image, mask = _small_inputs(rng)
    baseline = inpaint(image, mask, "a dog", _small_params(), small_weights, 1)
    scaled = inpaint(image, mask, "a dog", _small_params(alpha=3.0), small_weights, 1)
    assert baseline.image != scaled.image


def test_t_fc_changes_the_output_when_filtering(rng, small_weights):
    image, mask = _small_inputs(rng)
    early = inpaint(image, mask, "a dog", _small_params(gamma=0.75 * math.pi, t_fc=0), small_weights, 1)
    late = inpaint(image, mask, "a dog", _small_params(gamma=0.75 * math.pi, t_fc=4), small_weights, 1)
    assert early.image != late.image


def test_output_is_in_pixel_range(rng, small_weights):
    image, mask = _small_inputs(rng)
    result = inpaint(image, mask, "a dog", _small_params(), small_weights, 1)
    assert result.image.shape == image.shape
    assert result.image.values.min() >= 0.0
    assert result.image.values.max() <= 1.0


def test_empty_mask_is_flagged(rng, small_weights):
    image, _ = _small_inputs(rng)
    result = inpaint(image, MaskGrid.zeros(16, 16), "a dog", _small_params(), small_weights, 1)
    assert result.record.degenerate_mask


@pytest.mark.parametrize(
    "mask, params, error",
    [
        (MaskGrid(np.full((16, 16), 0.5)), _small_params(), DomainError),
        (MaskGrid.ones(8, 8), _small_params(), DimensionError),
        (MaskGrid.ones(16, 16), FreeCondParams(T=50), DomainError),
    ],
)
def test_inpaint_rejects_bad_inputs(rng, small_weights, mask, params, error):
    image, _ = _small_inputs(rng)
    with pytest.raises(error):
        inpaint(image, mask, "a dog", params, small_weights, 1)


def test_runs_are_reproducible(rng, small_weights):
    image, mask = _small_inputs(rng)
    first = inpaint(image, mask, "a dog", _small_params(beta=0.5), small_weights, 3)
    second = inpaint(image, mask, "a dog", _small_params(beta=0.5), small_weights, 3)
    assert first.image == second.image
    assert first.record.to_json() == second.record.to_json()


def test_run_record_round_trip(rng, small_weights):
    image, mask = _small_inputs(rng)
    record = inpaint(image, mask, "a dog", _small_params(), small_weights, 3, inputs={"image": "x.png"}).record
    document = json.loads(record.to_json())
    assert "wall_clock_seconds" not in document
    assert record.wall_clock_seconds is not None
    restored = RunRecord.from_dict(document)
    assert restored == record
    assert restored.freecond_params == _small_params()
    assert restored.net_config == small_weights.config


def test_captures_attention_and_trajectory(rng, small_weights):
    image, mask = _small_inputs(rng)
    result = inpaint(
        image,
        mask,
        "a dog",
        _small_params(),
        small_weights,
        3,
        capture_attention=True,
        keep_trajectory=True,
    )
    assert [step.t for step in result.attention] == [6, 5, 4, 3, 2, 1]
    assert result.attention[0].cross_attention.probabilities.shape == (16, 8)
    assert len(result.trajectory) == 7
    assert result.trajectory[-1] == result.latent


def test_noise_statistics():
    values = sample_initial_noise((4, 64, 64), 42).values
    assert abs(values.mean()) < 0.05
    assert abs(values.var() - 1.0) < 0.05


def test_overflowing_guidance_gives_non_finite_noise():
    eps = LatentGrid(np.full((4, 2, 2), 2.0))
    with pytest.raises(NonFiniteError):
        cfg_combine(eps, eps, 1e308)


def test_overflowing_step_gives_non_finite_latents():
    schedule = SamplerSchedule.cosine(10)
    with pytest.raises(NonFiniteError):
        denoise_step(LatentGrid(np.zeros((4, 2, 2))), LatentGrid(np.full((4, 2, 2), 1e308)), 10, 9, schedule)


def test_divergence_is_an_integrity_error(rng, small_weights, monkeypatch):
    image, mask = _small_inputs(rng)

    def diverged(z, weights):
        return LatentGrid(np.full((3, 16, 16), np.nan))

    monkeypatch.setattr("freecond.sampler.decode_latent", diverged)
    with pytest.raises(IntegrityError, match="diverged"):
        inpaint(image, mask, "a dog", _small_params(), small_weights, 1)
