"""
This module provides the cross-attention analysis tools: the Channel
Influence indicator (CI), its difference against a zero-mask companion run
(delta CI), attention-map extraction, the mask-placement taxonomy, and the
mask shift and dilation experiments.

CI of channel ``i`` for a query matrix ``Q`` (positions x d), a flattened
region ``m`` and a key vector ``k`` is the ``m``-weighted mean over positions
of ``Q[j, i] * k[i]``. Summed over channels it is the masked mean of the
pre-softmax logit ``<Q_j, k>`` (times ``sqrt(d)``).

delta CI evaluates both runs against the region of the masked run, and the
zero-mask companion sees the unmasked image condition.

Classes
-------
MaskPlacement
    not_masked / partially_masked / fully_masked.
ConditionInputs
    The ``(z_t, M^c, z^c)`` triple fed to the input convolution.
ShiftExperiment
    Paired runs with the original and the shifted mask.

Functions
---------
channel_influence(q, m_flat, k) -> np.ndarray
delta_ci(run_l, run_n, prompt, weights, region, ...) -> np.ndarray
ci_reports(image, mask, prompt, weights, seed, ...) -> pd.DataFrame
summarize_channels(report: pd.DataFrame, first_n: int) -> pd.DataFrame
extract_attention_map(record, token_index) -> MaskGrid
extract_self_attention_map(record, position) -> MaskGrid
mask_placement_classify(object_mask, inpaint_mask) -> MaskPlacement
run_shift_experiment(image, object_mask, prompt, shift_px, params, weights, seed) -> ShiftExperiment
run_dilation_experiment(image, mask, prompt, radii, params, weights, seed) -> list
mfc_ci_response(image, mask, prompt, params, weights, seed) -> pd.DataFrame
"""

import json
import logging
from dataclasses import dataclass
from enum import StrEnum
from typing import Literal

import numpy as np
import pandas as pd

from .conditioning import FreeCondParams, freecond_mask, make_mask_condition, mask_image
from .errors import DimensionError, DomainError
from .grid import LatentGrid, MaskGrid, complement, dilate, shift
from .sampler import InpaintResult, RunRecord, inpaint, sample_initial_noise, to_model_range
from .toynet import (
    AttentionRecord,
    NetWeights,
    PromptEmbedding,
    encode_image,
    input_conv,
    project_keys,
    project_query,
    self_attention,
    text_encode,
)
from .utils import _Layer, _Region, metadata


logger = logging.getLogger(__name__)

_Companion = Literal["zero", "same"]

REGIONS: tuple[_Region, ...] = ("inside-M", "outside-M")


class MaskPlacement(StrEnum):
    NOT_MASKED = "not_masked"
    PARTIALLY_MASKED = "partially_masked"
    FULLY_MASKED = "fully_masked"


@dataclass(frozen=True, eq=False)
class ConditionInputs:
    z_t: LatentGrid
    mask_condition: MaskGrid
    image_condition: LatentGrid


def channel_influence(q: np.ndarray, m_flat: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Computes the per-channel Channel Influence of one key.

    Parameters
    ----------
    q : np.ndarray
        Queries, one row per latent position (positions x d).
    m_flat : np.ndarray
        The flattened non-negative region weights, one per position.
    k : np.ndarray
        The key vector of one token (length d).

    Returns
    -------
    np.ndarray
        ``CI_i = sum_j m_j * q[j, i] * k[i] / sum_j m_j`` for every channel.

    Raises
    ------
    DimensionError
        If the lengths do not line up.
    DomainError
        If the region is empty.
    """
    q = np.asarray(q, dtype=np.float64)
    m_flat = np.asarray(m_flat, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    if q.ndim != 2 or m_flat.shape != (q.shape[0],) or k.shape != (q.shape[1],):
        raise DimensionError(f"incompatible shapes: Q {q.shape}, M {m_flat.shape}, k {k.shape}")
    total = m_flat.sum()
    if total <= 0:
        raise DomainError("empty region: the mask has no weight")
    return np.einsum("j,ji->i", m_flat, q * k) / total


def channel_influence_matrix(q: np.ndarray, m_flat: np.ndarray, keys: np.ndarray) -> np.ndarray:
    """Returns the CI of every key row at once (tokens x d)."""
    return np.stack([channel_influence(q, m_flat, key) for key in keys])


def query_features(inputs: ConditionInputs, weights: NetWeights, layer: _Layer = "input") -> np.ndarray:
    """Returns the cross-attention queries for a set of condition inputs.

    ``layer="input"`` projects the input-convolution features directly,
    ``layer="cross"`` projects the features that reach the cross-attention
    block inside the denoiser (after self-attention).
    """
    h0 = input_conv(inputs.z_t, inputs.mask_condition, inputs.image_condition, weights)
    if layer == "input":
        return project_query(h0, weights)
    if layer == "cross":
        h1, _ = self_attention(h0, weights)
        return project_query(h1, weights)
    raise ValueError(f"unknown layer {layer!r}")


def delta_ci(
    run_l: ConditionInputs,
    run_n: ConditionInputs,
    prompt: str | PromptEmbedding,
    weights: NetWeights,
    region: MaskGrid,
    token_index: int | None = None,
    layer: _Layer = "input",
) -> np.ndarray:
    """Computes ``CI(Q^l, M^l, k) - CI(Q^n, M^l, k)``.

    Returns
    -------
    np.ndarray
        A ``text_len x d`` matrix, or the row of ``token_index`` when given.

    Raises
    ------
    DomainError
        If the runs do not share ``z_t`` or the region is empty.
    """
    if run_l.z_t != run_n.z_t:
        raise DomainError("both runs must share the same noise latent z_t")
    if isinstance(prompt, str):
        prompt = text_encode(prompt, weights)
    keys = project_keys(prompt, weights)
    if token_index is not None:
        if not 0 <= token_index < prompt.text_len:
            raise IndexError(f"token index {token_index} outside [0, {prompt.text_len})")
        keys = keys[token_index:token_index + 1]
    m_flat = region.flatten()
    ci_l = channel_influence_matrix(query_features(run_l, weights, layer), m_flat, keys)
    ci_n = channel_influence_matrix(query_features(run_n, weights, layer), m_flat, keys)
    difference = ci_l - ci_n
    return difference[0] if token_index is not None else difference


def build_condition_pair(
    image: LatentGrid,
    mask: MaskGrid,
    weights: NetWeights,
    seed: int,
    companion: _Companion = "zero",
    alpha: float = 1.0,
    beta: float = 0.0,
) -> tuple[ConditionInputs, ConditionInputs, MaskGrid]:
    """Builds the masked run, its companion run and the latent region ``M^l``.

    The companion is the zero mask with the unmasked image condition
    (``"zero"``), or a copy of the masked run (``"same"``). Both share the
    initial noise of ``seed``. ``alpha``/``beta`` scale the masked run's mask
    condition when measuring the CI response of FreeCond masks.
    """
    factor = weights.config.latent_factor
    model_image = to_model_range(image)
    mc = make_mask_condition(mask, factor)
    zc = encode_image(mask_image(model_image, mask), weights)
    z_t = sample_initial_noise(zc.shape, seed)
    run_l = ConditionInputs(z_t, freecond_mask(mc, alpha, beta), zc)
    if companion == "same":
        return run_l, run_l, mc
    if companion != "zero":
        raise ValueError(f"unknown companion {companion!r}")
    zero = MaskGrid.zeros(mc.height, mc.width)
    run_n = ConditionInputs(z_t, zero, encode_image(model_image, weights))
    return run_l, run_n, mc


def _region_frame(
    ci: np.ndarray,
    delta: np.ndarray,
    tokens: list[int],
    labels: list[str],
    region: _Region,
    layer: _Layer,
    t: int,
) -> pd.DataFrame:
    index = pd.MultiIndex.from_product([tokens, range(ci.shape[1])], names=["token_index", "channel"])
    return (
        pd.DataFrame(
            {"ci": ci[tokens].reshape(-1), "delta_ci": delta[tokens].reshape(-1)},
            index=index,
        )
        .reset_index()
        .assign(
            layer=layer,
            t=t,
            region=region,
            token_label=lambda df: df["token_index"].map(dict(enumerate(labels))),
        )
    )


def ci_reports(
    image: LatentGrid,
    mask: MaskGrid,
    prompt: str,
    weights: NetWeights,
    seed: int,
    *,
    tokens: list[int] | None = None,
    layer: _Layer = "input",
    companion: _Companion = "zero",
    alpha: float = 1.0,
    beta: float = 0.0,
) -> pd.DataFrame:
    """Builds the per-token, per-channel CI and delta CI table for both regions.

    The analysis runs at the first sampling step, ``t = T``.

    Returns
    -------
    pd.DataFrame
        Columns ``layer, t, token_index, token_label, region, channel, ci,
        delta_ci``; ``len(tokens) * d * 2`` rows.
    """
    embedding = text_encode(prompt, weights)
    tokens = list(range(embedding.text_len)) if tokens is None else list(tokens)
    for token in tokens:
        if not 0 <= token < embedding.text_len:
            raise IndexError(f"token index {token} outside [0, {embedding.text_len})")
    run_l, run_n, mc = build_condition_pair(image, mask, weights, seed, companion, alpha, beta)
    keys = project_keys(embedding, weights)
    q_l = query_features(run_l, weights, layer)
    q_n = query_features(run_n, weights, layer)
    t = weights.config.timesteps
    frames = []
    for region_name, region in zip(REGIONS, (mc, complement(mc))):
        m_flat = region.flatten()
        ci_l = channel_influence_matrix(q_l, m_flat, keys)
        ci_n = channel_influence_matrix(q_n, m_flat, keys)
        frames.append(_region_frame(ci_l, ci_l - ci_n, tokens, embedding.token_labels, region_name, layer, t))
    logger.info("CI report: %d tokens, %d channels, layer %s", len(tokens), keys.shape[1], layer)
    return (
        pd.concat(frames, ignore_index=True)
        .loc[:, metadata.csv_columns("ci_report")]
    )


def summarize_channels(report: pd.DataFrame, first_n: int) -> pd.DataFrame:
    """Sums delta CI over the first ``first_n`` channels and the rest, per token and region."""
    return (
        report
        .assign(channels=lambda df: np.where(df["channel"] < first_n, f"first_{first_n}", "rest"))
        .groupby(["token_index", "token_label", "region", "channels"], as_index=False, sort=True)
        .aggregate(delta_ci=("delta_ci", "sum"))
        .pivot(index=["token_index", "token_label", "region"], columns="channels", values="delta_ci")
        .reset_index()
        .rename_axis(None, axis="columns")
    )


def extract_attention_map(record: AttentionRecord, token_index: int) -> MaskGrid:
    """Returns the attention each latent position pays to one token, as a heatmap."""
    tokens = record.probabilities.shape[1]
    if not 0 <= token_index < tokens:
        raise IndexError(f"token index {token_index} outside [0, {tokens})")
    return MaskGrid(record.probabilities[:, token_index].reshape(record.height, record.width))


def extract_self_attention_map(record: AttentionRecord, position: int) -> MaskGrid:
    positions = record.probabilities.shape[0]
    if not 0 <= position < positions:
        raise IndexError(f"position {position} outside [0, {positions})")
    return MaskGrid(record.probabilities[position].reshape(record.height, record.width))


def mask_placement_classify(object_mask: MaskGrid, inpaint_mask: MaskGrid) -> MaskPlacement:
    """Classifies how much of an object an inpainting mask covers.

    Raises
    ------
    DimensionError
        If the masks differ in shape.
    DomainError
        If either mask is not binary or the object mask is empty.
    """
    if object_mask.shape != inpaint_mask.shape:
        raise DimensionError(f"shape mismatch: {object_mask.shape} vs {inpaint_mask.shape}")
    if not (object_mask.is_binary and inpaint_mask.is_binary):
        raise DomainError("placement needs binary masks")
    size = object_mask.count()
    if size == 0:
        raise DomainError("empty object mask")
    overlap = int(np.count_nonzero(object_mask.values * inpaint_mask.values))
    if overlap == 0:
        return MaskPlacement.NOT_MASKED
    if overlap == size:
        return MaskPlacement.FULLY_MASKED
    return MaskPlacement.PARTIALLY_MASKED


@dataclass(frozen=True, eq=False)
class ShiftExperiment:
    shift_px: int
    shifted_mask: MaskGrid
    original: InpaintResult
    shifted: InpaintResult
    placements: dict[str, MaskPlacement]

    def records_json(self) -> str:
        return json.dumps(
            {
                "shift_px": self.shift_px,
                "placements": {name: str(value) for name, value in self.placements.items()},
                "original": self.original.record.to_dict(),
                "shifted": self.shifted.record.to_dict(),
            },
            indent=2,
            sort_keys=True,
        ) + "\n"


def load_shift_records(text: str) -> tuple[RunRecord, RunRecord]:
    document = json.loads(text)
    return RunRecord.from_dict(document["original"]), RunRecord.from_dict(document["shifted"])


def run_shift_experiment(
    image: LatentGrid,
    object_mask: MaskGrid,
    prompt: str,
    shift_px: int,
    params: FreeCondParams,
    weights: NetWeights,
    seed: int,
    dy: int = 0,
) -> ShiftExperiment:
    """Inpaints with the object mask and with the mask shifted by ``shift_px`` columns.

    Shifting uncovers part of the object in the image condition. Both runs
    share the noise seed.

    Raises
    ------
    DomainError
        If the shifted mask is empty.
    """
    shifted_mask = shift(object_mask, shift_px, dy)
    if shifted_mask.count() == 0:
        raise DomainError(f"mask shifted by ({shift_px}, {dy}) leaves the image")
    original = inpaint(image, object_mask, prompt, params, weights, seed)
    shifted = inpaint(image, shifted_mask, prompt, params, weights, seed)
    placements = {
        "original": mask_placement_classify(object_mask, object_mask),
        "shifted": mask_placement_classify(object_mask, shifted_mask),
    }
    logger.info("Shift experiment (%d, %d): shifted mask is %s", shift_px, dy, placements["shifted"])
    return ShiftExperiment(shift_px, shifted_mask, original, shifted, placements)


def run_dilation_experiment(
    image: LatentGrid,
    mask: MaskGrid,
    prompt: str,
    radii: list[int],
    params: FreeCondParams,
    weights: NetWeights,
    seed: int,
) -> list[tuple[int, InpaintResult]]:
    """Inpaints once per dilation radius of the mask, sharing the noise seed."""
    return [
        (radius, inpaint(image, dilate(mask, radius), prompt, params, weights, seed))
        for radius in radii
    ]


def mfc_ci_response(
    image: LatentGrid,
    mask: MaskGrid,
    prompt: str,
    params: FreeCondParams,
    weights: NetWeights,
    seed: int,
    *,
    tokens: list[int] | None = None,
    layer: _Layer = "input",
    companion: _Companion = "zero",
) -> pd.DataFrame:
    """Builds the CI report with the FreeCond mask condition ``alpha M^c + beta (1 - M^c)``.

    Regions stay those of the plain mask condition, so the result lines up
    row for row with ``ci_reports`` at ``alpha = 1, beta = 0``.
    """
    return ci_reports(
        image,
        mask,
        prompt,
        weights,
        seed,
        tokens=tokens,
        layer=layer,
        companion=companion,
        alpha=params.alpha,
        beta=params.beta,
    )
