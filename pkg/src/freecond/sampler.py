"""
This module runs the deterministic diffusion sampling loop with
classifier-free guidance over the FreeCond conditions.

Schedule
--------
Timesteps are integers ``T, T-1, ..., 1``; each step moves ``t -> t - 1``.
The cumulative signal level follows a cosine curve,
``abar(t) = f(t) / f(0)`` with ``f(t) = cos^2(((t / T) + s) / (1 + s) * pi / 2)``,
floored at ``min_alpha_bar``; ``abar(0) = 1`` so the last step returns the
clean estimate.

Update
------
``denoise_step`` is the zero-variance DDIM update::

    x0     = (z_t - sqrt(1 - abar_t) * eps) / sqrt(abar_t)
    z_prev = sqrt(abar_prev) * x0 + sqrt(1 - abar_prev) * eps

The background is not re-noised or pasted back between steps; the model
alone keeps it.

Classes
-------
SamplerSchedule
    Timesteps and signal levels.
RunRecord
    Everything needed to reproduce a run.
InpaintResult
    The output image with its record and optional captures.

Functions
---------
sample_initial_noise(shape: tuple, seed: int) -> LatentGrid
cfg_combine(eps_uncond: LatentGrid, eps_cond: LatentGrid, w: float) -> LatentGrid
denoise_step(z_t, eps_hat, t, t_prev, schedule) -> LatentGrid
inpaint(image, mask, prompt, params, weights, seed) -> InpaintResult
"""

import hashlib
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from tqdm import tqdm

from .conditioning import (
    FreeCondParams,
    freecond_image,
    freecond_mask,
    make_mask_condition,
    mask_image,
)
from .errors import DimensionError, DomainError, IntegrityError, NonFiniteError
from .grid import LatentGrid, MaskGrid
from .toynet import (
    AttentionRecord,
    NetConfig,
    NetWeights,
    decode_latent,
    encode_image,
    gen_weights,
    text_encode,
    trace_noise_prediction,
    predict_noise,
)
from .utils import SeededStream, settings


logger = logging.getLogger(__name__)

NOISE_STREAM_KEY = 0x6E6F697365
NULL_PROMPT = ""


@dataclass(frozen=True, eq=False)
class SamplerSchedule:
    T: int
    timesteps: np.ndarray
    alpha_bars: np.ndarray

    @classmethod
    def cosine(
        cls,
        T: int,
        offset: float | None = None,
        min_alpha_bar: float | None = None,
    ) -> "SamplerSchedule":
        """Builds the cosine schedule over integer timesteps ``0..T``."""
        if T < 1:
            raise DomainError(f"T must be positive, got {T}")
        offset = settings["schedule"]["offset"] if offset is None else offset
        min_alpha_bar = settings["schedule"]["min_alpha_bar"] if min_alpha_bar is None else min_alpha_bar
        steps = np.arange(T + 1, dtype=np.float64)
        curve = np.cos((steps / T + offset) / (1.0 + offset) * math.pi / 2.0) ** 2
        alpha_bars = np.clip(curve / curve[0], min_alpha_bar, 1.0)
        alpha_bars[0] = 1.0
        timesteps = np.arange(T, 0, -1, dtype=np.int64)
        return cls(T=T, timesteps=timesteps, alpha_bars=alpha_bars)

    def alpha_bar(self, t: int) -> float:
        if not 0 <= t <= self.T:
            raise DomainError(f"timestep outside [0, {self.T}]: {t}")
        return float(self.alpha_bars[t])

    def steps(self) -> list[tuple[int, int]]:
        return [(int(t), int(t) - 1) for t in self.timesteps]


@dataclass(frozen=True, eq=False)
class StepAttention:
    t: int
    self_attention: AttentionRecord
    cross_attention: AttentionRecord


@dataclass
class RunRecord:
    params: dict
    network: dict
    weight_seed: int
    noise_seed: int
    prompt: str
    inputs: dict = field(default_factory=dict)
    output_path: str | None = None
    degenerate_mask: bool = False
    output_checksum: str = ""
    steps: int = 0
    wall_clock_seconds: float | None = field(default=None, compare=False)

    def to_dict(self) -> dict:
        """Returns the serializable part of the record (wall-clock excluded)."""
        record = asdict(self)
        record.pop("wall_clock_seconds")
        return record

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, values: dict) -> "RunRecord":
        return cls(**values)

    @property
    def freecond_params(self) -> FreeCondParams:
        return FreeCondParams.from_dict(self.params)

    @property
    def net_config(self) -> NetConfig:
        return NetConfig.from_dict(self.network)


@dataclass(frozen=True, eq=False)
class InpaintResult:
    image: LatentGrid
    latent: LatentGrid
    record: RunRecord
    trajectory: list[LatentGrid] = field(default_factory=list)
    attention: list[StepAttention] = field(default_factory=list)


def sample_initial_noise(shape: tuple[int, int, int], seed: int) -> LatentGrid:
    """Draws ``z_T`` from the standard normal stream of ``seed``.

    The noise stream is keyed apart from the weight stream, so a shared seed
    does not reuse weight draws.
    """
    if len(shape) != 3 or min(shape) < 1:
        raise DimensionError(f"invalid latent shape {shape}")
    return LatentGrid(SeededStream(seed ^ NOISE_STREAM_KEY).normal(tuple(shape)))


def cfg_combine(eps_uncond: LatentGrid, eps_cond: LatentGrid, w: float) -> LatentGrid:
    """Classifier-free guidance, ``eps_uncond + w * (eps_cond - eps_uncond)``.

    Evaluated as ``(1 - w) * eps_uncond + w * eps_cond`` so that ``w = 1`` and
    ``w = 0`` return the conditional and unconditional predictions exactly.
    """
    if eps_uncond.shape != eps_cond.shape:
        raise DimensionError(f"shape mismatch: {eps_uncond.shape} vs {eps_cond.shape}")
    return LatentGrid((1.0 - w) * eps_uncond.values + w * eps_cond.values)


def denoise_step(
    z_t: LatentGrid,
    eps_hat: LatentGrid,
    t: int,
    t_prev: int,
    schedule: SamplerSchedule,
) -> LatentGrid:
    if t <= t_prev:
        raise DomainError(f"timesteps must decrease, got {t} -> {t_prev}")
    if z_t.shape != eps_hat.shape:
        raise DimensionError(f"shape mismatch: {z_t.shape} vs {eps_hat.shape}")
    alpha_bar = schedule.alpha_bar(t)
    alpha_bar_prev = schedule.alpha_bar(t_prev)
    x0 = (z_t.values - math.sqrt(1.0 - alpha_bar) * eps_hat.values) / math.sqrt(alpha_bar)
    return LatentGrid(math.sqrt(alpha_bar_prev) * x0 + math.sqrt(1.0 - alpha_bar_prev) * eps_hat.values)


def to_model_range(image: LatentGrid) -> LatentGrid:
    """Maps ``[0, 1]`` pixels to the ``[-1, 1]`` range the encoder sees."""
    return LatentGrid(image.values * 2.0 - 1.0)


def to_pixel_range(image: LatentGrid) -> LatentGrid:
    return LatentGrid(np.clip((image.values + 1.0) / 2.0, 0.0, 1.0))


def image_checksum(image: LatentGrid) -> str:
    return hashlib.sha256(np.ascontiguousarray(image.values, dtype="<f8").tobytes()).hexdigest()


def inpaint(
    image: LatentGrid,
    mask: MaskGrid,
    prompt: str,
    params: FreeCondParams,
    weights: NetWeights | NetConfig,
    seed: int,
    *,
    inputs: dict | None = None,
    capture_attention: bool = False,
    keep_trajectory: bool = False,
) -> InpaintResult:
    """Inpaints the masked region of an image with FreeCond conditioning.

    Each step builds ``z^fc`` and ``M^fc``, predicts noise with the prompt
    and with the null prompt, combines both with guidance scale ``w`` and
    takes one DDIM step.

    Parameters
    ----------
    image : LatentGrid
        The ``3 x H x W`` image with pixels in ``[0, 1]``.
    mask : MaskGrid
        The binary ``H x W`` inpainting mask.
    prompt : str
        The text prompt.
    params : FreeCondParams
        The guidance and FreeCond controls.
    weights : NetWeights | NetConfig
        The network, or a config to generate it from.
    seed : int
        The initial-noise seed.
    inputs : dict | None, optional
        Input file paths to keep in the run record.
    capture_attention : bool, optional
        Keep the conditional branch's attention records of every step.
    keep_trajectory : bool, optional
        Keep ``z_t`` before every step and the final latent.

    Returns
    -------
    InpaintResult
        The output image in ``[0, 1]`` and its run record.

    Raises
    ------
    DimensionError
        If the image and mask shapes do not fit the network.
    DomainError
        If the mask is not binary or ``params.T`` does not match the network.
    IntegrityError
        If a step produces NaN or infinite latents.
    """
    started = time.perf_counter()
    if isinstance(weights, NetConfig):
        weights = gen_weights(weights)
    config = weights.config
    if params.T != config.timesteps:
        raise DomainError(f"params.T = {params.T} but the network was built for {config.timesteps}")
    if image.channels != 3:
        raise DimensionError(f"image must have 3 channels, got {image.channels}")
    if mask.shape != (image.height, image.width):
        raise DimensionError(f"mask {mask.shape} does not match image {image.height}x{image.width}")
    if not mask.is_binary:
        raise DomainError("inpainting mask must be binary")

    degenerate = mask.count() == 0
    if degenerate:
        logger.warning("Mask is empty; nothing to inpaint")

    masked_image = mask_image(to_model_range(image), mask)
    zc = encode_image(masked_image, weights)
    mc = make_mask_condition(mask, config.latent_factor)
    mfc = freecond_mask(mc, params.alpha, params.beta)
    conditional = text_encode(prompt, weights)
    unconditional = text_encode(NULL_PROMPT, weights)
    schedule = SamplerSchedule.cosine(params.T)

    z = sample_initial_noise(zc.shape, seed)
    trajectory: list[LatentGrid] = []
    attention: list[StepAttention] = []
    steps = tqdm(schedule.steps(), desc="Sampling", disable=not settings["progress_bar"])
    t = params.T
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            for t, t_prev in steps:
                if keep_trajectory:
                    trajectory.append(z)
                zfc = freecond_image(zc, t, params)
                trace = trace_noise_prediction(z, zfc, mfc, t, conditional, weights)
                eps_uncond = predict_noise(z, zfc, mfc, t, unconditional, weights)
                eps_hat = cfg_combine(eps_uncond, trace.noise, params.w)
                z = denoise_step(z, eps_hat, t, t_prev, schedule)
                if capture_attention:
                    attention.append(StepAttention(t, trace.self_attention, trace.cross_attention))
            decoded = decode_latent(z, weights)
    except NonFiniteError as error:
        raise IntegrityError(f"sampling diverged at t = {t}: {error}") from error
    if keep_trajectory:
        trajectory.append(z)

    output = to_pixel_range(decoded)
    elapsed = time.perf_counter() - started
    record = RunRecord(
        params=params.to_dict(),
        network=config.to_dict(),
        weight_seed=config.seed,
        noise_seed=seed,
        prompt=prompt,
        inputs=dict(inputs or {}),
        degenerate_mask=degenerate,
        output_checksum=image_checksum(output),
        steps=len(schedule.timesteps),
        wall_clock_seconds=elapsed,
    )
    logger.info("Inpainted %dx%d image in %.3f s", image.height, image.width, elapsed)
    return InpaintResult(output, z, record, trajectory, attention)
