"""
This module provides a small seeded stand-in for the inpainting denoiser:
an image encoder/decoder, the input convolution over
``Concat([z_t, M^c, z^c])``, one self-attention block, one cross-attention
block over a token-lookup text embedding, a timestep embedding and an
output projection back to latent channels.

The network has a single resolution; it reproduces the dataflow from the
input convolution to cross-attention, not the depth of a real UNet.

Weights are drawn in the order of ``WEIGHT_NAMES`` from the SplitMix64 stream
of ``NetConfig.seed`` (see ``utils.seeded_stream``), each scaled by
``1 / sqrt(fan_in)`` and stored as float32. Lookup tables (token and
timestep embeddings) count a fan-in of 1. All arithmetic runs in float64.

Classes
-------
NetConfig
    Shapes and seed of the network.
NetWeights
    The weight tensors.
PromptEmbedding
    The ``text_len x d`` token matrix of a prompt.
AttentionRecord
    Queries, keys and attention probabilities captured from one block.
NoiseTrace
    A noise prediction together with its intermediate features.

Functions
---------
gen_weights(config: NetConfig) -> NetWeights
encode_image(image: LatentGrid, weights: NetWeights) -> LatentGrid
decode_latent(z: LatentGrid, weights: NetWeights) -> LatentGrid
text_encode(prompt: str, weights: NetWeights) -> PromptEmbedding
input_conv(z_t, mc, zc, weights) -> LatentGrid
self_attention(h, weights) -> tuple[LatentGrid, AttentionRecord]
cross_attention(h, prompt, weights) -> tuple[LatentGrid, AttentionRecord]
predict_noise(z_t, zc, mc, t, prompt, weights) -> LatentGrid
trace_noise_prediction(z_t, zc, mc, t, prompt, weights) -> NoiseTrace
save_weights(weights: NetWeights, directory: Path) -> Path
load_weights(directory: Path) -> NetWeights
"""

import hashlib
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import softmax

from .errors import DimensionError, DomainError
from .grid import LatentGrid, MaskGrid
from .utils import SeededStream, load_tensor_set, save_tensor_set, settings


SOT_LABEL = "<SOT>"
EOT_LABEL = "<EOT>"
PAD_LABEL = "<PAD>"
SOT_ROW, EOT_ROW, PAD_ROW = 0, 1, 2
RESERVED_ROWS = 3
CONV_SIZE = 3
IMAGE_CHANNELS = 3


@dataclass(frozen=True)
class NetConfig:
    latent_channels: int = 4
    feature_channels: int = 64
    text_len: int = 77
    latent_factor: int = 4
    latent_height: int = 16
    latent_width: int = 16
    vocab_size: int = 4096
    timesteps: int = 50
    seed: int = 42

    def __post_init__(self) -> None:
        if self.latent_channels < 1:
            raise DomainError("latent_channels must be at least 1")
        if self.feature_channels < 1:
            raise DomainError("feature_channels must be at least 1")
        if self.text_len < 2:
            raise DomainError("text_len must leave room for SOT and EOT")
        if self.latent_factor < 1:
            raise DomainError("latent_factor must be positive")
        if self.latent_height < 4 or self.latent_width < 4:
            raise DomainError("latent height and width must be at least 4")
        if self.vocab_size <= RESERVED_ROWS:
            raise DomainError(f"vocab_size must exceed {RESERVED_ROWS}")
        if self.timesteps < 1:
            raise DomainError("timesteps must be positive")
        if self.seed < 0:
            raise DomainError("seed must be non-negative")

    @classmethod
    def from_dict(cls, values: dict) -> "NetConfig":
        unknown = set(values) - {f.name for f in fields(cls)}
        if unknown:
            raise DomainError(f"unknown network settings: {sorted(unknown)}")
        return cls(**{key: _as_count(key, value) for key, value in values.items()})

    @classmethod
    def default(cls) -> "NetConfig":
        return cls.from_dict(
            settings["network"]
            | {"timesteps": settings["freecond"]["T"], "seed": settings["seeds"]["weights"]}
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def image_height(self) -> int:
        return self.latent_height * self.latent_factor

    @property
    def image_width(self) -> int:
        return self.latent_width * self.latent_factor


def _as_count(key: str, value) -> int:
    if isinstance(value, float) and value.is_integer():
        return int(value)
    if isinstance(value, int) and not isinstance(value, bool):
        return value
    raise DomainError(f"network setting {key} must be an integer, got {value!r}")


def weight_shapes(config: NetConfig) -> dict[str, tuple[tuple[int, ...], int]]:
    """Returns ``name -> (shape, fan_in)`` in stream order."""
    c = config.latent_channels
    d = config.feature_channels
    f = config.latent_factor
    conv_in = 2 * c + 1
    return {
        "encoder": ((c, IMAGE_CHANNELS, f, f), IMAGE_CHANNELS * f * f),
        "encoder_bias": ((c,), IMAGE_CHANNELS * f * f),
        "decoder": ((IMAGE_CHANNELS, c, f, f), c),
        "decoder_bias": ((IMAGE_CHANNELS,), c),
        "conv_in": ((d, conv_in, CONV_SIZE, CONV_SIZE), conv_in * CONV_SIZE * CONV_SIZE),
        "conv_in_bias": ((d,), conv_in * CONV_SIZE * CONV_SIZE),
        "self_q": ((d, d), d),
        "self_k": ((d, d), d),
        "self_v": ((d, d), d),
        "self_out": ((d, d), d),
        "cross_q": ((d, d), d),
        "cross_k": ((d, d), d),
        "cross_v": ((d, d), d),
        "time_embedding": ((config.timesteps + 1, d), 1),
        "out_proj": ((c, d), d),
        "out_bias": ((c,), d),
        "token_embedding": ((config.vocab_size, d), 1),
    }


WEIGHT_NAMES = tuple(weight_shapes(NetConfig()).keys())


@dataclass(frozen=True, eq=False)
class NetWeights:
    config: NetConfig
    encoder: np.ndarray
    encoder_bias: np.ndarray
    decoder: np.ndarray
    decoder_bias: np.ndarray
    conv_in: np.ndarray
    conv_in_bias: np.ndarray
    self_q: np.ndarray
    self_k: np.ndarray
    self_v: np.ndarray
    self_out: np.ndarray
    cross_q: np.ndarray
    cross_k: np.ndarray
    cross_v: np.ndarray
    time_embedding: np.ndarray
    out_proj: np.ndarray
    out_bias: np.ndarray
    token_embedding: np.ndarray

    @classmethod
    def from_tensors(cls, config: NetConfig, tensors: dict[str, np.ndarray]) -> "NetWeights":
        """Builds weights from named tensors, checking names and shapes."""
        expected = weight_shapes(config)
        if set(tensors) != set(expected):
            missing = sorted(set(expected) - set(tensors))
            extra = sorted(set(tensors) - set(expected))
            raise DimensionError(f"weight set mismatch (missing {missing}, unexpected {extra})")
        arrays = {}
        for name, (shape, _) in expected.items():
            array = np.asarray(tensors[name], dtype=np.float32)
            if array.shape != shape:
                raise DimensionError(f"weight {name} has shape {array.shape}, expected {shape}")
            if not np.all(np.isfinite(array)):
                raise DomainError(f"weight {name} holds non-finite values")
            array.flags.writeable = False
            arrays[name] = array
        return cls(config=config, **arrays)

    def tensors(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in WEIGHT_NAMES}

    def checksum(self) -> str:
        """SHA-256 over every tensor name and its float32 bytes, in stream order."""
        digest = hashlib.sha256()
        for name, array in self.tensors().items():
            digest.update(name.encode())
            digest.update(np.ascontiguousarray(array, dtype="<f4").tobytes())
        return digest.hexdigest()


@dataclass(frozen=True, eq=False)
class PromptEmbedding:
    tokens: np.ndarray
    token_labels: list[str]
    token_ids: list[int]

    @property
    def text_len(self) -> int:
        return self.tokens.shape[0]


@dataclass(frozen=True, eq=False)
class AttentionRecord:
    query: np.ndarray
    key: np.ndarray
    probabilities: np.ndarray
    height: int
    width: int
    token_labels: list[str] | None = None


@dataclass(frozen=True, eq=False)
class NoiseTrace:
    noise: LatentGrid
    features: LatentGrid
    self_attention: AttentionRecord
    cross_attention: AttentionRecord


def gen_weights(config: NetConfig) -> NetWeights:
    stream = SeededStream(config.seed)
    tensors = {}
    for name, (shape, fan_in) in weight_shapes(config).items():
        tensors[name] = (stream.normal(shape) / math.sqrt(fan_in)).astype(np.float32)
    return NetWeights.from_tensors(config, tensors)


def _f64(array: np.ndarray) -> np.ndarray:
    return np.asarray(array, dtype=np.float64)


def encode_image(image: LatentGrid, weights: NetWeights) -> LatentGrid:
    """Projects a ``3 x H x W`` image to a ``C x H/f x W/f`` latent.

    Each latent cell is an affine function of its ``f x f`` pixel block.

    Raises
    ------
    DimensionError
        If the image does not have 3 channels or its size is not divisible by
        the latent factor.
    """
    f = weights.config.latent_factor
    if image.channels != IMAGE_CHANNELS:
        raise DimensionError(f"image must have {IMAGE_CHANNELS} channels, got {image.channels}")
    if image.height % f or image.width % f:
        raise DimensionError(f"image {image.height}x{image.width} is not divisible by {f}")
    blocks = image.values.reshape(IMAGE_CHANNELS, image.height // f, f, image.width // f, f)
    latent = np.einsum("ocyx,caybx->oab", _f64(weights.encoder), blocks)
    return LatentGrid(latent + _f64(weights.encoder_bias)[:, np.newaxis, np.newaxis])


def decode_latent(z: LatentGrid, weights: NetWeights) -> LatentGrid:
    """Maps a latent back to a ``3 x H x W`` image, one ``f x f`` block per cell."""
    f = weights.config.latent_factor
    if z.channels != weights.config.latent_channels:
        raise DimensionError(f"latent must have {weights.config.latent_channels} channels")
    blocks = np.einsum("coyx,oab->caybx", _f64(weights.decoder), z.values)
    image = blocks.reshape(IMAGE_CHANNELS, z.height * f, z.width * f)
    return LatentGrid(image + _f64(weights.decoder_bias)[:, np.newaxis, np.newaxis])


def token_row(token: str, vocab_size: int) -> int:
    """Returns the embedding row of a word: a BLAKE2b hash of the lower-cased word."""
    digest = hashlib.blake2b(token.lower().encode("utf-8"), digest_size=8).digest()
    return RESERVED_ROWS + int.from_bytes(digest, "little") % (vocab_size - RESERVED_ROWS)


def text_encode(prompt: str, weights: NetWeights) -> PromptEmbedding:
    """Embeds a prompt as ``[SOT, words..., EOT, PAD...]``.

    Words beyond ``text_len - 2`` are dropped so EOT is always present. The
    empty prompt is the null prompt of classifier-free guidance.
    """
    config = weights.config
    words = prompt.split()[: config.text_len - 2]
    ids = [SOT_ROW] + [token_row(word, config.vocab_size) for word in words] + [EOT_ROW]
    labels = [SOT_LABEL] + words + [EOT_LABEL]
    padding = config.text_len - len(ids)
    ids += [PAD_ROW] * padding
    labels += [PAD_LABEL] * padding
    tokens = _f64(weights.token_embedding)[ids]
    tokens.flags.writeable = False
    return PromptEmbedding(tokens=tokens, token_labels=labels, token_ids=ids)


def input_conv(z_t: LatentGrid, mc: MaskGrid, zc: LatentGrid, weights: NetWeights) -> LatentGrid:
    """Computes ``h0 = conv(Concat([z_t, M^c, z^c]))`` with a size-preserving 3x3 kernel.

    Raises
    ------
    DimensionError
        If the spatial shapes differ or the latents have the wrong channel count.
    """
    channels = weights.config.latent_channels
    if z_t.channels != channels or zc.channels != channels:
        raise DimensionError(f"latents must have {channels} channels: {z_t.shape}, {zc.shape}")
    spatial = {z_t.shape[1:], zc.shape[1:], mc.shape}
    if len(spatial) != 1:
        raise DimensionError(f"spatial shapes differ: z_t {z_t.shape}, M^c {mc.shape}, z^c {zc.shape}")
    stacked = np.concatenate([z_t.values, mc.values[np.newaxis], zc.values], axis=0)
    pad = CONV_SIZE // 2
    padded = np.pad(stacked, ((0, 0), (pad, pad), (pad, pad)))
    windows = sliding_window_view(padded, (CONV_SIZE, CONV_SIZE), axis=(1, 2))
    h0 = np.einsum("dcij,chwij->dhw", _f64(weights.conv_in), windows)
    return LatentGrid(h0 + _f64(weights.conv_in_bias)[:, np.newaxis, np.newaxis])


def _positions(h: LatentGrid) -> np.ndarray:
    return h.values.reshape(h.channels, -1).T


def _field(rows: np.ndarray, height: int, width: int) -> LatentGrid:
    return LatentGrid(rows.T.reshape(-1, height, width))


def _attend(query: np.ndarray, key: np.ndarray, value: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    logits = query @ key.T / math.sqrt(query.shape[1])
    probabilities = softmax(logits, axis=-1)
    return probabilities @ value, probabilities


def project_query(h: LatentGrid, weights: NetWeights) -> np.ndarray:
    """Returns the cross-attention queries ``Q = W_Q h`` as a positions x d matrix."""
    if h.channels != weights.config.feature_channels:
        raise DimensionError(f"features must have {weights.config.feature_channels} channels")
    return _positions(h) @ _f64(weights.cross_q).T


def project_keys(prompt: PromptEmbedding, weights: NetWeights) -> np.ndarray:
    return prompt.tokens @ _f64(weights.cross_k).T


def self_attention(h: LatentGrid, weights: NetWeights) -> tuple[LatentGrid, AttentionRecord]:
    """Applies the residual self-attention block over all latent positions."""
    x = _positions(h)
    query = x @ _f64(weights.self_q).T
    key = x @ _f64(weights.self_k).T
    value = x @ _f64(weights.self_v).T
    attended, probabilities = _attend(query, key, value)
    out = x + attended @ _f64(weights.self_out).T
    record = AttentionRecord(query, key, probabilities, h.height, h.width)
    return _field(out, h.height, h.width), record


def cross_attention(
    h: LatentGrid,
    prompt: PromptEmbedding,
    weights: NetWeights,
) -> tuple[LatentGrid, AttentionRecord]:
    """Attends from every latent position to the prompt tokens.

    Parameters
    ----------
    h : LatentGrid
        The ``d x h x w`` feature field.
    prompt : PromptEmbedding
        The embedded prompt.
    weights : NetWeights
        The network weights.

    Returns
    -------
    tuple[LatentGrid, AttentionRecord]
        ``Softmax(QK^T / sqrt(d)) V`` as a feature field (no residual), and
        the queries, keys and attention probabilities.
    """
    query = project_query(h, weights)
    key = project_keys(prompt, weights)
    value = prompt.tokens @ _f64(weights.cross_v).T
    attended, probabilities = _attend(query, key, value)
    record = AttentionRecord(query, key, probabilities, h.height, h.width, prompt.token_labels)
    return _field(attended, h.height, h.width), record


def trace_noise_prediction(
    z_t: LatentGrid,
    zc: LatentGrid,
    mc: MaskGrid,
    t: int,
    prompt: str | PromptEmbedding,
    weights: NetWeights,
) -> NoiseTrace:
    """Runs the denoiser and keeps its input features and attention records."""
    if not 0 <= t <= weights.config.timesteps:
        raise DomainError(f"timestep outside [0, {weights.config.timesteps}]: {t}")
    if isinstance(prompt, str):
        prompt = text_encode(prompt, weights)
    h0 = input_conv(z_t, mc, zc, weights)
    h1, self_record = self_attention(h0, weights)
    attended, cross_record = cross_attention(h1, prompt, weights)
    time = _f64(weights.time_embedding)[t][:, np.newaxis, np.newaxis]
    h2 = np.tanh(h1.values + attended.values + time)
    noise = np.einsum("od,dhw->ohw", _f64(weights.out_proj), h2)
    noise += _f64(weights.out_bias)[:, np.newaxis, np.newaxis]
    return NoiseTrace(LatentGrid(noise), h0, self_record, cross_record)


def predict_noise(
    z_t: LatentGrid,
    zc: LatentGrid,
    mc: MaskGrid,
    t: int,
    prompt: str | PromptEmbedding,
    weights: NetWeights,
) -> LatentGrid:
    return trace_noise_prediction(z_t, zc, mc, t, prompt, weights).noise


def save_weights(weights: NetWeights, directory: Path) -> Path:
    """Writes one tensor file per weight plus a manifest; returns the manifest path."""
    header = {"config": weights.config.to_dict(), "seed": weights.config.seed}
    return save_tensor_set(directory, weights.tensors(), header)


def load_weights(directory: Path) -> NetWeights:
    tensors, manifest = load_tensor_set(directory)
    config = NetConfig.from_dict(manifest["config"])
    return NetWeights.from_tensors(config, tensors)
