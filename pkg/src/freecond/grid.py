"""
This module provides the scalar-field containers shared by the whole pipeline
and the mask morphology used by the experiments.

Classes
-------
MaskGrid
    A 2D non-negative field: binary masks, latent mask conditions, scaled
    FreeCond masks and attention heatmaps.
LatentGrid
    A channels x height x width field: images, latents, noise predictions.

Functions
---------
hadamard(a: LatentGrid, b: LatentGrid | MaskGrid) -> LatentGrid
    Elementwise product, broadcasting a mask over channels.
complement(m: MaskGrid) -> MaskGrid
    Returns 1 - m for a binary mask.
downsample_nearest(m: MaskGrid, factor: int) -> MaskGrid
    Nearest-neighbour downsampling sampling the top-left pixel of each block.
dilate(m: MaskGrid, radius: int) -> MaskGrid
    Square-element morphological dilation.
shift(m: MaskGrid, dx: int, dy: int) -> MaskGrid
    Zero-filled translation.
rough_mask(m: MaskGrid) -> MaskGrid
    Bounding box of the ones of a mask.
union(*masks: MaskGrid) -> MaskGrid
    Pixelwise maximum of binary masks.
threshold(values: np.ndarray, level: float) -> MaskGrid
    Binarizes a soft mask.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import DimensionError, DomainError, NonFiniteError


@dataclass(frozen=True, eq=False)
class MaskGrid:
    values: np.ndarray
    binary: bool = field(default=False)

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise DimensionError(f"mask must be 2D, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise NonFiniteError("mask values must be finite")
        if np.any(values < 0):
            raise DomainError("mask values must be non-negative")
        if self.binary and not np.all((values == 0) | (values == 1)):
            raise DomainError("binary mask holds values other than 0 and 1")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @classmethod
    def zeros(cls, height: int, width: int) -> "MaskGrid":
        return cls(np.zeros((height, width)), binary=True)

    @classmethod
    def ones(cls, height: int, width: int) -> "MaskGrid":
        return cls(np.ones((height, width)), binary=True)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape  # type: ignore[return-value]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def is_binary(self) -> bool:
        return self.binary or bool(np.all((self.values == 0) | (self.values == 1)))

    def flatten(self) -> np.ndarray:
        """Returns the row-major flattened mask (one entry per latent position)."""
        return self.values.reshape(-1)

    def count(self) -> int:
        return int(np.count_nonzero(self.values))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, MaskGrid):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self.values, other.values))


@dataclass(frozen=True, eq=False)
class LatentGrid:
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 3:
            raise DimensionError(f"latent grid must be 3D, got shape {values.shape}")
        if min(values.shape) < 1:
            raise DimensionError(f"latent grid has an empty axis: {values.shape}")
        if not np.all(np.isfinite(values)):
            raise NonFiniteError("latent grid values must be finite")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape  # type: ignore[return-value]

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, LatentGrid):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self.values, other.values))


def _require_binary(m: MaskGrid) -> None:
    if not m.is_binary:
        raise DomainError("operation requires a binary mask")


def hadamard(a: LatentGrid, b: LatentGrid | MaskGrid) -> LatentGrid:
    """Elementwise product of two grids.

    A ``MaskGrid`` operand is broadcast over the channels of ``a``.

    Parameters
    ----------
    a : LatentGrid
        The left operand.
    b : LatentGrid | MaskGrid
        A grid of the same shape, or a mask matching ``a``'s height and width.

    Returns
    -------
    LatentGrid
        The product, shaped like ``a``.

    Raises
    ------
    DimensionError
        If the shapes do not fit.
    """
    if isinstance(b, MaskGrid):
        if b.shape != (a.height, a.width):
            raise DimensionError(f"cannot broadcast mask {b.shape} over grid {a.shape}")
        return LatentGrid(a.values * b.values[np.newaxis, :, :])
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch: {a.shape} vs {b.shape}")
    return LatentGrid(a.values * b.values)


def complement(m: MaskGrid) -> MaskGrid:
    _require_binary(m)
    return MaskGrid(1.0 - m.values, binary=True)


def downsample_nearest(m: MaskGrid, factor: int) -> MaskGrid:
    """Downsamples a mask by an integer factor with nearest-neighbour sampling.

    Output cell ``(i, j)`` takes the source pixel ``(i * factor, j * factor)``,
    i.e. the top-left pixel of its block.

    Parameters
    ----------
    m : MaskGrid
        The mask to downsample.
    factor : int
        The positive downsampling factor.

    Returns
    -------
    MaskGrid
        A ``(H / factor) x (W / factor)`` mask.

    Raises
    ------
    DomainError
        If ``factor`` is not positive.
    DimensionError
        If the mask dimensions are not divisible by ``factor``.
    """
    if factor < 1:
        raise DomainError(f"factor must be positive, got {factor}")
    if m.height % factor or m.width % factor:
        raise DimensionError(f"mask {m.shape} is not divisible by factor {factor}")
    return MaskGrid(m.values[::factor, ::factor].copy(), binary=m.binary)


def dilate(m: MaskGrid, radius: int) -> MaskGrid:
    """Dilates a binary mask with a ``(2 * radius + 1)`` square structuring element."""
    _require_binary(m)
    if radius < 0:
        raise DomainError(f"radius must be non-negative, got {radius}")
    if radius == 0:
        return MaskGrid(m.values.copy(), binary=True)
    structure = np.ones((2 * radius + 1, 2 * radius + 1), dtype=bool)
    dilated = ndimage.binary_dilation(m.values.astype(bool), structure=structure)
    return MaskGrid(dilated.astype(np.float64), binary=True)


def shift(m: MaskGrid, dx: int, dy: int) -> MaskGrid:
    """Translates a binary mask by ``dx`` columns and ``dy`` rows.

    Exposed borders are zero-filled and pixels moved off the grid are dropped.
    """
    _require_binary(m)
    shifted = ndimage.shift(
        m.values,
        (dy, dx),
        order=0,
        mode="grid-constant",
        cval=0.0,
        prefilter=False,
    )
    return MaskGrid(np.where(shifted > 0.5, 1.0, 0.0), binary=True)


def rough_mask(m: MaskGrid) -> MaskGrid:
    """Returns the filled bounding box of the ones of a binary mask."""
    _require_binary(m)
    rough = np.zeros(m.shape)
    boxes = ndimage.find_objects(m.values.astype(np.int32))
    if boxes and boxes[0] is not None:
        rough[boxes[0]] = 1.0
    return MaskGrid(rough, binary=True)


def union(*masks: MaskGrid) -> MaskGrid:
    if not masks:
        raise DomainError("union needs at least one mask")
    shapes = {mask.shape for mask in masks}
    if len(shapes) != 1:
        raise DimensionError(f"cannot combine masks of shapes {sorted(shapes)}")
    for mask in masks:
        _require_binary(mask)
    return MaskGrid(np.maximum.reduce([mask.values for mask in masks]), binary=True)


def threshold(values: np.ndarray, level: float = 0.5) -> MaskGrid:
    """Binarizes soft mask values: entries at or above ``level`` become 1."""
    values = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise NonFiniteError("soft mask values must be finite")
    return MaskGrid(np.where(values >= level, 1.0, 0.0), binary=True)
