"""
This module builds the inpainting conditions: the masked image, the latent
mask condition, and their FreeCond variants.

Timesteps live on the scheduler scale ``[0, T]`` and decrease during
sampling, so the early steps the low-pass filter targets are the large
ones (``t >= t_fc``).

Classes
-------
FreeCondParams
    The five FreeCond controls ``(w, alpha, beta, gamma, t_fc)`` and ``T``.

Functions
---------
mask_image(image: LatentGrid, mask: MaskGrid) -> LatentGrid
    Zeroes the masked pixels of an image.
make_mask_condition(mask: MaskGrid, latent_factor: int) -> MaskGrid
    Downsamples the mask to latent resolution.
freecond_mask(mc: MaskGrid, alpha: float, beta: float) -> MaskGrid
    Scales the inside and outside of the mask condition.
freecond_image(zc: LatentGrid, t: int, params: FreeCondParams) -> LatentGrid
    Low-pass filters the image condition at early timesteps.
"""

import math
from dataclasses import asdict, dataclass

from .errors import DomainError
from .freq import lpf
from .grid import LatentGrid, MaskGrid, complement, downsample_nearest, hadamard
from .utils import parse_angle, settings


@dataclass(frozen=True)
class FreeCondParams:
    w: float = 15.0
    alpha: float = 1.0
    beta: float = 0.0
    gamma: float = math.pi
    t_fc: int = 0
    T: int = 50

    def __post_init__(self) -> None:
        if self.T < 1:
            raise DomainError(f"T must be positive, got {self.T}")
        for key in ("w", "alpha", "beta"):
            if not math.isfinite(getattr(self, key)):
                raise DomainError(f"{key} must be finite, got {getattr(self, key)}")
        if self.w < 0:
            raise DomainError(f"w must be non-negative, got {self.w}")
        if self.alpha < 0:
            raise DomainError(f"alpha must be non-negative, got {self.alpha}")
        if self.beta < 0:
            raise DomainError(f"beta must be non-negative, got {self.beta}")
        if not 0.0 <= self.gamma <= math.pi:
            raise DomainError(f"gamma outside [0, π]: {self.gamma}")
        if not 0 <= self.t_fc <= self.T:
            raise DomainError(f"t_fc outside [0, {self.T}]: {self.t_fc}")

    @classmethod
    def from_dict(cls, values: dict) -> "FreeCondParams":
        """Builds parameters from a mapping, accepting angle strings for gamma."""
        unknown = set(values) - set(cls.__dataclass_fields__)
        if unknown:
            raise DomainError(f"unknown FreeCond parameters: {sorted(unknown)}")
        values = dict(values)
        if "gamma" in values:
            values["gamma"] = parse_angle(values["gamma"])
        for key in ("w", "alpha", "beta"):
            if key in values:
                values[key] = float(values[key])
        for key in ("t_fc", "T"):
            if key in values:
                values[key] = _as_int(key, values[key])
        return cls(**values)

    @classmethod
    def default(cls) -> "FreeCondParams":
        return cls.from_dict(settings["freecond"])

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def is_baseline(self) -> bool:
        """Whether both conditions pass through unchanged."""
        return self.alpha == 1.0 and self.beta == 0.0 and self.gamma == math.pi


def _as_int(key: str, value) -> int:
    if isinstance(value, float) and value.is_integer():
        return int(value)
    if isinstance(value, int) and not isinstance(value, bool):
        return value
    if isinstance(value, str) and value.strip().lstrip("-").isdigit():
        return int(value)
    raise DomainError(f"{key} must be an integer timestep, got {value!r}")


def mask_image(image: LatentGrid, mask: MaskGrid) -> LatentGrid:
    """Returns ``(1 - M) * I`` with the mask broadcast over the image channels."""
    return hadamard(image, complement(mask))


def make_mask_condition(mask: MaskGrid, latent_factor: int = 4) -> MaskGrid:
    return downsample_nearest(mask, latent_factor)


def freecond_mask(mc: MaskGrid, alpha: float, beta: float) -> MaskGrid:
    """Returns ``alpha * Mc + beta * (1 - Mc)``.

    Parameters
    ----------
    mc : MaskGrid
        The binary latent mask condition.
    alpha : float
        Scale of the masked region.
    beta : float
        Scale of the unmasked region.

    Returns
    -------
    MaskGrid
        The scalar FreeCond mask condition.

    Raises
    ------
    DomainError
        If ``alpha`` or ``beta`` is negative or ``mc`` is not binary.
    """
    if alpha < 0 or beta < 0:
        raise DomainError(f"alpha and beta must be non-negative, got ({alpha}, {beta})")
    outside = complement(mc)
    return MaskGrid(alpha * mc.values + beta * outside.values)


def freecond_image(zc: LatentGrid, t: int, params: FreeCondParams) -> LatentGrid:
    """Returns the image condition for timestep ``t``.

    The low-pass filtered condition is used while ``t >= t_fc``; later steps
    get ``zc`` itself.
    """
    if not 0 <= t <= params.T:
        raise DomainError(f"timestep outside [0, {params.T}]: {t}")
    if t < params.t_fc:
        return zc
    return lpf(zc, params.gamma)
