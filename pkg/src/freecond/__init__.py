from .conditioning import FreeCondParams, freecond_image, freecond_mask
from .data_handler import load_test_case, setup_test_cases
from .errors import (
    ConfigError,
    ConflictError,
    DimensionError,
    DomainError,
    FreecondError,
    IntegrityError,
    ParseError,
)
from .grid import LatentGrid, MaskGrid
from .sampler import inpaint
from .toynet import NetConfig, gen_weights

__all__ = [
    "FreeCondParams",
    "freecond_image",
    "freecond_mask",
    "load_test_case",
    "setup_test_cases",
    "ConfigError",
    "ConflictError",
    "DimensionError",
    "DomainError",
    "FreecondError",
    "IntegrityError",
    "ParseError",
    "LatentGrid",
    "MaskGrid",
    "inpaint",
    "NetConfig",
    "gen_weights",
]
