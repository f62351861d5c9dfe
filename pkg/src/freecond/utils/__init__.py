from .metadata_reader import (
    _Axis,
    _Region,
    _Layer,
    settings,
    metadata,
    directories,
    parse_angle,
)
from .seeded_stream import SeededStream
from .file_utils import atomic_write_bytes, atomic_write_text, sha256_file
from .tensor_file import (
    save_tensor,
    load_tensor,
    save_tensor_set,
    load_tensor_set,
)

__all__ = [
    "_Axis",
    "_Region",
    "_Layer",
    "settings",
    "metadata",
    "directories",
    "parse_angle",
    "SeededStream",
    "atomic_write_bytes",
    "atomic_write_text",
    "sha256_file",
    "save_tensor",
    "load_tensor",
    "save_tensor_set",
    "load_tensor_set",
]
