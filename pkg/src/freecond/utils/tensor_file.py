"""
This module reads and writes the tensor container used for weights and
latents.

A tensor file is one line of JSON followed by the raw payload::

    {"dtype": "float32", "endianness": "little", "format_version": 1,
     "layout": "row-major", "shape": [4, 16, 16], ...}\\n<payload>

The payload is little-endian float32 in row-major (channel-major) order, so
its length is ``prod(shape) * 4`` bytes. Extra header keys are kept and
returned on load.

A weight set is a directory with one tensor file per weight and a
``manifest.json`` recording the network config, seed, format version and the
shape and SHA-256 of every tensor file.
"""

import json
from pathlib import Path

import numpy as np

from ..errors import IntegrityError, ParseError
from .file_utils import atomic_write_bytes, atomic_write_text, sha256_file
from .metadata_reader import metadata


TENSOR_FORMAT = metadata.formats["tensor"]
FORMAT_VERSION = TENSOR_FORMAT["format_version"]
SUFFIX = TENSOR_FORMAT["suffix"]
MANIFEST_NAME = metadata.formats["weights"]["manifest"]
PAYLOAD_DTYPE = np.dtype("<f4")


def encode_tensor(array: np.ndarray, extra: dict | None = None) -> bytes:
    """Serializes an array (cast to float32) with its JSON header line."""
    payload = np.ascontiguousarray(array, dtype=PAYLOAD_DTYPE)
    header = dict(extra or {}) | {
        "shape": list(payload.shape),
        "dtype": TENSOR_FORMAT["dtype"],
        "layout": TENSOR_FORMAT["layout"],
        "endianness": TENSOR_FORMAT["endianness"],
        "format_version": FORMAT_VERSION,
    }
    header_line = json.dumps(header, sort_keys=True, separators=(",", ":")) + "\n"
    return header_line.encode("utf-8") + payload.tobytes()


def decode_tensor(data: bytes, source: str = "<bytes>") -> tuple[np.ndarray, dict]:
    """Parses a tensor file.

    Returns
    -------
    tuple[np.ndarray, dict]
        The float32 array and the full header.

    Raises
    ------
    ParseError
        If the header line is missing or not valid JSON.
    IntegrityError
        If the format version is unknown or the payload length does not
        match the header shape.
    """
    newline = data.find(b"\n")
    if newline < 0:
        raise ParseError(f"{source}: missing tensor header", line=1)
    try:
        header = json.loads(data[:newline].decode("utf-8"))
        shape = tuple(int(size) for size in header["shape"])
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValueError) as error:
        raise ParseError(f"{source}: invalid tensor header ({error})", line=1) from None
    if header.get("format_version") != FORMAT_VERSION:
        raise IntegrityError(f"{source}: unsupported format version {header.get('format_version')}")
    payload = data[newline + 1:]
    expected = int(np.prod(shape, dtype=np.int64)) * PAYLOAD_DTYPE.itemsize
    if len(payload) != expected:
        raise IntegrityError(f"{source}: payload has {len(payload)} bytes, expected {expected}")
    array = np.frombuffer(payload, dtype=PAYLOAD_DTYPE).reshape(shape).astype(np.float32)
    return array, header


def save_tensor(path: Path, array: np.ndarray, extra: dict | None = None) -> Path:
    return atomic_write_bytes(Path(path), encode_tensor(array, extra))


def load_tensor(path: Path) -> np.ndarray:
    path = Path(path)
    array, _ = decode_tensor(path.read_bytes(), source=str(path))
    return array


def save_tensor_set(directory: Path, tensors: dict[str, np.ndarray], header: dict) -> Path:
    """Writes named tensors and a manifest into a directory.

    Parameters
    ----------
    directory : Path
        The target directory.
    tensors : dict[str, np.ndarray]
        Tensors by name; written in the given order.
    header : dict
        Extra manifest fields (for weights: ``config`` and ``seed``).

    Returns
    -------
    Path
        The manifest path.
    """
    directory = Path(directory)
    entries = []
    for name, array in tensors.items():
        path = save_tensor(directory / f"{name}{SUFFIX}", array, {"name": name})
        entries.append({
            "name": name,
            "file": path.name,
            "shape": list(np.shape(array)),
            "sha256": sha256_file(path),
        })
    manifest = dict(header) | {"format_version": FORMAT_VERSION, "tensors": entries}
    return atomic_write_text(directory / MANIFEST_NAME, json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_tensor_set(directory: Path) -> tuple[dict[str, np.ndarray], dict]:
    """Reads a tensor set written by ``save_tensor_set``.

    Raises
    ------
    IntegrityError
        If a file's checksum or shape disagrees with the manifest.
    """
    directory = Path(directory)
    manifest_path = directory / MANIFEST_NAME
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as error:
        raise ParseError(f"{manifest_path}: {error.msg}", line=error.lineno) from None
    if manifest.get("format_version") != FORMAT_VERSION:
        raise IntegrityError(f"{manifest_path}: unsupported format version")
    tensors = {}
    for entry in manifest["tensors"]:
        path = directory / entry["file"]
        array = load_tensor(path)
        if sha256_file(path) != entry["sha256"]:
            raise IntegrityError(f"{path}: checksum does not match the manifest")
        if list(array.shape) != list(entry["shape"]):
            raise IntegrityError(f"{path}: shape {array.shape} does not match the manifest")
        tensors[entry["name"]] = array
    return tensors, manifest
