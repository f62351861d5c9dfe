"""
This module provides utilities for writing files safely.

Every artifact is written to a temporary file in the target directory and
then renamed over the destination, so readers never see a half-written
file.

Functions
---------
atomic_write_bytes(path: Path, data: bytes) -> Path
    Writes bytes to a path atomically.
atomic_write_text(path: Path, text: str) -> Path
    Writes UTF-8 text to a path atomically.
sha256_file(path: Path) -> str
    Returns the SHA-256 hex digest of a file.
"""

import hashlib
import os
import tempfile
from pathlib import Path


def atomic_write_bytes(path: Path, data: bytes) -> Path:
    """Writes bytes to a path through a temporary file and a rename.

    Parameters
    ----------
    path : Path
        The destination. Missing parent directories are created.
    data : bytes
        The content to write.

    Returns
    -------
    Path
        The destination path.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    file_descriptor, temp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(file_descriptor, mode="wb") as file:
            file.write(data)
            file.flush()
            os.fsync(file.fileno())
        os.replace(temp_name, path)
    except BaseException:
        Path(temp_name).unlink(missing_ok=True)
        raise
    return path


def atomic_write_text(path: Path, text: str) -> Path:
    return atomic_write_bytes(path, text.encode("utf-8"))


def sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with Path(path).open(mode="rb") as file:
        while True:
            chunk = file.read(4096)
            if not chunk:
                break
            digest.update(chunk)
    return digest.hexdigest()
