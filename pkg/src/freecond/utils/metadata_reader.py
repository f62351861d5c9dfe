"""
This module provides utilities for reading package settings and metadata.

Settings (``config/settings.yaml``) hold every default of a run, metadata
files (``metadata/*.yaml``) describe sweep axes and file formats. Both are
read once at import and exposed as module-level objects.

Classes
-------
Metadata
    Holds the sweep-axis and file-format tables.
Directories
    Manages output directory paths.

Functions
---------
read_metadata_file(file_name: str) -> dict
    Reads a YAML metadata file and returns its content as a dictionary.
parse_angle(value: float | int | str) -> float
    Converts numbers and strings such as ``"0.75pi"`` to radians.
"""

import math
import re
from pathlib import Path
from typing import Literal

import yaml


__all__ = [
    "_Axis",
    "_Region",
    "_Layer",
    "settings",
    "metadata",
    "directories",
    "parse_angle",
]

PACKAGE_PATH = Path(__file__).parents[1]

_Axis = Literal["w", "alpha", "beta", "gamma", "t_fc", "dilation"]
_Region = Literal["inside-M", "outside-M"]
_Layer = Literal["input", "cross"]

_ANGLE_PATTERN = re.compile(r"^\s*([0-9.eE+-]*)\s*\*?\s*pi\s*(?:/\s*([0-9.]+))?\s*$")


with (PACKAGE_PATH / "config/settings.yaml").open(encoding="utf-8") as yaml_file:
    settings: dict = yaml.safe_load(yaml_file)


def read_metadata_file(file_name: str) -> dict:
    """Reads a YAML metadata file and returns its content as a dictionary.

    Parameters
    ----------
    file_name : str
        The name of the metadata file (without extension) to read.

    Returns
    -------
    dict
        The content of the metadata file.
    """
    with (PACKAGE_PATH / f"metadata/{file_name}.yaml").open(encoding="utf-8") as yaml_file:
        file_content = yaml.safe_load(yaml_file)
    return file_content


def parse_angle(value: float | int | str) -> float:
    """Converts an angle given as a number or a multiple of pi to radians.

    Parameters
    ----------
    value : float | int | str
        A plain number, or a string such as ``"pi"``, ``"0.75pi"``,
        ``"pi/2"`` or ``"0.5*pi"``.

    Returns
    -------
    float
        The angle in radians.

    Raises
    ------
    ValueError
        If the string is not a recognised angle expression.
    """
    if isinstance(value, bool):
        raise ValueError(f"not an angle: {value!r}")
    if isinstance(value, (int, float)):
        return float(value)
    match = _ANGLE_PATTERN.match(value)
    if match is None:
        try:
            return float(value)
        except ValueError:
            raise ValueError(f"not an angle: {value!r}") from None
    factor = float(match.group(1)) if match.group(1) else 1.0
    divisor = float(match.group(2)) if match.group(2) else 1.0
    if factor == 1.0 and divisor == 1.0:
        return math.pi
    return factor * math.pi / divisor


class Metadata:
    sweeps: dict = read_metadata_file("sweeps")
    formats: dict = read_metadata_file("formats")

    def axis(self, name: _Axis) -> dict:
        """Returns the domain description of a sweep axis.

        Parameters
        ----------
        name : _Axis
            The sweep axis.

        Returns
        -------
        dict
            The axis description (``kind``, bounds, default ``values``).
        """
        if name not in self.sweeps:
            raise ValueError(f"unknown sweep axis {name!r}")
        return self.sweeps[name]

    def csv_columns(self, table: str) -> list[str]:
        return list(self.formats["csv"][table])


class Directories:
    test_cases = Path(settings["test_case_path"])
    internal_data = PACKAGE_PATH.joinpath("internal_data")


metadata = Metadata()
directories = Directories()
