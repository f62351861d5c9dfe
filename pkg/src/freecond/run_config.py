"""
This module reads and writes the JSON run configuration.

A configuration document has the sections ``params`` (FreeCond parameters),
``network`` (network shapes), ``seeds`` (``weights`` and ``noise``),
``inputs`` (``image``, ``mask``, ``object_mask`` paths and the ``prompt``),
``capture`` (``attention`` and ``ci`` switches) and the top-level paths
``output_dir`` and ``weights_path``. Missing keys take their defaults from
``config/settings.yaml``; unknown keys are rejected. Relative paths are
resolved against the directory of the configuration file.

Overrides are ``section.key=value`` strings; the value is read as JSON when
possible and as a plain string otherwise.

Classes
-------
RunConfig
    A validated run configuration.

Functions
---------
default_document() -> dict
load_run_config(path: Path, overrides: list[str]) -> RunConfig
"""

import copy
import json
from dataclasses import dataclass, replace
from pathlib import Path

from .conditioning import FreeCondParams
from .errors import ConfigError, FreecondError, ParseError
from .toynet import NetConfig
from .utils import settings


INPUT_PATHS = ("image", "mask", "object_mask")


def default_document() -> dict:
    return {
        "params": dict(settings["freecond"]),
        "network": dict(settings["network"]),
        "seeds": dict(settings["seeds"]),
        "inputs": {"image": None, "mask": None, "object_mask": None, "prompt": ""},
        "output_dir": settings["output_path"],
        "capture": {"attention": False, "ci": False},
        "weights_path": None,
    }


@dataclass(frozen=True)
class RunConfig:
    params: FreeCondParams
    network: NetConfig
    noise_seed: int
    prompt: str
    output_dir: Path
    image: Path | None = None
    mask: Path | None = None
    object_mask: Path | None = None
    capture_attention: bool = False
    capture_ci: bool = False
    weights_path: Path | None = None

    @classmethod
    def from_dict(cls, document: dict, base_directory: Path | None = None) -> "RunConfig":
        """Builds a configuration from a (possibly partial) document.

        Parameters
        ----------
        document : dict
            The configuration document.
        base_directory : Path | None, optional
            The directory relative paths are resolved against.

        Raises
        ------
        ConfigError
            If a key is unknown or a value is invalid.
        """
        document = _merge(default_document(), document)
        base_directory = Path.cwd() if base_directory is None else Path(base_directory)
        try:
            params = FreeCondParams.from_dict(document["params"])
            network = NetConfig.from_dict(
                document["network"] | {"timesteps": params.T, "seed": document["seeds"]["weights"]}
            )
            noise_seed = _seed(document["seeds"]["noise"])
        except (FreecondError, TypeError, ValueError) as error:
            raise ConfigError(str(error)) from error

        inputs = document["inputs"]
        capture = document["capture"]
        return cls(
            params=params,
            network=network,
            noise_seed=noise_seed,
            prompt=_string("inputs.prompt", inputs["prompt"]),
            output_dir=_resolve(base_directory, document["output_dir"]),
            image=_resolve(base_directory, inputs["image"]),
            mask=_resolve(base_directory, inputs["mask"]),
            object_mask=_resolve(base_directory, inputs["object_mask"]),
            capture_attention=_flag("capture.attention", capture["attention"]),
            capture_ci=_flag("capture.ci", capture["ci"]),
            weights_path=_resolve(base_directory, document["weights_path"]),
        )

    def to_dict(self) -> dict:
        network = self.network.to_dict()
        return {
            "params": self.params.to_dict(),
            "network": {key: network[key] for key in settings["network"]},
            "seeds": {"weights": self.network.seed, "noise": self.noise_seed},
            "inputs": {name: _text(getattr(self, name)) for name in INPUT_PATHS} | {"prompt": self.prompt},
            "output_dir": str(self.output_dir),
            "capture": {"attention": self.capture_attention, "ci": self.capture_ci},
            "weights_path": _text(self.weights_path),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def input_paths(self) -> dict[str, str]:
        return {name: str(getattr(self, name)) for name in INPUT_PATHS if getattr(self, name) is not None}

    def with_params(self, params: FreeCondParams) -> "RunConfig":
        return replace(self, params=params)

    def with_output_dir(self, output_dir: Path) -> "RunConfig":
        return replace(self, output_dir=Path(output_dir))

    def require(self, name: str) -> Path:
        """Returns an input path, failing if it is not configured."""
        path = getattr(self, name)
        if path is None:
            raise ConfigError(f"inputs.{name} is required for this command")
        return path


def load_run_config(path: Path, overrides: list[str] | tuple[str, ...] = ()) -> RunConfig:
    """Reads a configuration file and applies ``section.key=value`` overrides.

    Raises
    ------
    OSError
        If the file cannot be read.
    ParseError
        If the file is not valid JSON.
    ConfigError
        If a key is unknown or a value is invalid.
    """
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        document = json.loads(text)
    except json.JSONDecodeError as error:
        raise ParseError(f"{path}: {error.msg}", line=error.lineno) from None
    if not isinstance(document, dict):
        raise ConfigError(f"{path}: the configuration must be a JSON object")
    document = _merge(default_document(), document)
    for override in overrides:
        apply_override(document, override)
    return RunConfig.from_dict(document, base_directory=path.parent)


def apply_override(document: dict, override: str) -> dict:
    key, separator, raw_value = override.partition("=")
    if not separator or not key.strip():
        raise ConfigError(f"override must look like section.key=value, got {override!r}")
    try:
        value = json.loads(raw_value)
    except json.JSONDecodeError:
        value = raw_value
    *sections, name = key.strip().split(".")
    target = document
    for section in sections:
        if not isinstance(target.get(section), dict):
            raise ConfigError(f"unknown config section {section!r} in override {override!r}")
        target = target[section]
    if name not in target or isinstance(target[name], dict):
        raise ConfigError(f"unknown config key {key!r}")
    target[name] = value
    return document


def _merge(base: dict, overlay: dict, prefix: str = "") -> dict:
    merged = copy.deepcopy(base)
    for key, value in overlay.items():
        if key not in merged:
            raise ConfigError(f"unknown config key '{prefix}{key}'")
        if isinstance(merged[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config section '{prefix}{key}' must be an object")
            merged[key] = _merge(merged[key], value, f"{prefix}{key}.")
        else:
            merged[key] = value
    return merged


def _resolve(base_directory: Path, value: str | None) -> Path | None:
    if value is None:
        return None
    path = Path(_string("path", value))
    return path if path.is_absolute() else base_directory / path


def _text(path: Path | None) -> str | None:
    return None if path is None else str(path)


def _string(key: str, value) -> str:
    if not isinstance(value, str):
        raise ConfigError(f"{key} must be a string, got {value!r}")
    return value


def _flag(key: str, value) -> bool:
    if not isinstance(value, bool):
        raise ConfigError(f"{key} must be true or false, got {value!r}")
    return value


def _seed(value) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or value < 0:
        raise ConfigError(f"seeds must be non-negative integers, got {value!r}")
    return value
