import json
import logging
import shutil
from dataclasses import dataclass
from io import BytesIO
from pathlib import Path
from typing import Literal

import numpy as np
from PIL import Image

from .errors import DimensionError
from .grid import LatentGrid, MaskGrid, dilate, rough_mask, threshold, union
from .utils import atomic_write_bytes, atomic_write_text, directories, load_tensor, metadata, settings


logger = logging.getLogger(__name__)

_CaseIndex = Literal[0, 1, 2]

CASE_SIZE = 64
CASE_PROMPTS = (
    "a golden retriever wearing astronaut gear",
    "a red sports car parked on the street",
    "moss and small white flowers",
)
EXTERNAL_SCORES = "external_scores.csv"


@dataclass(frozen=True, eq=False)
class InpaintCase:
    name: str
    image: LatentGrid
    mask: MaskGrid
    object_mask: MaskGrid
    prompt: str


def setup_test_cases(directory: Path | None = None) -> Path:
    """Writes the bundled cases, the disjoint mask pair and the external scores.

    Each case directory holds ``image.png``, ``mask.png``, ``object_mask.png``,
    ``prompt.txt`` and a ``config.json`` pointing at them.
    """
    directory = directories.test_cases if directory is None else Path(directory)
    for index in range(len(CASE_PROMPTS)):
        case = load_test_case(index)
        case_directory = directory / case.name
        save_image(case_directory / "image.png", case.image)
        save_mask(case_directory / "mask.png", case.mask)
        save_mask(case_directory / "object_mask.png", case.object_mask)
        atomic_write_text(case_directory / "prompt.txt", case.prompt + "\n")
        atomic_write_text(case_directory / "config.json", _case_config(case))

    left, right = disjoint_masks()
    save_mask(directory / "disjoint_a.png", left)
    save_mask(directory / "disjoint_b.png", right)
    shutil.copyfile(directories.internal_data / EXTERNAL_SCORES, directory / EXTERNAL_SCORES)
    logger.info("Wrote %d test cases to %s", len(CASE_PROMPTS), directory)
    return directory


def load_test_case(index: _CaseIndex) -> InpaintCase:
    if index == 0:
        image, object_mask = _portrait_scene()
        mask = dilate(rough_mask(object_mask), 2)
    elif index == 1:
        image, object_mask = _street_scene()
        mask = object_mask
    elif index == 2:
        image, object_mask = _garden_scene()
        mask = union(rough_mask(_garden_patch(18, 20)), rough_mask(_garden_patch(44, 42)))
    else:
        raise ValueError(f"no test case {index}")
    return InpaintCase(f"case_{index}", image, mask, object_mask, CASE_PROMPTS[index])


def disjoint_masks() -> tuple[MaskGrid, MaskGrid]:
    left = np.zeros((CASE_SIZE, CASE_SIZE))
    right = np.zeros((CASE_SIZE, CASE_SIZE))
    left[16:48, 4:28] = 1.0
    right[16:48, 36:60] = 1.0
    return MaskGrid(left, binary=True), MaskGrid(right, binary=True)


def load_image(path: Path) -> LatentGrid:
    """Reads an RGB image as a ``3 x H x W`` grid with values in ``[0, 1]``."""
    with Image.open(Path(path)) as image:
        pixels = np.asarray(image.convert("RGB"), dtype=np.float64) / 255.0
    return LatentGrid(pixels.transpose(2, 0, 1))


def save_image(path: Path, image: LatentGrid) -> Path:
    if image.channels != 3:
        raise DimensionError(f"an RGB image needs 3 channels, got {image.channels}")
    pixels = np.round(np.clip(image.values, 0.0, 1.0) * 255.0).astype(np.uint8)
    return _write(Path(path), Image.fromarray(pixels.transpose(1, 2, 0)))


def load_mask(path: Path) -> MaskGrid:
    """Reads a grayscale mask image or a 2D ``.tensor`` file of soft mask values.

    Image pixels are scaled to ``[0, 1]``; values at or above
    ``metrics.mask_threshold`` become 1.
    """
    path = Path(path)
    if path.suffix == metadata.formats["tensor"]["suffix"]:
        values = load_tensor(path)
    else:
        with Image.open(path) as image:
            values = np.asarray(image.convert("L"), dtype=np.float64) / 255.0
    if values.ndim != 2:
        raise DimensionError(f"a mask must be 2D, {path} holds shape {values.shape}")
    return threshold(values, settings["metrics"]["mask_threshold"])


def save_mask(path: Path, mask: MaskGrid) -> Path:
    pixels = np.where(mask.values >= 0.5, 255, 0).astype(np.uint8)
    return _write(Path(path), Image.fromarray(pixels))


def _write(path: Path, image: Image.Image) -> Path:
    image_format = Image.registered_extensions().get(path.suffix.lower(), "PNG")
    buffer = BytesIO()
    image.save(buffer, format=image_format)
    return atomic_write_bytes(path, buffer.getvalue())


def _case_config(case: InpaintCase) -> str:
    document = {
        "inputs": {
            "image": "image.png",
            "mask": "mask.png",
            "object_mask": "object_mask.png",
            "prompt": case.prompt,
        },
        "output_dir": "output",
    }
    return json.dumps(document, indent=2) + "\n"


def _grid() -> tuple[np.ndarray, np.ndarray]:
    yy, xx = np.mgrid[0:CASE_SIZE, 0:CASE_SIZE].astype(np.float64)
    return yy / (CASE_SIZE - 1), xx / (CASE_SIZE - 1)


def _quantized(channels: list[np.ndarray]) -> LatentGrid:
    return LatentGrid(np.round(np.clip(np.stack(channels), 0.0, 1.0) * 255.0) / 255.0)


def _paint(background: list[np.ndarray], region: np.ndarray, colour: tuple[float, float, float]) -> list[np.ndarray]:
    return [np.where(region, value, channel) for channel, value in zip(background, colour)]


def _portrait_scene() -> tuple[LatentGrid, MaskGrid]:
    y, x = _grid()
    sky = y < 0.6
    background = [
        np.where(sky, 0.35 + 0.3 * y, 0.30 + 0.1 * x),
        np.where(sky, 0.55 + 0.3 * y, 0.55 - 0.2 * y),
        np.where(sky, 0.90 - 0.2 * y, 0.25),
    ]
    body = (y - 0.55) ** 2 + (x - 0.5) ** 2 <= 0.2 ** 2
    channels = _paint(background, body, (0.85, 0.62, 0.30))
    return _quantized(channels), MaskGrid(body.astype(np.float64), binary=True)


def _street_scene() -> tuple[LatentGrid, MaskGrid]:
    y, x = _grid()
    stripes = (np.floor(x * 16) % 2).astype(bool)
    background = [
        np.where(stripes, 0.55, 0.45) + 0.1 * y,
        np.where(stripes, 0.55, 0.45) + 0.1 * y,
        np.where(stripes, 0.60, 0.50),
    ]
    car = (y >= 38 / 63) & (y <= 52 / 63) & (x >= 12 / 63) & (x <= 52 / 63)
    channels = _paint(background, car, (0.80, 0.12, 0.10))
    return _quantized(channels), MaskGrid(car.astype(np.float64), binary=True)


def _garden_patch(row: int, column: int) -> MaskGrid:
    y, x = _grid()
    patch = (y * 63 - row) ** 2 + (x * 63 - column) ** 2 <= 7 ** 2
    return MaskGrid(patch.astype(np.float64), binary=True)


def _garden_scene() -> tuple[LatentGrid, MaskGrid]:
    y, x = _grid()
    ripple = 0.5 + 0.25 * np.sin(6 * np.pi * x) * np.cos(4 * np.pi * y)
    background = [0.35 * ripple, 0.45 + 0.3 * ripple, 0.25 * ripple]
    flowers = union(_garden_patch(18, 20), _garden_patch(44, 42))
    channels = _paint(background, flowers.values.astype(bool), (0.95, 0.95, 0.90))
    return _quantized(channels), flowers
