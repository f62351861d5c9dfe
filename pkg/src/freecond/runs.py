"""
This module turns run configurations into artifacts on disk.

Every run owns a directory holding ``output.png`` and ``run.json`` (plus
``attention/*.tensor`` when attention capture is on). All files are written
atomically.

Functions
---------
resolve_weights(config: RunConfig) -> NetWeights
load_inputs(config: RunConfig) -> tuple[LatentGrid, MaskGrid]
write_run_artifacts(result: InpaintResult, directory: Path) -> Path
execute_run(config, weights, image, mask, directory) -> InpaintResult
run_inpaint(config: RunConfig) -> InpaintResult
run_ci_report(config, tokens, layer, companion) -> Path
parse_axis_values(axis, values, T) -> list[tuple[str, float | int]]
run_sweep(config, axis, values, workers, axis_base) -> pd.DataFrame
run_shift(config, shift_px, dy) -> pd.DataFrame
collect_scores(sample, method, ...) -> ScoreTable
"""

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import pandas as pd

from .analysis import mfc_ci_response, run_shift_experiment
from .conditioning import FreeCondParams, _as_int
from .data_handler import load_image, load_mask, save_image
from .errors import ConfigError, DomainError, FreecondError
from .grid import LatentGrid, MaskGrid, dilate
from .metrics import ScoreTable, changed_mask, ingest_external_scores, iou, masked_region_metrics, psnr
from .run_config import RunConfig
from .sampler import InpaintResult, inpaint
from .toynet import NetWeights, gen_weights, load_weights
from .utils import _Axis, _Layer, atomic_write_text, metadata, parse_angle, save_tensor


logger = logging.getLogger(__name__)

OUTPUT_IMAGE = "output.png"
RUN_RECORD = "run.json"
THREADS_VARIABLE = "FREECOND_THREADS"


def resolve_weights(config: RunConfig) -> NetWeights:
    """Loads the configured weight set, or generates it from the network seed."""
    if config.weights_path is None:
        return gen_weights(config.network)
    weights = load_weights(config.weights_path)
    if weights.config != config.network:
        raise ConfigError(f"weights at {config.weights_path} were built for a different network config")
    return weights


def load_inputs(config: RunConfig) -> tuple[LatentGrid, MaskGrid]:
    return load_image(config.require("image")), load_mask(config.require("mask"))


def write_run_artifacts(result: InpaintResult, directory: Path) -> Path:
    """Writes ``output.png``, ``run.json`` and captured attention; returns the record path."""
    directory = Path(directory)
    result.record.output_path = OUTPUT_IMAGE
    save_image(directory / OUTPUT_IMAGE, result.image)
    for step in result.attention:
        record = step.cross_attention
        save_tensor(
            directory / "attention" / f"cross_t{step.t:03d}.tensor",
            record.probabilities,
            {"t": step.t, "height": record.height, "width": record.width},
        )
    return atomic_write_text(directory / RUN_RECORD, result.record.to_json())


def execute_run(
    config: RunConfig,
    weights: NetWeights,
    image: LatentGrid,
    mask: MaskGrid,
    directory: Path,
) -> InpaintResult:
    result = inpaint(
        image,
        mask,
        config.prompt,
        config.params,
        weights,
        config.noise_seed,
        inputs=config.input_paths(),
        capture_attention=config.capture_attention,
    )
    write_run_artifacts(result, directory)
    return result


def run_inpaint(config: RunConfig) -> InpaintResult:
    weights = resolve_weights(config)
    image, mask = load_inputs(config)
    result = execute_run(config, weights, image, mask, config.output_dir)
    if config.capture_ci:
        _write_ci_report(config, weights, image, mask, None, "input", "zero")
    logger.info("Run written to %s", config.output_dir)
    return result


def run_ci_report(
    config: RunConfig,
    tokens: list[int] | None = None,
    layer: _Layer = "input",
    companion: str = "zero",
) -> Path:
    weights = resolve_weights(config)
    image, mask = load_inputs(config)
    return _write_ci_report(config, weights, image, mask, tokens, layer, companion)


def _write_ci_report(
    config: RunConfig,
    weights: NetWeights,
    image: LatentGrid,
    mask: MaskGrid,
    tokens: list[int] | None,
    layer: _Layer,
    companion: str,
) -> Path:
    report = mfc_ci_response(
        image,
        mask,
        config.prompt,
        config.params,
        weights,
        config.noise_seed,
        tokens=tokens,
        layer=layer,
        companion=companion,
    )
    return _write_csv(config.output_dir / "ci.csv", report)


def _write_csv(path: Path, table: pd.DataFrame) -> Path:
    return atomic_write_text(path, table.to_csv(index=False, lineterminator="\n"))


def _bound(value: float | str, T: int) -> float:
    if value == "T":
        return T
    return parse_angle(value)


def parse_axis_values(axis: _Axis, values: list, T: int) -> list[tuple[str, float | int]]:
    """Parses sweep values and checks them against the axis domain.

    Returns
    -------
    list[tuple[str, float | int]]
        The value as written and its parsed number, in the given order.

    Raises
    ------
    ConfigError
        If the axis is unknown or a value is outside its domain.
    """
    try:
        description = metadata.axis(axis)
    except ValueError as error:
        raise ConfigError(str(error)) from None
    if not values:
        raise ConfigError(f"no values to sweep for {axis}")
    parsed = []
    for raw in values:
        label = str(raw).strip()
        try:
            if description["kind"] == "integer":
                number = _as_int(axis, label)
            elif description["kind"] == "angle":
                number = parse_angle(label)
            else:
                number = float(label)
        except ValueError:
            raise ConfigError(f"{axis} value {label!r} is not a {description['kind']}") from None
        if "min" in description and number < _bound(description["min"], T):
            raise ConfigError(f"{axis} value {label} is below {description['min']}")
        if "max" in description and number > _bound(description["max"], T):
            raise ConfigError(f"{axis} value {label} is above {description['max']}")
        parsed.append((label, number))
    return parsed


def _sweep_threads(workers: int | None, runs: int) -> int:
    cap = os.environ.get(THREADS_VARIABLE)
    threads = workers or (int(cap) if cap else os.cpu_count() or 1)
    if cap:
        threads = min(threads, int(cap))
    return max(1, min(threads, runs))


def _run_scores(result: InpaintResult, image: LatentGrid, mask: MaskGrid) -> dict[str, float]:
    region = masked_region_metrics(result.image, image, mask)
    return {
        "iou": iou(mask, changed_mask(result.image, image)),
        "psnr_outside": region["psnr_outside"],
        "changed_fraction": region["changed_fraction_inside"],
    }


def run_sweep(
    config: RunConfig,
    axis: _Axis,
    values: list | None = None,
    workers: int | None = None,
    axis_base: bool = False,
) -> pd.DataFrame:
    """Runs one inpaint per value of a single axis and writes ``sweep.csv``.

    Every run shares the weight and noise seeds and writes into its own
    ``run_NN`` directory under ``<output_dir>/sweep_<axis>``. Rows follow the
    order of ``values`` whatever the number of worker threads; a failing run
    fills the ``error`` column of its row and the sweep goes on.

    Parameters
    ----------
    config : RunConfig
        The base configuration.
    axis : _Axis
        The swept parameter, or ``dilation`` for the mask radius in pixels.
    values : list | None, optional
        The values; defaults to the grid in ``metadata/sweeps.yaml``.
    workers : int | None, optional
        The worker count, capped by ``FREECOND_THREADS``.
    axis_base : bool, optional
        Apply the axis's base overrides from ``metadata/sweeps.yaml``.

    Returns
    -------
    pd.DataFrame
        The ``sweep.csv`` table.
    """
    if axis not in metadata.sweeps:
        raise ConfigError(f"unknown sweep axis {axis!r}")
    description = metadata.axis(axis)
    values = description["values"] if values is None else values
    parsed = parse_axis_values(axis, values, config.params.T)

    base = config.params.to_dict()
    if axis_base:
        base |= description.get("base", {})
    runs = []
    for label, number in parsed:
        changes = {} if axis == "dilation" else {axis: number}
        try:
            params = FreeCondParams.from_dict(base | changes)
        except FreecondError as error:
            raise ConfigError(str(error)) from error
        runs.append((label, config.with_params(params), number))

    weights = resolve_weights(config)
    image, mask = load_inputs(config)
    sweep_directory = config.output_dir / f"sweep_{axis}"

    def sweep_row(index: int) -> dict:
        label, run_config, number = runs[index]
        run_path = f"run_{index:02d}"
        row = {"value": label, "iou": math.nan, "psnr_outside": math.nan, "changed_fraction": math.nan,
               "run_path": run_path, "error": ""}
        try:
            run_mask = dilate(mask, number) if axis == "dilation" else mask
            result = execute_run(run_config, weights, image, run_mask, sweep_directory / run_path)
            row |= _run_scores(result, image, run_mask)
        except (FreecondError, OSError) as error:
            logger.warning("Sweep %s = %s failed: %s", axis, label, error)
            row["error"] = str(error)
        return row

    threads = _sweep_threads(workers, len(runs))
    logger.info("Sweeping %s over %d values with %d threads", axis, len(runs), threads)
    with ThreadPoolExecutor(max_workers=threads) as executor:
        rows = list(executor.map(sweep_row, range(len(runs))))

    table = pd.DataFrame(rows, columns=metadata.csv_columns("sweep"))
    _write_csv(sweep_directory / "sweep.csv", table)
    return table


def run_shift(config: RunConfig, shift_px: int, dy: int = 0) -> pd.DataFrame:
    """Runs the mask shift experiment and writes ``shift.csv``.

    The object mask is the inpainting mask of the original run; the shifted
    run moves it by ``(shift_px, dy)`` pixels.
    """
    weights = resolve_weights(config)
    image = load_image(config.require("image"))
    object_mask = load_mask(config.require("object_mask"))
    experiment = run_shift_experiment(
        image, object_mask, config.prompt, shift_px, config.params, weights, config.noise_seed, dy
    )
    directory = config.output_dir / "shift"
    rows = []
    for name, result, mask in (
        ("original", experiment.original, object_mask),
        ("shifted", experiment.shifted, experiment.shifted_mask),
    ):
        write_run_artifacts(result, directory / name)
        rows.append(
            {"run": name, "shift_px": shift_px, "placement": str(experiment.placements[name]), "run_path": name}
            | _run_scores(result, image, mask)
        )
    atomic_write_text(directory / "shift.json", experiment.records_json())
    table = pd.DataFrame(rows, columns=metadata.csv_columns("shift"))
    _write_csv(directory / "shift.csv", table)
    return table


def collect_scores(
    sample: str,
    method: str,
    *,
    pred_mask: Path | None = None,
    ref_mask: Path | None = None,
    image: Path | None = None,
    reference: Path | None = None,
    mask: Path | None = None,
    external: list[Path] = (),
) -> ScoreTable:
    """Computes the local scores of one sample and merges external score files.

    ``iou`` needs both masks, ``psnr`` both images; with a mask as well the
    background PSNR and the changed fraction inside the mask are added.
    """
    table = ScoreTable()
    if (pred_mask is None) != (ref_mask is None):
        raise ConfigError("IoU needs both a predicted and a reference mask")
    if (image is None) != (reference is None):
        raise ConfigError("PSNR needs both an image and a reference")
    if pred_mask is not None:
        table.add(sample, method, "iou", iou(load_mask(pred_mask), load_mask(ref_mask)))
    if image is not None:
        output = load_image(image)
        target = load_image(reference)
        table.add(sample, method, "psnr", psnr(output, target))
        if mask is not None:
            region = masked_region_metrics(output, target, load_mask(mask))
            table.add(sample, method, "psnr_outside", region["psnr_outside"])
            table.add(sample, method, "changed_fraction_inside", region["changed_fraction_inside"])
    elif mask is not None:
        raise DomainError("region metrics need an image and a reference")
    for path in external:
        ingest_external_scores(path, table)
    return table
