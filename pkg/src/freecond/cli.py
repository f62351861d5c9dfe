"""
This module provides the ``freecond`` command line.

Commands
--------
inpaint      Run one inpainting and write ``output.png`` and ``run.json``.
sweep        Vary one parameter and write a run per value plus ``sweep.csv``.
ci-report    Write the per-channel CI / delta CI table ``ci.csv``.
metrics      Score masks and images, merge external scores, print the table.
gen-weights  Write the seeded weight set and its manifest.
shift        Inpaint with the object mask and a shifted copy of it.

Exit codes: 0 on success, 2 for invalid configs or inputs, 3 for I/O
errors, 4 for integrity failures.
"""

import logging
from contextlib import contextmanager
from pathlib import Path
from typing import Annotated

import typer

from .errors import ConfigError, FreecondError, IntegrityError
from .metrics import SCORE_COLUMNS
from .run_config import RunConfig, load_run_config
from .runs import collect_scores, run_ci_report, run_inpaint, run_shift, run_sweep
from .toynet import gen_weights, save_weights
from .utils import settings


logger = logging.getLogger(__name__)

app = typer.Typer(help="Toy-scale FreeCond inpainting lab.", no_args_is_help=True)

ConfigArgument = Annotated[Path, typer.Argument(help="Run configuration (JSON).")]
OverrideOption = Annotated[
    list[str] | None,
    typer.Option("--set", help="Override a config value, e.g. params.alpha=2."),
]
OutputOption = Annotated[Path | None, typer.Option("--output-dir", help="Replace the configured output directory.")]


@app.callback()
def main(verbose: Annotated[bool, typer.Option("--verbose", "-v", help="Log debug messages.")] = False) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else settings["logging"]["level"],
        format=settings["logging"]["format"],
        force=True,
    )


@contextmanager
def _exit_codes():
    try:
        yield
    except IntegrityError as error:
        typer.echo(f"integrity error: {error}", err=True)
        raise typer.Exit(code=4) from None
    except (FreecondError, ValueError) as error:
        typer.echo(f"error: {error}", err=True)
        raise typer.Exit(code=2) from None
    except OSError as error:
        typer.echo(f"I/O error: {error}", err=True)
        raise typer.Exit(code=3) from None


def _load(config: Path, overrides: list[str] | None, output_dir: Path | None = None) -> RunConfig:
    run_config = load_run_config(config, overrides or [])
    return run_config if output_dir is None else run_config.with_output_dir(output_dir)


@app.command()
def inpaint(config: ConfigArgument, set_: OverrideOption = None, output_dir: OutputOption = None) -> None:
    """Inpaint the configured image and write output.png and run.json."""
    with _exit_codes():
        run_config = _load(config, set_, output_dir)
        result = run_inpaint(run_config)
        typer.echo(f"{run_config.output_dir / 'output.png'} {result.record.output_checksum}")


@app.command()
def sweep(
    config: ConfigArgument,
    axis: Annotated[str, typer.Option(help="w, alpha, beta, gamma, t_fc or dilation.")],
    values: Annotated[str | None, typer.Option(help="Comma-separated values; defaults to the axis grid.")] = None,
    workers: Annotated[int | None, typer.Option(min=1, help="Worker threads (capped by FREECOND_THREADS).")] = None,
    axis_base: Annotated[bool, typer.Option("--axis-base", help="Apply the axis's base overrides.")] = False,
    set_: OverrideOption = None,
    output_dir: OutputOption = None,
) -> None:
    """Run one inpainting per value of a single parameter."""
    with _exit_codes():
        run_config = _load(config, set_, output_dir)
        value_list = None if values is None else [value for value in values.split(",") if value.strip()]
        table = run_sweep(run_config, axis, value_list, workers, axis_base)
        typer.echo(table.to_string(index=False))


@app.command("ci-report")
def ci_report(
    config: ConfigArgument,
    tokens: Annotated[str, typer.Option(help="'all' or comma-separated token indices.")] = "all",
    layer: Annotated[str, typer.Option(help="'input' or 'cross'.")] = "input",
    companion: Annotated[str, typer.Option(help="'zero' (zero mask) or 'same' (identical run).")] = "zero",
    set_: OverrideOption = None,
    output_dir: OutputOption = None,
) -> None:
    """Write the channel influence report of the masked run against its companion.

    The masked run uses the FreeCond mask condition of params.alpha and params.beta.
    """
    with _exit_codes():
        if layer not in ("input", "cross"):
            raise ConfigError(f"layer must be 'input' or 'cross', got {layer!r}")
        if companion not in ("zero", "same"):
            raise ConfigError(f"companion must be 'zero' or 'same', got {companion!r}")
        selected = None if tokens == "all" else _token_indices(tokens)
        path = run_ci_report(_load(config, set_, output_dir), selected, layer, companion)
        typer.echo(str(path))


def _token_indices(tokens: str) -> list[int]:
    try:
        return [int(token) for token in tokens.split(",") if token.strip()]
    except ValueError:
        raise ConfigError(f"tokens must be 'all' or integers, got {tokens!r}") from None


@app.command()
def metrics(
    pred_mask: Annotated[Path | None, typer.Option(help="Predicted mask for IoU.")] = None,
    ref_mask: Annotated[Path | None, typer.Option(help="Reference mask for IoU.")] = None,
    image: Annotated[Path | None, typer.Option(help="Image to score.")] = None,
    reference: Annotated[Path | None, typer.Option(help="Reference image for PSNR.")] = None,
    mask: Annotated[Path | None, typer.Option(help="Inpainting mask for region metrics.")] = None,
    external: Annotated[list[Path] | None, typer.Option(help="External score CSV (repeatable).")] = None,
    sample: Annotated[str, typer.Option(help="Sample id of the computed scores.")] = "sample",
    method: Annotated[str, typer.Option(help="Method name of the computed scores.")] = "freecond",
    output: Annotated[Path, typer.Option(help="Where to write metrics.csv.")] = Path("metrics.csv"),
) -> None:
    """Compute IoU and PSNR, merge external scores and print per-method means."""
    with _exit_codes():
        table = collect_scores(
            sample,
            method,
            pred_mask=pred_mask,
            ref_mask=ref_mask,
            image=image,
            reference=reference,
            mask=mask,
            external=external or [],
        )
        if len(table) == 0:
            raise ConfigError("nothing to score: give masks, images or external score files")
        table.export(output)
        typer.echo(table.rows.loc[:, SCORE_COLUMNS].to_string(index=False))
        typer.echo("")
        typer.echo(table.summary().to_string())


@app.command("gen-weights")
def gen_weights_command(
    config: ConfigArgument,
    output: Annotated[Path | None, typer.Option(help="Target directory; defaults to weights_path or <output_dir>/weights.")] = None,
    set_: OverrideOption = None,
) -> None:
    """Write the seeded network weights and their manifest."""
    with _exit_codes():
        run_config = _load(config, set_)
        directory = output or run_config.weights_path or run_config.output_dir / "weights"
        weights = gen_weights(run_config.network)
        manifest = save_weights(weights, directory)
        typer.echo(f"{manifest} {weights.checksum()}")


@app.command()
def shift(
    config: ConfigArgument,
    shift_px: Annotated[int, typer.Option(help="Horizontal shift of the object mask in pixels.")] = 25,
    dy: Annotated[int, typer.Option(help="Vertical shift in pixels.")] = 0,
    set_: OverrideOption = None,
    output_dir: OutputOption = None,
) -> None:
    """Compare inpainting with the object mask and with a shifted copy of it."""
    with _exit_codes():
        table = run_shift(_load(config, set_, output_dir), shift_px, dy)
        typer.echo(table.to_string(index=False))
