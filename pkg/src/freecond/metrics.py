"""
This module provides the locally computed evaluation scores (IoU and PSNR)
and the score table that merges them with externally computed scores.

PSNR of identical images is reported as ``PSNR_SENTINEL`` (``inf``).

Classes
-------
ScoreTable
    Scores keyed by (sample, method, metric) with a provenance tag.

Functions
---------
iou(pred_mask: MaskGrid, ref_mask: MaskGrid) -> float
psnr(a, b, max_value: float) -> float
changed_mask(output, reference, threshold) -> MaskGrid
masked_region_metrics(output, reference, mask) -> dict
ingest_external_scores(path: Path, table: ScoreTable | None) -> ScoreTable
"""

import logging
import math
import re
from pathlib import Path
from typing import Literal

import numpy as np
import pandas as pd
from skimage.metrics import mean_squared_error, peak_signal_noise_ratio

from .errors import ConflictError, DimensionError, DomainError, ParseError
from .grid import LatentGrid, MaskGrid
from .utils import atomic_write_text, metadata, settings


logger = logging.getLogger(__name__)

_Provenance = Literal["internal", "external"]

PSNR_SENTINEL = math.inf
SCORE_COLUMNS = metadata.csv_columns("scores")
KEY_COLUMNS = SCORE_COLUMNS[:3]


def _values(image: LatentGrid | MaskGrid | np.ndarray) -> np.ndarray:
    if isinstance(image, (LatentGrid, MaskGrid)):
        return image.values
    return np.asarray(image, dtype=np.float64)


def iou(pred_mask: MaskGrid, ref_mask: MaskGrid) -> float:
    """Intersection over union of two binary masks.

    Raises
    ------
    DimensionError
        If the shapes differ.
    DomainError
        If a mask is not binary or both are empty.
    """
    if pred_mask.shape != ref_mask.shape:
        raise DimensionError(f"shape mismatch: {pred_mask.shape} vs {ref_mask.shape}")
    if not (pred_mask.is_binary and ref_mask.is_binary):
        raise DomainError("IoU needs binary masks")
    pred = pred_mask.values.astype(bool)
    ref = ref_mask.values.astype(bool)
    union = int(np.count_nonzero(pred | ref))
    if union == 0:
        raise DomainError("IoU of two empty masks is undefined")
    return int(np.count_nonzero(pred & ref)) / union


def psnr(
    a: LatentGrid | MaskGrid | np.ndarray,
    b: LatentGrid | MaskGrid | np.ndarray,
    max_value: float | None = None,
) -> float:
    """Peak signal-to-noise ratio ``10 log10(max_value^2 / MSE)`` in decibels.

    Parameters
    ----------
    a, b : LatentGrid | MaskGrid | np.ndarray
        Images of equal shape.
    max_value : float | None, optional
        The peak value; defaults to ``metrics.max_value`` from the settings.

    Returns
    -------
    float
        The PSNR, or ``PSNR_SENTINEL`` when the images are identical.
    """
    max_value = settings["metrics"]["max_value"] if max_value is None else max_value
    if max_value <= 0:
        raise DomainError(f"max_value must be positive, got {max_value}")
    a = _values(a)
    b = _values(b)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch: {a.shape} vs {b.shape}")
    if mean_squared_error(a, b) == 0.0:
        return PSNR_SENTINEL
    return float(peak_signal_noise_ratio(a, b, data_range=max_value))


def changed_mask(
    output: LatentGrid,
    reference: LatentGrid,
    threshold: float | None = None,
) -> MaskGrid:
    """Marks pixels where any channel moved by more than ``threshold``."""
    threshold = settings["metrics"]["change_threshold"] if threshold is None else threshold
    if output.shape != reference.shape:
        raise DimensionError(f"shape mismatch: {output.shape} vs {reference.shape}")
    moved = np.abs(output.values - reference.values).max(axis=0) > threshold
    return MaskGrid(moved.astype(np.float64), binary=True)


def masked_region_metrics(
    output: LatentGrid,
    reference: LatentGrid,
    mask: MaskGrid,
    threshold: float | None = None,
    max_value: float | None = None,
) -> dict[str, float]:
    """Separates background preservation outside the mask from edits inside it.

    Returns
    -------
    dict[str, float]
        ``psnr_outside``: PSNR over the pixels (all channels) where the mask
        is 0. ``changed_fraction_inside``: fraction of mask pixels changed
        beyond ``threshold``.

    Raises
    ------
    DomainError
        If the mask or its complement is empty.
    """
    if (output.height, output.width) != mask.shape:
        raise DimensionError(f"mask {mask.shape} does not match image {output.height}x{output.width}")
    inside = mask.values.astype(bool)
    if not inside.any():
        raise DomainError("empty region: the mask has no pixels")
    if inside.all():
        raise DomainError("empty region: the mask covers the whole image")
    moved = changed_mask(output, reference, threshold).values.astype(bool)
    return {
        "psnr_outside": psnr(output.values[:, ~inside], reference.values[:, ~inside], max_value),
        "changed_fraction_inside": float(np.count_nonzero(moved & inside) / np.count_nonzero(inside)),
    }


class ScoreTable:
    """Scores keyed by (sample, method, metric).

    Rows are kept in a pandas DataFrame with the ``provenance`` of each score
    and the source line it was read from (``None`` for computed scores).
    Aggregates are computed on demand.
    """

    def __init__(self) -> None:
        self._rows = pd.DataFrame(
            {
                "sample": pd.Series(dtype=str),
                "method": pd.Series(dtype=str),
                "metric": pd.Series(dtype=str),
                "value": pd.Series(dtype=np.float64),
                "provenance": pd.Series(dtype=str),
                "source": pd.Series(dtype=object),
            }
        )

    def __len__(self) -> int:
        return len(self._rows)

    @property
    def rows(self) -> pd.DataFrame:
        return self._rows.copy()

    def _find(self, sample: str, method: str, metric: str) -> pd.DataFrame:
        rows = self._rows
        return rows[(rows["sample"] == sample) & (rows["method"] == method) & (rows["metric"] == metric)]

    def add(
        self,
        sample: str,
        method: str,
        metric: str,
        value: float,
        provenance: _Provenance = "internal",
        source: str | None = None,
    ) -> None:
        """Adds one score.

        Raises
        ------
        ConflictError
            If the (sample, method, metric) triple is already present.
        """
        existing = self._find(sample, method, metric)
        if not existing.empty:
            previous = existing["source"].iloc[0] or "a computed score"
            here = source or "a computed score"
            raise ConflictError(f"duplicate score ({sample}, {method}, {metric}) at {here}, first seen at {previous}")
        row = pd.DataFrame(
            [{
                "sample": sample,
                "method": method,
                "metric": metric,
                "value": float(value),
                "provenance": provenance,
                "source": source,
            }]
        )
        self._rows = row if self._rows.empty else pd.concat([self._rows, row], ignore_index=True)

    def merge(self, other: "ScoreTable") -> "ScoreTable":
        """Adds every row of ``other``; on a conflict nothing is added."""
        staged = ScoreTable()
        staged._rows = self._rows.copy()
        for row in other._rows.itertuples(index=False):
            staged.add(row.sample, row.method, row.metric, row.value, row.provenance, row.source)
        self._rows = staged._rows
        return self

    def export(self, path: Path) -> Path:
        """Writes the scores as ``sample,method,metric,value`` CSV."""
        return atomic_write_text(Path(path), self._rows.loc[:, SCORE_COLUMNS].to_csv(index=False, lineterminator="\n"))

    def aggregate(self) -> pd.DataFrame:
        """Averages every (method, metric) over samples.

        Infinite scores (the PSNR sentinel) are excluded from the mean and
        counted in ``sentinels``; a group with only sentinels keeps the
        sentinel as its mean.

        Returns
        -------
        pd.DataFrame
            Columns ``method, metric, mean, count, sentinels``.
        """
        if self._rows.empty:
            raise DomainError("cannot aggregate an empty score table")
        return (
            self._rows
            .assign(
                finite=lambda df: df["value"].where(np.isfinite(df["value"])),
                sentinel=lambda df: np.isinf(df["value"]).astype(int),
            )
            .groupby(["method", "metric"], as_index=False, sort=True)
            .aggregate(
                mean=("finite", "mean"),
                count=("finite", "count"),
                sentinels=("sentinel", "sum"),
                peak=("value", "max"),
            )
            .assign(mean=lambda df: df["mean"].where(df["count"] > 0, df["peak"]))
            .drop(columns="peak")
        )

    def summary(self) -> pd.DataFrame:
        """Returns the per-method means as a method x metric table."""
        return self.aggregate().pivot(index="method", columns="metric", values="mean").rename_axis(None, axis="columns")


_LINE_PATTERN = re.compile(r"line (\d+)")


def ingest_external_scores(path: Path, table: ScoreTable | None = None) -> ScoreTable:
    """Reads a ``sample,method,metric,value`` CSV of scores computed elsewhere.

    Parameters
    ----------
    path : Path
        The CSV file.
    table : ScoreTable | None, optional
        A table to merge into; a new one is created when omitted. The table
        is left unchanged when the file is rejected.

    Returns
    -------
    ScoreTable
        The table with the rows tagged ``external``.

    Raises
    ------
    ParseError
        If the header differs or a row is malformed; carries the line number.
    ConflictError
        If a triple repeats, naming both lines.
    """
    path = Path(path)
    incoming = ScoreTable()
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skip_blank_lines=False)
    except pd.errors.EmptyDataError:
        raise ParseError(f"{path}: missing header", line=1) from None
    except pd.errors.ParserError as error:
        match = _LINE_PATTERN.search(str(error))
        line = int(match.group(1)) if match else None
        raise ParseError(f"{path}: {error}", line=line) from None
    if list(frame.columns) != SCORE_COLUMNS:
        raise ParseError(f"{path}: header must be {','.join(SCORE_COLUMNS)}", line=1)

    for offset, row in enumerate(frame.itertuples(index=False)):
        line = offset + 2
        if any(not isinstance(field, str) or not field.strip() for field in row):
            raise ParseError(f"{path}: missing field", line=line)
        try:
            value = float(row.value)
        except ValueError:
            raise ParseError(f"{path}: value {row.value!r} is not a number", line=line) from None
        if math.isnan(value):
            raise ParseError(f"{path}: value is NaN", line=line)
        incoming.add(row.sample, row.method, row.metric, value, "external", f"{path.name} line {line}")
    logger.info("Ingested %d external scores from %s", len(frame), path)
    return incoming if table is None else table.merge(incoming)
