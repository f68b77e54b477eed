# py_canopy_strata/report.py
"""
Sweep reports: a per‑target accuracy CSV and a JSON summary of the occlusion
model, plus plain‑text tables for the terminal.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Iterable

import pandas as pd
from tabulate import tabulate

from . import config
from .errors import EmptyInputError, InvalidArgumentError
from .export import write_json
from .occlusion import LogSeriesModel, eupcd, layer_densities, required_density_table
from .sweep import plateau_pcd, summarize_sweep

__all__ = ["report", "summary_document", "render_table", "REPORT_FORMATS"]

_LOG = logging.getLogger(__name__)

REPORT_FORMATS: tuple[str, ...] = ("csv", "json")


def render_table(frame: pd.DataFrame, floatfmt: str = ".3f") -> str:
    """Frame as a plain‑text table for the terminal."""
    return tabulate(frame, headers="keys", tablefmt="simple", floatfmt=floatfmt, showindex=False)


def summary_document(
    summary: pd.DataFrame,
    model: LogSeriesModel | None = None,
    source_pcd: float | None = None,
) -> dict[str, object]:
    """
    JSON summary of a sweep: plateau density, fitted θ and what it implies.

    Published reference values are carried under ``paper_reported`` keys next
    to our own figures; they are annotations, never inputs.
    """
    doc: dict[str, object] = {
        "targets": sorted(summary["target_pcd"].unique().tolist()),
        "plateau_pcd": plateau_pcd(summary),
        "model": None,
        "required_pcd": [],
        "eupcd": None,
        "paper_reported": {
            "theta": config.PUBLISHED_THETA,
            "fit_mse": config.PUBLISHED_FIT_MSE,
            "pcd_min": config.PCD_MIN,
            "source_pcd": config.PUBLISHED_SOURCE_PCD,
            "eupcd": config.PUBLISHED_EUPCD,
        },
    }
    if model is not None:
        p = model.fractions()
        doc["model"] = model.as_dict()
        doc["required_pcd"] = required_density_table(p).to_dict(orient="records")
        if source_pcd is not None:
            doc["eupcd"] = {
                "source_pcd": source_pcd,
                "layer_densities": layer_densities(source_pcd, p, 2).tolist(),
                "eupcd": eupcd(source_pcd, float(p[0]), float(p[1])),
                "paper_reported": config.PUBLISHED_EUPCD,
            }
    return doc


def report(
    table: pd.DataFrame,
    out_dir: str | Path,
    formats: Iterable[str] = REPORT_FORMATS,
    *,
    model: LogSeriesModel | None = None,
    source_pcd: float | None = None,
    prefix: str = "sweep",
) -> list[Path]:
    """
    Write the sweep report into *out_dir*.

    ``csv`` writes ``<prefix>_summary.csv`` (one row per target and class with
    mean/SD of recall, precision and F‑score) and ``<prefix>_jobs.csv`` (the
    raw job rows); ``json`` writes ``<prefix>_summary.json``.

    Raises
    ------
    EmptyInputError
        If *table* has no rows.
    OSError
        If *out_dir* cannot be written.
    """
    formats = list(formats)
    unknown = set(formats) - set(REPORT_FORMATS)
    if unknown:
        raise InvalidArgumentError(f"Unknown report formats {sorted(unknown)}")
    if table.empty:
        raise EmptyInputError("Nothing to report: the sweep table is empty")

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = summarize_sweep(table)
    written: list[Path] = []

    if "csv" in formats:
        path = out_dir / f"{prefix}_summary.csv"
        summary.to_csv(path, index=False, float_format="%.6f")
        written.append(path)
        path = out_dir / f"{prefix}_jobs.csv"
        table.to_csv(path, index=False, float_format="%.6f")
        written.append(path)
    if "json" in formats:
        written.append(
            write_json(
                summary_document(summary, model, source_pcd), out_dir / f"{prefix}_summary.json"
            )
        )
    for path in written:
        _LOG.info("Wrote %s", path)
    return written
