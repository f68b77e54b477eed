# py_canopy_strata/parse.py
"""
Readers for point‑cloud CSVs, their metadata sidecars, stem maps, crowns,
fraction tables and the JSON documents written by :mod:`.export`.
"""

from __future__ import annotations

import json
import logging
import os
from pathlib import Path

import numpy as np
import pandas as pd

from . import config
from .core import Extent, PointCloud, validate_pulses
from .errors import EmptyInputError, MalformedInputError
from .evaluate import FieldStem
from .occlusion import FractionSample, LogSeriesModel
from .segment import TreeCrown
from .simulate import ScanConfig, SyntheticStand

__all__ = [
    "sidecar_path",
    "read_point_cloud",
    "read_stem_map",
    "read_crowns",
    "read_fractions",
    "read_model",
    "read_stand",
    "read_scan_config",
    "read_json",
]

_LOG = logging.getLogger(__name__)


# ---------------------------------------------------------------------------#
# Generic helpers                                                            #
# ---------------------------------------------------------------------------#


def _read_csv(path: str | Path, what: str, required: set[str]) -> pd.DataFrame:
    try:
        df = pd.read_csv(path)
    except FileNotFoundError as e:
        raise FileNotFoundError(f"{what} not found: {path}") from e
    except Exception as e:  # pragma: no cover - user error
        raise MalformedInputError(f"Failed reading {what} {path}: {e}") from e

    missing = required - set(df.columns)
    if missing:
        raise MalformedInputError(
            f"{os.path.basename(path)} missing columns {sorted(missing)}"
        )
    return df


def read_json(path: str | Path, what: str = "JSON document") -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError as e:
        raise FileNotFoundError(f"{what} not found: {path}") from e
    except json.JSONDecodeError as e:
        raise MalformedInputError(
            f"{what} {path} is not valid JSON (line {e.lineno}, column {e.colno})"
        ) from e


# ---------------------------------------------------------------------------#
# Point clouds                                                               #
# ---------------------------------------------------------------------------#


def sidecar_path(csv_path: str | Path) -> Path:
    """``plot.csv`` → ``plot.json``."""
    return Path(csv_path).with_suffix(".json")


def read_point_cloud(path: str | Path, sidecar: str | Path | None = None) -> PointCloud:
    """
    Load a point CSV and its area/extent sidecar.

    The CSV must carry the seven core columns; ``height_above_ground`` is
    picked up when present.  ``point_index`` is taken from the file when it
    has that column, else rows are numbered from 0.

    Raises
    ------
    MalformedInputError
        On missing columns, bad values or a sidecar without ``area_m2``.
    """
    sidecar = sidecar_path(path) if sidecar is None else Path(sidecar)
    df = _read_csv(path, "Point cloud", set(config.POINT_COLUMNS))
    meta = read_json(sidecar, "Point cloud metadata")
    try:
        area = float(meta["area_m2"])
        extent = Extent(*map(float, meta["extent"])) if "extent" in meta else None
    except (KeyError, TypeError, ValueError) as e:
        raise MalformedInputError(f"{sidecar} needs area_m2 and a 4-value extent: {e}") from e

    if df["pulse_id"].isna().any():
        raise MalformedInputError(f"{os.path.basename(path)}: every point needs a pulse_id")
    reindex = "point_index" not in df.columns
    if not reindex:
        df = df.set_index("point_index")
    if df.empty and extent is None:
        raise EmptyInputError(f"{os.path.basename(path)} has no points and no extent")
    if df.empty:
        return PointCloud.empty(area, extent)

    df["is_ground"] = df["is_ground"].astype(int).astype(bool)
    cloud = PointCloud.from_frame(df, area, extent, reindex=reindex)
    validate_pulses(cloud)
    _LOG.info("Read %d points from %s (%.1f m²)", len(cloud), path, area)
    return cloud


# ---------------------------------------------------------------------------#
# Stem maps and crowns                                                       #
# ---------------------------------------------------------------------------#

_STEM_COLUMNS = {"plot_id", "height_m", "dbh_cm", "crown_class"}


def read_stem_map(
    path: str | Path,
    centers: dict[str, tuple[float, float]] | None = None,
) -> dict[str, list[FieldStem]]:
    """
    Read a stem map into ``plot_id → stems``.

    Stems are located either by planar ``x,y`` or by ``distance_m,azimuth_deg``
    from the plot centre, which then comes from ``center_x,center_y`` columns
    or from *centers*.
    """
    df = _read_csv(path, "Stem map", _STEM_COLUMNS)
    planar = {"x", "y"} <= set(df.columns)
    polar = {"distance_m", "azimuth_deg"} <= set(df.columns)
    if not planar and not polar:
        raise MalformedInputError(
            f"{os.path.basename(path)} needs x,y or distance_m,azimuth_deg columns"
        )
    if "species" not in df.columns:
        df["species"] = ""
    df["plot_id"] = df["plot_id"].astype(str)
    centers = {} if centers is None else {str(k): v for k, v in centers.items()}

    stems: dict[str, list[FieldStem]] = {}
    for i, row in enumerate(df.itertuples(index=False)):
        fields = {
            "height": float(row.height_m),
            "dbh": float(row.dbh_cm),
            "crown_class": str(row.crown_class).strip().lower(),
            "species": "" if pd.isna(row.species) else str(row.species),
            "stem_id": getattr(row, "stem_id", i),
        }
        try:
            if planar:
                stem = FieldStem(x=float(row.x), y=float(row.y), **fields)
            else:
                if {"center_x", "center_y"} <= set(df.columns):
                    center = (float(row.center_x), float(row.center_y))
                elif row.plot_id in centers:
                    center = centers[row.plot_id]
                else:
                    raise MalformedInputError(f"No centre known for plot {row.plot_id}")
                stem = FieldStem.from_polar(
                    center, float(row.distance_m), float(row.azimuth_deg), **fields
                )
        except ValueError as e:
            raise MalformedInputError(f"{os.path.basename(path)} row {i + 2}: {e}") from e
        stems.setdefault(row.plot_id, []).append(stem)

    _LOG.info("Read %d stems in %d plots from %s", len(df), len(stems), path)
    return stems


def read_crowns(path: str | Path) -> list[TreeCrown]:
    """Crowns from a crown CSV; member points are not stored there."""
    df = _read_csv(
        path, "Crown table", {"apex_x", "apex_y", "apex_height", "source_layer"}
    )
    return [
        TreeCrown(
            apex_x=float(r.apex_x),
            apex_y=float(r.apex_y),
            apex_height=float(r.apex_height),
            member_points=np.zeros(0, dtype=np.int64),
            source_layer=int(r.source_layer),
        )
        for r in df.itertuples(index=False)
    ]


# ---------------------------------------------------------------------------#
# Occlusion model inputs                                                     #
# ---------------------------------------------------------------------------#


def read_fractions(path: str | Path) -> list[FractionSample]:
    """Fractions table ``plot_id,p1..p5``."""
    cols = [f"p{n}" for n in range(1, config.MODEL_LAYERS + 1)]
    df = _read_csv(path, "Fractions table", {"plot_id", *cols})
    try:
        return [
            FractionSample(row["plot_id"], row[cols].to_numpy(dtype=float))
            for _, row in df.iterrows()
        ]
    except ValueError as e:
        raise MalformedInputError(f"{os.path.basename(path)}: {e}") from e


def read_model(path: str | Path) -> LogSeriesModel:
    doc = read_json(path, "Model")
    try:
        return LogSeriesModel(
            float(doc["theta"]),
            float(doc.get("fit_mse", float("nan"))),
            int(doc.get("n_samples", 0)),
        )
    except (KeyError, TypeError) as e:
        raise MalformedInputError(f"{path} needs a theta value") from e


# ---------------------------------------------------------------------------#
# Simulator documents                                                        #
# ---------------------------------------------------------------------------#


def read_stand(path: str | Path) -> SyntheticStand:
    return SyntheticStand.from_dict(read_json(path, "Stand file"))


def read_scan_config(path: str | Path) -> ScanConfig:
    doc = read_json(path, "Scan config")
    try:
        return ScanConfig(**doc)
    except TypeError as e:
        raise MalformedInputError(f"{path}: {e}") from e
