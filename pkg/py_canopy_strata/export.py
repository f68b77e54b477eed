# py_canopy_strata/export.py
"""
Writers for every file the CLI produces.  Readers live in :mod:`.parse`.
"""

from __future__ import annotations

import json
import logging
import math
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from . import config
from .core import PointCloud
from .dem import Dem
from .occlusion import FractionSample, LogSeriesModel
from .parse import sidecar_path
from .segment import TreeCrown
from .simulate import SyntheticStand
from .stratify import StratificationResult, layer_labels

__all__ = [
    "write_json",
    "write_point_cloud",
    "crown_table",
    "export_ascii_grid",
    "write_layer_labels",
    "write_crowns",
    "write_fractions",
    "write_model",
    "write_stand",
    "write_truth",
]

_LOG = logging.getLogger(__name__)


def _prepare(path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _jsonable(value: object) -> object:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def write_json(doc: dict, path: str | Path) -> Path:
    """Pretty‑printed, key‑sorted JSON (NaN written as ``null``)."""
    path = _prepare(path)
    path.write_text(json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    _LOG.debug("Wrote %s", path)
    return path


# ---------------------------------------------------------------------------#
# Point clouds                                                               #
# ---------------------------------------------------------------------------#


def write_point_cloud(
    cloud: PointCloud,
    path: str | Path,
    extra_meta: dict | None = None,
    *,
    include_index: bool = False,
    include_heights: bool = False,
) -> Path:
    """
    Write *cloud* as CSV plus its ``.json`` sidecar.

    By default the CSV holds the seven core columns only.  ``include_index``
    adds a leading ``point_index`` so derived clouds keep the labels of the
    cloud they came from; ``include_heights`` adds ``height_above_ground``
    when the cloud has it.  The sidecar extent is rounded outwards to the CSV
    precision so re‑read points stay inside it.
    """
    path = _prepare(path)
    columns = list(config.POINT_COLUMNS)
    if include_heights and cloud.has_heights and len(cloud):
        columns.append(config.HEIGHT_COLUMN)
    frame = cloud.points[columns].copy()
    frame["is_ground"] = frame["is_ground"].astype(int)
    frame.to_csv(path, index=include_index, float_format=config.CSV_FLOAT_FORMAT)

    scale = 10**config.CSV_DECIMALS
    e = cloud.extent
    meta = {
        "area_m2": cloud.area,
        "extent": [
            math.floor(e.minx * scale) / scale,
            math.floor(e.miny * scale) / scale,
            math.ceil(e.maxx * scale) / scale,
            math.ceil(e.maxy * scale) / scale,
        ],
        "n_points": len(cloud),
    }
    meta.update(extra_meta or {})
    write_json(meta, sidecar_path(path))
    _LOG.info("Wrote %d points to %s", len(cloud), path)
    return path


def write_truth(truth: pd.DataFrame, path: str | Path) -> Path:
    """Simulator labels ``point_index,stem_id,tier``."""
    path = _prepare(path)
    truth[["stem_id", "tier"]].to_csv(path, index=True, index_label="point_index")
    return path


# ---------------------------------------------------------------------------#
# DEM                                                                        #
# ---------------------------------------------------------------------------#


def export_ascii_grid(dem: Dem, path: str | Path) -> Path:
    """
    Write *dem* as a plain‑text grid: a six‑line header, then one line per
    row starting with the northernmost.
    """
    path = _prepare(path)
    header = [
        f"ncols {dem.ncols}",
        f"nrows {dem.nrows}",
        f"xllcorner {dem.origin[0]:.6f}",
        f"yllcorner {dem.origin[1]:.6f}",
        f"cellsize {dem.resolution:.6f}",
        f"NODATA_value {config.DEM_NODATA:g}",
    ]
    grid = np.where(np.isnan(dem.elevations), config.DEM_NODATA, dem.elevations)[::-1]
    body = [" ".join(f"{v:.3f}" for v in row) for row in grid]
    path.write_text("\n".join(header + body) + "\n", encoding="utf-8")
    _LOG.info("Wrote %dx%d DEM to %s", dem.ncols, dem.nrows, path)
    return path


# ---------------------------------------------------------------------------#
# Stratification, crowns, occlusion                                          #
# ---------------------------------------------------------------------------#


def write_layer_labels(result: StratificationResult, path: str | Path) -> Path:
    path = _prepare(path)
    layer_labels(result).to_csv(path, header=True)
    return path


def crown_table(crowns: Sequence[TreeCrown]) -> pd.DataFrame:
    return pd.DataFrame(
        {
            "crown_id": np.arange(len(crowns), dtype=np.int64),
            "apex_x": [c.apex_x for c in crowns],
            "apex_y": [c.apex_y for c in crowns],
            "apex_height": [c.apex_height for c in crowns],
            "source_layer": np.array([c.source_layer for c in crowns], dtype=np.int64),
            "n_points": np.array([c.n_points for c in crowns], dtype=np.int64),
        }
    )


def write_crowns(crowns: Sequence[TreeCrown], path: str | Path) -> Path:
    path = _prepare(path)
    crown_table(crowns).to_csv(path, index=False, float_format="%.3f")
    _LOG.info("Wrote %d crowns to %s", len(crowns), path)
    return path


def write_fractions(samples: Sequence[FractionSample], path: str | Path) -> Path:
    path = _prepare(path)
    cols = [f"p{n}" for n in range(1, config.MODEL_LAYERS + 1)]
    rows = []
    for s in samples:
        p = np.zeros(config.MODEL_LAYERS)
        k = min(len(s.fractions), config.MODEL_LAYERS)
        p[:k] = s.fractions[:k]
        rows.append([s.plot_id, *p])
    pd.DataFrame(rows, columns=["plot_id", *cols]).to_csv(
        path, index=False, float_format="%.6f"
    )
    return path


def write_model(model: LogSeriesModel, path: str | Path) -> Path:
    return write_json(model.as_dict(), path)


def write_stand(stand: SyntheticStand, path: str | Path) -> Path:
    return write_json(stand.to_dict(), path)
