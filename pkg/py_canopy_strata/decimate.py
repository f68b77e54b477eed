# py_canopy_strata/decimate.py
"""
Pulse‑preserving thinning of a cloud to a target density.

The cloud's first returns are binned into a grid whose cell width is the AFP
of the target density.  One first return is drawn uniformly per cell, and
every return of the selected pulses is kept.  Cells without a first return
contribute nothing, so the achieved density can undershoot the target when
the target approaches the source density.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import utils
from .core import PointCloud, build_grid, compute_afp, point_density
from .errors import InvalidArgumentError, MalformedInputError

__all__ = ["DecimationSpec", "decimate", "decimation_metadata"]

_LOG = logging.getLogger(__name__)


@dataclass(frozen=True)
class DecimationSpec:
    target_pcd: float
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.target_pcd > 0:
            raise InvalidArgumentError(
                f"Target density must be positive, got {self.target_pcd}"
            )
        if not 0 <= self.seed < 1 << 64:
            raise InvalidArgumentError(f"Seed must be an unsigned 64-bit integer, got {self.seed}")


def decimate(cloud: PointCloud, spec: DecimationSpec) -> PointCloud:
    """
    Thin *cloud* to about ``spec.target_pcd`` points per m².

    The returned cloud keeps the input row order, ``point_index`` labels,
    area and extent.

    Raises
    ------
    MalformedInputError
        If a point has no usable ``pulse_id``.
    """
    pts = cloud.points
    if pts.empty:
        return cloud
    if pts["pulse_id"].isna().any() or (pts["pulse_id"] < 0).any():
        raise MalformedInputError("Decimation needs a non-negative pulse_id on every point")

    first = cloud.subset(pts["return_number"].to_numpy() == 1)
    if len(first) == 0:
        _LOG.warning("No first returns; decimation keeps nothing")
        return cloud.subset(np.zeros(len(cloud), dtype=bool))

    grid = build_grid(first, compute_afp(spec.target_pcd))
    counts = grid.counts()
    draws = utils.cell_uniforms(spec.seed, grid.occupied)
    pick = np.minimum((draws * counts).astype(np.int64), counts - 1)
    chosen = grid.order[grid.bounds[:-1] + pick]

    pulses = first.points["pulse_id"].to_numpy()[chosen]
    keep = np.isin(pts["pulse_id"].to_numpy(), pulses)
    out = cloud.subset(keep)
    _LOG.info(
        "Decimated %d → %d points (target %.2f, achieved %.2f pt/m², %d pulses)",
        len(cloud),
        len(out),
        spec.target_pcd,
        point_density(out),
        len(pulses),
    )
    return out


def decimation_metadata(spec: DecimationSpec, result: PointCloud) -> dict[str, float | int]:
    """Sidecar document recording target and achieved density."""
    return {
        "target_pcd": float(spec.target_pcd),
        "achieved_pcd": point_density(result),
        "seed": int(spec.seed),
    }
