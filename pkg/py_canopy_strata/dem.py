# py_canopy_strata/dem.py
"""
Ground elevation raster from classified ground returns, and height
normalization of a cloud against it.

Cells are addressed ``elevations[row, col]`` with row 0 at the *southern*
edge (``origin`` is the raster's lower‑left corner).  Cell centres sit at
``origin + (col + 0.5, row + 0.5) * resolution``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from . import config
from .core import Extent, PointCloud
from .errors import EmptyInputError, InvalidArgumentError, OutOfCoverageError

__all__ = ["Dem", "build_dem", "normalize_heights", "normalize_with_ground"]

_LOG = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Dem:
    resolution: float
    origin: tuple[float, float]
    elevations: np.ndarray
    void_mask: np.ndarray

    @property
    def nrows(self) -> int:
        return int(self.elevations.shape[0])

    @property
    def ncols(self) -> int:
        return int(self.elevations.shape[1])

    @property
    def extent(self) -> Extent:
        ox, oy = self.origin
        return Extent(
            ox, oy, ox + self.ncols * self.resolution, oy + self.nrows * self.resolution
        )

    def covers(self, xy: np.ndarray) -> np.ndarray:
        return self.extent.contains(xy)

    def sample(self, xy: np.ndarray) -> np.ndarray:
        """
        Bilinear elevation at planar points.

        Between the outermost cell centres and the raster edge the nearest
        edge value is held constant.
        """
        xy = np.atleast_2d(np.asarray(xy, dtype=float))
        col = (xy[:, 0] - self.origin[0]) / self.resolution - 0.5
        row = (xy[:, 1] - self.origin[1]) / self.resolution - 0.5
        return ndimage.map_coordinates(
            self.elevations, [row, col], order=1, mode="nearest"
        )


# ---------------------------------------------------------------------------#
# Build                                                                      #
# ---------------------------------------------------------------------------#


def _fill_voids(elevations: np.ndarray, void: np.ndarray) -> np.ndarray:
    """
    Give every void cell the value of the nearest non‑void cell centre.
    Equidistant sources resolve to the smallest row‑major index.
    """
    if not void.any():
        return elevations
    rows, cols = np.nonzero(~void)
    tree = cKDTree(np.column_stack([rows, cols]))
    vrows, vcols = np.nonzero(void)
    targets = np.column_stack([vrows, vcols])
    nearest, _ = tree.query(targets, k=1)
    # Every source within the nearest distance, however many tie.
    ties = tree.query_ball_point(targets, r=nearest + config.DEM_TIE_TOLERANCE)

    flat = rows * void.shape[1] + cols
    pick = np.fromiter((flat[t].min() for t in ties), dtype=np.int64, count=len(ties))

    out = elevations.copy()
    out.flat[vrows * void.shape[1] + vcols] = elevations.flat[pick]
    return out


def build_dem(
    ground_points: PointCloud,
    resolution: float | None = None,
    *,
    extent: Extent | None = None,
) -> Dem:
    """
    Average ground‑return elevations per cell and fill the empty cells.

    Parameters
    ----------
    ground_points
        Ground returns only (typically ``cloud.subset(cloud.points.is_ground)``).
    resolution
        Cell size in metres, default :data:`config.DEM_RESOLUTION`.
    extent
        Region the raster must cover.  Defaults to the ground points' bounding
        box; pass the full cloud extent when vegetation returns lie outside it.

    Raises
    ------
    EmptyInputError
        If there are no ground points.
    """
    resolution = config.DEM_RESOLUTION if resolution is None else resolution
    if not resolution > 0:
        raise InvalidArgumentError(f"DEM resolution must be positive, got {resolution}")
    if len(ground_points) == 0:
        raise EmptyInputError("Cannot build a DEM without ground points")

    xy = ground_points.xy
    z = ground_points.points["z"].to_numpy(dtype=float)
    region = Extent.from_xy(xy) if extent is None else extent.union(Extent.from_xy(xy))

    ncols = max(1, math.ceil(region.width / resolution))
    nrows = max(1, math.ceil(region.height / resolution))
    col = np.clip(((xy[:, 0] - region.minx) // resolution).astype(np.int64), 0, ncols - 1)
    row = np.clip(((xy[:, 1] - region.miny) // resolution).astype(np.int64), 0, nrows - 1)
    flat = row * ncols + col

    sums = np.bincount(flat, weights=z, minlength=nrows * ncols)
    counts = np.bincount(flat, minlength=nrows * ncols)
    void = (counts == 0).reshape(nrows, ncols)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = (sums / counts).reshape(nrows, ncols)

    elevations = _fill_voids(mean, void)
    _LOG.info(
        "DEM %dx%d at %.2f m from %d ground points (%d void cells filled)",
        ncols,
        nrows,
        resolution,
        len(z),
        int(void.sum()),
    )
    return Dem(float(resolution), region.origin, elevations, void)


# ---------------------------------------------------------------------------#
# Normalize                                                                  #
# ---------------------------------------------------------------------------#


def normalize_heights(cloud: PointCloud, dem: Dem) -> PointCloud:
    """
    Return *cloud* with ``height_above_ground = z − DEM(x, y)``.

    Heights are always recomputed from ``z`` so applying this twice changes
    nothing.  Negative heights (returns below the ground model) are clamped to
    zero and counted in a warning.  Ground returns keep their ``is_ground``
    flag; drop them with :meth:`PointCloud.vegetation` before stratifying.

    Raises
    ------
    OutOfCoverageError
        For the first point outside the raster.
    """
    if len(cloud) == 0:
        return cloud.with_heights(np.zeros(0))
    xy = cloud.xy
    inside = dem.covers(xy)
    if not inside.all():
        pos = int(np.flatnonzero(~inside)[0])
        label = cloud.index[pos]
        raise OutOfCoverageError(
            f"Point {label} at ({xy[pos, 0]:.3f}, {xy[pos, 1]:.3f}) lies outside "
            f"the DEM {dem.extent.as_list()}"
        )

    heights = cloud.points["z"].to_numpy(dtype=float) - dem.sample(xy)
    below = heights < 0
    n_clamped = int((heights < -1e-9).sum())  # ignore rounding noise
    if n_clamped:
        _LOG.warning("Clamped %d negative heights to 0", n_clamped)
    heights = np.where(below, 0.0, heights)
    return cloud.with_heights(heights)


def normalize_with_ground(
    cloud: PointCloud, resolution: float | None = None
) -> tuple[PointCloud, Dem]:
    """
    Build a DEM from *cloud*'s own ground returns over its whole extent and
    normalize against it.
    """
    ground = cloud.subset(cloud.points["is_ground"].to_numpy())
    dem = build_dem(ground, resolution, extent=cloud.extent)
    return normalize_heights(cloud, dem), dem
