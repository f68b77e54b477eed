# py_canopy_strata/core.py
"""
Point and cloud data model plus the planar grid index.

A :class:`PointCloud` wraps a pandas ``DataFrame`` with one row per LiDAR
return.  The frame index (``point_index``) is the stable reference to a point:
it survives filtering, so layer memberships, crowns and exports all talk about
the same integers that were assigned at ingestion.

Coordinates are assumed to be projected to metres already.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from . import config
from .errors import InvalidArgumentError, MalformedInputError

__all__ = [
    "Extent",
    "LidarPoint",
    "PointCloud",
    "GridIndex",
    "PlotGeometry",
    "compute_afp",
    "point_density",
    "build_grid",
    "radius_query",
    "clip_circle",
    "plot_centers",
    "validate_pulses",
]

_LOG = logging.getLogger(__name__)

_DTYPES: dict[str, str] = {
    "x": "float64",
    "y": "float64",
    "z": "float64",
    "return_number": "int64",
    "returns_of_pulse": "int64",
    "pulse_id": "int64",
    "is_ground": "bool",
    config.HEIGHT_COLUMN: "float64",
}


# ---------------------------------------------------------------------------#
# Geometry                                                                   #
# ---------------------------------------------------------------------------#


@dataclass(frozen=True)
class Extent:
    """Axis‑aligned planar bounding box (closed)."""

    minx: float
    miny: float
    maxx: float
    maxy: float

    def __post_init__(self) -> None:
        if self.maxx < self.minx or self.maxy < self.miny:
            raise InvalidArgumentError(f"Degenerate extent {self.as_list()}")

    @classmethod
    def from_xy(cls, xy: np.ndarray) -> "Extent":
        if len(xy) == 0:
            raise InvalidArgumentError("Cannot derive an extent from zero points")
        lo = xy.min(axis=0)
        hi = xy.max(axis=0)
        return cls(float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1]))

    @property
    def width(self) -> float:
        return self.maxx - self.minx

    @property
    def height(self) -> float:
        return self.maxy - self.miny

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def origin(self) -> tuple[float, float]:
        return (self.minx, self.miny)

    def contains(self, xy: np.ndarray) -> np.ndarray:
        xy = np.atleast_2d(xy)
        return (
            (xy[:, 0] >= self.minx)
            & (xy[:, 0] <= self.maxx)
            & (xy[:, 1] >= self.miny)
            & (xy[:, 1] <= self.maxy)
        )

    def union(self, other: "Extent") -> "Extent":
        return Extent(
            min(self.minx, other.minx),
            min(self.miny, other.miny),
            max(self.maxx, other.maxx),
            max(self.maxy, other.maxy),
        )

    def as_list(self) -> list[float]:
        return [self.minx, self.miny, self.maxx, self.maxy]


@dataclass(frozen=True)
class PlotGeometry:
    """Circular field plot with a surrounding buffer annulus."""

    center: tuple[float, float]
    radius: float = config.PLOT_RADIUS
    buffer_width: float = config.BUFFER_WIDTH

    def __post_init__(self) -> None:
        if self.radius <= 0:
            raise InvalidArgumentError(f"Plot radius must be positive, got {self.radius}")
        if self.buffer_width < 0:
            raise InvalidArgumentError(
                f"Buffer width must be non-negative, got {self.buffer_width}"
            )

    @property
    def outer_radius(self) -> float:
        return self.radius + self.buffer_width

    def distance(self, xy: np.ndarray) -> np.ndarray:
        xy = np.atleast_2d(np.asarray(xy, dtype=float))
        return np.hypot(xy[:, 0] - self.center[0], xy[:, 1] - self.center[1])

    def in_plot(self, xy: np.ndarray) -> np.ndarray:
        return self.distance(xy) <= self.radius

    def in_buffer(self, xy: np.ndarray) -> np.ndarray:
        d = self.distance(xy)
        return (d > self.radius) & (d <= self.outer_radius)


# ---------------------------------------------------------------------------#
# Points and clouds                                                          #
# ---------------------------------------------------------------------------#


@dataclass(frozen=True)
class LidarPoint:
    """One return.  Mostly used to build small clouds by hand."""

    x: float
    y: float
    z: float
    return_number: int = 1
    returns_of_pulse: int = 1
    pulse_id: int = 0
    is_ground: bool = False
    height_above_ground: float | None = None

    def as_row(self) -> dict[str, object]:
        row = {
            "x": self.x,
            "y": self.y,
            "z": self.z,
            "return_number": self.return_number,
            "returns_of_pulse": self.returns_of_pulse,
            "pulse_id": self.pulse_id,
            "is_ground": self.is_ground,
            config.HEIGHT_COLUMN: (
                np.nan if self.height_above_ground is None else self.height_above_ground
            ),
        }
        return row


def _empty_frame() -> pd.DataFrame:
    frame = pd.DataFrame({col: pd.Series([], dtype=dt) for col, dt in _DTYPES.items()})
    frame.index.name = "point_index"
    return frame


@dataclass(frozen=True, eq=False)
class PointCloud:
    """
    LiDAR returns over a region of interest.

    ``area`` is declared rather than measured from ``extent``: a circular plot
    has area πr² whatever its points' bounding box is.  Treat instances as
    immutable; every operation returns a new cloud.
    """

    points: pd.DataFrame
    extent: Extent
    area: float

    def __post_init__(self) -> None:
        if not self.area > 0:
            raise InvalidArgumentError(f"Cloud area must be positive, got {self.area}")
        missing = [c for c in config.POINT_COLUMNS if c not in self.points.columns]
        if missing:
            raise MalformedInputError(f"Point table missing columns {missing}")
        if len(self.points) and not self.extent.contains(self.xy).all():
            raise MalformedInputError(
                f"Points fall outside the declared extent {self.extent.as_list()}"
            )

    # -- construction ------------------------------------------------------

    @classmethod
    def from_frame(
        cls,
        frame: pd.DataFrame,
        area: float,
        extent: Extent | None = None,
        *,
        reindex: bool = False,
    ) -> "PointCloud":
        """
        Coerce *frame* to the canonical dtypes and wrap it.

        Parameters
        ----------
        reindex
            Replace the frame index with ``0..n-1``.  Used at ingestion;
            derived clouds keep their parent's ``point_index`` labels.
        """
        out = frame.copy()
        if config.HEIGHT_COLUMN not in out.columns:
            out[config.HEIGHT_COLUMN] = np.nan
        missing = [c for c in _DTYPES if c not in out.columns]
        if missing:
            raise MalformedInputError(f"Point table missing columns {missing}")
        try:
            out = out.astype(_DTYPES)
        except (ValueError, TypeError) as e:
            raise MalformedInputError(f"Bad point values: {e}") from e
        if reindex:
            out = out.reset_index(drop=True)
        out.index.name = "point_index"
        if extent is None:
            extent = Extent.from_xy(out[["x", "y"]].to_numpy())
        return cls(out, extent, float(area))

    @classmethod
    def from_points(
        cls,
        points: Iterable[LidarPoint],
        area: float,
        extent: Extent | None = None,
    ) -> "PointCloud":
        rows = [p.as_row() for p in points]
        frame = pd.DataFrame(rows) if rows else _empty_frame()
        return cls.from_frame(frame, area, extent, reindex=True)

    @classmethod
    def empty(cls, area: float, extent: Extent) -> "PointCloud":
        return cls(_empty_frame(), extent, float(area))

    # -- views -------------------------------------------------------------

    def __len__(self) -> int:
        return len(self.points)

    @property
    def xy(self) -> np.ndarray:
        return self.points[["x", "y"]].to_numpy(dtype=float)

    @property
    def has_heights(self) -> bool:
        return bool(self.points[config.HEIGHT_COLUMN].notna().all())

    @property
    def heights(self) -> np.ndarray:
        return self.points[config.HEIGHT_COLUMN].to_numpy(dtype=float)

    @property
    def index(self) -> np.ndarray:
        return self.points.index.to_numpy()

    def subset(self, selector: np.ndarray | pd.Index | Sequence[int]) -> "PointCloud":
        """
        Return the points picked by a boolean mask or by ``point_index`` labels.
        Area and extent are kept.
        """
        frame = self.points.loc[np.asarray(selector)]
        return PointCloud(frame, self.extent, self.area)

    def vegetation(self) -> "PointCloud":
        """Non‑ground returns."""
        return self.subset(~self.points["is_ground"].to_numpy())

    def with_heights(self, heights: np.ndarray) -> "PointCloud":
        frame = self.points.copy()
        frame[config.HEIGHT_COLUMN] = np.asarray(heights, dtype=float)
        return PointCloud(frame, self.extent, self.area)


# ---------------------------------------------------------------------------#
# Density and footprint                                                      #
# ---------------------------------------------------------------------------#


def compute_afp(density: float) -> float:
    """
    Average footprint: the cell width at which about one point falls per cell.

    >>> compute_afp(4.0)
    0.5
    """
    if not density > 0:
        raise InvalidArgumentError(f"Density must be positive, got {density}")
    return 1.0 / math.sqrt(density)


def point_density(cloud: PointCloud) -> float:
    """Points per square metre of the declared area."""
    if not cloud.area > 0:
        raise InvalidArgumentError("Cloud area must be positive")
    return len(cloud) / cloud.area


# ---------------------------------------------------------------------------#
# Grid index                                                                 #
# ---------------------------------------------------------------------------#


@dataclass(frozen=True, eq=False)
class GridIndex:
    """
    Points binned into square cells of ``cell_width`` anchored at ``origin``.

    Cell ``(i, j)`` holds the points with ``floor((x - ox) / w) == i`` and
    ``floor((y - oy) / w) == j``.  Internally the points are kept sorted by
    cell so a cell's members are one contiguous slice of ``order``.
    """

    cell_width: float
    origin: tuple[float, float]
    xy: np.ndarray
    labels: np.ndarray
    keys: np.ndarray  # (n, 2) cell of every point
    occupied: np.ndarray  # (m, 2) unique cells, lexicographic
    cell_ids: np.ndarray  # (n,) row of ``occupied`` for every point
    order: np.ndarray  # positions sorted by cell
    bounds: np.ndarray  # (m + 1,) slice bounds into ``order``

    def __len__(self) -> int:
        return len(self.occupied)

    @cached_property
    def cells(self) -> dict[tuple[int, int], np.ndarray]:
        """Cell → ``point_index`` labels of its members."""
        return {
            (int(i), int(j)): self.labels[self.order[self.bounds[k] : self.bounds[k + 1]]]
            for k, (i, j) in enumerate(self.occupied)
        }

    @cached_property
    def _slot(self) -> dict[tuple[int, int], int]:
        return {(int(i), int(j)): k for k, (i, j) in enumerate(self.occupied)}

    def members(self, k: int) -> np.ndarray:
        """Positions (into ``xy``/``labels``) of the points in occupied cell *k*."""
        return self.order[self.bounds[k] : self.bounds[k + 1]]

    def counts(self) -> np.ndarray:
        return np.diff(self.bounds)

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        w = self.cell_width
        return (
            int(math.floor((x - self.origin[0]) / w)),
            int(math.floor((y - self.origin[1]) / w)),
        )

    def cell_centers(self) -> np.ndarray:
        """Planar centres of the occupied cells, in ``occupied`` order."""
        return (self.occupied + 0.5) * self.cell_width + np.asarray(self.origin)


def build_grid(
    cloud: PointCloud,
    cell_width: float,
    origin: tuple[float, float] | None = None,
) -> GridIndex:
    """
    Bin *cloud* into a square grid.

    Parameters
    ----------
    cell_width
        Cell side in metres.
    origin
        Grid anchor.  Defaults to the extent's minimum corner.
    """
    if not cell_width > 0:
        raise InvalidArgumentError(f"Cell width must be positive, got {cell_width}")
    origin = cloud.extent.origin if origin is None else origin
    xy = cloud.xy
    keys = np.floor((xy - np.asarray(origin)) / cell_width).astype(np.int64)
    if len(keys):
        occupied, cell_ids = np.unique(keys, axis=0, return_inverse=True)
        cell_ids = cell_ids.reshape(-1)
    else:
        occupied = np.zeros((0, 2), dtype=np.int64)
        cell_ids = np.zeros(0, dtype=np.int64)
    order = np.argsort(cell_ids, kind="stable")
    bounds = np.concatenate(
        [[0], np.cumsum(np.bincount(cell_ids, minlength=len(occupied)))]
    ).astype(np.int64)
    _LOG.debug("Grid %.3f m: %d points in %d cells", cell_width, len(xy), len(occupied))
    return GridIndex(
        cell_width=float(cell_width),
        origin=(float(origin[0]), float(origin[1])),
        xy=xy,
        labels=cloud.index,
        keys=keys,
        occupied=occupied,
        cell_ids=cell_ids,
        order=order,
        bounds=bounds,
    )


def radius_query(
    grid: GridIndex, center: tuple[float, float], radius: float
) -> np.ndarray:
    """
    Return the ``point_index`` labels within planar distance ``radius`` of
    *center* (closed disk: points exactly on the circle are included).
    """
    if not radius > 0:
        raise InvalidArgumentError(f"Radius must be positive, got {radius}")
    cx, cy = float(center[0]), float(center[1])
    lo = grid.cell_of(cx - radius, cy - radius)
    hi = grid.cell_of(cx + radius, cy + radius)
    n_box = (hi[0] - lo[0] + 1) * (hi[1] - lo[1] + 1)

    if n_box <= len(grid):
        slots = [
            grid._slot[(i, j)]
            for i in range(lo[0], hi[0] + 1)
            for j in range(lo[1], hi[1] + 1)
            if (i, j) in grid._slot
        ]
    else:
        inside = (
            (grid.occupied[:, 0] >= lo[0])
            & (grid.occupied[:, 0] <= hi[0])
            & (grid.occupied[:, 1] >= lo[1])
            & (grid.occupied[:, 1] <= hi[1])
        )
        slots = np.flatnonzero(inside).tolist()

    if not slots:
        return np.zeros(0, dtype=grid.labels.dtype)
    candidates = np.concatenate([grid.members(k) for k in slots])
    d2 = (grid.xy[candidates, 0] - cx) ** 2 + (grid.xy[candidates, 1] - cy) ** 2
    hits = candidates[d2 <= radius * radius]
    return np.sort(grid.labels[hits])


# ---------------------------------------------------------------------------#
# Plot sampling                                                              #
# ---------------------------------------------------------------------------#


def clip_circle(
    cloud: PointCloud, center: tuple[float, float], radius: float
) -> PointCloud:
    """Cut a circular plot out of *cloud*; the result's area is πr²."""
    if not radius > 0:
        raise InvalidArgumentError(f"Radius must be positive, got {radius}")
    xy = cloud.xy
    mask = np.hypot(xy[:, 0] - center[0], xy[:, 1] - center[1]) <= radius
    extent = Extent(
        center[0] - radius, center[1] - radius, center[0] + radius, center[1] + radius
    )
    return PointCloud(cloud.points.loc[mask], extent, math.pi * radius**2)


def plot_centers(
    extent: Extent, spacing: float, radius: float
) -> list[tuple[float, float]]:
    """
    Centres of a regular sample of circular plots lying fully inside *extent*.
    """
    if not spacing > 0 or not radius > 0:
        raise InvalidArgumentError("Spacing and radius must be positive")
    xs = np.arange(extent.minx + radius, extent.maxx - radius + 1e-9, spacing)
    ys = np.arange(extent.miny + radius, extent.maxy - radius + 1e-9, spacing)
    return [(float(x), float(y)) for y in ys for x in xs]


# ---------------------------------------------------------------------------#
# Pulse integrity                                                            #
# ---------------------------------------------------------------------------#


def validate_pulses(cloud: PointCloud) -> None:
    """
    Check the return model: ``1 ≤ return_number ≤ returns_of_pulse ≤ 4``, one
    ``returns_of_pulse`` per pulse and no repeated return numbers.

    Raises
    ------
    MalformedInputError
        On the first violated rule, naming the offending pulse.
    """
    pts = cloud.points
    if pts.empty:
        return
    if pts["pulse_id"].isna().any() or (pts["pulse_id"] < 0).any():
        raise MalformedInputError("Every point needs a non-negative pulse_id")

    rn = pts["return_number"]
    rop = pts["returns_of_pulse"]
    bad = (rn < 1) | (rn > rop) | (rop > config.MAX_RETURNS)
    if bad.any():
        first = pts.loc[bad].iloc[0]
        raise MalformedInputError(
            f"Pulse {int(first['pulse_id'])}: return {int(first['return_number'])} "
            f"of {int(first['returns_of_pulse'])} is out of range"
        )

    grouped = pts.groupby("pulse_id")
    if (grouped["returns_of_pulse"].nunique() > 1).any():
        raise MalformedInputError("A pulse carries inconsistent returns_of_pulse")
    dup = pts.duplicated(subset=["pulse_id", "return_number"])
    if dup.any():
        pid = int(pts.loc[dup, "pulse_id"].iloc[0])
        raise MalformedInputError(f"Pulse {pid} repeats a return number")
