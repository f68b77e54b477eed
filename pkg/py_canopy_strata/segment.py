# py_canopy_strata/segment.py
"""
Baseline per‑layer tree segmentation.

Each canopy layer is rasterized into a canopy height model (CHM), smoothed
once with a 3×3 mean, and its local maxima are thinned so that no two apexes
are closer than ``min_separation``.  Every layer point then joins the nearest
apex (planar distance, capped at 10 m) and crowns with fewer than five points
are dropped.

This is a simple stand‑in.  Anything that maps a layer's points to a list of
:class:`TreeCrown` satisfies :class:`Segmenter` and can be registered in
:data:`SEGMENTERS`.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Callable, Protocol

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from . import config
from .core import PointCloud
from .errors import EmptyInputError, InvalidArgumentError
from .stratify import StratificationResult, stratify

__all__ = [
    "TreeCrown",
    "Chm",
    "Segmenter",
    "SEGMENTERS",
    "get_segmenter",
    "build_chm",
    "segment_layer",
    "segment_cloud",
]

_LOG = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class TreeCrown:
    apex_x: float
    apex_y: float
    apex_height: float
    member_points: np.ndarray
    source_layer: int = 0

    @property
    def n_points(self) -> int:
        return int(len(self.member_points))

    @property
    def apex(self) -> tuple[float, float]:
        return (self.apex_x, self.apex_y)


@dataclass(frozen=True, eq=False)
class Chm:
    """
    Per‑cell maximum heights, indexed ``[ix, iy]`` from ``origin``.

    ``raw`` holds the unsmoothed maxima; both arrays are NaN where no point
    fell.
    """

    cell_width: float
    origin: tuple[float, float]
    raw: np.ndarray
    smoothed: np.ndarray

    @property
    def present(self) -> np.ndarray:
        return ~np.isnan(self.raw)

    def cell_centers(self, cells: np.ndarray) -> np.ndarray:
        return (np.asarray(cells) + 0.5) * self.cell_width + np.asarray(self.origin)


class Segmenter(Protocol):
    def __call__(self, layer: PointCloud) -> list[TreeCrown]: ...


# ---------------------------------------------------------------------------#
# Canopy height model                                                        #
# ---------------------------------------------------------------------------#


def build_chm(layer: PointCloud, cell_width: float | None = None) -> Chm:
    """
    Rasterize *layer* to per‑cell maximum heights and smooth present cells
    with the mean of their present 3×3 neighbourhood.

    Raises
    ------
    EmptyInputError
        If *layer* has no points.
    """
    cell_width = config.CHM_CELL_WIDTH if cell_width is None else cell_width
    if not cell_width > 0:
        raise InvalidArgumentError(f"CHM cell width must be positive, got {cell_width}")
    if len(layer) == 0:
        raise EmptyInputError("Cannot build a CHM from an empty layer")

    xy = layer.xy
    h = layer.heights
    origin = xy.min(axis=0)
    keys = np.floor((xy - origin) / cell_width).astype(np.int64)
    shape = tuple(keys.max(axis=0) + 1)

    raw = np.full(shape, -np.inf)
    np.maximum.at(raw, (keys[:, 0], keys[:, 1]), h)
    present = np.isfinite(raw)
    raw[~present] = np.nan

    values = np.where(present, raw, 0.0)
    total = ndimage.uniform_filter(values, size=3, mode="constant") * 9.0
    n = ndimage.uniform_filter(present.astype(float), size=3, mode="constant") * 9.0
    smoothed = np.full(shape, np.nan)
    smoothed[present] = total[present] / np.rint(n[present])
    return Chm(float(cell_width), (float(origin[0]), float(origin[1])), raw, smoothed)


# ---------------------------------------------------------------------------#
# Baseline segmenter                                                         #
# ---------------------------------------------------------------------------#


def _apex_cells(chm: Chm, min_separation: float) -> np.ndarray:
    """
    Local maxima of the smoothed CHM, highest first, keeping only those with
    no higher (or equal, earlier) apex within *min_separation*.
    """
    surface = np.where(chm.present, chm.smoothed, -np.inf)
    local_max = ndimage.maximum_filter(surface, size=3, mode="constant", cval=-np.inf)
    peaks = chm.present & (surface == local_max)
    cells = np.argwhere(peaks)
    if len(cells) == 0:
        return cells
    heights = surface[peaks]
    # np.argwhere is row-major, so the stable sort keeps the smaller cell first on ties.
    order = np.argsort(-heights, kind="stable")
    cells = cells[order]
    centers = chm.cell_centers(cells)

    kept: list[int] = []
    for k in range(len(cells)):
        if kept:
            d = np.hypot(*(centers[kept] - centers[k]).T)
            if np.any(d < min_separation):
                continue
        kept.append(k)
    return cells[kept]


def segment_layer(
    layer: PointCloud,
    min_separation: float | None = None,
    cell_width: float | None = None,
    *,
    assign_radius: float | None = None,
    min_points: int | None = None,
) -> list[TreeCrown]:
    """
    Segment one canopy layer into crowns.

    Parameters
    ----------
    min_separation
        Minimum planar distance between two apexes (default 2 m).
    cell_width
        CHM cell size (default 0.5 m).
    assign_radius
        Points farther than this from every apex belong to no crown.
    min_points
        Crowns with fewer members are discarded.
    """
    min_separation = config.MIN_SEPARATION if min_separation is None else min_separation
    cell_width = config.CHM_CELL_WIDTH if cell_width is None else cell_width
    assign_radius = config.ASSIGN_RADIUS if assign_radius is None else assign_radius
    min_points = config.MIN_CROWN_POINTS if min_points is None else min_points
    if len(layer) == 0:
        return []

    chm = build_chm(layer, cell_width)
    apex_cells = _apex_cells(chm, min_separation)
    if len(apex_cells) == 0:
        return []

    seeds = chm.cell_centers(apex_cells)
    xy = layer.xy
    h = layer.heights
    labels = layer.index
    dist, owner = cKDTree(seeds).query(xy, k=1, distance_upper_bound=assign_radius)
    owner = np.where(np.isfinite(dist), owner, -1)

    crowns: list[TreeCrown] = []
    dropped = 0
    for k in range(len(seeds)):
        members = np.flatnonzero(owner == k)
        if members.size < min_points:
            dropped += 1
            continue
        # Highest member; np.argmax takes the first, i.e. smallest label, on ties.
        top = members[np.argmax(h[members])]
        crowns.append(
            TreeCrown(
                apex_x=float(xy[top, 0]),
                apex_y=float(xy[top, 1]),
                apex_height=float(h[top]),
                member_points=np.sort(labels[members]),
            )
        )
    _LOG.debug(
        "Layer of %d points: %d apexes, %d crowns, %d dropped below %d points, "
        "%d points unassigned",
        len(layer),
        len(seeds),
        len(crowns),
        dropped,
        min_points,
        int((owner < 0).sum()),
    )
    return crowns


SEGMENTERS: dict[str, Callable[[PointCloud], list[TreeCrown]]] = {
    "local-maxima": segment_layer,
}


def get_segmenter(name: str | None = None) -> Segmenter:
    name = config.DEFAULT_SEGMENTER if name is None else name
    try:
        return SEGMENTERS[name]
    except KeyError as e:
        raise InvalidArgumentError(
            f"Unknown segmenter {name!r}; choose from {sorted(SEGMENTERS)}"
        ) from e


# ---------------------------------------------------------------------------#
# Pipeline                                                                   #
# ---------------------------------------------------------------------------#


def segment_cloud(
    cloud: PointCloud,
    segmenter: Segmenter | None = None,
    *,
    result: StratificationResult | None = None,
) -> list[TreeCrown]:
    """
    Stratify *cloud* (unless *result* is given) and segment every canopy
    layer, tagging crowns with their layer ordinal.  Ground vegetation is not
    segmented.
    """
    segmenter = get_segmenter() if segmenter is None else segmenter
    if len(cloud) == 0:
        return []
    result = stratify(cloud) if result is None else result

    crowns: list[TreeCrown] = []
    for layer in result.layers:
        layer_cloud = cloud.subset(layer.member_points)
        crowns.extend(
            replace(c, source_layer=layer.index_from_top) for c in segmenter(layer_cloud)
        )
    _LOG.info("Segmented %d layers into %d crowns", result.n_layers, len(crowns))
    return crowns
