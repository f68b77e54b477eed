# py_canopy_strata/stratify.py
"""
Vertical stratification of a height‑normalized cloud into canopy layers.

Each pass bins the remaining points into a grid whose cell width is the
current average footprint (AFP).  Around every occupied cell a circular
*locale* of radius ``max(6·AFP, 1.5 m)`` is pooled into a 25 cm height
histogram, smoothed with a 5 m Gaussian, and scanned for *salient ranges*
(height intervals where the smoothed profile curves downward).  The midpoint
between the two topmost ranges is that cell's threshold; points of the cell
above it (or all of them when the locale has fewer than two ranges) form the
current top layer.  The layer is removed, the AFP updated from what is left,
and the loop repeats until the cloud is empty.

Strata that lie entirely below 4 m are ground vegetation, not canopy layers.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import pandas as pd
from scipy.ndimage import gaussian_filter1d
from scipy.spatial import cKDTree

from . import config, utils
from .core import PointCloud, build_grid, compute_afp
from .errors import AlgorithmDivergenceError, InvalidArgumentError

__all__ = [
    "HeightHistogram",
    "CanopyLayer",
    "StratificationResult",
    "smooth_histogram",
    "salient_ranges",
    "locale_threshold",
    "stratify",
    "layer_summary",
    "layer_labels",
    "mean_layer_count",
]

_LOG = logging.getLogger(__name__)


# ---------------------------------------------------------------------------#
# Types                                                                      #
# ---------------------------------------------------------------------------#


@dataclass(frozen=True, eq=False)
class HeightHistogram:
    """
    Height counts in fixed bins starting at 0 m; bin *i* covers
    ``[i·bin_width, (i+1)·bin_width)``.
    """

    bin_width: float
    counts: np.ndarray
    smoothed: np.ndarray | None = None

    @classmethod
    def from_heights(
        cls,
        heights: np.ndarray,
        bin_width: float | None = None,
        sigma: float | None = None,
    ) -> "HeightHistogram":
        """
        Bin *heights*, leaving enough empty bins above the highest point for
        the smoothing kernel to fade out.
        """
        bin_width = config.HIST_BIN_WIDTH if bin_width is None else bin_width
        sigma = config.SMOOTHING_SIGMA if sigma is None else sigma
        heights = np.clip(np.asarray(heights, dtype=float), 0.0, None)
        n_bins = _n_bins(float(heights.max()) if heights.size else 0.0, bin_width, sigma)
        bins = (heights // bin_width).astype(np.int64)
        counts = np.bincount(bins, minlength=n_bins).astype(float)
        return cls(bin_width, counts)

    @property
    def total(self) -> float:
        return float(self.counts.sum())

    def centers(self) -> np.ndarray:
        return (np.arange(len(self.counts)) + 0.5) * self.bin_width


@dataclass(frozen=True, eq=False)
class CanopyLayer:
    index_from_top: int
    member_points: np.ndarray
    cell_thresholds: dict[tuple[int, int], tuple[float, float]]
    starting_height: float
    thickness: float
    density: float

    @property
    def n_points(self) -> int:
        return int(len(self.member_points))

    @property
    def top_height(self) -> float:
        return self.starting_height + self.thickness


@dataclass(frozen=True, eq=False)
class StratificationResult:
    layers: list[CanopyLayer]
    ground_vegetation: np.ndarray
    iterations: int
    area: float = field(default=float("nan"))

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    def densities(self) -> np.ndarray:
        """Layer densities d_1..d_n, top first."""
        return np.array([layer.density for layer in self.layers], dtype=float)


# ---------------------------------------------------------------------------#
# Histogram analysis                                                         #
# ---------------------------------------------------------------------------#


def _n_bins(max_height: float, bin_width: float, sigma: float) -> int:
    pad = int(math.ceil(config.KERNEL_TRUNCATE * sigma / bin_width))
    return int(max_height // bin_width) + 1 + pad


def _smooth_rows(counts: np.ndarray, bin_width: float, sigma: float) -> np.ndarray:
    # Unit‑sum kernel truncated at ±8σ, zero padding past both ends.
    return gaussian_filter1d(
        counts.astype(float),
        sigma=sigma / bin_width,
        axis=-1,
        mode="constant",
        cval=0.0,
        truncate=config.KERNEL_TRUNCATE,
    )


def _concave_runs(smoothed: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Runs of strictly negative central second difference, row by row.

    Returns ``(row, first_bin, last_bin)`` arrays ordered by row then height.
    Runs spanning a single bin are dropped.
    """
    smoothed = np.atleast_2d(smoothed)
    d2 = np.zeros_like(smoothed)
    d2[:, 1:-1] = smoothed[:, 2:] - 2.0 * smoothed[:, 1:-1] + smoothed[:, :-2]
    # Rounding noise on flat or linear stretches must not read as curvature.
    tol = 1e-12 * np.abs(smoothed).max(axis=1, keepdims=True)
    negative = d2 < -tol

    edges = np.diff(
        np.pad(negative, ((0, 0), (1, 1))).astype(np.int8), axis=1
    )
    start_r, start_c = np.nonzero(edges == 1)
    _, stop_c = np.nonzero(edges == -1)
    last_c = stop_c - 1
    keep = last_c > start_c
    return start_r[keep], start_c[keep], last_c[keep]


def _thresholds(smoothed: np.ndarray, bin_width: float) -> np.ndarray:
    """Per‑row threshold (NaN where the row has fewer than two ranges)."""
    smoothed = np.atleast_2d(smoothed)
    rows, first, last = _concave_runs(smoothed)
    out = np.full(smoothed.shape[0], np.nan)
    if rows.size == 0:
        return out
    low = (first + 0.5) * bin_width
    high = (last + 0.5) * bin_width

    top = np.searchsorted(rows, np.arange(smoothed.shape[0]), side="right") - 1
    has_two = (top >= 1) & (rows[np.clip(top, 0, None)] == np.arange(len(out)))
    has_two &= rows[np.clip(top - 1, 0, None)] == np.arange(len(out))
    t = top[has_two]
    out[has_two] = 0.5 * (low[t] + high[t - 1])
    return out


def smooth_histogram(hist: HeightHistogram, sigma: float | None = None) -> HeightHistogram:
    """Gaussian‑smooth *hist* (σ in metres, default 5 m)."""
    sigma = config.SMOOTHING_SIGMA if sigma is None else sigma
    if not sigma > 0:
        raise InvalidArgumentError(f"Smoothing sigma must be positive, got {sigma}")
    return HeightHistogram(
        hist.bin_width, hist.counts, _smooth_rows(hist.counts, hist.bin_width, sigma)
    )


def salient_ranges(smoothed: HeightHistogram) -> list[tuple[float, float]]:
    """
    Height intervals where the smoothed profile is concave, topmost first.

    Interval ends are bin centres of the first and last concave bins.
    """
    if smoothed.smoothed is None:
        raise InvalidArgumentError("Histogram has not been smoothed")
    _, first, last = _concave_runs(smoothed.smoothed)
    bw = smoothed.bin_width
    ranges = [((f + 0.5) * bw, (l + 0.5) * bw) for f, l in zip(first, last, strict=True)]
    return ranges[::-1]


def locale_threshold(points: PointCloud | np.ndarray) -> float | None:
    """
    Height threshold separating the top layer within one locale.

    Returns the midpoint between the lower bound of the topmost salient range
    and the upper bound of the range below it, or ``None`` when the locale
    shows fewer than two ranges (everything belongs to the top layer).
    """
    heights = points.heights if isinstance(points, PointCloud) else np.asarray(points)
    if heights.size == 0:
        raise InvalidArgumentError("Locale has no points")
    if np.isnan(heights).any():
        raise InvalidArgumentError("Locale points have no height above ground")
    hist = smooth_histogram(HeightHistogram.from_heights(heights))
    t = _thresholds(hist.smoothed, hist.bin_width)[0]
    return None if np.isnan(t) else float(t)


# ---------------------------------------------------------------------------#
# Stratification loop                                                        #
# ---------------------------------------------------------------------------#


def _locale_stats(
    xy: np.ndarray,
    heights: np.ndarray,
    centers: np.ndarray,
    radius: float,
    *,
    bin_width: float,
    sigma: float,
    workers: int,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Threshold, lowest and highest height of every locale.

    Locales are closed disks around *centers*; they are gathered in batches
    and their histograms analysed as rows of one matrix.
    """
    m = len(centers)
    thresholds = np.full(m, np.nan)
    lows = np.full(m, np.nan)
    highs = np.full(m, np.nan)
    if m == 0:
        return thresholds, lows, highs

    tree = cKDTree(xy)
    clipped = np.clip(heights, 0.0, None)
    bins_of = (clipped // bin_width).astype(np.int64)
    n_bins = _n_bins(float(clipped.max()), bin_width, sigma)

    for start in range(0, m, config.LOCALE_BATCH):
        stop = min(start + config.LOCALE_BATCH, m)
        neighbours = tree.query_ball_point(
            centers[start:stop], r=radius, workers=workers, return_sorted=True
        )
        sizes = np.fromiter((len(n) for n in neighbours), dtype=np.int64, count=stop - start)
        if sizes.sum() == 0:
            continue
        flat = np.fromiter(
            itertools.chain.from_iterable(neighbours), dtype=np.int64, count=int(sizes.sum())
        )
        rows = np.repeat(np.arange(stop - start), sizes)

        counts = np.bincount(
            rows * n_bins + bins_of[flat], minlength=(stop - start) * n_bins
        ).reshape(stop - start, n_bins)
        smoothed = _smooth_rows(counts, bin_width, sigma)
        thresholds[start:stop] = _thresholds(smoothed, bin_width)

        filled = sizes > 0
        offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]])[filled]
        h = clipped[flat]
        lows[start:stop][filled] = np.minimum.reduceat(h, offsets)
        highs[start:stop][filled] = np.maximum.reduceat(h, offsets)

        empty = int((~filled).sum())
        if empty:
            _LOG.warning("%d cells have empty locales; their points are stripped whole", empty)
    return thresholds, lows, highs


def _cell_bounds(
    thresholds: np.ndarray, lows: np.ndarray, highs: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """
    ``(lower, upper)`` of every cell a stratum was stripped from.

    A cell without a threshold, or whose threshold lies above the highest
    point of its locale, gives up all its points, so its lower bound is the
    lowest point of the locale.  Bounds are never inverted.
    """
    inverted = thresholds > highs
    if inverted.any():
        _LOG.debug("%d cell thresholds above their locale top", int(inverted.sum()))
    lower = np.where(np.isnan(thresholds) | inverted, lows, thresholds)
    return np.minimum(lower, highs), highs


def stratify(
    cloud: PointCloud,
    *,
    bin_width: float | None = None,
    sigma: float | None = None,
    ground_height: float | None = None,
    max_iterations: int | None = None,
) -> StratificationResult:
    """
    Peel canopy layers off *cloud* from the top down.

    Parameters
    ----------
    cloud
        Height‑normalized cloud.  Ground returns are ignored.
    ground_height
        Strata whose per‑cell upper bounds are all below this height are
        ground vegetation (default 4 m).
    max_iterations
        Divergence guard (default 32).

    Raises
    ------
    InvalidArgumentError
        If heights have not been normalized.
    AlgorithmDivergenceError
        If the cloud is not emptied within ``max_iterations`` passes.
    """
    bin_width = config.HIST_BIN_WIDTH if bin_width is None else bin_width
    sigma = config.SMOOTHING_SIGMA if sigma is None else sigma
    ground_height = config.GROUND_VEGETATION_HEIGHT if ground_height is None else ground_height
    max_iterations = config.MAX_ITERATIONS if max_iterations is None else max_iterations

    veg = cloud.vegetation()
    if len(veg) and not veg.has_heights:
        raise InvalidArgumentError("Stratification needs height_above_ground on every point")

    workers = utils.worker_count()
    heights_all = veg.heights
    labels_all = veg.index
    remaining = np.arange(len(veg))

    layers: list[CanopyLayer] = []
    ground_veg: list[np.ndarray] = []
    iteration = 0

    while remaining.size:
        iteration += 1
        if iteration > max_iterations:
            raise AlgorithmDivergenceError(
                f"Stratification did not empty the cloud in {max_iterations} passes "
                f"({remaining.size} points left)"
            )

        sub = veg.subset(labels_all[remaining])
        afp = compute_afp(remaining.size / cloud.area)
        grid = build_grid(sub, afp)
        radius = max(config.LOCALE_AFP_FACTOR * afp, config.LOCALE_MIN_RADIUS)
        h = heights_all[remaining]

        thresholds, lows, highs = _locale_stats(
            grid.xy,
            h,
            grid.cell_centers(),
            radius,
            bin_width=bin_width,
            sigma=sigma,
            workers=workers,
        )

        point_t = thresholds[grid.cell_ids]
        strip = np.isnan(point_t) | (h > point_t)
        if not strip.any():
            _LOG.warning(
                "Pass %d found no points above any threshold; taking the remaining %d "
                "points as one stratum",
                iteration,
                remaining.size,
            )
            strip[:] = True

        used = np.unique(grid.cell_ids[strip])
        lower, upper = _cell_bounds(thresholds[used], lows[used], highs[used])
        bounds = {
            (int(grid.occupied[k, 0]), int(grid.occupied[k, 1])): (float(lo), float(hi))
            for k, lo, hi in zip(used, lower, upper, strict=True)
        }
        members = labels_all[remaining[strip]]

        if np.all(upper < ground_height):
            ground_veg.append(members)
            _LOG.debug(
                "Pass %d: %d points below %.1f m → ground vegetation",
                iteration,
                members.size,
                ground_height,
            )
        else:
            layer = CanopyLayer(
                index_from_top=len(layers) + 1,
                member_points=np.sort(members),
                cell_thresholds=bounds,
                starting_height=float(np.median(lower)),
                thickness=float(np.median(upper - lower)),
                density=members.size / cloud.area,
            )
            layers.append(layer)
            _LOG.debug(
                "Pass %d: layer %d, %d points, AFP %.3f m, locale %.2f m, "
                "start %.2f m, thickness %.2f m",
                iteration,
                layer.index_from_top,
                members.size,
                afp,
                radius,
                layer.starting_height,
                layer.thickness,
            )
        remaining = remaining[~strip]

    vegetation = (
        np.sort(np.concatenate(ground_veg)) if ground_veg else np.zeros(0, dtype=np.int64)
    )
    _LOG.info(
        "Stratified %d points into %d canopy layers (+%d ground vegetation) in %d passes",
        len(veg),
        len(layers),
        vegetation.size,
        iteration,
    )
    return StratificationResult(layers, vegetation, iteration, cloud.area)


# ---------------------------------------------------------------------------#
# Summaries                                                                  #
# ---------------------------------------------------------------------------#


def layer_labels(result: StratificationResult) -> pd.Series:
    """``point_index`` → layer ordinal (0 for ground vegetation)."""
    parts = [pd.Series(0, index=result.ground_vegetation, dtype="int64")]
    parts += [
        pd.Series(layer.index_from_top, index=layer.member_points, dtype="int64")
        for layer in result.layers
    ]
    labels = pd.concat(parts).sort_index()
    labels.index.name = "point_index"
    labels.name = "layer"
    return labels


def mean_layer_count(results: Sequence[StratificationResult]) -> float:
    return float(np.mean([r.n_layers for r in results])) if results else 0.0


def _layer_records(results: Iterable[StratificationResult]) -> pd.DataFrame:
    rows = [
        {
            "plot": i,
            "layer": layer.index_from_top,
            "start": layer.starting_height,
            "thickness": layer.thickness,
            "top": layer.top_height,
            "density": layer.density,
        }
        for i, result in enumerate(results)
        for layer in result.layers
    ]
    return pd.DataFrame(
        rows, columns=["plot", "layer", "start", "thickness", "top", "density"]
    )


def layer_summary(results: Sequence[StratificationResult]) -> pd.DataFrame:
    """
    Per‑layer statistics over many plots, plus an ``aggregate`` row.

    Columns
    -------
    ``plots_reaching``
        Fraction of plots with at least that many layers.
    ``plots_exactly``
        Fraction of plots with exactly that many layers (for the aggregate
        row: plots with any layer).
    ``start_*``, ``thickness_*``, ``density_*``
        Mean and population SD over the plots that have the layer.  For the
        aggregate row a plot's canopy starts at its lowest layer start, ends at
        its highest layer top, and its density is the sum of its layers.
    """
    if not results:
        raise InvalidArgumentError("layer_summary needs at least one result")
    n_plots = len(results)
    n_layers = np.array([r.n_layers for r in results])
    records = _layer_records(results)

    def _stats(frame: pd.DataFrame) -> dict[str, float]:
        out: dict[str, float] = {}
        for col in ("start", "thickness", "density"):
            vals = frame[col].to_numpy(dtype=float)
            out[f"{col}_mean"] = float(vals.mean()) if vals.size else float("nan")
            out[f"{col}_sd"] = float(vals.std(ddof=0)) if vals.size else float("nan")
        return out

    rows: list[dict[str, object]] = []
    for n in range(1, int(n_layers.max(initial=0)) + 1):
        row: dict[str, object] = {
            "layer": str(n),
            "plots_reaching": float((n_layers >= n).mean()),
            "plots_exactly": float((n_layers == n).mean()),
        }
        row.update(_stats(records[records["layer"] == n]))
        rows.append(row)

    if len(records):
        per_plot = records.groupby("plot").agg(
            start=("start", "min"), top=("top", "max"), density=("density", "sum")
        )
        per_plot["thickness"] = per_plot["top"] - per_plot["start"]
    else:
        per_plot = pd.DataFrame(columns=["start", "thickness", "density"])
    aggregate: dict[str, object] = {
        "layer": "aggregate",
        "plots_reaching": float((n_layers >= 1).mean()),
        "plots_exactly": float((n_layers >= 1).mean()),
    }
    aggregate.update(_stats(per_plot))
    rows.append(aggregate)

    summary = pd.DataFrame(rows)
    summary.attrs["n_plots"] = n_plots
    summary.attrs["mean_layers"] = mean_layer_count(results)
    return summary
