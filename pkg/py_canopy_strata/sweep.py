# py_canopy_strata/sweep.py
"""
Density sweep: segmentation accuracy as a function of point density.

Every plot is decimated to each target density several times, segmented and
scored against its stem map.  Jobs are independent; each draws its seed from
``(master seed, target index, repetition, plot id)``, so results do not depend
on worker count or completion order.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import pandas as pd
from tqdm import tqdm

from . import config, utils
from .core import Extent, PlotGeometry, PointCloud, point_density
from .decimate import DecimationSpec, decimate
from .dem import normalize_with_ground
from .errors import EmptyInputError, InvalidArgumentError
from .evaluate import FieldStem, evaluate_plot
from .occlusion import LogSeriesModel, fit_theta, fractions_from_results
from .segment import get_segmenter, segment_cloud
from .simulate import ScanConfig, generate_stand, scan_stand, stand_field_stems
from .stratify import stratify

__all__ = [
    "SweepConfig",
    "SweepPlot",
    "density_sweep",
    "summarize_sweep",
    "plateau_pcd",
    "fit_site",
    "synthetic_plots",
    "RESULT_COLUMNS",
]

_LOG = logging.getLogger(__name__)

RESULT_COLUMNS: list[str] = [
    "target_pcd",
    "repetition",
    "plot_id",
    "achieved_pcd",
    "class",
    "mt",
    "oe",
    "ce",
    "recall",
    "precision",
    "f_score",
]


@dataclass(frozen=True)
class SweepConfig:
    pcd_targets: tuple[float, ...] = config.SWEEP_TARGETS
    repetitions: int = config.SWEEP_REPETITIONS
    seed: int = 0
    class_split: bool = True
    include_dead: bool = True
    segmenter: str = config.DEFAULT_SEGMENTER

    def __post_init__(self) -> None:
        targets = tuple(float(t) for t in self.pcd_targets)
        if not targets:
            raise InvalidArgumentError("At least one target density is required")
        if any(t <= 0 for t in targets):
            raise InvalidArgumentError(f"Target densities must be positive, got {targets}")
        if list(targets) != sorted(targets):
            raise InvalidArgumentError(f"Target densities must be ascending, got {targets}")
        if self.repetitions < 1:
            raise InvalidArgumentError(f"repetitions must be ≥ 1, got {self.repetitions}")
        object.__setattr__(self, "pcd_targets", targets)


@dataclass(frozen=True, eq=False)
class SweepPlot:
    plot_id: str
    cloud: PointCloud
    stems: list[FieldStem]
    geometry: PlotGeometry = field(default_factory=lambda: PlotGeometry((0.0, 0.0)))


# ---------------------------------------------------------------------------#
# Jobs                                                                       #
# ---------------------------------------------------------------------------#


def _run_job(
    plot: SweepPlot, target: float, repetition: int, seed: int, cfg: SweepConfig
) -> list[dict[str, object]]:
    """Decimate, segment and score one plot at one density."""
    source = point_density(plot.cloud)
    if target >= source:
        cloud = plot.cloud
    else:
        cloud = decimate(plot.cloud, DecimationSpec(target, seed))
    crowns = segment_cloud(cloud, get_segmenter(cfg.segmenter))
    doc = evaluate_plot(crowns, plot.stems, plot.geometry, include_dead=cfg.include_dead)

    base = {
        "target_pcd": target,
        "repetition": repetition,
        "plot_id": plot.plot_id,
        "achieved_pcd": point_density(cloud),
    }
    rows = [{**base, "class": "all", **{k: doc[k] for k in RESULT_COLUMNS[5:]}}]
    if cfg.class_split:
        for name, scores in doc["by_class"].items():  # type: ignore[union-attr]
            if scores["mt"] + scores["oe"] == 0:
                continue
            rows.append({**base, "class": name, **{k: scores[k] for k in RESULT_COLUMNS[5:]}})
    return rows


def density_sweep(
    plots: Sequence[SweepPlot],
    cfg: SweepConfig | None = None,
    *,
    workers: int | None = None,
    progress: bool = True,
) -> pd.DataFrame:
    """
    Run every target × repetition × plot job.

    Returns one row per job and stem class (``all``, and ``overstory`` /
    ``understory`` when splitting and the plot has such stems), sorted
    canonically.  Failed jobs are logged, listed in ``attrs["failures"]`` and
    otherwise skipped.
    """
    cfg = SweepConfig() if cfg is None else cfg
    workers = utils.worker_count() if workers is None else workers
    if not plots:
        raise EmptyInputError("density_sweep needs at least one plot")

    jobs = [
        (plot, target, rep, utils.derive_seed(cfg.seed, ti, rep, plot.plot_id))
        for ti, target in enumerate(cfg.pcd_targets)
        for rep in range(cfg.repetitions)
        for plot in plots
    ]
    rows: list[dict[str, object]] = []
    failures: list[dict[str, object]] = []

    def _record(job: tuple, outcome: list[dict[str, object]] | BaseException) -> None:
        plot, target, rep, _ = job
        if isinstance(outcome, BaseException):
            _LOG.warning(
                "Skipping plot %s at %.2f pt/m² (rep %d): %s", plot.plot_id, target, rep, outcome
            )
            failures.append(
                {
                    "plot_id": plot.plot_id,
                    "target_pcd": target,
                    "repetition": rep,
                    "error": f"{type(outcome).__name__}: {outcome}",
                }
            )
        else:
            rows.extend(outcome)

    bar = tqdm(total=len(jobs), desc="Density sweep", unit="job", disable=not progress)
    if workers <= 1:
        for job in jobs:
            try:
                _record(job, _run_job(*job, cfg))
            except Exception as e:  # any failure stays with its job
                _record(job, e)
            bar.update()
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {pool.submit(_run_job, *job, cfg): job for job in jobs}
            for fut in as_completed(futures):
                try:
                    _record(futures[fut], fut.result())
                except Exception as e:
                    _record(futures[fut], e)
                bar.update()
    bar.close()

    table = pd.DataFrame(rows, columns=RESULT_COLUMNS)
    table = table.sort_values(["target_pcd", "class", "repetition", "plot_id"], kind="stable")
    table = table.reset_index(drop=True)
    table.attrs["failures"] = failures
    _LOG.info(
        "Sweep finished: %d jobs, %d rows, %d failures", len(jobs), len(table), len(failures)
    )
    return table


# ---------------------------------------------------------------------------#
# Summaries                                                                  #
# ---------------------------------------------------------------------------#


def summarize_sweep(table: pd.DataFrame) -> pd.DataFrame:
    """
    Mean and SD of recall, precision and F‑score per target and class, with
    the mean achieved density of the same jobs.
    """
    if table.empty:
        raise EmptyInputError("Sweep table is empty")
    grouped = table.groupby(["target_pcd", "class"], sort=True)
    summary = grouped.agg(
        achieved_pcd=("achieved_pcd", "mean"),
        n=("f_score", "size"),
        recall_mean=("recall", "mean"),
        recall_sd=("recall", lambda s: float(np.std(s, ddof=0))),
        precision_mean=("precision", "mean"),
        precision_sd=("precision", lambda s: float(np.std(s, ddof=0))),
        f_score_mean=("f_score", "mean"),
        f_score_sd=("f_score", lambda s: float(np.std(s, ddof=0))),
    )
    return summary.reset_index()


def plateau_pcd(
    summary: pd.DataFrame,
    tolerance: float | None = None,
    stem_class: str = "overstory",
) -> float | None:
    """
    Smallest target from which the mean F‑score of *stem_class* stays within
    *tolerance* of its value at the densest target.
    """
    tolerance = config.PLATEAU_TOLERANCE if tolerance is None else tolerance
    rows = summary[summary["class"] == stem_class].sort_values("target_pcd")
    if rows.empty:
        return None
    f = rows["f_score_mean"].to_numpy()
    targets = rows["target_pcd"].to_numpy()
    within = np.abs(f - f[-1]) <= tolerance
    # Last target at which the curve was still outside the band.
    outside = np.flatnonzero(~within)
    first = 0 if outside.size == 0 else int(outside[-1]) + 1
    return float(targets[first])


def fit_site(plots: Sequence[SweepPlot]) -> tuple[LogSeriesModel, float]:
    """
    Stratify every plot at full density and fit θ to the layer fractions.

    Returns the model and the mean source density of the plots.
    """
    pcds = [point_density(p.cloud) for p in plots]
    results = [stratify(p.cloud) for p in plots]
    samples = fractions_from_results(results, pcds, [p.plot_id for p in plots])
    return fit_theta(samples), float(np.mean(pcds))


# ---------------------------------------------------------------------------#
# Synthetic plots                                                            #
# ---------------------------------------------------------------------------#


def synthetic_plots(
    n_plots: int,
    seed: int = 0,
    *,
    tier_counts: Sequence[int] = (16, 16, 16),
    stand_size: float = 40.0,
    scan: ScanConfig | None = None,
) -> list[SweepPlot]:
    """
    Simulate *n_plots* stands, scan and height‑normalize them, and cut a
    field plot out of the middle of each.

    The stem map holds the stems inside the plot radius; crowns anywhere in
    the stand can still be segmented and land in the buffer.
    """
    if n_plots < 1:
        raise InvalidArgumentError(f"n_plots must be ≥ 1, got {n_plots}")
    scan = ScanConfig() if scan is None else scan
    extent = Extent(0.0, 0.0, stand_size, stand_size)
    geometry = PlotGeometry((stand_size / 2.0, stand_size / 2.0))
    if geometry.outer_radius > stand_size / 2.0:
        raise InvalidArgumentError(
            f"A {stand_size} m stand cannot hold a plot with its buffer "
            f"({geometry.outer_radius:.2f} m radius)"
        )

    plots: list[SweepPlot] = []
    for i in range(n_plots):
        stand_seed = utils.derive_seed(seed, "stand", i)
        stand = generate_stand(extent, tier_counts, stand_seed)
        raw = scan_stand(stand, replace(scan, seed=utils.derive_seed(seed, "scan", i)))
        cloud, _ = normalize_with_ground(raw)
        stems = [
            s
            for s in stand_field_stems(stand)
            if geometry.in_plot([(s.x, s.y)])[0]
        ]
        plots.append(SweepPlot(f"synthetic-{i:03d}", cloud, stems, geometry))
    _LOG.info("Simulated %d synthetic plots", n_plots)
    return plots
