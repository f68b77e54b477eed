# py_canopy_strata/occlusion.py
"""
Occlusion model: how point density decays from the top canopy layer down.

A cloud of density *PCD* splits into layer densities ``d_1 > d_2 > …``; the
layer fractions ``p_n = d_n / PCD`` follow a logarithmic series

    p_n = θⁿ / (−ln(1 − θ) · n)

with a single site parameter θ.  From the fractions one can predict the
acquisition density needed for the n‑th layer to receive a given density
(:func:`required_pcd`) and the density left for the understory once the top
two layers are removed (:func:`eupcd`).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import pandas as pd
from scipy.optimize import minimize_scalar
from scipy.stats import logser

from . import config
from .errors import EmptyInputError, InvalidArgumentError, SaturatedOcclusionError
from .stratify import StratificationResult

__all__ = [
    "LogSeriesModel",
    "FractionSample",
    "logseries_pmf",
    "fit_theta",
    "fit_theta_array",
    "observed_fractions",
    "fractions_from_results",
    "required_pcd",
    "required_density_table",
    "eupcd",
    "layer_densities",
    "residual_fraction",
]

_LOG = logging.getLogger(__name__)


# ---------------------------------------------------------------------------#
# Types                                                                      #
# ---------------------------------------------------------------------------#


@dataclass(frozen=True)
class LogSeriesModel:
    theta: float
    fit_mse: float = float("nan")
    n_samples: int = 0

    def __post_init__(self) -> None:
        if not 0.0 < self.theta < 1.0:
            raise InvalidArgumentError(f"theta must lie in (0, 1), got {self.theta}")

    def pmf(self, n: int | np.ndarray) -> float | np.ndarray:
        return logseries_pmf(self.theta, n)

    def fractions(self, k: int | None = None) -> np.ndarray:
        """Model fractions p_1..p_k (default the five modelled layers)."""
        k = config.MODEL_LAYERS if k is None else k
        return np.asarray(self.pmf(np.arange(1, k + 1)), dtype=float)

    def as_dict(self) -> dict[str, float | int]:
        return {"theta": self.theta, "fit_mse": self.fit_mse, "n_samples": self.n_samples}


@dataclass(frozen=True, eq=False)
class FractionSample:
    """Observed layer fractions of one plot, zero‑padded to five layers."""

    plot_id: str | int
    fractions: np.ndarray

    def __post_init__(self) -> None:
        p = np.asarray(self.fractions, dtype=float)
        if p.ndim != 1:
            raise InvalidArgumentError("Fractions must be a vector")
        if np.any((p < 0) | (p > 1)) or np.isnan(p).any():
            raise InvalidArgumentError(f"Plot {self.plot_id}: fractions must lie in [0, 1]")
        if p.sum() > 1.0 + 1e-9:
            raise InvalidArgumentError(
                f"Plot {self.plot_id}: fractions sum to {p.sum():.6f} > 1"
            )
        object.__setattr__(self, "fractions", p)


# ---------------------------------------------------------------------------#
# Log‑series family                                                          #
# ---------------------------------------------------------------------------#


def logseries_pmf(theta: float, n: int | np.ndarray) -> float | np.ndarray:
    """
    Probability of layer *n* under a log‑series with parameter θ.

    >>> round(logseries_pmf(0.266, 1), 4)
    0.8602
    """
    if not 0.0 < theta < 1.0:
        raise InvalidArgumentError(f"theta must lie in (0, 1), got {theta}")
    n_arr = np.asarray(n)
    if np.any(n_arr < 1) or not np.all(np.equal(np.mod(n_arr, 1), 0)):
        raise InvalidArgumentError(f"Layer ordinal must be a natural number ≥ 1, got {n}")
    p = logser.pmf(n_arr, theta)
    return float(p) if np.ndim(p) == 0 else p


def fit_theta(samples: Iterable[FractionSample]) -> LogSeriesModel:
    """
    Least‑squares fit of θ to pooled ``(n, p_n)`` pairs.

    Every sample contributes all of its (zero‑padded) layers, so a site with
    many single‑layer plots pulls θ down through their zero ``p_2..p_5``.

    Raises
    ------
    EmptyInputError
        If *samples* is empty.
    """
    rows = [s.fractions for s in samples]
    if not rows:
        raise EmptyInputError("fit_theta needs at least one fraction sample")
    width = max(len(r) for r in rows)
    observed = np.zeros((len(rows), width))
    for i, r in enumerate(rows):
        observed[i, : len(r)] = r
    return fit_theta_array(observed)


def fit_theta_array(observed: np.ndarray) -> LogSeriesModel:
    """
    Fit θ to a ``(plots, layers)`` matrix of fractions, column *j* being
    layer ``j + 1``.

    Entries are used as given: unlike :class:`FractionSample` nothing is
    checked against [0, 1], so measurement noise may leave a fraction
    slightly negative.  θ is found by golden‑section search inside a bracket
    taken from a coarse grid over ``config.THETA_BOUNDS``.
    """
    observed = np.atleast_2d(np.asarray(observed, dtype=float))
    if observed.size == 0:
        raise EmptyInputError("fit_theta needs at least one fraction sample")
    if np.isnan(observed).any():
        raise InvalidArgumentError("Fractions must not be NaN")
    ns = np.arange(1, observed.shape[1] + 1)
    lo, hi = config.THETA_BOUNDS

    def _mse(theta: float) -> float:
        theta = min(max(theta, lo), hi)
        return float(np.mean((observed - logser.pmf(ns, theta)) ** 2))

    grid = np.concatenate([[lo], np.linspace(0.01, 0.99, config.THETA_GRID), [hi]])
    errors = np.array([_mse(t) for t in grid])
    best = int(np.argmin(errors))
    if 0 < best < len(grid) - 1 and errors[best + 1] > errors[best]:
        res = minimize_scalar(
            _mse,
            bracket=(grid[best - 1], grid[best], grid[best + 1]),
            method="golden",
            tol=config.THETA_XTOL,
        )
        theta = float(np.clip(res.x, lo, hi))
        _LOG.debug("Golden-section search took %d evaluations", res.nfev)
    else:
        theta = float(grid[best])
        _LOG.warning("No interior bracket for θ; taking grid value %.6f", theta)
    model = LogSeriesModel(theta, _mse(theta), int(observed.size))
    _LOG.info(
        "Fitted θ = %.4f (MSE %.5f) on %d pairs from %d plots",
        model.theta,
        model.fit_mse,
        model.n_samples,
        observed.shape[0],
    )
    return model


# ---------------------------------------------------------------------------#
# Observed fractions                                                         #
# ---------------------------------------------------------------------------#


def observed_fractions(
    result: StratificationResult,
    pcd: float,
    plot_id: str | int = 0,
    n_layers: int | None = None,
) -> FractionSample:
    """``p_n = d_n / pcd`` for the first five layers, zero‑padded."""
    n_layers = config.MODEL_LAYERS if n_layers is None else n_layers
    if not pcd > 0:
        raise InvalidArgumentError(f"pcd must be positive, got {pcd}")
    d = result.densities()
    if len(d) > n_layers:
        _LOG.warning(
            "Plot %s has %d layers; only the top %d are modelled", plot_id, len(d), n_layers
        )
    p = np.zeros(n_layers)
    k = min(len(d), n_layers)
    p[:k] = d[:k] / pcd
    return FractionSample(plot_id, p)


def fractions_from_results(
    results: Sequence[StratificationResult],
    pcds: Sequence[float],
    plot_ids: Sequence[str | int] | None = None,
) -> list[FractionSample]:
    """Fractions of every plot with at least one canopy layer."""
    if len(results) != len(pcds):
        raise InvalidArgumentError("One pcd per stratification result is required")
    plot_ids = list(range(len(results))) if plot_ids is None else list(plot_ids)
    samples = [
        observed_fractions(r, pcd, pid)
        for r, pcd, pid in zip(results, pcds, plot_ids, strict=True)
        if r.n_layers > 0
    ]
    skipped = len(results) - len(samples)
    if skipped:
        _LOG.info("Skipped %d plots without canopy layers", skipped)
    return samples


# ---------------------------------------------------------------------------#
# Density predictions                                                        #
# ---------------------------------------------------------------------------#


def residual_fraction(fractions: Sequence[float], n: int) -> float:
    """Share of points left below the top *n* layers."""
    if n < 0:
        raise InvalidArgumentError(f"n must be non-negative, got {n}")
    return 1.0 - math.fsum(list(fractions)[:n])


def required_pcd(pcd_min: float, fractions: Sequence[float], n: int) -> float:
    """
    Acquisition density at which layer *n* still receives ``pcd_min``.

    Parameters
    ----------
    pcd_min
        Density a single exposed layer needs (4 pt/m² for the overstory).
    fractions
        ``p_1, p_2, …``; only the first ``n − 1`` are used.
    n
        Target layer, 1 = top.

    Raises
    ------
    SaturatedOcclusionError
        If the layers above take up all the points.
    """
    if not pcd_min > 0:
        raise InvalidArgumentError(f"pcd_min must be positive, got {pcd_min}")
    if n < 1:
        raise InvalidArgumentError(f"Layer ordinal must be ≥ 1, got {n}")
    if n - 1 > len(fractions):
        raise InvalidArgumentError(f"Layer {n} needs {n - 1} fractions, got {len(fractions)}")
    remaining = residual_fraction(fractions, n - 1)
    if remaining <= 0:
        raise SaturatedOcclusionError(
            f"Layers above layer {n} absorb all returns (residual {remaining:.3g})"
        )
    return pcd_min / remaining


def required_density_table(
    fractions: Sequence[float],
    pcd_min: float | None = None,
    layers: Sequence[int] = (1, 2, 3),
) -> pd.DataFrame:
    """
    Required densities for *layers* with the published values alongside.

    The ``paper_reported`` column is an annotation only; our own figures are
    the direct evaluation of :func:`required_pcd`.
    """
    pcd_min = config.PCD_MIN if pcd_min is None else pcd_min
    return pd.DataFrame(
        {
            "layer": list(layers),
            "required_pcd": [required_pcd(pcd_min, fractions, n) for n in layers],
            "paper_reported": [config.PUBLISHED_REQUIRED_PCD.get(n, np.nan) for n in layers],
        }
    )


def layer_densities(pcd: float, fractions: Sequence[float], n_layers: int = 2) -> np.ndarray:
    """Densities ``pcd · p_n`` of the top *n_layers* layers."""
    if not pcd > 0:
        raise InvalidArgumentError(f"pcd must be positive, got {pcd}")
    return pcd * np.asarray(list(fractions)[:n_layers], dtype=float)


def eupcd(pcd: float, p1: float, p2: float) -> float:
    """
    Effective understory density: what is left of *pcd* once the top two
    layers have taken their shares.
    """
    if p1 < 0 or p2 < 0:
        raise InvalidArgumentError("Fractions must be non-negative")
    if p1 + p2 > 1.0 + 1e-12:
        raise InvalidArgumentError(f"p1 + p2 = {p1 + p2:.6f} exceeds 1")
    return pcd * max(0.0, 1.0 - p1 - p2)
