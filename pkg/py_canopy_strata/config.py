# config.py
"""
Central configuration for the *py-canopy-strata* project.

All project‑wide constants live here so they can be reused
across modules and, if desired, overridden by the user at runtime.
Functions that take one of these as a keyword argument fall back to the
value below when ``None`` is passed.
"""

from __future__ import annotations

import math
from pathlib import Path

# ---------------------------------------------------------------------------#
# Directories                                                                #
# ---------------------------------------------------------------------------#

PRESET_DIR: Path = Path("presets")

# ---------------------------------------------------------------------------#
# Environment                                                                #
# ---------------------------------------------------------------------------#

THREADS_ENV_VAR: str = "CANOPY_THREADS"

# ---------------------------------------------------------------------------#
# Point cloud format                                                         #
# ---------------------------------------------------------------------------#

POINT_COLUMNS: tuple[str, ...] = (
    "x",
    "y",
    "z",
    "return_number",
    "returns_of_pulse",
    "pulse_id",
    "is_ground",
)
HEIGHT_COLUMN: str = "height_above_ground"
MAX_RETURNS: int = 4
CSV_FLOAT_FORMAT: str = "%.6f"
CSV_DECIMALS: int = 6

# ---------------------------------------------------------------------------#
# DEM                                                                        #
# ---------------------------------------------------------------------------#

DEM_RESOLUTION: float = 1.0
DEM_NODATA: float = -9999.0
# Slack, in cells, within which void fill sources count as equidistant.
DEM_TIE_TOLERANCE: float = 1e-9

# ---------------------------------------------------------------------------#
# Canopy stratification                                                      #
# ---------------------------------------------------------------------------#

HIST_BIN_WIDTH: float = 0.25
SMOOTHING_SIGMA: float = 5.0
KERNEL_TRUNCATE: float = 8.0
LOCALE_AFP_FACTOR: float = 6.0
LOCALE_MIN_RADIUS: float = 1.5
GROUND_VEGETATION_HEIGHT: float = 4.0
MAX_ITERATIONS: int = 32
# Cells per batch when building locale histograms.
LOCALE_BATCH: int = 4096

# ---------------------------------------------------------------------------#
# Occlusion model                                                            #
# ---------------------------------------------------------------------------#

MODEL_LAYERS: int = 5
THETA_BOUNDS: tuple[float, float] = (1e-6, 1.0 - 1e-6)
THETA_XTOL: float = 1e-7
THETA_GRID: int = 99
PCD_MIN: float = 4.0

# Published reference values, carried as annotations next to our own output.
PUBLISHED_THETA: float = 0.266
PUBLISHED_FIT_MSE: float = 0.0027
PUBLISHED_REQUIRED_PCD: dict[int, float] = {1: 4.0, 2: 30.07, 3: 169.57}
PUBLISHED_SOURCE_PCD: float = 50.45
PUBLISHED_EUPCD: float = 1.29

# ---------------------------------------------------------------------------#
# Baseline segmenter                                                         #
# ---------------------------------------------------------------------------#

CHM_CELL_WIDTH: float = 0.5
MIN_SEPARATION: float = 2.0
ASSIGN_RADIUS: float = 10.0
MIN_CROWN_POINTS: int = 5
DEFAULT_SEGMENTER: str = "local-maxima"

# ---------------------------------------------------------------------------#
# Segmentation evaluation                                                    #
# ---------------------------------------------------------------------------#

MAX_HEIGHT_DIFF: float = 0.30
MAX_LEAN_DEG: float = 15.0
PLOT_RADIUS: float = math.sqrt(400.0 / math.pi)  # 0.04 ha
BUFFER_WIDTH: float = 4.7
MIN_DBH_CM: float = 12.5
CROWN_CLASSES: tuple[str, ...] = (
    "dominant",
    "co-dominant",
    "intermediate",
    "overtopped",
    "dead",
)
OVERSTORY_CLASSES: frozenset[str] = frozenset({"dominant", "co-dominant"})
UNDERSTORY_CLASSES: frozenset[str] = frozenset({"intermediate", "overtopped"})

# ---------------------------------------------------------------------------#
# Simulator                                                                  #
# ---------------------------------------------------------------------------#

PULSE_DENSITY: float = 50.0
SCAN_HALF_ANGLE: float = 20.0
ATTENUATION: float = 0.6
GROUND_REFLECT: float = 0.9
MIN_STEM_SPACING: float = 1.5
MAX_PLACEMENT_TRIES: int = 10_000
# (low, high) stem height bands in metres, tier 1 first.
TIER_HEIGHTS: tuple[tuple[float, float], ...] = ((18.0, 28.0), (8.0, 15.0), (4.0, 8.0))
# (low, high) horizontal crown semi-axis, metres.
TIER_CROWN_RADII: tuple[tuple[float, float], ...] = ((2.5, 4.0), (1.5, 2.5), (0.8, 1.5))
# Vertical semi-axis as a fraction of stem height.
CROWN_DEPTH_FRACTION: tuple[float, float] = (0.15, 0.3)

# ---------------------------------------------------------------------------#
# Density sweep                                                              #
# ---------------------------------------------------------------------------#

SWEEP_TARGETS: tuple[float, ...] = (1, 2, 3, 4, 6, 8, 10, 15, 20, 30, 40, 50)
SWEEP_REPETITIONS: int = 5
PLATEAU_TOLERANCE: float = 0.05
