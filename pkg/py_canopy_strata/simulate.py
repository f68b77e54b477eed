# py_canopy_strata/simulate.py
"""
Synthetic multi‑tier stands and a simple airborne scan of them.

Stems are placed by seeded rejection sampling; each carries an ellipsoidal
crown whose top is the stem height.  The scanner fires pulses on a jittered
grid, each tilted up to the half scan angle.  Walking down a pulse, every
crown it enters returns from its entry surface with probability
``attenuation``, and the pulse goes on until it has spent ``max_returns``
returns.  A pulse with returns left at the ground returns from it with
probability ``ground_reflect``.  Lower crowns therefore lose the pulses
already spent above them, which is the occlusion effect the rest of the
package measures.

Ground truth (stem and tier of every return) is kept in a separate table so
the point table looks like real data.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import pandas as pd

from . import config
from .core import Extent, PointCloud
from .errors import InvalidArgumentError, PlacementFailureError
from .evaluate import FieldStem

__all__ = [
    "Crown",
    "StandStem",
    "Terrain",
    "SyntheticStand",
    "ScanConfig",
    "SimulatedScan",
    "generate_stand",
    "simulate_scan",
    "scan_stand",
    "stand_field_stems",
    "tier_return_fractions",
]

_LOG = logging.getLogger(__name__)

_TIER_CLASSES: dict[int, str] = {1: "dominant", 2: "intermediate", 3: "overtopped"}
_PULSE_CHUNK = 20_000

# ---------------------------------------------------------------------------#
# Stand                                                                      #
# ---------------------------------------------------------------------------#


@dataclass(frozen=True)
class Crown:
    """Ellipsoid with a vertical axis; ``center_z`` is above the stem base."""

    center_z: float
    radius: float
    depth: float

    @property
    def top(self) -> float:
        return self.center_z + self.depth


@dataclass(frozen=True)
class StandStem:
    stem_id: int
    x: float
    y: float
    tier: int
    height: float
    crown: Crown


@dataclass(frozen=True)
class Terrain:
    """Flat, or a ramp rising ``slope`` metres per metre along x."""

    kind: str = "flat"
    slope: float = 0.0
    base: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in ("flat", "ramp"):
            raise InvalidArgumentError(f"Unknown terrain {self.kind!r}")

    def elevation(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "flat":
            return np.full(np.shape(x), self.base)
        return self.base + self.slope * x


@dataclass(frozen=True)
class SyntheticStand:
    stems: list[StandStem]
    extent: Extent
    terrain: Terrain = field(default_factory=Terrain)

    @property
    def area(self) -> float:
        return self.extent.area

    def to_dict(self) -> dict[str, object]:
        return {
            "extent": self.extent.as_list(),
            "terrain": asdict(self.terrain),
            "stems": [asdict(s) for s in self.stems],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SyntheticStand":
        try:
            stems = [
                StandStem(
                    stem_id=int(s["stem_id"]),
                    x=float(s["x"]),
                    y=float(s["y"]),
                    tier=int(s["tier"]),
                    height=float(s["height"]),
                    crown=Crown(**s["crown"]),
                )
                for s in doc["stems"]
            ]
            return cls(stems, Extent(*doc["extent"]), Terrain(**doc.get("terrain", {})))
        except (KeyError, TypeError) as e:
            raise InvalidArgumentError(f"Bad stand document: {e}") from e


def generate_stand(
    extent: Extent,
    tier_counts: Sequence[int],
    seed: int = 0,
    *,
    terrain: Terrain | None = None,
    min_spacing: float | None = None,
) -> SyntheticStand:
    """
    Place ``tier_counts[k]`` stems of tier ``k + 1`` inside *extent*.

    Raises
    ------
    PlacementFailureError
        When a stem cannot be placed ``min_spacing`` away from all others
        within the rejection budget.
    """
    terrain = Terrain() if terrain is None else terrain
    min_spacing = config.MIN_STEM_SPACING if min_spacing is None else min_spacing
    if len(tier_counts) > len(config.TIER_HEIGHTS):
        raise InvalidArgumentError(f"At most {len(config.TIER_HEIGHTS)} tiers are supported")
    if any(c < 0 for c in tier_counts):
        raise InvalidArgumentError(f"Tier counts must be non-negative, got {list(tier_counts)}")

    rng = np.random.default_rng(seed)
    placed = np.zeros((0, 2))
    stems: list[StandStem] = []
    for tier, count in enumerate(tier_counts, start=1):
        h_lo, h_hi = config.TIER_HEIGHTS[tier - 1]
        r_lo, r_hi = config.TIER_CROWN_RADII[tier - 1]
        for _ in range(count):
            for _attempt in range(config.MAX_PLACEMENT_TRIES):
                xy = rng.uniform([extent.minx, extent.miny], [extent.maxx, extent.maxy])
                if not len(placed) or np.hypot(*(placed - xy).T).min() >= min_spacing:
                    break
            else:
                raise PlacementFailureError(
                    f"Could not place stem {len(stems) + 1} with {min_spacing} m spacing "
                    f"after {config.MAX_PLACEMENT_TRIES} attempts"
                )
            placed = np.vstack([placed, xy])
            height = float(rng.uniform(h_lo, h_hi))
            depth = float(rng.uniform(*config.CROWN_DEPTH_FRACTION)) * height
            crown = Crown(
                center_z=height - depth, radius=float(rng.uniform(r_lo, r_hi)), depth=depth
            )
            stems.append(StandStem(len(stems), float(xy[0]), float(xy[1]), tier, height, crown))

    _LOG.info("Generated stand with tiers %s (%d stems)", list(tier_counts), len(stems))
    return SyntheticStand(stems, extent, terrain)


def stand_field_stems(stand: SyntheticStand) -> list[FieldStem]:
    """Stem map of *stand* as a field crew would record it."""
    return [
        FieldStem(
            x=s.x,
            y=s.y,
            height=s.height,
            dbh=round(13.0 + 1.2 * s.height, 1),
            crown_class=_TIER_CLASSES[s.tier],
            species="synthetic",
            stem_id=s.stem_id,
        )
        for s in stand.stems
    ]


# ---------------------------------------------------------------------------#
# Scanner                                                                    #
# ---------------------------------------------------------------------------#


@dataclass(frozen=True)
class ScanConfig:
    pulse_density: float = config.PULSE_DENSITY
    max_returns: int = config.MAX_RETURNS
    scan_half_angle: float = config.SCAN_HALF_ANGLE
    attenuation: float = config.ATTENUATION
    ground_reflect: float = config.GROUND_REFLECT
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.pulse_density > 0:
            raise InvalidArgumentError("pulse_density must be positive")
        if not 1 <= self.max_returns <= config.MAX_RETURNS:
            raise InvalidArgumentError(
                f"max_returns must be in 1..{config.MAX_RETURNS}, got {self.max_returns}"
            )
        if not 0 <= self.scan_half_angle < 90:
            raise InvalidArgumentError("scan_half_angle must be in [0, 90) degrees")
        for name in ("attenuation", "ground_reflect"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise InvalidArgumentError(f"{name} must be a probability, got {value}")


@dataclass(frozen=True, eq=False)
class SimulatedScan:
    cloud: PointCloud
    truth: pd.DataFrame  # point_index → stem_id (-1 for ground), tier (0 for ground)
    n_pulses: int


def _pulse_targets(
    extent: Extent, density: float, rng: np.random.Generator
) -> np.ndarray:
    """Jittered grid of ground targets, row by row from the south‑west."""
    spacing = 1.0 / math.sqrt(density)
    nx = max(1, math.ceil(extent.width / spacing))
    ny = max(1, math.ceil(extent.height / spacing))
    jj, ii = np.meshgrid(np.arange(ny), np.arange(nx), indexing="ij")
    cells = np.column_stack([ii.ravel(), jj.ravel()]).astype(float)
    xy = (cells + rng.random(cells.shape)) * spacing + np.asarray(extent.origin)
    return xy[extent.contains(xy)]


def _entry_distances(
    ground: np.ndarray, up: np.ndarray, centers: np.ndarray, radii: np.ndarray
) -> np.ndarray:
    """
    Distance along each pulse (measured upward from its ground target) at
    which it enters each crown, NaN where it misses.  Shape ``(pulses, crowns)``.
    """
    # Scale space so every crown becomes a unit sphere.
    rel = (ground[:, None, :] - centers[None, :, :]) / radii[None, :, :]
    d = up[:, None, :] / radii[None, :, :]
    a = np.einsum("pck,pck->pc", d, d)
    b = 2.0 * np.einsum("pck,pck->pc", rel, d)
    c = np.einsum("pck,pck->pc", rel, rel) - 1.0
    disc = b * b - 4.0 * a * c
    with np.errstate(invalid="ignore"):
        s = (-b + np.sqrt(disc)) / (2.0 * a)
    s[(disc < 0) | ~(s >= 0)] = np.nan
    return s


def simulate_scan(stand: SyntheticStand, scan_config: ScanConfig | None = None) -> SimulatedScan:
    """
    Scan *stand* and return the point cloud with its ground‑truth labels.

    Points are ordered by pulse and, within a pulse, by return number.
    """
    cfg = ScanConfig() if scan_config is None else scan_config
    rng = np.random.default_rng(cfg.seed)
    targets = _pulse_targets(stand.extent, cfg.pulse_density, rng)
    n = len(targets)
    zenith = np.radians(cfg.scan_half_angle) * rng.random(n)
    azimuth = 2.0 * np.pi * rng.random(n)
    up = np.column_stack(
        [np.sin(zenith) * np.cos(azimuth), np.sin(zenith) * np.sin(azimuth), np.cos(zenith)]
    )
    ground = np.column_stack(
        [targets, stand.terrain.elevation(targets[:, 0], targets[:, 1])]
    )

    stems = stand.stems
    if stems:
        base = stand.terrain.elevation(
            np.array([s.x for s in stems]), np.array([s.y for s in stems])
        )
        centers = np.column_stack(
            [[s.x for s in stems], [s.y for s in stems], base + [s.crown.center_z for s in stems]]
        )
        radii = np.array([[s.crown.radius, s.crown.radius, s.crown.depth] for s in stems])
    tiers = np.array([s.tier for s in stems], dtype=np.int64)
    stem_ids = np.array([s.stem_id for s in stems], dtype=np.int64)

    parts: list[dict[str, np.ndarray]] = []
    for start in range(0, n, _PULSE_CHUNK):
        stop = min(start + _PULSE_CHUNK, n)
        g, u = ground[start:stop], up[start:stop]
        m = stop - start
        count = np.zeros(m, dtype=np.int64)
        alive = np.ones(m, dtype=bool)

        if stems:
            s = _entry_distances(g, u, centers, radii)
            order = np.argsort(np.where(np.isnan(s), -np.inf, s), axis=1)[:, ::-1]
            rows = np.arange(m)
            for rank in range(order.shape[1]):
                crown = order[:, rank]
                dist = s[rows, crown]
                hit = alive & ~np.isnan(dist) & (count < cfg.max_returns)
                if not hit.any():
                    break
                reflect = hit & (rng.random(m) < cfg.attenuation)
                if reflect.any():
                    pos = g[reflect] + dist[reflect, None] * u[reflect]
                    parts.append(
                        {
                            "pulse": start + rows[reflect],
                            "return_number": count[reflect] + 1,
                            "xyz": pos,
                            "stem_id": stem_ids[crown[reflect]],
                            "tier": tiers[crown[reflect]],
                        }
                    )
                    count[reflect] += 1
                alive &= count < cfg.max_returns

        ground_hit = alive & (rng.random(m) < cfg.ground_reflect)
        if ground_hit.any():
            parts.append(
                {
                    "pulse": start + np.flatnonzero(ground_hit),
                    "return_number": count[ground_hit] + 1,
                    "xyz": g[ground_hit],
                    "stem_id": np.full(int(ground_hit.sum()), -1, dtype=np.int64),
                    "tier": np.zeros(int(ground_hit.sum()), dtype=np.int64),
                }
            )
            count[ground_hit] += 1
        _LOG.debug("Pulses %d–%d simulated", start, stop)

    frame = _assemble(parts, n)
    extent = stand.extent
    if len(frame):
        extent = extent.union(Extent.from_xy(frame[["x", "y"]].to_numpy()))
    truth = frame[["stem_id", "tier"]].copy()
    cloud = PointCloud.from_frame(frame.drop(columns=["stem_id", "tier"]), stand.area, extent)
    _LOG.info(
        "Scanned %d pulses → %d returns (%.2f pt/m²)", n, len(cloud), len(cloud) / stand.area
    )
    return SimulatedScan(cloud, truth, n)


def _assemble(parts: list[dict[str, np.ndarray]], n_pulses: int) -> pd.DataFrame:
    if not parts:
        frame = pd.DataFrame(
            {
                col: pd.Series([], dtype=dt)
                for col, dt in (
                    ("x", "float64"),
                    ("y", "float64"),
                    ("z", "float64"),
                    ("return_number", "int64"),
                    ("returns_of_pulse", "int64"),
                    ("pulse_id", "int64"),
                    ("is_ground", "bool"),
                    ("stem_id", "int64"),
                    ("tier", "int64"),
                )
            }
        )
        frame.index.name = "point_index"
        return frame

    pulse = np.concatenate([p["pulse"] for p in parts])
    rn = np.concatenate([p["return_number"] for p in parts])
    xyz = np.concatenate([p["xyz"] for p in parts])
    stem_id = np.concatenate([p["stem_id"] for p in parts])
    tier = np.concatenate([p["tier"] for p in parts])
    order = np.lexsort((rn, pulse))
    pulse, rn, xyz, stem_id, tier = pulse[order], rn[order], xyz[order], stem_id[order], tier[order]
    returns_of_pulse = np.bincount(pulse, minlength=n_pulses)[pulse]

    frame = pd.DataFrame(
        {
            "x": xyz[:, 0],
            "y": xyz[:, 1],
            "z": xyz[:, 2],
            "return_number": rn,
            "returns_of_pulse": returns_of_pulse,
            "pulse_id": pulse,
            "is_ground": stem_id < 0,
            "stem_id": stem_id,
            "tier": tier,
        }
    )
    frame.index.name = "point_index"
    return frame


def scan_stand(stand: SyntheticStand, scan_config: ScanConfig | None = None) -> PointCloud:
    """Scan *stand*; see :func:`simulate_scan` for the labelled variant."""
    return simulate_scan(stand, scan_config).cloud


def tier_return_fractions(scan: SimulatedScan, n_tiers: int = 3) -> np.ndarray:
    """Share of all returns coming from each tier, tier 1 first."""
    tiers = scan.truth["tier"].to_numpy()
    if tiers.size == 0:
        return np.zeros(n_tiers)
    counts = np.bincount(tiers, minlength=n_tiers + 1)[1 : n_tiers + 1]
    return counts / tiers.size
