# py_canopy_strata/evaluate.py
"""
Segmentation accuracy against field stem maps.

A crown and a stem may be paired only when the apex height is within 30 % of
the field height and the line from stem base to apex leans less than 15° from
nadir.  Eligible pairs are scored and matched one‑to‑one by maximum total
score.  Unmatched stems are omission errors; unmatched crowns whose apex lies
inside the plot are commission errors, while those in the buffer annulus are
left out of the count.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import config
from .core import PlotGeometry
from .errors import InvalidArgumentError
from .segment import TreeCrown

__all__ = [
    "FieldStem",
    "MatchResult",
    "AccuracyScores",
    "pair_score",
    "hungarian_assign",
    "match_trees",
    "metrics",
    "class_counts",
    "evaluate_plot",
]

_LOG = logging.getLogger(__name__)


# ---------------------------------------------------------------------------#
# Types                                                                      #
# ---------------------------------------------------------------------------#


@dataclass(frozen=True)
class FieldStem:
    x: float
    y: float
    height: float
    dbh: float
    crown_class: str
    species: str = ""
    stem_id: int | str = 0

    def __post_init__(self) -> None:
        if not self.height > 0:
            raise InvalidArgumentError(f"Stem {self.stem_id}: height must be positive")
        if not self.dbh > config.MIN_DBH_CM:
            raise InvalidArgumentError(
                f"Stem {self.stem_id}: DBH {self.dbh} cm is below the "
                f"{config.MIN_DBH_CM} cm survey threshold"
            )
        if self.crown_class not in config.CROWN_CLASSES:
            raise InvalidArgumentError(
                f"Stem {self.stem_id}: unknown crown class {self.crown_class!r}"
            )

    @classmethod
    def from_polar(
        cls,
        center: tuple[float, float],
        distance: float,
        azimuth_deg: float,
        **fields: object,
    ) -> "FieldStem":
        """Stem located by distance and azimuth (clockwise from north) from *center*."""
        az = math.radians(azimuth_deg)
        return cls(
            x=center[0] + distance * math.sin(az),
            y=center[1] + distance * math.cos(az),
            **fields,  # type: ignore[arg-type]
        )

    @property
    def is_overstory(self) -> bool:
        return self.crown_class in config.OVERSTORY_CLASSES

    @property
    def is_understory(self) -> bool:
        return self.crown_class in config.UNDERSTORY_CLASSES


@dataclass(frozen=True)
class AccuracyScores:
    recall: float
    precision: float
    f_score: float

    def as_dict(self) -> dict[str, float]:
        return {"recall": self.recall, "precision": self.precision, "f_score": self.f_score}


@dataclass(frozen=True, eq=False)
class MatchResult:
    """
    One‑to‑one crown/stem matching in a plot.

    ``pairs`` holds ``(crown_idx, stem_idx, score)`` into the sequences that
    were matched.  ``commission`` and ``excluded`` list the unmatched crowns
    counted as commission errors and those dropped for lying in the buffer.
    """

    pairs: list[tuple[int, int, float]]
    mt: int
    oe: int
    ce: int
    excluded_buffer_crowns: int
    outside_crowns: int = 0
    commission: list[int] = field(default_factory=list)
    excluded: list[int] = field(default_factory=list)

    @property
    def matched_stems(self) -> set[int]:
        return {s for _, s, _ in self.pairs}

    @property
    def total_score(self) -> float:
        return math.fsum(s for _, _, s in self.pairs)


# ---------------------------------------------------------------------------#
# Scoring and assignment                                                     #
# ---------------------------------------------------------------------------#


def pair_score(
    crown: TreeCrown,
    stem: FieldStem,
    *,
    max_height_diff: float | None = None,
    max_lean_deg: float | None = None,
) -> float | None:
    """
    Score of pairing *crown* with *stem*, or ``None`` if the pair is not
    allowed.

    The score sums the unused slack of both constraints, each normalized to
    ``[0, 1]``, so a crown exactly atop a stem of equal height scores 2.
    Crowns with a non‑positive apex height are never eligible.
    """
    max_height_diff = config.MAX_HEIGHT_DIFF if max_height_diff is None else max_height_diff
    max_lean_deg = config.MAX_LEAN_DEG if max_lean_deg is None else max_lean_deg
    if crown.apex_height <= 0:
        return None

    rel = abs(crown.apex_height - stem.height) / stem.height
    offset = math.hypot(crown.apex_x - stem.x, crown.apex_y - stem.y)
    lean = math.degrees(math.atan2(offset, crown.apex_height))
    if rel >= max_height_diff or lean >= max_lean_deg:
        return None
    return (1.0 - rel / max_height_diff) + (1.0 - lean / max_lean_deg)


def hungarian_assign(scores: np.ndarray) -> list[tuple[int, int]]:
    """
    Maximum‑total‑score partial assignment.

    *scores* is a rectangular matrix with NaN marking ineligible cells.
    Ineligible cells weigh zero in the solver and are dropped from its
    answer, so any row or column may stay unmatched.
    """
    scores = np.asarray(scores, dtype=float)
    if scores.ndim != 2:
        raise InvalidArgumentError("Score matrix must be two-dimensional")
    if scores.size == 0:
        return []
    eligible = ~np.isnan(scores)
    if np.any(scores[eligible] < 0):
        raise InvalidArgumentError("Scores must be non-negative")
    weights = np.where(eligible, scores, 0.0)
    rows, cols = linear_sum_assignment(weights, maximize=True)
    keep = eligible[rows, cols]
    return [(int(r), int(c)) for r, c in zip(rows[keep], cols[keep], strict=True)]


def match_trees(
    crowns: Sequence[TreeCrown],
    stems: Sequence[FieldStem],
    plot: PlotGeometry,
) -> MatchResult:
    """
    Match *crowns* to *stems* and count MT, OE and CE.

    Unmatched crowns with their apex within ``plot.radius`` of the centre are
    commission errors; those in the buffer annulus are counted separately in
    ``excluded_buffer_crowns``; anything farther out is ignored.
    """
    outside = int((~plot.in_plot([(s.x, s.y) for s in stems])).sum()) if stems else 0
    if outside:
        _LOG.warning("%d stems lie outside the plot radius %.2f m", outside, plot.radius)
    degenerate = sum(1 for c in crowns if c.apex_height <= 0)
    if degenerate:
        _LOG.warning("%d crowns have a non-positive apex height and cannot match", degenerate)

    scores = np.full((len(crowns), len(stems)), np.nan)
    for i, crown in enumerate(crowns):
        for j, stem in enumerate(stems):
            s = pair_score(crown, stem)
            if s is not None:
                scores[i, j] = s

    assigned = hungarian_assign(scores)
    pairs = [(i, j, float(scores[i, j])) for i, j in assigned]
    matched_crowns = {i for i, _ in assigned}

    commission: list[int] = []
    excluded: list[int] = []
    far = 0
    for i, crown in enumerate(crowns):
        if i in matched_crowns:
            continue
        d = float(plot.distance([crown.apex])[0])
        if d <= plot.radius:
            commission.append(i)
        elif d <= plot.outer_radius:
            excluded.append(i)
        else:
            far += 1

    result = MatchResult(
        pairs=pairs,
        mt=len(pairs),
        oe=len(stems) - len(pairs),
        ce=len(commission),
        excluded_buffer_crowns=len(excluded),
        outside_crowns=far,
        commission=commission,
        excluded=excluded,
    )
    _LOG.debug(
        "Matched %d crowns to %d stems: MT %d, OE %d, CE %d (%d in buffer)",
        len(crowns),
        len(stems),
        result.mt,
        result.oe,
        result.ce,
        result.excluded_buffer_crowns,
    )
    return result


# ---------------------------------------------------------------------------#
# Accuracy                                                                   #
# ---------------------------------------------------------------------------#


def _ratio(num: float, den: float) -> float:
    return num / den if den else 0.0


def metrics(mt: int, oe: int, ce: int) -> AccuracyScores:
    """
    Recall, precision and F‑score.  Any 0/0 evaluates to 0.

    >>> metrics(9, 1, 0).recall
    0.9
    """
    if min(mt, oe, ce) < 0:
        raise InvalidArgumentError("Counts must be non-negative")
    recall = _ratio(mt, mt + oe)
    precision = _ratio(mt, mt + ce)
    f_score = _ratio(2.0 * recall * precision, recall + precision)
    return AccuracyScores(recall, precision, f_score)


def class_counts(
    match: MatchResult,
    crowns: Sequence[TreeCrown],
    stems: Sequence[FieldStem],
    classes: frozenset[str],
) -> tuple[int, int, int]:
    """
    MT, OE and CE restricted to stems of *classes*.

    Matches and omissions follow the stem's crown class.  Commission errors
    have no stem, so they are attributed by the crown's layer: top‑layer
    crowns count against the overstory, deeper ones against the understory.
    """
    in_class = [j for j, s in enumerate(stems) if s.crown_class in classes]
    matched = match.matched_stems
    mt = sum(1 for j in in_class if j in matched)
    oe = len(in_class) - mt
    overstory = classes <= config.OVERSTORY_CLASSES
    ce = sum(
        1 for i in match.commission if (crowns[i].source_layer <= 1) == overstory
    )
    return mt, oe, ce


def evaluate_plot(
    crowns: Sequence[TreeCrown],
    stems: Sequence[FieldStem],
    plot: PlotGeometry,
    include_dead: bool = True,
) -> dict[str, object]:
    """
    Per‑plot result document with overall and per‑class counts and scores.
    """
    if not include_dead:
        stems = [s for s in stems if s.crown_class != "dead"]
    match = match_trees(crowns, stems, plot)
    doc: dict[str, object] = {
        "mt": match.mt,
        "oe": match.oe,
        "ce": match.ce,
        "excluded_buffer_crowns": match.excluded_buffer_crowns,
        **metrics(match.mt, match.oe, match.ce).as_dict(),
    }
    by_class: dict[str, dict[str, float | int]] = {}
    for name, classes in (
        ("overstory", config.OVERSTORY_CLASSES),
        ("understory", config.UNDERSTORY_CLASSES),
    ):
        mt, oe, ce = class_counts(match, crowns, stems, classes)
        by_class[name] = {"mt": mt, "oe": oe, "ce": ce, **metrics(mt, oe, ce).as_dict()}
    doc["by_class"] = by_class
    return doc
