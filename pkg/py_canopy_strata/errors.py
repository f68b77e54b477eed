# py_canopy_strata/errors.py
"""
Exception hierarchy for *py‑canopy‑strata*.

Every error derives from a builtin exception, so callers can keep catching
``ValueError`` / ``RuntimeError`` where that reads naturally, and from
:class:`CanopyError`, which carries the CLI exit code.
"""

from __future__ import annotations

__all__ = [
    "CanopyError",
    "InvalidArgumentError",
    "EmptyInputError",
    "MalformedInputError",
    "OutOfCoverageError",
    "SaturatedOcclusionError",
    "AlgorithmDivergenceError",
    "PlacementFailureError",
]


class CanopyError(Exception):
    """Base class; ``exit_code`` is what ``main`` returns for it."""

    exit_code: int = 1


class InvalidArgumentError(CanopyError, ValueError):
    exit_code = 2


class EmptyInputError(CanopyError, ValueError):
    exit_code = 3


class MalformedInputError(CanopyError, ValueError):
    exit_code = 3


class OutOfCoverageError(MalformedInputError):
    """A point falls outside the raster it is being normalized against."""


class SaturatedOcclusionError(CanopyError, ArithmeticError):
    """The layers above absorb every return; no density reaches the layer."""

    exit_code = 4


class AlgorithmDivergenceError(CanopyError, RuntimeError):
    exit_code = 4


class PlacementFailureError(CanopyError, RuntimeError):
    exit_code = 4
