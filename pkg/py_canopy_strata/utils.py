# py_canopy_strata/utils.py
"""
General‑purpose helpers used across the *py‑canopy‑strata* package.

Nothing in here depends on SciPy or the point‑cloud types, making the
functions easy to unit‑test.
"""

from __future__ import annotations

import hashlib
import logging
import os

import numpy as np

from . import config
from .errors import InvalidArgumentError

__all__ = [
    "derive_seed",
    "cell_uniforms",
    "worker_count",
]

_LOG = logging.getLogger(__name__)

_U64 = (1 << 64) - 1

# ---------------------------------------------------------------------------#
# Seeds                                                                      #
# ---------------------------------------------------------------------------#


def derive_seed(master: int, *parts: int | str) -> int:
    """
    Deterministic 64‑bit seed from a master seed and any number of keys.

    Each job of an experiment hashes its own coordinates, so adding or
    reordering jobs never changes another job's random stream.

    Examples
    --------
    >>> derive_seed(7, 0, 1) == derive_seed(7, 0, 1)
    True
    >>> derive_seed(7, 0, 1) == derive_seed(7, 1, 0)
    False
    """
    if master < 0:
        raise InvalidArgumentError(f"Seed must be non-negative, got {master}")
    text = ":".join(str(p) for p in (master & _U64, *parts))
    digest = hashlib.blake2b(text.encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def cell_uniforms(seed: int, cells: np.ndarray) -> np.ndarray:
    """
    One uniform draw in ``[0, 1)`` per integer cell ``(ix, iy)``.

    The draw for a cell depends only on ``seed`` and that cell's coordinates
    (a splitmix64 hash), never on the other cells or their order.
    """
    cells = np.asarray(cells, dtype=np.int64).reshape(-1, 2)
    with np.errstate(over="ignore"):
        h = np.full(len(cells), np.uint64(seed & _U64), dtype=np.uint64)
        for col in (cells[:, 0], cells[:, 1]):
            h ^= col.astype(np.uint64)
            h = _splitmix64(h)
    return (h >> np.uint64(11)).astype(np.float64) / float(1 << 53)


def _splitmix64(h: np.ndarray) -> np.ndarray:
    h = h + np.uint64(0x9E3779B97F4A7C15)
    h = (h ^ (h >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    h = (h ^ (h >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return h ^ (h >> np.uint64(31))


# ---------------------------------------------------------------------------#
# Parallelism                                                                #
# ---------------------------------------------------------------------------#


def worker_count() -> int:
    """
    Workers to use: ``$CANOPY_THREADS`` if set, else ``os.cpu_count()``.
    """
    default = os.cpu_count() or 1
    raw = os.environ.get(config.THREADS_ENV_VAR)
    if raw is None or not raw.strip():
        return default
    try:
        n = int(raw)
    except ValueError as e:
        raise InvalidArgumentError(
            f"{config.THREADS_ENV_VAR} must be an integer, got {raw!r}"
        ) from e
    if n < 1:
        raise InvalidArgumentError(f"{config.THREADS_ENV_VAR} must be ≥ 1, got {n}")
    return n
