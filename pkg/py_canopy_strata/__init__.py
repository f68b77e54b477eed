# py_canopy_strata/__init__.py
"""
Top‑level package for **py‑canopy‑strata**.

Public re‑exports
-----------------
`stratify`, `segment_cloud`, `evaluate_plot`, `fit_theta`, `density_sweep`
    Convenience imports so users can:

    >>> from py_canopy_strata import stratify
"""

from __future__ import annotations

__all__ = [
    "stratify",
    "segment_cloud",
    "evaluate_plot",
    "fit_theta",
    "density_sweep",
    "__version__",
]

__version__: str = "0.1.0"

from .evaluate import evaluate_plot  # noqa: E402  (import after defining __all__)
from .occlusion import fit_theta  # noqa: E402
from .segment import segment_cloud  # noqa: E402
from .stratify import stratify  # noqa: E402
from .sweep import density_sweep  # noqa: E402
