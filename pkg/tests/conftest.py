import numpy as np
import pandas as pd
import pytest

from py_canopy_strata.core import Extent, PointCloud


def _make_cloud(xy, z, *, heights=None, ground=None, pulses=None, returns=None, area=None, extent=None):
    """One return per pulse unless *pulses*/*returns* say otherwise."""
    xy = np.asarray(xy, dtype=float).reshape(-1, 2)
    n = len(xy)
    pulses = np.arange(n) if pulses is None else np.asarray(pulses)
    if returns is None:
        rn = np.ones(n, dtype=int)
        rop = np.ones(n, dtype=int)
    else:
        rn, rop = returns
    frame = pd.DataFrame(
        {
            "x": xy[:, 0],
            "y": xy[:, 1],
            "z": np.asarray(z, dtype=float),
            "return_number": rn,
            "returns_of_pulse": rop,
            "pulse_id": pulses,
            "is_ground": np.zeros(n, dtype=bool) if ground is None else np.asarray(ground),
        }
    )
    if heights is not None:
        frame["height_above_ground"] = np.asarray(heights, dtype=float)
    if extent is None:
        extent = Extent.from_xy(xy)
    area = (extent.area or 1.0) if area is None else area
    return PointCloud.from_frame(frame, area, extent, reindex=True)


@pytest.fixture
def make_cloud():
    return _make_cloud


@pytest.fixture
def two_layer_cloud():
    """20 × 20 m plot: 4000 returns at 20–24 m over 4000 at 6–8 m."""
    rng = np.random.default_rng(0)
    n = 4000
    xy = rng.uniform(0.0, 20.0, size=(2 * n, 2))
    h = np.concatenate([rng.uniform(20.0, 24.0, n), rng.uniform(6.0, 8.0, n)])
    return _make_cloud(xy, h, heights=h, area=400.0, extent=Extent(0.0, 0.0, 20.0, 20.0))


@pytest.fixture(autouse=True)
def _single_thread(monkeypatch):
    monkeypatch.setenv("CANOPY_THREADS", "1")
