import numpy as np
import pytest

from py_canopy_strata.core import Extent, point_density
from py_canopy_strata.decimate import DecimationSpec, decimate, decimation_metadata
from py_canopy_strata.errors import InvalidArgumentError


@pytest.fixture
def dual_return_cloud(make_cloud):
    """16 pulses/m² on a jittered 0.25 m grid, two returns each."""
    rng = np.random.default_rng(5)
    ii, jj = np.meshgrid(np.arange(80), np.arange(80), indexing="ij")
    cells = np.column_stack([ii.ravel(), jj.ravel()])
    xy = (cells + rng.random(cells.shape)) * 0.25
    n = len(xy)
    return make_cloud(
        np.repeat(xy, 2, axis=0),
        np.tile([20.0, 5.0], n),
        pulses=np.repeat(np.arange(n), 2),
        returns=(np.tile([1, 2], n), np.full(2 * n, 2)),
        area=400.0,
        extent=Extent(0, 0, 20, 20),
    )


def test_one_pulse_per_footprint_cell(dual_return_cloud):
    out = decimate(dual_return_cloud, DecimationSpec(4.0, seed=1))
    pulses = out.points["pulse_id"]
    assert pulses.nunique() == 1600
    # Whole pulses survive.
    assert (pulses.value_counts() == 2).all()
    assert point_density(out) == pytest.approx(8.0)
    assert set(out.index) <= set(dual_return_cloud.index)
    assert out.area == dual_return_cloud.area


def test_decimation_is_seeded(dual_return_cloud):
    a = decimate(dual_return_cloud, DecimationSpec(4.0, seed=1))
    b = decimate(dual_return_cloud, DecimationSpec(4.0, seed=1))
    c = decimate(dual_return_cloud, DecimationSpec(4.0, seed=2))
    assert a.index.tolist() == b.index.tolist()
    assert a.index.tolist() != c.index.tolist()


def test_decimation_keeps_row_order(dual_return_cloud):
    out = decimate(dual_return_cloud, DecimationSpec(1.0))
    assert np.all(np.diff(out.index) > 0)


def test_decimation_of_empty_cloud(dual_return_cloud):
    empty = dual_return_cloud.subset(np.zeros(len(dual_return_cloud), dtype=bool))
    assert len(decimate(empty, DecimationSpec(4.0))) == 0


def test_decimation_spec_validation():
    with pytest.raises(InvalidArgumentError):
        DecimationSpec(0.0)
    with pytest.raises(InvalidArgumentError):
        DecimationSpec(4.0, seed=-1)


def test_metadata_records_target_and_achieved(dual_return_cloud):
    spec = DecimationSpec(4.0, seed=3)
    meta = decimation_metadata(spec, decimate(dual_return_cloud, spec))
    assert meta == {"target_pcd": 4.0, "achieved_pcd": pytest.approx(8.0), "seed": 3}


@pytest.mark.parametrize("target", [1.0, 2.0, 3.0, 4.0])
def test_achieved_density_tracks_target(make_cloud, target):
    rng = np.random.default_rng(9)
    ii, jj = np.meshgrid(np.arange(80), np.arange(80), indexing="ij")
    cells = np.column_stack([ii.ravel(), jj.ravel()])
    for seed in range(10):
        xy = (cells + rng.random(cells.shape)) * 0.25
        cloud = make_cloud(xy, np.full(len(xy), 10.0), area=400.0, extent=Extent(0, 0, 20, 20))
        achieved = point_density(decimate(cloud, DecimationSpec(target, seed)))
        assert achieved == pytest.approx(target, rel=0.1)


def test_point_count_grows_with_target(dual_return_cloud):
    for seed in range(5):
        counts = [
            len(decimate(dual_return_cloud, DecimationSpec(t, seed)))
            for t in (0.5, 1.0, 2.0, 4.0, 8.0, 16.0)
        ]
        assert counts == sorted(counts)
        assert counts[-1] == len(dual_return_cloud)
