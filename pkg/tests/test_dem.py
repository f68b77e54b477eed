import numpy as np
import pytest

from py_canopy_strata import dem
from py_canopy_strata.core import Extent
from py_canopy_strata.errors import EmptyInputError, OutOfCoverageError
from py_canopy_strata.export import export_ascii_grid

TILE = Extent(0, 0, 10, 10)


def _ground_xy(skip=()):
    """Every 1 m cell centre of a 10 × 10 m tile, row by row."""
    return [(i + 0.5, j + 0.5) for j in range(10) for i in range(10) if (j, i) not in skip]


def _ground(make_cloud, skip=()):
    xy = _ground_xy(skip)
    z = [100.0 + 0.1 * y for _, y in xy]
    return make_cloud(xy, z, ground=[True] * len(xy), extent=TILE)


def test_build_dem_averages_cells(make_cloud):
    raster = dem.build_dem(_ground(make_cloud), 1.0, extent=TILE)
    assert (raster.nrows, raster.ncols) == (10, 10)
    assert raster.origin == (0.0, 0.0)
    assert raster.elevations[3, 7] == pytest.approx(100.35)
    assert not raster.void_mask.any()


def test_void_takes_first_equidistant_neighbour(make_cloud):
    raster = dem.build_dem(_ground(make_cloud, skip={(5, 5)}), 1.0, extent=TILE)
    assert raster.void_mask[5, 5]
    # Four neighbours at 1 m; row 4 comes first in row-major order.
    assert raster.elevations[5, 5] == pytest.approx(100.45)


def test_build_dem_needs_ground(make_cloud):
    empty = _ground(make_cloud).subset(np.zeros(100, dtype=bool))
    with pytest.raises(EmptyInputError):
        dem.build_dem(empty)


def test_normalize_heights(make_cloud):
    raster = dem.build_dem(_ground(make_cloud), 1.0, extent=TILE)
    veg = make_cloud([(5.5, 5.5), (2.5, 7.5)], [100.55 + 10.0, 100.0], extent=TILE)
    out = dem.normalize_heights(veg, raster)
    np.testing.assert_allclose(out.heights, [10.0, 0.0], atol=1e-9)

    again = dem.normalize_heights(out, raster)
    np.testing.assert_allclose(again.heights, out.heights)


def test_normalize_outside_raster(make_cloud):
    # Without an extent the raster only spans the ground returns.
    raster = dem.build_dem(_ground(make_cloud).subset(np.arange(1, 100)), 1.0)
    stray = make_cloud([(0.1, 0.1)], [100.0], extent=TILE)
    with pytest.raises(OutOfCoverageError):
        dem.normalize_heights(stray, raster)


def test_normalize_with_ground_covers_the_cloud(make_cloud):
    xy = _ground_xy() + [(9.9, 9.9)]
    z = [100.0 + 0.1 * y for _, y in xy[:-1]] + [120.0]
    cloud = make_cloud(xy, z, ground=[True] * 100 + [False], extent=TILE)
    out, raster = dem.normalize_with_ground(cloud, 1.0)
    assert raster.covers([(9.9, 9.9)]).all()
    assert out.heights[-1] == pytest.approx(120.0 - 100.95)
    assert out.has_heights


def test_ascii_grid_is_north_first(make_cloud, tmp_path):
    raster = dem.build_dem(_ground(make_cloud), 1.0, extent=TILE)
    path = export_ascii_grid(raster, tmp_path / "dem.asc")
    lines = path.read_text().splitlines()
    assert lines[:2] == ["ncols 10", "nrows 10"]
    assert lines[5].startswith("NODATA_value")
    assert lines[6].split()[0] == "100.950"
    assert lines[-1].split()[0] == "100.050"
    assert len(lines) == 16


def test_void_fill_breaks_wide_ties_by_row_major_order():
    # 24 sources at exactly sqrt(325) cells from the centre of a 41 × 41 void.
    size, c = 41, 20
    offsets = {
        (sr * a, sc * b)
        for a, b in ((1, 18), (6, 17), (10, 15), (15, 10), (17, 6), (18, 1))
        for sr in (-1, 1)
        for sc in (-1, 1)
    }
    void = np.ones((size, size), dtype=bool)
    for dr, dc in offsets:
        void[c + dr, c + dc] = False
    elevations = np.where(void, np.nan, np.arange(size * size, dtype=float).reshape(size, size))

    filled = dem._fill_voids(elevations, void)
    assert filled[c, c] == (c - 18) * size + (c - 1)

    src_r, src_c = np.nonzero(~void)
    for r, col in zip(*np.nonzero(void)):
        d2 = (src_r - r) ** 2 + (src_c - col) ** 2
        best = np.flatnonzero(d2 == d2.min())
        assert filled[r, col] == min(src_r[best] * size + src_c[best])


def test_bilinear_sampling_reproduces_a_ramp(make_cloud):
    xy = _ground_xy()
    z = [50.0 + 0.3 * x - 0.2 * y for x, y in xy]
    raster = dem.build_dem(make_cloud(xy, z, ground=[True] * 100, extent=TILE), 1.0, extent=TILE)

    query = np.array([(3.3, 6.7), (0.5, 0.5), (8.95, 1.05), (5.0, 5.0)])
    expected = 50.0 + 0.3 * query[:, 0] - 0.2 * query[:, 1]
    np.testing.assert_allclose(raster.sample(query), expected, atol=1e-9)

    veg = make_cloud([(3.3, 6.7)], [50.0 + 0.99 - 1.34 + 12.0], extent=TILE)
    assert dem.normalize_heights(veg, raster).heights[0] == pytest.approx(12.0, abs=1e-9)
