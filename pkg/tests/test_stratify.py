import numpy as np
import pytest

import py_canopy_strata.simulate as sim
import importlib

strat = importlib.import_module("py_canopy_strata.stratify")
from py_canopy_strata.core import Extent
from py_canopy_strata.errors import AlgorithmDivergenceError, InvalidArgumentError
from py_canopy_strata.stratify import CanopyLayer, HeightHistogram, StratificationResult


def _profile(*modes, sd=2.0, top=40.0):
    bw = 0.25
    centers = (np.arange(int(top / bw)) + 0.5) * bw
    values = sum(np.exp(-0.5 * ((centers - m) / sd) ** 2) for m in modes)
    return HeightHistogram(bw, np.zeros_like(values), values)


def test_histogram_bins_start_at_zero():
    hist = strat.HeightHistogram.from_heights(np.array([0.0, 0.1, 0.3, 1.0]))
    assert hist.counts[:5].tolist() == [2, 1, 0, 0, 1]
    assert hist.total == 4
    # Room for the kernel to fade out above the highest point.
    assert len(hist.counts) > 1.0 / 0.25 + 5.0 / 0.25


def test_smoothing_preserves_mass_and_impulse_shape():
    counts = np.zeros(400)
    counts[200] = 1.0
    smoothed = strat.smooth_histogram(HeightHistogram(0.25, counts)).smoothed
    assert smoothed.sum() == pytest.approx(1.0)
    assert np.argmax(smoothed) == 200
    np.testing.assert_allclose(smoothed[180], smoothed[220])


def test_smoothing_needs_positive_sigma():
    with pytest.raises(InvalidArgumentError):
        strat.smooth_histogram(HeightHistogram(0.25, np.ones(10)), sigma=0.0)


def test_salient_ranges_linear_profile_is_empty():
    hist = HeightHistogram(0.25, np.zeros(100), np.arange(100, dtype=float))
    assert strat.salient_ranges(hist) == []


def test_salient_ranges_single_bump_brackets_mode():
    ((low, high),) = strat.salient_ranges(_profile(10.0))
    assert low == pytest.approx(8.0, abs=0.3)
    assert high == pytest.approx(12.0, abs=0.3)


def test_salient_ranges_bimodal_top_first():
    ranges = strat.salient_ranges(_profile(8.0, 25.0))
    assert len(ranges) == 2
    assert ranges[0][0] > ranges[1][1]
    assert ranges[0][0] == pytest.approx(23.0, abs=0.3)
    assert ranges[1][1] == pytest.approx(10.0, abs=0.3)


def test_salient_ranges_needs_smoothing():
    with pytest.raises(InvalidArgumentError):
        strat.salient_ranges(HeightHistogram(0.25, np.ones(10)))


def test_locale_threshold():
    rng = np.random.default_rng(1)
    two = np.concatenate([rng.uniform(20, 24, 200), rng.uniform(6, 8, 200)])
    t = strat.locale_threshold(two)
    assert 12.0 < t < 17.0

    one = rng.uniform(18, 22, 300)
    assert strat.locale_threshold(one) is None

    with pytest.raises(InvalidArgumentError):
        strat.locale_threshold(np.array([]))


def test_stratify_two_layers(two_layer_cloud):
    result = strat.stratify(two_layer_cloud)
    assert result.n_layers == 2
    assert result.iterations == 2
    assert result.ground_vegetation.size == 0

    top, lower = result.layers
    assert top.member_points.tolist() == list(range(4000))
    assert lower.member_points.tolist() == list(range(4000, 8000))
    assert 12.0 < top.starting_height < 17.0
    assert lower.top_height == pytest.approx(8.0, abs=0.1)
    np.testing.assert_allclose(result.densities(), [10.0, 10.0])


def test_stratify_is_deterministic(two_layer_cloud):
    a = strat.stratify(two_layer_cloud)
    b = strat.stratify(two_layer_cloud)
    assert [l.member_points.tolist() for l in a.layers] == [
        l.member_points.tolist() for l in b.layers
    ]
    assert [l.starting_height for l in a.layers] == [l.starting_height for l in b.layers]


def test_low_stratum_is_ground_vegetation(make_cloud):
    rng = np.random.default_rng(2)
    xy = rng.uniform(0.0, 20.0, size=(8000, 2))
    h = np.concatenate([rng.uniform(20.0, 24.0, 4000), rng.uniform(1.0, 3.0, 4000)])
    cloud = make_cloud(xy, h, heights=h, area=400.0, extent=Extent(0, 0, 20, 20))
    result = strat.stratify(cloud)
    assert result.n_layers == 1
    assert result.ground_vegetation.tolist() == list(range(4000, 8000))

    labels = strat.layer_labels(result)
    assert labels.name == "layer"
    assert labels.loc[0] == 1
    assert labels.loc[7999] == 0
    assert len(labels) == 8000


def test_stratify_skips_ground_returns(make_cloud):
    cloud = make_cloud(
        [(0, 0), (1, 1)], [0.0, 20.0], heights=[0.0, 20.0], ground=[True, False]
    )
    result = strat.stratify(cloud)
    assert result.n_layers == 1
    assert result.layers[0].member_points.tolist() == [1]


def test_stratify_edge_inputs(make_cloud, two_layer_cloud):
    empty = two_layer_cloud.subset(np.zeros(8000, dtype=bool))
    result = strat.stratify(empty)
    assert result.n_layers == 0
    assert result.iterations == 0

    raw = make_cloud([(0, 0), (1, 1)], [10.0, 20.0])
    with pytest.raises(InvalidArgumentError):
        strat.stratify(raw)

    with pytest.raises(AlgorithmDivergenceError):
        strat.stratify(two_layer_cloud, max_iterations=1)


def _layer(n, start, thickness, density):
    return CanopyLayer(n, np.arange(3), {}, start, thickness, density)


def test_layer_summary():
    a = StratificationResult([_layer(1, 10.0, 10.0, 2.0), _layer(2, 2.0, 5.0, 1.0)], np.zeros(0), 2)
    b = StratificationResult([_layer(1, 12.0, 8.0, 3.0)], np.zeros(0), 1)
    summary = strat.layer_summary([a, b]).set_index("layer")

    assert summary.loc["1", "plots_reaching"] == 1.0
    assert summary.loc["1", "plots_exactly"] == 0.5
    assert summary.loc["1", "start_mean"] == pytest.approx(11.0)
    assert summary.loc["1", "start_sd"] == pytest.approx(1.0)
    assert summary.loc["1", "density_mean"] == pytest.approx(2.5)
    assert summary.loc["2", "plots_reaching"] == 0.5
    assert summary.loc["2", "thickness_sd"] == pytest.approx(0.0)

    agg = summary.loc["aggregate"]
    assert agg["start_mean"] == pytest.approx(7.0)
    assert agg["thickness_mean"] == pytest.approx(13.0)
    assert agg["density_mean"] == pytest.approx(3.0)
    assert summary.attrs["mean_layers"] == pytest.approx(1.5)
    assert summary.attrs["n_plots"] == 2


@pytest.mark.parametrize("seed", range(100))
def test_every_point_lands_in_exactly_one_stratum(make_cloud, seed):
    rng = np.random.default_rng(seed)
    bands = rng.uniform(1.0, 30.0, size=rng.integers(1, 4))
    n = 600
    xy = rng.uniform(0.0, 15.0, size=(n, 2))
    h = rng.choice(bands, n) + rng.uniform(0.0, 3.0, n)
    ground = rng.random(n) < 0.1
    h[ground] = 0.0
    cloud = make_cloud(xy, h, heights=h, ground=ground, area=225.0, extent=Extent(0, 0, 15, 15))

    result = strat.stratify(cloud)
    groups = [layer.member_points for layer in result.layers]
    groups += [result.ground_vegetation, np.flatnonzero(ground)]
    labels = np.concatenate(groups)
    assert len(labels) == n
    assert set(labels.tolist()) == set(range(n))


def test_smoothing_two_impulses_is_two_kernels():
    counts = np.zeros(800)
    counts[[200, 280]] = 1.0
    smoothed = strat.smooth_histogram(HeightHistogram(0.25, counts), sigma=5.0).smoothed

    s = 5.0 / 0.25
    reach = int(8.0 * s + 0.5)
    j = np.arange(-reach, reach + 1)
    kernel = np.exp(-0.5 * (j / s) ** 2)
    kernel /= kernel.sum()
    expected = np.zeros(800)
    expected[200 - reach : 200 + reach + 1] += kernel
    expected[280 - reach : 280 + reach + 1] += kernel
    np.testing.assert_allclose(smoothed, expected, atol=1e-9)


def test_cell_bounds_are_never_inverted():
    thresholds = np.array([12.0, np.nan, 30.0])
    lows = np.array([1.0, 2.0, 3.0])
    highs = np.array([20.0, 15.0, 25.0])
    lower, upper = strat._cell_bounds(thresholds, lows, highs)
    np.testing.assert_allclose(lower, [12.0, 2.0, 3.0])
    np.testing.assert_allclose(upper, highs)


def test_short_kernel_gives_no_negative_thickness(monkeypatch, two_layer_cloud):
    monkeypatch.setattr(strat.config, "KERNEL_TRUNCATE", 4.0)
    result = strat.stratify(two_layer_cloud)
    for layer in result.layers:
        assert layer.thickness >= 0.0
        assert all(lo <= hi for lo, hi in layer.cell_thresholds.values())


def test_empty_locale_has_no_threshold(caplog):
    xy = np.array([[0.0, 0.0], [0.5, 0.0], [0.0, 0.5]])
    heights = np.array([20.0, 21.0, 22.0])
    centers = np.array([[0.0, 0.0], [100.0, 100.0]])
    thresholds, lows, highs = strat._locale_stats(
        xy, heights, centers, 1.5, bin_width=0.25, sigma=5.0, workers=1
    )
    assert np.isnan(thresholds).all()
    assert (lows[0], highs[0]) == (20.0, 22.0)
    assert np.isnan(lows[1]) and np.isnan(highs[1])
    assert "empty locales" in caplog.text


def test_unthresholded_cells_are_stripped_whole(make_cloud):
    rng = np.random.default_rng(5)
    xy = rng.uniform(0.0, 20.0, size=(3000, 2))
    h = rng.uniform(15.0, 19.0, 3000)
    cloud = make_cloud(xy, h, heights=h, area=400.0, extent=Extent(0, 0, 20, 20))
    result = strat.stratify(cloud)
    assert result.n_layers == 1
    assert result.iterations == 1
    assert result.layers[0].member_points.tolist() == list(range(3000))


def _layered_stand():
    stems = []
    for x in np.arange(0.0, 21.0, 4.0):
        for y in np.arange(0.0, 21.0, 4.0):
            stems.append(sim.StandStem(len(stems), x, y, 1, 25.0, sim.Crown(22.0, 4.0, 3.0)))
    for x in np.arange(2.0, 21.0, 4.0):
        for y in np.arange(2.0, 21.0, 4.0):
            stems.append(sim.StandStem(len(stems), x, y, 2, 10.0, sim.Crown(8.0, 3.0, 2.0)))
    return sim.SyntheticStand(stems, Extent(0.0, 0.0, 20.0, 20.0))


@pytest.mark.parametrize("seed", range(3))
def test_two_tier_stand_layers_follow_the_tiers(seed):
    scan = sim.simulate_scan(_layered_stand(), sim.ScanConfig(pulse_density=20.0, seed=seed))
    pts = scan.cloud.points
    cloud = scan.cloud.with_heights(np.where(pts["is_ground"], 0.0, pts["z"]))
    result = strat.stratify(cloud)
    assert result.n_layers == 2

    labels = strat.layer_labels(result)
    tier = scan.truth["tier"].reindex(labels.index)
    canopy = tier > 0
    agree = (labels[canopy] == tier[canopy]).mean()
    assert agree >= 0.99


def test_layer_densities_fall_with_depth():
    extent = Extent(0.0, 0.0, 30.0, 30.0)
    ordered = 0
    for seed in range(30):
        stand = sim.generate_stand(extent, [10, 10, 10], seed=seed)
        cloud = sim.scan_stand(stand, sim.ScanConfig(pulse_density=8.0, attenuation=0.6, seed=seed))
        pts = cloud.points
        d = strat.stratify(cloud.with_heights(np.where(pts["is_ground"], 0.0, pts["z"]))).densities()
        ordered += bool(np.all(np.diff(d) <= 0.0))
    assert ordered >= 0.95 * 30
