import math

import numpy as np
import pytest
from scipy.stats import logser

from py_canopy_strata import occlusion as occ
from py_canopy_strata.errors import (
    EmptyInputError,
    InvalidArgumentError,
    SaturatedOcclusionError,
)
from py_canopy_strata.stratify import CanopyLayer, StratificationResult


def test_logseries_pmf_closed_form():
    theta = 0.266
    expected = theta / -math.log(1.0 - theta)
    assert occ.logseries_pmf(theta, 1) == pytest.approx(expected)
    assert occ.logseries_pmf(theta, 2) == pytest.approx(theta**2 / (2 * -math.log(1 - theta)))
    total = occ.logseries_pmf(0.9, np.arange(1, 201)).sum()
    assert total == pytest.approx(1.0, abs=1e-9)


def test_logseries_pmf_rejects_bad_input():
    with pytest.raises(InvalidArgumentError):
        occ.logseries_pmf(1.0, 1)
    with pytest.raises(InvalidArgumentError):
        occ.logseries_pmf(0.5, 0)


def test_fit_theta_recovers_generating_value():
    p = occ.LogSeriesModel(0.266).fractions()
    samples = [occ.FractionSample(i, p) for i in range(10)]
    model = occ.fit_theta(samples)
    assert model.theta == pytest.approx(0.266, abs=1e-5)
    assert model.fit_mse == pytest.approx(0.0, abs=1e-10)
    assert model.n_samples == 50


def test_fit_theta_needs_samples():
    with pytest.raises(EmptyInputError):
        occ.fit_theta([])


def test_fraction_sample_validation():
    with pytest.raises(InvalidArgumentError):
        occ.FractionSample("a", np.array([0.7, 0.5]))
    with pytest.raises(InvalidArgumentError):
        occ.FractionSample("a", np.array([-0.1, 0.5]))


def _result(*densities):
    layers = [
        CanopyLayer(n, np.arange(1), {}, 0.0, 1.0, d) for n, d in enumerate(densities, start=1)
    ]
    return StratificationResult(layers, np.zeros(0), len(layers))


def test_observed_fractions_are_zero_padded():
    sample = occ.observed_fractions(_result(3.0, 1.0), 5.0, plot_id="p1")
    np.testing.assert_allclose(sample.fractions, [0.6, 0.2, 0.0, 0.0, 0.0])
    assert sample.plot_id == "p1"


def test_fractions_skip_plots_without_layers():
    samples = occ.fractions_from_results([_result(2.0), _result()], [4.0, 4.0], ["a", "b"])
    assert [s.plot_id for s in samples] == ["a"]


def test_required_pcd_against_direct_evaluation():
    p = occ.LogSeriesModel(0.266).fractions()
    assert occ.required_pcd(4.0, p, 1) == 4.0
    assert occ.required_pcd(4.0, p, 2) == pytest.approx(28.61, abs=0.05)
    assert occ.required_pcd(4.0, p, 3) == pytest.approx(156.87, abs=0.5)
    assert occ.required_pcd(4.0, p, 3) == pytest.approx(4.0 / (1.0 - p[0] - p[1]))


def test_required_pcd_saturates():
    with pytest.raises(SaturatedOcclusionError):
        occ.required_pcd(4.0, [0.6, 0.4], 3)
    with pytest.raises(InvalidArgumentError):
        occ.required_pcd(4.0, [0.6], 3)


def test_required_density_table_annotates_published_values():
    table = occ.required_density_table(occ.LogSeriesModel(0.266).fractions())
    assert table["layer"].tolist() == [1, 2, 3]
    assert table["paper_reported"].tolist() == [4.0, 30.07, 169.57]
    assert table["required_pcd"].iloc[0] == 4.0


def test_eupcd():
    assert occ.eupcd(50.45, 0.8601, 0.1144) == pytest.approx(1.29, abs=0.01)
    assert occ.eupcd(10.0, 0.7, 0.3) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(InvalidArgumentError):
        occ.eupcd(10.0, 0.8, 0.3)
    np.testing.assert_allclose(occ.layer_densities(50.0, [0.8, 0.15, 0.05]), [40.0, 7.5])


def test_logseries_pmf_reference_fractions():
    p = occ.logseries_pmf(0.266, np.arange(1, 4))
    np.testing.assert_allclose(p, [0.8601, 0.1144, 0.0203], atol=5e-4)


@pytest.mark.parametrize("seed", range(30))
def test_fit_theta_under_noise(seed):
    rng = np.random.default_rng(seed)
    p = occ.LogSeriesModel(0.266).fractions()
    observed = p + rng.normal(0.0, 0.02, (23, p.size))
    assert occ.fit_theta_array(observed).theta == pytest.approx(0.266, abs=0.02)


def test_fit_theta_matches_a_dense_grid():
    rng = np.random.default_rng(4)
    observed = occ.LogSeriesModel(0.4).fractions() + rng.normal(0.0, 0.03, (12, 5))
    grid = np.linspace(0.001, 0.999, 99_801)
    pmf = logser.pmf(np.arange(1, 6)[None, :], grid[:, None])
    mse = ((observed[None, :, :] - pmf[:, None, :]) ** 2).mean(axis=(1, 2))
    model = occ.fit_theta_array(observed)
    assert model.theta == pytest.approx(grid[int(np.argmin(mse))], abs=2e-5)
    assert model.fit_mse <= mse.min() + 1e-12


def test_fit_theta_array_rejects_nan():
    with pytest.raises(InvalidArgumentError):
        occ.fit_theta_array(np.array([[0.8, np.nan]]))
    with pytest.raises(EmptyInputError):
        occ.fit_theta_array(np.zeros((0, 5)))
