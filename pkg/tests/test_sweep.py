import json

import numpy as np
import pandas as pd
import pytest

from py_canopy_strata import sweep
from py_canopy_strata.core import point_density
from py_canopy_strata.errors import EmptyInputError, InvalidArgumentError
from py_canopy_strata.occlusion import LogSeriesModel
from py_canopy_strata.report import render_table, report, summary_document
from py_canopy_strata.simulate import ScanConfig


@pytest.fixture(scope="module")
def plots():
    return sweep.synthetic_plots(
        2, seed=1, tier_counts=(4, 4, 4), scan=ScanConfig(pulse_density=8.0)
    )


def _table(rows):
    base = {"repetition": 0, "plot_id": "p", "achieved_pcd": 1.0, "mt": 1, "oe": 0, "ce": 0}
    return pd.DataFrame(
        [{**base, "target_pcd": t, "class": c, "recall": f, "precision": f, "f_score": f} for t, c, f in rows],
        columns=sweep.RESULT_COLUMNS,
    )


def test_sweep_config_validation():
    with pytest.raises(InvalidArgumentError):
        sweep.SweepConfig(pcd_targets=(4.0, 2.0))
    with pytest.raises(InvalidArgumentError):
        sweep.SweepConfig(pcd_targets=())
    with pytest.raises(InvalidArgumentError):
        sweep.SweepConfig(repetitions=0)


def test_synthetic_plots(plots):
    assert [p.plot_id for p in plots] == ["synthetic-000", "synthetic-001"]
    for p in plots:
        assert p.cloud.has_heights
        assert all(p.geometry.in_plot([(s.x, s.y)])[0] for s in p.stems)
        assert p.geometry.center == (20.0, 20.0)


def test_density_sweep_is_reproducible(plots, tmp_path):
    cfg = sweep.SweepConfig(pcd_targets=(2.0, 100.0), repetitions=2, seed=7)
    a = sweep.density_sweep(plots, cfg, workers=1, progress=False)
    b = sweep.density_sweep(plots, cfg, workers=1, progress=False)
    pd.testing.assert_frame_equal(a, b)
    first = report(a, tmp_path / "a", ["csv"])
    second = report(b, tmp_path / "b", ["csv"])
    assert [p.read_bytes() for p in first] == [p.read_bytes() for p in second]

    assert list(a.columns) == sweep.RESULT_COLUMNS
    assert a.attrs["failures"] == []
    overall = a[a["class"] == "all"]
    assert len(overall) == 2 * 2 * 2
    assert a["target_pcd"].is_monotonic_increasing


def test_dense_targets_use_the_source_cloud(plots):
    cfg = sweep.SweepConfig(pcd_targets=(2.0, 100.0), repetitions=1, class_split=False)
    table = sweep.density_sweep(plots, cfg, workers=1, progress=False).set_index(
        ["target_pcd", "plot_id"]
    )
    for p in plots:
        source = point_density(p.cloud)
        assert table.loc[(100.0, p.plot_id), "achieved_pcd"] == pytest.approx(source)
        assert table.loc[(2.0, p.plot_id), "achieved_pcd"] < source
    assert set(table["class"]) == {"all"}


def test_density_sweep_needs_plots():
    with pytest.raises(EmptyInputError):
        sweep.density_sweep([], progress=False)


def test_summarize_and_plateau():
    table = _table(
        [
            (1.0, "overstory", 0.4),
            (1.0, "overstory", 0.6),
            (2.0, "overstory", 0.7),
            (4.0, "overstory", 0.78),
            (8.0, "overstory", 0.8),
            (8.0, "all", 0.9),
        ]
    )
    summary = sweep.summarize_sweep(table)
    first = summary[(summary["target_pcd"] == 1.0) & (summary["class"] == "overstory")].iloc[0]
    assert first["f_score_mean"] == pytest.approx(0.5)
    assert first["f_score_sd"] == pytest.approx(0.1)
    assert first["n"] == 2

    assert sweep.plateau_pcd(summary, tolerance=0.05) == 4.0
    assert sweep.plateau_pcd(summary, stem_class="understory") is None


def test_fit_site(plots):
    model, source = sweep.fit_site(plots)
    assert 0.0 < model.theta < 1.0
    assert source == pytest.approx(np.mean([point_density(p.cloud) for p in plots]))


def test_report_files(tmp_path):
    table = _table([(1.0, "overstory", 0.5), (2.0, "overstory", 0.8)])
    written = report(table, tmp_path, model=LogSeriesModel(0.266), source_pcd=50.45)
    assert [p.name for p in written] == ["sweep_summary.csv", "sweep_jobs.csv", "sweep_summary.json"]

    doc = json.loads((tmp_path / "sweep_summary.json").read_text())
    assert doc["targets"] == [1.0, 2.0]
    assert doc["required_pcd"][1]["required_pcd"] == pytest.approx(28.61, abs=0.05)
    assert doc["required_pcd"][1]["paper_reported"] == 30.07
    assert doc["eupcd"]["eupcd"] == pytest.approx(1.29, abs=0.01)
    assert doc["paper_reported"]["theta"] == 0.266

    summary = pd.read_csv(tmp_path / "sweep_summary.csv")
    assert summary["f_score_mean"].tolist() == pytest.approx([0.5, 0.8])


def test_report_rejects_empty_and_unknown(tmp_path):
    with pytest.raises(EmptyInputError):
        report(_table([]), tmp_path)
    with pytest.raises(InvalidArgumentError):
        report(_table([(1.0, "all", 0.5)]), tmp_path, formats=["pdf"])


def test_summary_document_without_model():
    summary = sweep.summarize_sweep(_table([(1.0, "all", 0.5)]))
    doc = summary_document(summary)
    assert doc["model"] is None
    assert doc["plateau_pcd"] is None
    assert "f_score_mean" in render_table(summary)


def test_failed_jobs_are_recorded_not_raised(monkeypatch, plots):
    run = sweep._run_job

    def flaky(plot, target, rep, seed, cfg):
        if plot.plot_id == "synthetic-001":
            raise RuntimeError("worker lost")
        return run(plot, target, rep, seed, cfg)

    monkeypatch.setattr(sweep, "_run_job", flaky)
    cfg = sweep.SweepConfig(pcd_targets=(2.0, 100.0), repetitions=1, class_split=False)
    table = sweep.density_sweep(plots, cfg, workers=1, progress=False)

    assert set(table["plot_id"]) == {"synthetic-000"}
    failures = table.attrs["failures"]
    assert [f["target_pcd"] for f in failures] == [2.0, 100.0]
    assert all(f["error"] == "RuntimeError: worker lost" for f in failures)


def test_sweep_shape_on_synthetic_stands():
    stands = sweep.synthetic_plots(8, seed=2, scan=ScanConfig(attenuation=0.6))
    cfg = sweep.SweepConfig(pcd_targets=(1.0, 4.0, 10.0, 50.0), repetitions=2, seed=2)
    summary = sweep.summarize_sweep(sweep.density_sweep(stands, cfg, workers=1, progress=False))
    over = summary[summary["class"] == "overstory"].set_index("target_pcd")
    under = summary[summary["class"] == "understory"].set_index("target_pcd")

    f = over["f_score_mean"]
    assert abs(f[10.0] - f[50.0]) <= 0.05
    assert f[1.0] < f[4.0]
    assert under.loc[50.0, "recall_mean"] <= over.loc[50.0, "recall_mean"] - 0.10
