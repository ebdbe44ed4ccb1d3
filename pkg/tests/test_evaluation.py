import math

import numpy as np
import pytest
from scipy import stats

from conftest import synthetic_fred_md
from kernelfactors.data_ingest import TimeSeriesPanel, balance_and_transform, load_fred_md, standardize_array
from kernelfactors.evaluation import (
    DEFAULT_GAMMA_GRID,
    EvaluationReport,
    ForecastRecord,
    MethodSpec,
    build_report,
    cross_validate_gamma,
    default_methods,
    dm_test,
    forecast_origin,
    mspe,
    relative_mspe,
    run_rolling,
)
from kernelfactors.factors import pca_factors
from kernelfactors.forecasting import forecast, select_and_fit
from kernelfactors.kernels import KernelSpec
from kernelfactors.montecarlo import make_rng

RBF = MethodSpec("kpca", KernelSpec.rbf(1.0), DEFAULT_GAMMA_GRID)
SMALL = (2, 2, 3)


def panel_from(values, names, start="2000-01"):
    dates = np.datetime64(start, "M") + np.arange(values.shape[0])
    return TimeSeriesPanel(values, dates, tuple(names))


def linear_panel(seed, T=90, N=20, r=3, h=1, noise=0.0, target_noise=0.0):
    rng = make_rng(seed)
    F = rng.standard_normal((T, r))
    X = F @ rng.standard_normal((N, r)).T + noise * rng.standard_normal((T, N))
    y = np.zeros(T)
    y[h:] = F[:-h] @ rng.standard_normal(r)
    y += target_noise * rng.standard_normal(T)
    names = [f"x{j}" for j in range(N)] + ["y"]
    return panel_from(np.column_stack([X, y]), names)


def record(date, err, method="m", target="y", h=1):
    d = np.datetime64(date, "M")
    return ForecastRecord(target, method, h, d - h, d, 0.0, float(err))


def test_method_spec_validation():
    with pytest.raises(ValueError, match="unknown method"):
        MethodSpec("ridge")
    with pytest.raises(ValueError, match="needs a kernel"):
        MethodSpec("kpca")
    with pytest.raises(ValueError, match="takes no kernel"):
        MethodSpec("pca", KernelSpec.linear())
    with pytest.raises(ValueError, match="positive"):
        MethodSpec("kpca", KernelSpec.rbf(1.0), (0.1, -1.0))
    assert MethodSpec("kpca", KernelSpec.rbf(1.0), (1.0, 0.1)).gamma_grid == (0.1, 1.0)
    assert not MethodSpec("kpca", KernelSpec.polynomial(2)).cross_validated


def test_default_methods_and_grid():
    labels = [m.label for m in default_methods()]
    assert labels == ["pca", "spc", "pc2", "kpca_poly2", "kpca_sigmoid", "kpca_rbf"]
    assert DEFAULT_GAMMA_GRID[0] == pytest.approx(1e-4)
    assert DEFAULT_GAMMA_GRID[-1] == pytest.approx(10.0)
    np.testing.assert_allclose(np.diff(np.log10(DEFAULT_GAMMA_GRID)), 0.5)


def test_cv_single_value_grid():
    p = linear_panel(0)
    m = MethodSpec("kpca", KernelSpec.rbf(1.0), (0.3,))
    assert cross_validate_gamma(p.values[:, :-1], p.values[:, -1], 1, m, SMALL).gamma == 0.3


def test_cv_ties_pick_smallest_gamma():
    rng = make_rng(1)
    X = rng.standard_normal((60, 8))
    res = cross_validate_gamma(X, np.full(60, 2.0), 1, RBF, SMALL)
    assert res.gamma == DEFAULT_GAMMA_GRID[0]
    assert not res.fallback


def test_cv_short_window_falls_back_to_midpoint():
    rng = make_rng(2)
    res = cross_validate_gamma(rng.standard_normal((12, 4)), rng.standard_normal(12), 1, RBF, SMALL)
    assert res.fallback
    assert res.gamma == DEFAULT_GAMMA_GRID[len(DEFAULT_GAMMA_GRID) // 2]


def test_cv_is_deterministic():
    p = linear_panel(3, noise=0.2, target_noise=0.1)
    X, y = p.values[:, :-1], p.values[:, -1]
    assert cross_validate_gamma(X, y, 1, RBF, SMALL) == cross_validate_gamma(X.copy(), y.copy(), 1, RBF, SMALL)


def test_cv_prefers_small_gamma_on_linear_dgp():
    lower = 0
    for seed in range(50):
        rng = make_rng(seed)
        F = rng.standard_normal((100, 2))
        X = F @ rng.standard_normal((60, 2)).T + 0.1 * rng.standard_normal((100, 60))
        y = np.zeros(100)
        y[1:] = F[:-1] @ [1.0, -0.5]
        y += 0.05 * rng.standard_normal(100)
        res = cross_validate_gamma(X, y, 1, RBF, maxima=(2, 2, 2))
        lower += DEFAULT_GAMMA_GRID.index(res.gamma) < len(DEFAULT_GAMMA_GRID) // 2 + 1
    assert lower >= 35


def test_noiseless_linear_dgp_forecasts_exactly():
    p = linear_panel(4)
    res = run_rolling(p, "y", MethodSpec("pca"), 1, window_base=60, maxima=SMALL)
    assert len(res) == 90 - 58 - 1
    assert not res.skips
    assert np.abs(res.errors()).max() <= 1e-6


def test_first_origin_and_window_length():
    p = linear_panel(5, T=125, noise=0.5, target_noise=0.5)
    audit = {}
    res = run_rolling(p, "y", MethodSpec("pca"), 1, maxima=SMALL, audit=audit)
    assert res.records[0].origin == p.dates[118]
    assert res.records[0].date == p.dates[119]
    assert res.records[-1].date == p.dates[-1]
    assert len(res) == 125 - 119
    assert all(row <= t for t, row in audit.items())
    assert max(audit) == 123


def test_full_sample_gives_604_evaluation_months(tmp_path):
    path, _, _ = synthetic_fred_md(tmp_path / "p.csv", T=736, n_other=4, missing_column=False)
    panel = balance_and_transform(load_fred_md(path), start="1960-01")
    first = panel.index_of("1970-01")
    res = run_rolling(panel, "RPI", MethodSpec("pca"), 1, maxima=(1, 1, 1), first_target=first)
    assert len(res) == 604
    assert res.records[0].date == np.datetime64("1970-01")
    assert res.records[-1].date == np.datetime64("2020-04")


def test_origin_forecast_matches_manual_pipeline_without_target():
    p = linear_panel(6, noise=0.4, target_noise=0.4)
    t, h, L = 70, 3, 50 - 3
    one = forecast_origin(p, "y", MethodSpec("pca"), h, t, window_base=50, maxima=SMALL)
    window = p.values[t - L + 1 : t + 1]
    X, y = window[:, :-1], window[:, -1]
    Z, _, _ = standardize_array(X)
    F = pca_factors(Z, 3)
    fit = select_and_fit(y, F, h, SMALL)
    assert one.forecast == pytest.approx(forecast(fit, y, F), rel=1e-12)


def test_forecast_origin_matches_rolling_record():
    p = linear_panel(7, noise=0.3, target_noise=0.3)
    res = run_rolling(p, "y", MethodSpec("pc2"), 2, window_base=50, maxima=SMALL)
    t = p.index_of(res.records[3].origin)
    one = forecast_origin(p, "y", MethodSpec("pc2"), 2, t, window_base=50, maxima=SMALL)
    assert one.forecast == res.records[3].forecast
    assert one.order == res.records[3].order
    with pytest.raises(IndexError):
        forecast_origin(p, "y", MethodSpec("pca"), 2, 10, window_base=50)


def test_linear_kernel_matches_pca_forecasts():
    p = linear_panel(8, noise=0.3, target_noise=0.3)
    lin = run_rolling(p, "y", MethodSpec("kpca", KernelSpec.linear()), 1, window_base=60, maxima=SMALL)
    pca = run_rolling(p, "y", MethodSpec("pca"), 1, window_base=60, maxima=SMALL)
    np.testing.assert_allclose([r.forecast for r in lin], [r.forecast for r in pca], rtol=1e-8, atol=1e-8)
    assert relative_mspe(lin, pca) == pytest.approx(1.0, abs=1e-8)


def test_cv_stride_reuses_gamma_between_validations():
    p = linear_panel(9, noise=0.3, target_noise=0.3)
    m = MethodSpec("kpca", KernelSpec.rbf(1.0), (0.01, 1.0, 10.0))
    res = run_rolling(p, "y", m, 1, window_base=60, maxima=SMALL, cv_stride=5)
    gammas = [r.gamma for r in res]
    for block in range(0, len(gammas), 5):
        assert len(set(gammas[block : block + 5])) == 1
    assert all(g in m.gamma_grid for g in gammas)


def test_failed_origin_is_skipped_not_fatal():
    # the only predictor is flat except for one spike: windows without the spike have
    # no usable predictors and must be skipped with a reason
    T = 90
    a = np.zeros(T)
    a[75] = 1.0
    y = make_rng(10).standard_normal(T)
    p = panel_from(np.column_stack([a, y]), ["a", "y"])
    res = run_rolling(p, "y", MethodSpec("pca"), 1, window_base=30, maxima=(1, 1, 1))
    assert len(res) + len(res.skips) == T - 28 - 1
    assert len(res.skips) == 75 - 28
    assert res.skips[0].origin == p.dates[28] and res.skips[0].reason
    assert res.records[0].origin == p.dates[75]


def test_rolling_errors():
    p = linear_panel(11, T=40)
    with pytest.raises(ValueError, match="too short"):
        run_rolling(p, "y", MethodSpec("pca"), 1)
    with pytest.raises(KeyError):
        run_rolling(p, "nope", MethodSpec("pca"), 1, window_base=20)
    with pytest.raises(ValueError):
        run_rolling(p, "y", MethodSpec("pca"), 1, window_base=20, cv_stride=0)


def test_mspe_examples():
    recs = [record(f"2000-{m:02d}", e) for m, e in zip(range(1, 5), [1, -1, 1, -1])]
    assert mspe(recs) == 1.0
    assert relative_mspe(recs, recs) == 1.0
    worse = [record(f"2000-{m:02d}", 2 * e) for m, e in zip(range(1, 5), [1, -1, 1, -1])]
    assert relative_mspe(worse, recs) == 4.0
    assert relative_mspe(recs, worse) < 1.0
    with pytest.raises(ValueError, match="no forecasts"):
        mspe([])


def test_relative_mspe_reports_first_misaligned_date():
    a = [record("2000-01", 1), record("2000-02", 1)]
    b = [record("2000-01", 1), record("2000-03", 1)]
    with pytest.raises(ValueError, match="2000-02 vs 2000-03"):
        relative_mspe(a, b)
    with pytest.raises(ValueError, match="length"):
        relative_mspe(a, b[:1])


def test_dm_equal_errors():
    e = make_rng(12).standard_normal(50)
    assert tuple(dm_test(e, e)) == (0.0, 1.0)


def test_dm_antisymmetry():
    rng = make_rng(13)
    e1, e2 = rng.standard_normal(80), 1.2 * rng.standard_normal(80)
    for h in (1, 4):
        a, b = dm_test(e1, e2, h), dm_test(e2, e1, h)
        assert a.statistic == pytest.approx(-b.statistic)
        assert a.pvalue == pytest.approx(b.pvalue)


def test_dm_h1_is_one_sample_t_statistic():
    rng = make_rng(14)
    e1, e2 = rng.standard_normal(120), rng.standard_normal(120) * 1.1
    d = e1**2 - e2**2
    t = d.mean() / math.sqrt(d.var(ddof=0) / d.size)
    res = dm_test(e1, e2, 1)
    assert abs(res.statistic - t) <= 1e-10
    assert res.pvalue == pytest.approx(2 * stats.norm.sf(abs(t)), abs=1e-12)


def test_dm_bartlett_long_run_variance():
    rng = make_rng(15)
    e1, e2 = rng.standard_normal(60), rng.standard_normal(60)
    d = e1**2 - e2**2
    dc = d - d.mean()
    n, h = d.size, 3
    lrv = dc @ dc / n + sum(2 * (1 - k / h) * (dc[k:] @ dc[:-k]) / n for k in range(1, h))
    assert dm_test(e1, e2, h).statistic == pytest.approx(d.mean() / math.sqrt(lrv / n), rel=1e-12)


def test_dm_errors():
    with pytest.raises(ValueError, match="at least 20"):
        dm_test(np.ones(10), np.zeros(10))
    with pytest.raises(ValueError, match="equal length"):
        dm_test(np.ones(30), np.ones(31))
    with pytest.raises(ValueError, match="zero variance"):
        dm_test(np.full(30, 2.0), np.ones(30))


def test_dm_size_under_null():
    rng = make_rng(16)
    rejections = sum(dm_test(rng.standard_normal(200), rng.standard_normal(200)).pvalue < 0.10 for _ in range(500))
    assert 35 <= rejections <= 65


def test_report_single_method_is_all_ones():
    recs = [record(f"2001-{m:02d}", e, method="pca") for m, e in zip(range(1, 13), range(12))]
    report = build_report(recs)
    assert [r.relative_mspe for r in report.rows] == [1.0]
    assert report.rows[0].star and not report.rows[0].bold
    assert report.comparison_cells() == []


def test_report_better_method_is_starred():
    rng = make_rng(17)
    recs = []
    for i in range(40):
        date = np.datetime64("2000-01") + i
        e = rng.standard_normal()
        recs.append(ForecastRecord("y", "pca", 1, date - 1, date, 0.0, 2.0 * e + 0.5))
        recs.append(ForecastRecord("y", "good", 1, date - 1, date, 0.0, 0.1 * e))
    report = build_report(recs)
    good = report.cell("y", 1, "good")
    assert good.star and good.relative_mspe < 1.0
    assert good.bold and good.dm_pvalue < 0.10
    assert not report.cell("y", 1, "pca").star


def test_report_requires_baseline():
    with pytest.raises(ValueError, match="baseline 'pca' missing"):
        build_report([record("2000-01", 1.0, method="spc")])


def test_report_layout_of_full_table(tmp_path):
    rng = make_rng(18)
    targets = [f"T{i}" for i in range(8)]
    horizons = [1, 3, 6, 9, 12, 18, 24]
    methods = [m.label for m in default_methods()]
    recs = [
        ForecastRecord(t, m, h, np.datetime64("2000-01") + i, np.datetime64("2000-01") + i + h, 0.0,
                       float(rng.standard_normal()))
        for t in targets for h in horizons for m in methods for i in range(25)
    ]
    report = build_report(recs)
    assert len(report.comparison_cells()) == 8 * 7 * 5 == 280
    assert report.targets == targets and report.horizons == horizons and report.methods == methods
    assert all(report.cell(t, h, "pca").relative_mspe == 1.0 for t in targets for h in horizons)
    report.to_csv(tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == ",".join(EvaluationReport.FIELDS)
    assert len(lines) == 1 + 8 * 7 * 6
    text = report.to_text()
    assert "h=24" in text and "kpca_rbf" in text
    assert text.count("\n") > 8 * 5


def test_report_intersects_dates_when_an_origin_was_skipped():
    base = [record(f"2000-{m:02d}", 1.0, method="pca") for m in range(1, 13)]
    other = [record(f"2000-{m:02d}", 0.5, method="spc") for m in range(1, 13) if m != 4]
    report = build_report(base + other)
    assert report.cell("y", 1, "spc").n_forecasts == 11
    assert report.cell("y", 1, "spc").relative_mspe == pytest.approx(0.25)
