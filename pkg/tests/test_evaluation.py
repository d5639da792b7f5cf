import numpy as np
import pytest

from netcurves.evaluation import (
    PerformanceReport,
    calibration_slope,
    cross_validate,
    monte_carlo_se,
    percentile_summary,
    r_squared,
    relative_rmspe,
    rmspe,
)
from netcurves.models import MeanOnlyRegressor, OptimalThresholdRegressor


def kahan_mean_of_squares(errors):
    total = 0.0
    comp = 0.0
    for e in errors:
        term = e * e - comp
        t = total + term
        comp = (t - total) - term
        total = t
    return total / len(errors)


# --- scalar measures -----------------------------------------------------------

def test_rmspe_values():
    assert rmspe([1, 2, 3], [1, 2, 3]) == 0.0
    assert rmspe([0, 0], [1, 1]) == 1.0
    assert rmspe([1, 2, 3], [1, 1, 1]) == pytest.approx(np.sqrt(5 / 3), abs=1e-12)


def test_rmspe_rejects_empty():
    with pytest.raises(ValueError):
        rmspe([], [])


def test_rmspe_squared_matches_kahan_oracle():
    rng = np.random.default_rng(0)
    y = rng.normal(size=500)
    yhat = rng.normal(size=500)
    assert rmspe(y, yhat) ** 2 == pytest.approx(
        kahan_mean_of_squares(y - yhat), abs=1e-9)


def test_r_squared_values():
    y = np.array([1.0, 2.0, 3.0])
    assert r_squared(y, y) == 1.0
    assert r_squared(y, np.full(3, 2.0)) == 0.0
    assert r_squared([0.0, 2.0], [2.0, 0.0]) == pytest.approx(-3.0)


def test_r_squared_rejects_constant_outcome():
    with pytest.raises(ValueError, match="constant"):
        r_squared([1.0, 1.0], [0.0, 2.0])


def test_calibration_slope_values():
    y = np.array([1.0, 2.0, 4.0])
    assert calibration_slope(y, y) == pytest.approx(1.0)
    assert calibration_slope(y, y / 2) == pytest.approx(2.0)
    assert np.isnan(calibration_slope(y, np.full(3, 1.5)))


def test_calibration_slope_shift_invariant():
    rng = np.random.default_rng(1)
    y = rng.normal(size=50)
    yhat = y + rng.normal(scale=0.3, size=50)
    assert calibration_slope(y + 10, yhat + 10) == pytest.approx(
        calibration_slope(y, yhat), abs=1e-12)


def test_relative_rmspe_values():
    assert np.allclose(relative_rmspe([5.0, 5.1]), [1.0, 1.02])
    assert relative_rmspe([3.3]) == pytest.approx([1.0])
    # ratio definition consistency: 5.027 over a 5.004 minimum -> 1.005
    ratios = relative_rmspe([5.027, 5.004])
    assert round(float(ratios[0]), 3) == 1.005


def test_relative_rmspe_zero_minimum():
    out = relative_rmspe([0.0, 2.0])
    assert out[0] == 1.0
    assert np.isnan(out[1])


def test_monte_carlo_se_values():
    assert monte_carlo_se([2.0, 2.0, 2.0]) == 0.0
    assert monte_carlo_se([1.0, 3.0]) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ValueError):
        monte_carlo_se([1.0])


def test_monte_carlo_se_magnitude():
    # 500 replicates with sd 1.8 give an SE of about 0.08
    rng = np.random.default_rng(2)
    base = rng.normal(size=500)
    values = (base - base.mean()) / base.std(ddof=1) * 1.8
    assert round(monte_carlo_se(values), 2) == 0.08


def test_percentile_summary_interpolates():
    lo, hi = percentile_summary(np.arange(101.0))
    assert lo == pytest.approx(2.5)
    assert hi == pytest.approx(97.5)


# --- cross-validation ------------------------------------------------------------

def curves_for(n, seed=0):
    rng = np.random.default_rng(seed)
    return rng.uniform(size=(n, 101))


def test_cv_null_rmspe_close_to_sd():
    rng = np.random.default_rng(3)
    y = rng.normal(size=200)
    X = curves_for(200, seed=4)
    report = cross_validate(MeanOnlyRegressor(), X, y, k=5, seed=0)
    assert report.rmspe == pytest.approx(np.std(y), rel=0.15)
    assert np.isnan(report.calibration_slope)


def test_cv_pooled_count_equals_n():
    y = np.random.default_rng(5).normal(size=40)
    X = curves_for(40, seed=6)
    report = cross_validate(MeanOnlyRegressor(), X, y, k=5, repeats=3, seed=1)
    assert report.n_eval == 3 * 40
    assert report.n_failed_folds == 0


def test_cv_leave_one_out_deterministic():
    y = np.random.default_rng(7).normal(size=12)
    X = curves_for(12, seed=8)
    r1 = cross_validate(MeanOnlyRegressor(), X, y, k=12, seed=2)
    r2 = cross_validate(MeanOnlyRegressor(), X, y, k=12, seed=99)
    # leave-one-out has a unique partition; the seed cannot matter
    assert r1.rmspe == r2.rmspe


def test_cv_repeat_calls_identical():
    rng = np.random.default_rng(9)
    y = rng.normal(size=30)
    X = curves_for(30, seed=10)
    model = OptimalThresholdRegressor(thresholds=[0.1, 0.2, 0.3], random_state=0)
    r1 = cross_validate(model, X, y, k=5, repeats=2, seed=3)
    r2 = cross_validate(model, X, y, k=5, repeats=2, seed=3)
    assert r1 == r2


def test_cv_records_fold_failures():
    class Exploding(MeanOnlyRegressor):
        def fit(self, X, y, subject_ids=None):
            if len(y) and y[0] > 0:
                raise RuntimeError("boom")
            return super().fit(X, y)

    y = np.full(20, -1.0)
    y[0] = 5.0  # whichever training fold holds subject 0 explodes
    y[1] = 4.0
    X = curves_for(20, seed=11)
    with pytest.warns(UserWarning, match="failed"):
        report = cross_validate(Exploding(), X, y, k=4, seed=4)
    assert report.n_failed_folds >= 1
    assert report.n_eval < 20


def test_cv_validates_k():
    y = np.arange(5.0)
    X = curves_for(5, seed=12)
    with pytest.raises(ValueError):
        cross_validate(MeanOnlyRegressor(), X, y, k=1)
    with pytest.raises(ValueError):
        cross_validate(MeanOnlyRegressor(), X, y, k=6)


def test_report_measures_dict():
    report = PerformanceReport(method="null", rmspe=1.0, r2=0.5,
                               calibration_slope=float("nan"), n_eval=10,
                               k=5, repeats=1)
    m = report.measures()
    assert set(m) == {"rmspe", "r2", "calibration_slope"}
