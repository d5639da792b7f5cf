import numpy as np
import pytest
from sklearn.base import clone

from netcurves.grid import default_grid, make_grid
from netcurves.models import (
    AverageFeatureRegressor,
    FixedWeightRegressor,
    FlexWeightRegressor,
    MeanOnlyRegressor,
    OptimalThresholdRegressor,
    fold_assignment,
    make_model,
    standardized_weight,
)
from netcurves.simulation import synth_correlation
from netcurves.splines import RankDeficientError, build_basis
from netcurves.graphs import feature_curves, from_correlation


GRID = default_grid()


def synth_curves(n, p=20, seed=0):
    rng = np.random.default_rng(seed)
    mats = [from_correlation(synth_correlation(p, 3, 1.0, rng)) for _ in range(n)]
    return feature_curves(mats, "cc", "weight", GRID)


def flat_outcome(curves, level=4.0, intercept=2.0):
    return intercept + level * curves.sum(axis=1)


# --- design construction ------------------------------------------------------

def test_basis_weighted_sums_partition_of_unity():
    # constant curve c: the basis-weighted sums add up to c * |grid|
    c = 0.7
    curves = np.full((3, GRID.size), c)
    B = build_basis(GRID, segments=25, degree=3)
    Z = curves @ B
    assert np.allclose(Z.sum(axis=1), c * GRID.size, atol=1e-8)
    assert np.all((np.zeros((2, GRID.size)) @ B) == 0.0)


def test_basis_weighted_sums_halves():
    # degree-0 basis with 2 segments sums the curve over each half-grid
    rng = np.random.default_rng(1)
    curves = rng.uniform(size=(3, GRID.size))
    B = build_basis(GRID, segments=2, degree=0)
    Z = curves @ B
    first = GRID < 0.5
    assert np.allclose(Z[:, 0], curves[:, first].sum(axis=1))
    assert np.allclose(Z[:, 1], curves[:, ~first].sum(axis=1))


# --- flexible model -----------------------------------------------------------

def test_flex_recovers_flat_weight():
    curves = synth_curves(80)
    y = flat_outcome(curves)
    model = FlexWeightRegressor().fit(curves, y)
    w = model.weight_curve_.values
    assert np.abs(w - 4.0).max() <= 0.1
    assert model.weight_curve_.lower is not None
    assert np.all(model.weight_curve_.lower <= w + 1e-12)
    assert np.all(w <= model.weight_curve_.upper + 1e-12)


def test_flex_recovers_arc_shape():
    curves = synth_curves(150, seed=2)
    true_w = 6.0 * np.sin(np.pi * GRID)
    y = 1.0 + curves @ true_w
    model = FlexWeightRegressor().fit(curves, y)
    w = model.weight_curve_.values
    assert np.corrcoef(w, true_w)[0, 1] >= 0.99


def test_flex_rejects_zero_curves():
    curves = np.zeros((20, GRID.size))
    y = np.random.default_rng(3).normal(size=20)
    with pytest.raises(RankDeficientError):
        FlexWeightRegressor().fit(curves, y)


def test_flex_needs_three_subjects():
    curves = synth_curves(2)
    with pytest.raises(ValueError, match="3 subjects"):
        FlexWeightRegressor().fit(curves, [1.0, 2.0])


def test_flex_warns_when_underdetermined():
    curves = synth_curves(10)
    y = flat_outcome(curves)
    with pytest.warns(UserWarning, match="basis functions"):
        FlexWeightRegressor().fit(curves, y)


def test_flex_in_sample_prediction_consistency():
    curves = synth_curves(40, seed=4)
    rng = np.random.default_rng(5)
    y = flat_outcome(curves) + rng.normal(size=40)
    model = FlexWeightRegressor().fit(curves, y)
    design = np.column_stack([np.ones(40), curves @ model._basis_matrix_])
    fitted = design @ np.concatenate([[model.intercept_], model.gamma_])
    assert np.allclose(model.predict(curves), fitted, atol=1e-10)


def test_flex_zero_at_origin_flag():
    curves = synth_curves(60, seed=6)
    y = flat_outcome(curves)
    model = FlexWeightRegressor(zero_at_origin=True).fit(curves, y)
    assert model.evaluate_weight(0.0)[0] == pytest.approx(0.0, abs=1e-12)


def test_flex_unit_basis_equals_ols_on_sum():
    # degree-0 single-segment basis collapses to OLS on the curve sum
    curves = synth_curves(30, seed=7)
    rng = np.random.default_rng(8)
    y = 1.0 + 0.05 * curves.sum(axis=1) + rng.normal(size=30)
    model = FlexWeightRegressor(segments=1, degree=0, lambdas=[0.0]).fit(curves, y)
    s = curves.sum(axis=1)
    slope, intercept = np.polyfit(s, y, 1)
    assert model.intercept_ == pytest.approx(intercept, abs=1e-8)
    assert model.gamma_[0] == pytest.approx(slope, abs=1e-8)


# --- optimal threshold ---------------------------------------------------------

def test_opt_recovers_universal_threshold():
    curves = synth_curves(60, seed=9)
    y = curves[:, 25].copy()  # x(0.25), zero noise
    model = OptimalThresholdRegressor(random_state=0).fit(curves, y)
    assert model.threshold_ == pytest.approx(0.25)


def test_opt_single_candidate_skips_cv():
    curves = synth_curves(12, seed=10)
    y = np.random.default_rng(11).normal(size=12)
    model = OptimalThresholdRegressor(thresholds=[0.3]).fit(curves, y)
    assert model.threshold_ == pytest.approx(0.3)


def test_opt_pure_noise_stays_in_subset():
    curves = synth_curves(40, seed=12)
    y = np.random.default_rng(13).normal(size=40)
    model = OptimalThresholdRegressor(random_state=1).fit(curves, y)
    assert 0.0 <= model.threshold_ <= 0.75


def test_opt_skips_constant_candidates():
    curves = synth_curves(30, seed=14)
    curves[:, 10] = 0.5  # constant at t = 0.10
    y = curves[:, 25].copy()
    with pytest.warns(UserWarning, match="constant"):
        model = OptimalThresholdRegressor(random_state=2).fit(curves, y)
    assert 0.1 not in model.subset_


def test_opt_all_constant_raises():
    curves = np.tile(np.linspace(1, 0, GRID.size), (20, 1))
    y = np.random.default_rng(15).normal(size=20)
    with pytest.warns(UserWarning):
        with pytest.raises(ValueError, match="no usable candidate"):
            OptimalThresholdRegressor().fit(curves, y)


def test_opt_predict_hand_oracle():
    # 2 covariates, hand-checkable linear predictor
    curves = synth_curves(25, seed=16)
    rng = np.random.default_rng(17)
    covs = rng.normal(size=(25, 2))
    y = 1.5 + 2.0 * curves[:, 30] + covs @ [0.5, -1.0]
    X = np.hstack([curves, covs])
    model = OptimalThresholdRegressor(random_state=3).fit(X, y)
    assert model.threshold_ == pytest.approx(0.30)
    record = X[3]
    expect = (model.intercept_
              + model.feature_effect_ * curves[3, model._threshold_idx_]
              + covs[3] @ model.covariate_effects_)
    assert model.predict(record[None, :])[0] == pytest.approx(expect, abs=1e-10)
    assert model.predict(record[None, :])[0] == pytest.approx(y[3], abs=1e-8)


def test_opt_mse_and_rmspe_agree_on_argmin():
    # monotone loss transforms cannot change the selected threshold
    curves = synth_curves(50, seed=18)
    rng = np.random.default_rng(19)
    y = curves[:, 40] + rng.normal(scale=0.01, size=50)
    thresholds = GRID[10:60:5]
    model = OptimalThresholdRegressor(thresholds=thresholds, random_state=4)
    model.fit(curves, y)
    folds = fold_assignment(50, 5, 4)
    best_t, best_mse = None, np.inf
    for t in np.sort(thresholds):
        idx = int(round(t * 100))
        pred = np.empty(50)
        design = np.column_stack([np.ones(50), curves[:, idx]])
        for f in range(5):
            test = folds == f
            coef, *_ = np.linalg.lstsq(design[~test], y[~test], rcond=None)
            pred[test] = design[test] @ coef
        mse = np.mean((y - pred) ** 2)
        if mse < best_mse:
            best_mse, best_t = mse, t
    assert model.threshold_ == pytest.approx(best_t)


def test_opt_permutation_invariant_with_ids():
    curves = synth_curves(40, seed=20)
    rng = np.random.default_rng(21)
    y = curves[:, 20] + rng.normal(scale=0.3, size=40)
    ids = [f"s{i:03d}" for i in range(40)]
    m1 = OptimalThresholdRegressor(random_state=5)
    m1.fit(curves, y, subject_ids=ids)
    perm = rng.permutation(40)
    m2 = OptimalThresholdRegressor(random_state=5)
    m2.fit(curves[perm], y[perm], subject_ids=[ids[i] for i in perm])
    assert m1.threshold_ == m2.threshold_
    assert m1.intercept_ == pytest.approx(m2.intercept_, abs=1e-10)
    assert m1.feature_effect_ == pytest.approx(m2.feature_effect_, abs=1e-10)


# --- averaged feature -----------------------------------------------------------

def test_avg_default_band_weights():
    curves = synth_curves(30, seed=22)
    y = np.random.default_rng(23).normal(size=30)
    model = AverageFeatureRegressor().fit(curves, y)
    assert model.subset_.size == 31
    w = model.weight_curve_.values
    inside = (GRID >= 0.1 - 1e-9) & (GRID <= 0.4 + 1e-9)
    assert np.allclose(w[inside], 1 / 31)
    assert np.all(w[~inside] == 0.0)


def test_avg_constant_curves_equals_scalar_ols():
    rng = np.random.default_rng(24)
    c = rng.uniform(size=20)
    curves = np.tile(c[:, None], (1, GRID.size))
    y = 3.0 + 2.0 * c + rng.normal(scale=0.1, size=20)
    model = AverageFeatureRegressor().fit(curves, y)
    slope, intercept = np.polyfit(c, y, 1)
    assert model.intercept_ == pytest.approx(intercept, abs=1e-8)
    assert model.feature_effect_ == pytest.approx(slope, abs=1e-8)


def test_avg_zero_variance_rejected():
    curves = np.ones((15, GRID.size))
    y = np.random.default_rng(25).normal(size=15)
    with pytest.raises(RankDeficientError):
        AverageFeatureRegressor().fit(curves, y)


# --- mean-only -------------------------------------------------------------------

def test_null_predicts_training_mean():
    curves = synth_curves(3, seed=26)
    model = MeanOnlyRegressor().fit(curves, [1.0, 2.0, 3.0])
    assert np.allclose(model.predict(curves), 2.0)
    other = synth_curves(5, seed=27)
    assert np.allclose(model.predict(other), 2.0)


def test_null_single_record():
    curves = synth_curves(1, seed=28)
    model = MeanOnlyRegressor().fit(curves, [7.5])
    assert model.predict(curves)[0] == 7.5


# --- fixed weight (oracle) --------------------------------------------------------

def test_oracle_matching_mechanism_r2_one():
    curves = synth_curves(50, seed=29)
    w = 6.0 * np.sin(np.pi * GRID)
    y = 0.5 + curves @ w
    model = FixedWeightRegressor(weights=w).fit(curves, y)
    pred = model.predict(curves)
    ss_res = np.sum((y - pred) ** 2)
    ss_tot = np.sum((y - y.mean()) ** 2)
    assert 1 - ss_res / ss_tot == pytest.approx(1.0, abs=1e-8)


def test_oracle_zero_weight_rejected():
    curves = synth_curves(20, seed=30)
    y = np.random.default_rng(31).normal(size=20)
    with pytest.raises(RankDeficientError):
        FixedWeightRegressor(weights=np.zeros(GRID.size)).fit(curves, y)


def test_oracle_with_avg_weights_equals_avg_fit():
    curves = synth_curves(35, seed=32)
    rng = np.random.default_rng(33)
    y = 2.0 + 5.0 * curves[:, 20] + rng.normal(size=35)
    avg = AverageFeatureRegressor().fit(curves, y)
    oracle = FixedWeightRegressor(weights=avg.weight_curve_.values).fit(curves, y)
    assert oracle.intercept_ == pytest.approx(avg.intercept_, abs=1e-10)
    assert oracle.feature_effect_ == pytest.approx(avg.feature_effect_, abs=1e-10)


# --- shared behaviour ---------------------------------------------------------------

@pytest.mark.parametrize("method,kwargs", [
    ("flex", {}),
    ("opt", {"random_state": 6}),
    ("avg", {}),
    ("null", {}),
    ("oracle", {"weights": np.full(GRID.size, 1.0)}),
])
def test_affine_outcome_equivariance(method, kwargs):
    curves = synth_curves(40, seed=34)
    rng = np.random.default_rng(35)
    y = curves[:, 30] + rng.normal(scale=0.2, size=40)
    a, b = -2.5, 7.0
    m1 = make_model(method, **kwargs).fit(curves, y)
    m2 = make_model(method, **kwargs).fit(curves, a * y + b)
    assert np.allclose(a * m1.predict(curves) + b, m2.predict(curves),
                       atol=1e-8)


def test_models_are_cloneable():
    model = OptimalThresholdRegressor(thresholds=[0.1, 0.2], cv=3, random_state=7)
    cloned = clone(model)
    assert cloned.get_params() == model.get_params()


def test_predict_rejects_width_mismatch():
    curves = synth_curves(10, seed=36)
    model = MeanOnlyRegressor().fit(curves, np.arange(10.0))
    with pytest.raises(ValueError, match="columns"):
        model.predict(np.hstack([curves, np.ones((10, 2))]))


def test_fit_serialization_roundtrip_fields():
    curves = synth_curves(40, seed=37)
    y = flat_outcome(curves)
    model = FlexWeightRegressor().fit(curves, y)
    doc = model.to_dict()
    assert doc["method"] == "flex"
    assert doc["basis"] == {"segments": 25, "degree": 3}
    assert len(doc["gamma"]) == 28
    assert len(doc["weight"]["values"]) == GRID.size
    assert "lower" in doc["weight"]

    opt = OptimalThresholdRegressor(random_state=8).fit(curves, y)
    doc = opt.to_dict()
    assert doc["method"] == "opt"
    assert "selected_threshold" in doc and "subset" in doc


# --- standardized weights --------------------------------------------------------

def test_standardized_weight_unit_sd():
    rng = np.random.default_rng(38)
    grid = make_grid(0.25)  # 5 points
    base = rng.normal(size=(41, grid.size))
    curves = (base - base.mean(0)) / base.std(0, ddof=1)  # sd exactly ~1
    y = 1.0 + curves.sum(axis=1) + rng.normal(scale=0.1, size=41)
    model = FlexWeightRegressor(grid=grid, segments=2, degree=1).fit(curves, y)
    std = standardized_weight(model)
    assert np.allclose(std.values, model.weight_curve_.values, rtol=1e-10)
    assert not std.zero_variance.any()


def test_standardized_weight_zero_sd_flagged():
    curves = synth_curves(30, seed=39)
    y = flat_outcome(curves)
    model = FlexWeightRegressor().fit(curves, y)
    frozen = curves.copy()
    frozen[:, 10] = 0.42  # zero variance at one threshold
    std = standardized_weight(model, frozen)
    assert std.zero_variance[10]
    assert std.values[10] == 0.0


def test_standardized_weight_hand_product():
    grid = np.array([0.0, 1.0])
    devs2 = np.array([-2.0, -2.0, 0.0, 2.0, 2.0])      # sd exactly 2
    devs05 = np.array([0.5, -0.5, 0.5, -0.5, 0.0])     # sd exactly 0.5
    curves = np.column_stack([1.0 + devs2, 2.0 + devs05])
    y = np.array([0.3, 1.0, 2.0, 2.5, 4.2])
    model = FlexWeightRegressor(grid=grid, segments=1, degree=1,
                                lambdas=[0.0]).fit(curves, y)
    std = standardized_weight(model, curves)
    w = model.weight_curve_.values
    assert std.values[0] == pytest.approx(w[0] * 2.0, rel=1e-12)
    assert std.values[1] == pytest.approx(w[1] * 0.5, rel=1e-12)


def test_standardized_weight_flex_only():
    curves = synth_curves(10, seed=40)
    model = MeanOnlyRegressor().fit(curves, np.arange(10.0))
    with pytest.raises(ValueError, match="flexible"):
        standardized_weight(model)
