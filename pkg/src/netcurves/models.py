"""Outcome models over threshold-indexed feature curves.

Five parametrizations of the weight each threshold receives in the linear
predictor  y = b0 + b1 * sum_t w(t) x(t) + z'b:

- ``flex``   penalized-spline weight curve (:class:`FlexWeightRegressor`)
- ``opt``    indicator at one threshold picked by inner CV
  (:class:`OptimalThresholdRegressor`)
- ``avg``    uniform weights over a threshold band
  (:class:`AverageFeatureRegressor`)
- ``null``   intercept only (:class:`MeanOnlyRegressor`)
- ``oracle`` a known, user-supplied weight curve
  (:class:`FixedWeightRegressor`)

All estimators take ``X = [curves | covariates]`` with the first
``len(grid)`` columns holding the feature curve, follow the sklearn
``fit``/``predict``/``get_params`` protocol, and compose with the wider
ecosystem (``sklearn.base.clone``, CV splitters, pipelines).
"""

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .data import split_design
from .grid import check_grid, default_grid, default_subset, grid_index
from .splines import (
    RankDeficientError,
    SplineBasis,
    _check_rank,
    default_lambda_grid,
    difference_penalty,
    select_lambda_gcv,
)


@dataclass
class WeightCurve:
    """A threshold-weight function sampled on the grid, with optional band."""

    grid: np.ndarray
    values: np.ndarray
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None

    def to_dict(self):
        out = {"grid": self.grid.tolist(), "values": self.values.tolist()}
        if self.lower is not None:
            out["lower"] = self.lower.tolist()
            out["upper"] = self.upper.tolist()
        return out


@dataclass
class StandardizedWeightCurve:
    """Weight curve rescaled by the per-threshold feature standard deviation."""

    grid: np.ndarray
    values: np.ndarray
    lower: np.ndarray | None
    upper: np.ndarray | None
    zero_variance: np.ndarray  # mask of thresholds with sd(x(t)) == 0


def _ols(design, y, context):
    """Least squares with an explicit rank check naming offending columns."""
    try:
        _check_rank(design, 0.0)
    except RankDeficientError as err:
        raise RankDeficientError(
            f"{context}: {err}", columns=err.columns) from None
    coef, *_ = scipy.linalg.lstsq(design, y)
    return coef


def fold_assignment(n, k, seed=None, subject_ids=None):
    """Deterministic fold labels for n subjects.

    When ``subject_ids`` are given the assignment is defined on the sorted
    ids, so permuting subject order (with the same seed) leaves every
    subject's fold unchanged.
    """
    if not 2 <= k <= n:
        raise ValueError(f"need 2 <= folds <= n, got k={k}, n={n}")
    if subject_ids is not None:
        if len(subject_ids) != n:
            raise ValueError("subject_ids length does not match data")
        order = np.argsort(np.asarray(subject_ids, dtype=object))
    else:
        order = np.arange(n)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    sizes = np.full(k, n // k)
    sizes[: n % k] += 1
    labels = np.repeat(np.arange(k), sizes)
    folds = np.empty(n, dtype=int)
    folds[order[perm]] = labels
    return folds


class _CurveRegressor(RegressorMixin, BaseEstimator):
    """Shared input plumbing for the curve-based outcome models."""

    method = None

    def _grid(self):
        return default_grid() if self.grid is None else check_grid(self.grid)

    def _validate(self, X, y=None):
        grid = self._grid()
        curves, covariates = split_design(X, grid)
        if not np.isfinite(curves).all() or not np.isfinite(covariates).all():
            raise ValueError("model inputs contain non-finite values")
        if y is None:
            return grid, curves, covariates
        y = np.asarray(y, dtype=float).ravel()
        if y.size != curves.shape[0]:
            raise ValueError("outcome length does not match subject count")
        if not np.isfinite(y).all():
            raise ValueError("outcomes contain non-finite values")
        return grid, curves, covariates, y

    def _check_predict_input(self, X):
        check_is_fitted(self, "intercept_")
        grid, curves, covariates = self._validate(X)
        width = curves.shape[1] + covariates.shape[1]
        if width != self.n_features_in_:
            raise ValueError(
                f"expected {self.n_features_in_} input columns "
                f"(grid + covariates), got {width}"
            )
        return curves, covariates

    def _linear_predict(self, summary, covariates):
        pred = self.intercept_ + self.feature_effect_ * summary
        if covariates.shape[1]:
            pred = pred + covariates @ self.covariate_effects_
        return pred

    def _base_dict(self):
        return {
            "method": self.method,
            "intercept": float(self.intercept_),
            "covariate_effects": np.asarray(self.covariate_effects_).tolist(),
            "weight": self.weight_curve_.to_dict(),
        }


class MeanOnlyRegressor(_CurveRegressor):
    """Intercept-only benchmark: predicts the training outcome mean."""

    method = "null"

    def __init__(self, grid=None):
        self.grid = grid

    def fit(self, X, y, subject_ids=None):
        grid, curves, covariates, y = self._validate(X, y)
        self.n_features_in_ = curves.shape[1] + covariates.shape[1]
        self.intercept_ = float(np.mean(y))
        self.feature_effect_ = 0.0
        self.covariate_effects_ = np.zeros(covariates.shape[1])
        self.weight_curve_ = WeightCurve(grid, np.zeros(grid.size))
        return self

    def predict(self, X):
        curves, covariates = self._check_predict_input(X)
        return np.full(curves.shape[0], self.intercept_)

    def to_dict(self):
        check_is_fitted(self, "intercept_")
        return self._base_dict()


class AverageFeatureRegressor(_CurveRegressor):
    """Uniform threshold weights over a band: regress y on the band mean.

    ``thresholds`` is the band (defaults to the standard range for the
    chosen strategy); the weight is 1/|band| inside and 0 outside.
    """

    method = "avg"

    def __init__(self, grid=None, thresholds=None, strategy="weight"):
        self.grid = grid
        self.thresholds = thresholds
        self.strategy = strategy

    def _subset_indices(self, grid):
        subset = (default_subset("avg", self.strategy, grid)
                  if self.thresholds is None
                  else np.asarray(self.thresholds, dtype=float))
        if subset.size == 0:
            raise ValueError("threshold subset is empty")
        return np.array([grid_index(grid, t) for t in subset]), subset

    def fit(self, X, y, subject_ids=None):
        grid, curves, covariates, y = self._validate(X, y)
        idx, subset = self._subset_indices(grid)
        summary = curves[:, idx].mean(axis=1)
        design = np.column_stack([np.ones(y.size), summary, covariates])
        coef = _ols(design, y, "averaged-feature fit")
        self.n_features_in_ = curves.shape[1] + covariates.shape[1]
        self.subset_ = subset
        self._subset_idx_ = idx
        self.intercept_ = float(coef[0])
        self.feature_effect_ = float(coef[1])
        self.covariate_effects_ = coef[2:]
        weights = np.zeros(grid.size)
        weights[idx] = 1.0 / idx.size
        self.weight_curve_ = WeightCurve(grid, weights)
        return self

    def predict(self, X):
        curves, covariates = self._check_predict_input(X)
        return self._linear_predict(curves[:, self._subset_idx_].mean(axis=1),
                                    covariates)

    def to_dict(self):
        check_is_fitted(self, "intercept_")
        out = self._base_dict()
        out["feature_effect"] = self.feature_effect_
        out["subset"] = self.subset_.tolist()
        return out


class FixedWeightRegressor(_CurveRegressor):
    """Regress y on a known weight curve's feature sum (upper benchmark).

    ``weights`` is either a vector on the grid or a callable evaluated at
    every grid point.
    """

    method = "oracle"

    def __init__(self, weights=None, grid=None):
        self.weights = weights
        self.grid = grid

    def _weight_values(self, grid):
        if self.weights is None:
            raise ValueError("FixedWeightRegressor requires a weight curve")
        if callable(self.weights):
            values = np.asarray([self.weights(t) for t in grid], dtype=float)
        else:
            values = np.asarray(self.weights, dtype=float).ravel()
        if values.size != grid.size:
            raise ValueError("weight curve length does not match the grid")
        return values

    def fit(self, X, y, subject_ids=None):
        grid, curves, covariates, y = self._validate(X, y)
        values = self._weight_values(grid)
        summary = curves @ values
        design = np.column_stack([np.ones(y.size), summary, covariates])
        coef = _ols(design, y, "fixed-weight fit")
        self.n_features_in_ = curves.shape[1] + covariates.shape[1]
        self.intercept_ = float(coef[0])
        self.feature_effect_ = float(coef[1])
        self.covariate_effects_ = coef[2:]
        self.weight_curve_ = WeightCurve(grid, values)
        return self

    def predict(self, X):
        curves, covariates = self._check_predict_input(X)
        return self._linear_predict(curves @ self.weight_curve_.values,
                                    covariates)

    def to_dict(self):
        check_is_fitted(self, "intercept_")
        out = self._base_dict()
        out["feature_effect"] = self.feature_effect_
        return out


class OptimalThresholdRegressor(_CurveRegressor):
    """Pick the single threshold minimising inner-CV prediction error.

    For every candidate t the model y ~ 1 + x(t) + z is scored by
    k-fold-pooled RMSPE with one shared fold assignment; the winner (ties go
    to the smaller t) is refit on all data.
    """

    method = "opt"

    def __init__(self, grid=None, thresholds=None, strategy="weight", cv=5,
                 random_state=None):
        self.grid = grid
        self.thresholds = thresholds
        self.strategy = strategy
        self.cv = cv
        self.random_state = random_state

    def fit(self, X, y, subject_ids=None):
        grid, curves, covariates, y = self._validate(X, y)
        subset = (default_subset("opt", self.strategy, grid)
                  if self.thresholds is None
                  else np.asarray(self.thresholds, dtype=float))
        if subset.size == 0:
            raise ValueError("threshold subset is empty")
        order = np.argsort(subset)
        candidates = [(float(subset[i]), grid_index(grid, subset[i]))
                      for i in order]

        usable = []
        for t, idx in candidates:
            x_t = curves[:, idx]
            if np.all(x_t == x_t[0]):
                warnings.warn(
                    f"threshold {t:g} skipped: feature is constant across "
                    "subjects", stacklevel=2)
                continue
            usable.append((t, idx))
        if not usable:
            raise ValueError("no usable candidate thresholds: all features "
                             "are constant across subjects")

        if len(usable) == 1:
            best_t, best_idx = usable[0]
        else:
            n = y.size
            if n < self.cv:
                raise ValueError(f"need at least cv={self.cv} subjects, got {n}")
            folds = fold_assignment(n, self.cv, self.random_state, subject_ids)
            # pooled squared errors accumulated in a permutation-stable order
            stable = (np.argsort(np.asarray(subject_ids, dtype=object))
                      if subject_ids is not None else np.arange(n))
            best_t = best_idx = None
            best_rmspe = np.inf
            for t, idx in usable:
                design = np.column_stack([np.ones(n), curves[:, idx], covariates])
                pred = np.empty(n)
                for f in range(self.cv):
                    test = folds == f
                    coef, *_ = scipy.linalg.lstsq(design[~test], y[~test])
                    pred[test] = design[test] @ coef
                err = (y - pred)[stable]
                rmspe = float(np.sqrt(np.mean(err ** 2)))
                if rmspe < best_rmspe:
                    best_rmspe, best_t, best_idx = rmspe, t, idx

        design = np.column_stack([np.ones(y.size), curves[:, best_idx], covariates])
        coef = _ols(design, y, f"refit at threshold {best_t:g}")
        self.n_features_in_ = curves.shape[1] + covariates.shape[1]
        self.threshold_ = best_t
        self._threshold_idx_ = best_idx
        self.subset_ = np.asarray([t for t, _ in usable])
        self.intercept_ = float(coef[0])
        self.feature_effect_ = float(coef[1])
        self.covariate_effects_ = coef[2:]
        weights = np.zeros(grid.size)
        weights[best_idx] = 1.0
        self.weight_curve_ = WeightCurve(grid, weights)
        return self

    def predict(self, X):
        curves, covariates = self._check_predict_input(X)
        return self._linear_predict(curves[:, self._threshold_idx_], covariates)

    def to_dict(self):
        check_is_fitted(self, "intercept_")
        out = self._base_dict()
        out["feature_effect"] = self.feature_effect_
        out["selected_threshold"] = self.threshold_
        out["subset"] = self.subset_.tolist()
        return out


class FlexWeightRegressor(_CurveRegressor):
    """Penalized-spline weight curve over the full threshold grid.

    The weight function w(t) = sum_m g_m b_m(t) is expanded in a cubic
    B-spline basis (25 equidistant segments by default) and estimated
    jointly with the intercept and covariate effects by penalized least
    squares; only the basis coefficients are penalized (second-order
    differences), with the smoothing parameter chosen by GCV.  A pointwise
    95% band comes from the posterior coefficient covariance.

    Parameters
    ----------
    segments, degree : spline basis layout on [0, 1]
    penalty_order : order of the difference penalty on basis coefficients
    lambdas : candidate smoothing parameters (default: 30-point log grid)
    zero_at_origin : force w(0) = 0 by dropping the first basis function
    """

    method = "flex"

    def __init__(self, grid=None, segments=25, degree=3, penalty_order=2,
                 lambdas=None, zero_at_origin=False):
        self.grid = grid
        self.segments = segments
        self.degree = degree
        self.penalty_order = penalty_order
        self.lambdas = lambdas
        self.zero_at_origin = zero_at_origin

    def fit(self, X, y, subject_ids=None):
        grid, curves, covariates, y = self._validate(X, y)
        n = y.size
        if n < 3:
            raise ValueError(f"flexible fit needs at least 3 subjects, got {n}")
        basis = SplineBasis(segments=self.segments, degree=self.degree)
        b_full = basis.design_matrix(grid)
        keep = slice(1, None) if self.zero_at_origin else slice(None)
        b_mat = b_full[:, keep]
        m = b_mat.shape[1]
        if n < m / 2:
            warnings.warn(
                f"only {n} subjects for {m} basis functions; the weight "
                "curve will be heavily regularised", stacklevel=2)
        design = np.column_stack([np.ones(n), curves @ b_mat, covariates])
        q = design.shape[1]
        lambdas = (default_lambda_grid() if self.lambdas is None
                   else np.asarray(self.lambdas, dtype=float))
        penalty = np.zeros((q, q))
        if basis.n_bases > self.penalty_order:
            penalty[1:1 + m, 1:1 + m] = difference_penalty(
                basis.n_bases, self.penalty_order)[keep, keep]
        elif np.any(lambdas > 0):
            raise ValueError(
                f"penalty order {self.penalty_order} needs more than "
                f"{basis.n_bases} basis functions (or all-zero lambdas)")
        fit = select_lambda_gcv(design, y, penalty, lambdas)

        self.n_features_in_ = curves.shape[1] + covariates.shape[1]
        self.basis_ = basis
        self._basis_matrix_ = b_mat
        self.intercept_ = float(fit.coefficients[0])
        self.gamma_ = fit.coefficients[1:1 + m]
        self.covariate_effects_ = fit.coefficients[1 + m:]
        self.feature_effect_ = 1.0  # absorbed into the basis coefficients
        self.lambda_ = fit.lam
        self.edf_ = fit.edf
        self.sigma2_ = fit.sigma2
        self.gcv_ = fit.gcv
        gamma_cov = fit.covariance[1:1 + m, 1:1 + m]
        values = b_mat @ self.gamma_
        se = np.sqrt(np.maximum(np.einsum("jm,mk,jk->j", b_mat, gamma_cov,
                                          b_mat), 0.0))
        self.weight_curve_ = WeightCurve(grid, values,
                                         lower=values - 1.96 * se,
                                         upper=values + 1.96 * se)
        self.curve_sd_ = curves.std(axis=0, ddof=1)
        return self

    def evaluate_weight(self, t):
        """Continuous weight-curve evaluation at arbitrary t in [0, 1]."""
        check_is_fitted(self, "gamma_")
        b = self.basis_.design_matrix(np.atleast_1d(np.asarray(t, dtype=float)))
        if self.zero_at_origin:
            b = b[:, 1:]
        return b @ self.gamma_

    def predict(self, X):
        curves, covariates = self._check_predict_input(X)
        pred = self.intercept_ + (curves @ self._basis_matrix_) @ self.gamma_
        if covariates.shape[1]:
            pred = pred + covariates @ self.covariate_effects_
        return pred

    def to_dict(self):
        check_is_fitted(self, "gamma_")
        out = self._base_dict()
        out["feature_effect"] = None  # identified only jointly with gamma
        out["basis"] = self.basis_.to_dict()
        out["zero_at_origin"] = self.zero_at_origin
        out["lambda"] = self.lambda_
        out["gamma"] = self.gamma_.tolist()
        out["edf"] = self.edf_
        return out


METHODS = {
    "flex": FlexWeightRegressor,
    "opt": OptimalThresholdRegressor,
    "avg": AverageFeatureRegressor,
    "null": MeanOnlyRegressor,
    "oracle": FixedWeightRegressor,
}


def make_model(method, **kwargs):
    """Instantiate one of the named outcome models."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {sorted(METHODS)}")
    return METHODS[method](**kwargs)


def fit_to_dict(model):
    """JSON-ready description of a fitted model."""
    return model.to_dict()


def standardized_weight(model, curves=None):
    """Weight curve rescaled by the per-threshold feature sd (ddof = 1).

    Thresholds where the feature has zero variance get a standardized value
    of 0 and are flagged.  By default the training-data sds stored on the
    fitted flexible model are used; pass ``curves`` to rescale against
    another sample.
    """
    if getattr(model, "method", None) != "flex":
        raise ValueError("standardized weights are defined for the flexible model")
    check_is_fitted(model, "gamma_")
    wc = model.weight_curve_
    if curves is None:
        sd = model.curve_sd_
    else:
        curves = np.asarray(curves, dtype=float)
        if curves.ndim != 2 or curves.shape[1] != wc.grid.size:
            raise ValueError("curves must be (n_subjects, n_grid)")
        sd = curves.std(axis=0, ddof=1)
    zero = sd == 0
    scale = np.where(zero, 0.0, sd)
    return StandardizedWeightCurve(
        grid=wc.grid,
        values=wc.values * scale,
        lower=None if wc.lower is None else wc.lower * scale,
        upper=None if wc.upper is None else wc.upper * scale,
        zero_variance=zero,
    )
