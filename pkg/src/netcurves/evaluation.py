"""Out-of-sample evaluation: repeated k-fold CV and performance measures.

Calibration slope is reported as NaN ("undefined") whenever the predictions
are constant; NaN propagates into reports as a missing value, never as an
error.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import clone

from .models import fold_assignment


def rmspe(y, yhat):
    """Root mean squared prediction error."""
    y = np.asarray(y, dtype=float).ravel()
    yhat = np.asarray(yhat, dtype=float).ravel()
    if y.size == 0 or y.size != yhat.size:
        raise ValueError("need equal-length, non-empty outcome vectors")
    return float(np.sqrt(np.mean((y - yhat) ** 2)))


def r_squared(y, yhat):
    """1 - SS_res / SS_tot; may be negative out of sample."""
    y = np.asarray(y, dtype=float).ravel()
    yhat = np.asarray(yhat, dtype=float).ravel()
    if y.size == 0 or y.size != yhat.size:
        raise ValueError("need equal-length, non-empty outcome vectors")
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0:
        raise ValueError("R^2 is undefined for a constant outcome")
    return 1.0 - float(np.sum((y - yhat) ** 2)) / ss_tot


def calibration_slope(y, yhat):
    """OLS slope of y on yhat; NaN when the predictions are constant."""
    y = np.asarray(y, dtype=float).ravel()
    yhat = np.asarray(yhat, dtype=float).ravel()
    if y.size < 2 or y.size != yhat.size:
        raise ValueError("need equal-length vectors with at least 2 entries")
    dev = yhat - yhat.mean()
    denom = float(dev @ dev)
    if denom == 0:
        return float("nan")
    return float(dev @ (y - y.mean())) / denom


def relative_rmspe(values):
    """Each RMSPE divided by the scenario minimum (the minimum maps to 1).

    If the minimum is 0, zero entries map to 1 and the rest are NaN-flagged.
    """
    values = np.asarray(values, dtype=float).ravel()
    if values.size == 0 or not np.isfinite(values).all():
        raise ValueError("need a non-empty vector of finite RMSPE values")
    low = values.min()
    if low == 0:
        return np.where(values == 0, 1.0, np.nan)
    return values / low


def monte_carlo_se(values):
    """Monte Carlo standard error: sd(values) / sqrt(n_replicates)."""
    values = np.asarray(values, dtype=float).ravel()
    if values.size < 2:
        raise ValueError("need at least 2 replicates")
    return float(np.std(values, ddof=1) / np.sqrt(values.size))


def percentile_summary(values, lower=2.5, upper=97.5):
    """Empirical percentile pair with linear interpolation."""
    values = np.asarray(values, dtype=float).ravel()
    lo, hi = np.percentile(values, [lower, upper])
    return float(lo), float(hi)


@dataclass
class PerformanceReport:
    """Cross-validated performance of one method on one dataset."""

    method: str
    rmspe: float
    r2: float
    calibration_slope: float
    n_eval: int
    k: int
    repeats: int
    n_failed_folds: int = 0
    per_repeat: dict = field(default_factory=dict, repr=False)

    def measures(self):
        return {
            "rmspe": self.rmspe,
            "r2": self.r2,
            "calibration_slope": self.calibration_slope,
        }


def _mean_defined(values):
    values = np.asarray(values, dtype=float)
    finite = values[np.isfinite(values)]
    return float(finite.mean()) if finite.size else float("nan")


def cross_validate(model, X, y, k=5, repeats=1, seed=None, subject_ids=None):
    """Repeated k-fold cross-validation with pooled out-of-fold measures.

    Per repeat, all out-of-fold predictions are pooled and each measure is
    computed once on the pooled vector; the report averages measures over
    repeats.  Fold-level fit failures are recorded (their subjects drop out
    of the pooled vector) rather than raised.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    n = y.size
    if X.shape[0] != n:
        raise ValueError("X and y disagree on subject count")
    if not 2 <= k <= n:
        raise ValueError(f"need 2 <= k <= n, got k={k}, n={n}")
    if repeats < 1:
        raise ValueError("repeats must be >= 1")

    per_repeat = {"rmspe": [], "r2": [], "calibration_slope": []}
    n_failed = 0
    n_eval_total = 0
    for rep in range(repeats):
        rep_seed = None if seed is None else np.random.SeedSequence([seed, rep])
        folds = fold_assignment(n, k, rep_seed, subject_ids)
        pred = np.full(n, np.nan)
        constant_folds = []
        for f in range(k):
            test = folds == f
            fitted = clone(model)
            try:
                fitted.fit(X[~test], y[~test])
                fold_pred = fitted.predict(X[test])
                pred[test] = fold_pred
                if fold_pred.size > 1:
                    constant_folds.append(bool(np.all(fold_pred == fold_pred[0])))
            except Exception as err:  # noqa: BLE001 - recorded, not fatal
                n_failed += 1
                warnings.warn(f"fold {f} (repeat {rep}) failed: {err}",
                              stacklevel=2)
        ok = np.isfinite(pred)
        n_eval_total += int(ok.sum())
        if not ok.any():
            for key in per_repeat:
                per_repeat[key].append(float("nan"))
            continue
        per_repeat["rmspe"].append(rmspe(y[ok], pred[ok]))
        pooled_var = np.var(y[ok]) if ok.sum() > 1 else 0.0
        per_repeat["r2"].append(r_squared(y[ok], pred[ok]) if pooled_var > 0
                                else float("nan"))
        # a model constant within every assessable fold has no calibration
        # slope; the pooled slope would only measure fold-mean noise
        degenerate = bool(constant_folds) and all(constant_folds)
        per_repeat["calibration_slope"].append(
            calibration_slope(y[ok], pred[ok])
            if ok.sum() > 1 and not degenerate else float("nan"))

    return PerformanceReport(
        method=getattr(model, "method", type(model).__name__),
        rmspe=_mean_defined(per_repeat["rmspe"]),
        r2=_mean_defined(per_repeat["r2"]),
        calibration_slope=_mean_defined(per_repeat["calibration_slope"]),
        n_eval=n_eval_total,
        k=k,
        repeats=repeats,
        n_failed_folds=n_failed,
        per_repeat=per_repeat,
    )
