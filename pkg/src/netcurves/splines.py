"""Cubic B-spline basis on [0, 1] with difference penalties and a penalized
least-squares solver (smoothing parameter chosen by generalized
cross-validation)."""

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.interpolate import BSpline

COND_LIMIT = 1e12


class RankDeficientError(ValueError):
    """Singular or near-singular design; ``columns`` names the offenders."""

    def __init__(self, message, columns=()):
        super().__init__(message)
        self.columns = tuple(columns)


@dataclass(frozen=True)
class SplineBasis:
    """Equidistant B-spline basis on [0, 1].

    Interior knots are placed in equidistant steps; the boundary knots 0 and
    1 are replicated ``degree``-fold, giving ``segments + degree`` basis
    functions.
    """

    segments: int = 25
    degree: int = 3
    knots: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.segments < 1:
            raise ValueError("segments must be >= 1")
        if self.degree < 0:
            raise ValueError("degree must be >= 0")
        interior = np.linspace(0.0, 1.0, self.segments + 1)
        knots = np.r_[np.zeros(self.degree), interior, np.ones(self.degree)]
        object.__setattr__(self, "knots", knots)

    @property
    def n_bases(self):
        return self.segments + self.degree

    def design_matrix(self, x):
        """Evaluate all basis functions at ``x``: shape (len(x), n_bases).

        Rows sum to 1 (partition of unity).  Rejects points outside [0, 1].
        """
        x = np.asarray(x, dtype=float).ravel()
        if x.size and (x.min() < 0.0 or x.max() > 1.0):
            raise ValueError("evaluation points must lie in [0, 1]")
        return BSpline.design_matrix(x, self.knots, self.degree).toarray()

    def to_dict(self):
        return {"segments": self.segments, "degree": self.degree}


def build_basis(grid, segments=25, degree=3):
    """Basis matrix B with B[j, m] the m-th basis function at grid[j]."""
    return SplineBasis(segments=segments, degree=degree).design_matrix(grid)


def difference_penalty(n_bases, order=2):
    """Penalty matrix D'D for the ``order``-th difference operator D.

    The null space holds polynomial coefficient sequences up to degree
    ``order - 1``.
    """
    if order < 1:
        raise ValueError("difference order must be >= 1")
    if order >= n_bases:
        raise ValueError(f"difference order {order} must be < n_bases {n_bases}")
    d = np.diff(np.eye(n_bases), n=order, axis=0)
    return d.T @ d


@dataclass
class PenalizedFit:
    """Solution of (X'X + lam * P) beta = X'y with its dispersion summaries."""

    coefficients: np.ndarray
    lam: float
    covariance: np.ndarray
    sigma2: float
    edf: float
    rss: float
    gcv: float
    n_obs: int

    def predict(self, X):
        return np.asarray(X, dtype=float) @ self.coefficients


def _penalty_root(penalty):
    """Matrix L with L'L = penalty, rows spanning the non-null directions."""
    evals, evecs = np.linalg.eigh(penalty)
    top = evals.max(initial=0.0)
    keep = evals > top * 1e-12
    if not keep.any():
        return np.empty((0, penalty.shape[0]))
    return np.sqrt(evals[keep])[:, None] * evecs[:, keep].T


def _check_rank(x_aug, lam):
    """Reject structurally rank-deficient systems, naming the columns.

    The test is the numerical rank of the column-scaled augmented design
    (pivoted QR, eps-scaled tolerance): legitimate heavily penalized systems
    stay solvable while zero, collinear, or penalty-null-overlapping columns
    are refused.
    """
    q = x_aug.shape[1]
    col_norm = np.linalg.norm(x_aug, axis=0)
    zero_cols = np.nonzero(col_norm == 0)[0]
    if zero_cols.size:
        raise RankDeficientError(
            f"singular penalized system at lambda={lam:g}: "
            f"zero columns {zero_cols.tolist()}",
            columns=zero_cols.tolist(),
        )
    r = scipy.linalg.qr(x_aug / col_norm, mode="r", pivoting=True)
    diag = np.abs(np.diag(r[0][:q]))
    piv = r[1]
    tol = diag.max(initial=0.0) * max(x_aug.shape) * np.finfo(float).eps
    rank = int((diag > tol).sum())
    if rank < q:
        offenders = sorted(int(j) for j in piv[rank:])
        cond = (diag.max() / diag[diag > 0].min()) ** 2 if (diag > 0).any() else np.inf
        raise RankDeficientError(
            f"singular penalized system at lambda={lam:g} "
            f"(condition number {cond:.3g}); offending columns: {offenders}",
            columns=offenders,
        )


def penalized_ls(X, y, penalty, lam):
    """Penalized least squares with a fixed smoothing parameter.

    Solves (X'X + lam*P) beta = X'y and reports the posterior covariance
    sigma2 * (X'X + lam*P)^-1, the effective degrees of freedom
    edf = tr(X (X'X + lam*P)^-1 X'), and sigma2 = RSS / (n - edf).
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.ndim != 2 or X.shape[0] != y.size:
        raise ValueError("design and outcome dimensions do not match")
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    n, q = X.shape
    penalty = np.asarray(penalty, dtype=float)
    if penalty.shape != (q, q):
        raise ValueError(f"penalty must be {q}x{q}, got {penalty.shape}")

    # solve min ||y - X b||^2 + lam * b' P b as an augmented least-squares
    # problem: rows sqrt(lam) * L with L'L = P appended to the design
    root = _penalty_root(penalty) if lam > 0 else np.empty((0, q))
    if root.shape[0]:
        x_aug = np.vstack([X, np.sqrt(lam) * root])
        y_aug = np.concatenate([y, np.zeros(root.shape[0])])
    else:
        x_aug, y_aug = X, y
    _check_rank(x_aug, lam)

    q_mat, r_mat = scipy.linalg.qr(x_aug, mode="economic")
    coef = scipy.linalg.solve_triangular(r_mat, q_mat.T @ y_aug)
    r_inv = scipy.linalg.solve_triangular(r_mat, np.eye(q))
    a_inv = r_inv @ r_inv.T  # (X'X + lam*P)^-1

    resid = y - X @ coef
    rss = float(resid @ resid)
    edf = float(np.sum((X @ r_inv) ** 2))  # tr(X A^-1 X')
    denom = n - edf
    with np.errstate(divide="ignore", invalid="ignore"):
        sigma2 = rss / denom if denom > 0 else float("nan")
        gcv = n * rss / denom**2 if denom > 0 else float("inf")
    return PenalizedFit(
        coefficients=coef,
        lam=float(lam),
        covariance=sigma2 * a_inv,
        sigma2=float(sigma2),
        edf=edf,
        rss=rss,
        gcv=float(gcv),
        n_obs=n,
    )


def default_lambda_grid(n_points=30, low=1e-4, high=1e6):
    return np.logspace(np.log10(low), np.log10(high), n_points)


def select_lambda_gcv(X, y, penalty, lambdas=None):
    """Pick the smoothing parameter minimising GCV(lam) = n*RSS/(n-edf)^2.

    Ties break toward the larger (smoother) lambda.  Candidates whose
    penalized system is singular are skipped; if all are, the rank error of
    the largest candidate is re-raised.
    """
    lambdas = default_lambda_grid() if lambdas is None else np.asarray(lambdas, dtype=float)
    if lambdas.size == 0:
        raise ValueError("lambda grid is empty")
    if np.any(lambdas < 0):
        raise ValueError("lambda candidates must be >= 0")
    best = None
    last_error = None
    for lam in np.sort(lambdas):
        try:
            fit = penalized_ls(X, y, penalty, lam)
        except RankDeficientError as err:
            last_error = err
            continue
        if best is None or fit.gcv <= best.gcv:
            best = fit
    if best is None:
        raise RankDeficientError(
            f"all lambda candidates give a singular system: {last_error}",
            columns=getattr(last_error, "columns", ()),
        )
    return best
