"""Dataset container tying feature curves, covariates and outcomes together.

Model estimators consume a plain design matrix ``X`` whose first
``len(grid)`` columns are the curve values and whose remaining columns are
auxiliary covariates; :class:`CurveDataset` assembles and validates that
layout once per dataset.
"""

from dataclasses import dataclass, field

import numpy as np

from .grid import check_grid


@dataclass
class CurveDataset:
    """Feature curves on a shared threshold grid plus outcome and covariates.

    curves        (n_subjects, n_thresholds) feature-curve values
    grid          shared threshold grid
    outcomes      optional (n_subjects,) outcome vector
    covariates    (n_subjects, n_covariates) auxiliary covariates (may be empty)
    subject_ids   optional stable identifiers, used for reproducible CV folds
    """

    curves: np.ndarray
    grid: np.ndarray
    outcomes: np.ndarray | None = None
    covariates: np.ndarray = field(default=None)
    subject_ids: list | None = None
    feature: str = "cc"
    strategy: str = "weight"

    def __post_init__(self):
        self.curves = np.asarray(self.curves, dtype=float)
        self.grid = check_grid(self.grid)
        if self.curves.ndim != 2:
            raise ValueError("curves must be a 2-d array (subjects x thresholds)")
        if self.curves.shape[1] != self.grid.size:
            raise ValueError(
                f"curves have {self.curves.shape[1]} columns but the grid has "
                f"{self.grid.size} points"
            )
        n = self.curves.shape[0]
        if self.covariates is None:
            self.covariates = np.empty((n, 0))
        self.covariates = np.asarray(self.covariates, dtype=float)
        if self.covariates.ndim == 1:
            self.covariates = self.covariates[:, None]
        if self.covariates.shape[0] != n:
            raise ValueError("covariates and curves disagree on subject count")
        if self.outcomes is not None:
            self.outcomes = np.asarray(self.outcomes, dtype=float).ravel()
            if self.outcomes.size != n:
                raise ValueError("outcomes and curves disagree on subject count")
        if self.subject_ids is not None:
            if len(self.subject_ids) != n:
                raise ValueError("subject_ids and curves disagree on subject count")
            if len(set(self.subject_ids)) != n:
                raise ValueError("subject_ids contain duplicates")

    @property
    def n_subjects(self):
        return self.curves.shape[0]

    @property
    def X(self):
        """Design input for the model estimators: [curves | covariates]."""
        return np.hstack([self.curves, self.covariates])

    @property
    def y(self):
        return self.outcomes


def split_design(X, grid):
    """Split a model input into (curves, covariates) at the grid width."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    n_grid = np.asarray(grid).size
    if X.shape[1] < n_grid:
        raise ValueError(
            f"input has {X.shape[1]} columns but the threshold grid needs "
            f"{n_grid}; pass [curves | covariates]"
        )
    return X[:, :n_grid], X[:, n_grid:]
