"""Threshold grids on [0, 1] and the standard method-specific subsets."""

import numpy as np

DEFAULT_STEP = 0.01

# Inclusive (low, high) threshold ranges used by each method when no explicit
# subset is given.  FLEX always runs on the full grid.
DEFAULT_SUBSETS = {
    ("opt", "weight"): (0.0, 0.75),
    ("opt", "density"): (0.25, 1.0),
    ("avg", "weight"): (0.1, 0.4),
    ("avg", "density"): (0.6, 0.9),
}

_TOL = 1e-9


def make_grid(step=DEFAULT_STEP):
    """Equidistant threshold grid {0, step, 2*step, ..., 1}.

    ``step`` must divide 1 evenly (within floating-point tolerance).
    """
    if not 0 < step <= 1:
        raise ValueError(f"grid step must lie in (0, 1], got {step}")
    n = round(1.0 / step)
    if abs(n * step - 1.0) > _TOL:
        raise ValueError(f"grid step {step} does not evenly divide [0, 1]")
    return np.round(np.arange(n + 1) * step, 12)


def default_grid():
    """The canonical 101-point grid {0, 0.01, ..., 1}."""
    return make_grid(DEFAULT_STEP)


def check_grid(values):
    """Validate a threshold grid: strictly increasing, all within [0, 1]."""
    grid = np.asarray(values, dtype=float).ravel()
    if grid.size == 0:
        raise ValueError("threshold grid is empty")
    if np.any(~np.isfinite(grid)):
        raise ValueError("threshold grid contains non-finite values")
    if grid.min() < -_TOL or grid.max() > 1 + _TOL:
        raise ValueError("threshold grid values must lie in [0, 1]")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("threshold grid values must be strictly increasing")
    return grid


def grid_index(grid, t):
    """Index of the grid point equal to ``t`` (within tolerance).

    Raises ValueError if ``t`` is not a grid point.
    """
    idx = int(np.argmin(np.abs(grid - t)))
    if abs(grid[idx] - t) > _TOL:
        raise ValueError(f"threshold {t} is not on the grid")
    return idx


def nearest_index(grid, t):
    """Index of the grid point closest to ``t``."""
    return int(np.argmin(np.abs(np.asarray(grid) - t)))


def subset_mask(grid, low, high):
    """Boolean mask selecting grid points in the inclusive range [low, high]."""
    grid = np.asarray(grid)
    mask = (grid >= low - _TOL) & (grid <= high + _TOL)
    if not mask.any():
        raise ValueError(f"no grid points in [{low}, {high}]")
    return mask


def default_subset(method, strategy, grid):
    """Default threshold subset for a method/strategy pair.

    FLEX (and any method without a registered range) uses the full grid.
    """
    key = (method, strategy)
    if key not in DEFAULT_SUBSETS:
        return np.asarray(grid, dtype=float)
    low, high = DEFAULT_SUBSETS[key]
    grid = np.asarray(grid, dtype=float)
    return grid[subset_mask(grid, low, high)]
