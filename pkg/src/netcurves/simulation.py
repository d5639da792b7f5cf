"""Plasmode-style simulation machinery.

Replicates are mutually independent and fully reconstructible: every
replicate derives its own RNG streams from (seed, replicate index), with the
contamination stream keyed separately so that re-running with a different
contamination seed leaves the generated outcomes unchanged.  Outcomes are
always generated from the clean curves, before the edge weights are
perturbed.
"""

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict

import numpy as np

from .evaluation import cross_validate, monte_carlo_se, percentile_summary, relative_rmspe
from .graphs import feature_curves, from_correlation
from .grid import grid_index, make_grid, nearest_index
from .models import make_model

OGM_KINDS = ("universal", "random", "flat", "early_peak", "arc")


class ScenarioError(RuntimeError):
    """Raised when a scenario cannot produce a usable result."""


@dataclass(frozen=True)
class ContaminationSpec:
    """Bounded stochastic perturbation of the edge weights.

    ``alpha`` caps the absolute deviation of any off-diagonal entry; ``m``
    is the dimension of the unit vectors whose Gram matrix drives the
    perturbation (defaults to the node count).  ``seed`` keys a dedicated
    RNG stream; leaving it None ties the stream to the scenario seed.
    """

    alpha: float = 0.0
    m: int | None = None
    seed: int | None = None

    def __post_init__(self):
        if not 0 <= self.alpha <= 1:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.m is not None and self.m < 1:
            raise ValueError("m must be a positive integer")


@dataclass(frozen=True)
class OutcomeModel:
    """Outcome-generating mechanism over clean feature curves.

    Kinds: ``universal`` (x* = x(tau)), ``random`` (per-subject threshold
    drawn uniformly from ``tau_range`` and snapped to the grid), and the
    functional forms ``flat`` (w = 4), ``early_peak``
    (w = 6.5 sin(2 pi t) for t < 0.5, else 0) and ``arc`` (w = 6 sin(pi t)),
    applied as a discrete sum over the grid.  Residual variance comes either
    from ``sigma2`` directly or from ``r2_target`` via variance calibration.
    """

    kind: str = "universal"
    tau: float = 0.25
    tau_range: tuple = (0.1, 0.4)
    beta0: float = 0.0
    beta1: float = 1.0
    r2_target: float | None = None
    sigma2: float | None = None

    def __post_init__(self):
        if self.kind not in OGM_KINDS:
            raise ValueError(f"kind must be one of {OGM_KINDS}, got {self.kind!r}")
        if self.r2_target is None and self.sigma2 is None:
            object.__setattr__(self, "sigma2", 0.0)


def functional_weight(kind, grid):
    """The true weight curve of a functional outcome kind on the grid."""
    t = np.asarray(grid, dtype=float)
    if kind == "flat":
        return np.full(t.size, 4.0)
    if kind == "early_peak":
        return np.where(t < 0.5, 6.5 * np.sin(2 * np.pi * t), 0.0)
    if kind == "arc":
        return 6.0 * np.sin(np.pi * t)
    raise ValueError(f"{kind!r} is not a functional outcome kind")


def true_weight_curve(outcome, grid):
    """Weight curve an oracle model should receive, or None for ``random``."""
    grid = np.asarray(grid, dtype=float)
    if outcome.kind == "universal":
        w = np.zeros(grid.size)
        w[grid_index(grid, outcome.tau)] = 1.0
        return w
    if outcome.kind == "random":
        return None
    return functional_weight(outcome.kind, grid)


def synth_correlation(p, n_factors=3, noise_scale=1.0, rng=None):
    """Random factor-model correlation matrix: unit diagonal, positive
    definite, off-diagonals strictly inside (-1, 1)."""
    if p < 3:
        raise ValueError("need at least 3 nodes")
    if n_factors < 1:
        raise ValueError("need at least 1 factor")
    if noise_scale <= 0:
        raise ValueError("noise_scale must be positive for positive definiteness")
    rng = np.random.default_rng(rng)
    loadings = rng.normal(size=(p, n_factors))
    cov = loadings @ loadings.T + noise_scale**2 * np.eye(p)
    d = 1.0 / np.sqrt(np.diag(cov))
    corr = cov * d[:, None] * d[None, :]
    np.fill_diagonal(corr, 1.0)
    return corr


def contaminate_correlation(sigma, alpha, delta=1.0, m=None, rng=None,
                            check_psd=True):
    """Perturb a correlation matrix with entrywise deviation at most alpha*delta.

    Draws unit vectors u_1..u_p in R^m (standard normal entries, normalized)
    and adds alpha * delta * (U'U - I): the diagonal is untouched and every
    off-diagonal move is bounded by alpha * delta.  Entries are clipped back
    into [-1, 1]; a loss of positive semidefiniteness is a warning, not an
    error.
    """
    sigma = np.asarray(sigma, dtype=float)
    p = sigma.shape[0]
    if not 0 <= alpha <= 1:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    if not 0 <= delta <= 1:
        raise ValueError(f"delta must lie in [0, 1], got {delta}")
    if alpha == 0 or delta == 0:
        return sigma.copy()
    m = p if m is None else int(m)
    if m < 1:
        raise ValueError("m must be a positive integer")
    rng = np.random.default_rng(rng)
    u = rng.normal(size=(m, p))
    u /= np.linalg.norm(u, axis=0, keepdims=True)
    shift = u.T @ u
    np.fill_diagonal(shift, 0.0)
    np.clip(shift, -1.0, 1.0, out=shift)
    contaminated = np.clip(sigma + (alpha * delta) * shift, -1.0, 1.0)
    if check_psd:
        smallest = np.linalg.eigvalsh(contaminated)[0]
        if smallest < -1e-8:
            warnings.warn(
                f"contaminated matrix lost positive semidefiniteness "
                f"(smallest eigenvalue {smallest:.3g})", stacklevel=2)
    return contaminated


def ogm_target(curves, outcome, grid, rng=None):
    """Per-subject target x* from clean curves under the outcome mechanism."""
    curves = np.asarray(curves, dtype=float)
    grid = np.asarray(grid, dtype=float)
    if curves.ndim != 2 or curves.shape[1] != grid.size:
        raise ValueError("curves must be (n_subjects, n_grid)")
    if outcome.kind == "universal":
        return curves[:, grid_index(grid, outcome.tau)].copy()
    if outcome.kind == "random":
        rng = np.random.default_rng(rng)
        low, high = outcome.tau_range
        taus = rng.uniform(low, high, size=curves.shape[0])
        idx = [nearest_index(grid, t) for t in taus]
        return curves[np.arange(curves.shape[0]), idx]
    return curves @ functional_weight(outcome.kind, grid)


def calibrate_sigma(xstar, beta1, r2_target):
    """Residual variance giving the oracle model the target R^2.

    sigma^2 = beta1^2 * var(x*) * (1 - R^2) / R^2, with sigma^2 = 0 at
    R^2 = 1.
    """
    if not 0 < r2_target <= 1:
        raise ValueError(f"r2_target must lie in (0, 1], got {r2_target}")
    if r2_target == 1:
        return 0.0
    var = float(np.var(np.asarray(xstar, dtype=float), ddof=1))
    if var == 0:
        raise ValueError("x* has zero variance; cannot calibrate sigma^2")
    return beta1**2 * var * (1.0 - r2_target) / r2_target


def generate_outcomes(xstar, beta0, beta1, sigma2, rng=None):
    """y = beta0 + beta1 * x* + N(0, sigma2) noise."""
    if sigma2 < 0:
        raise ValueError("sigma2 must be >= 0")
    xstar = np.asarray(xstar, dtype=float)
    rng = np.random.default_rng(rng)
    noise = rng.normal(scale=np.sqrt(sigma2), size=xstar.size) if sigma2 > 0 \
        else np.zeros(xstar.size)
    return beta0 + beta1 * xstar + noise


@dataclass(frozen=True)
class SyntheticMatrices:
    """Generate fresh factor-model correlation matrices per replicate."""

    p: int = 40
    n_factors: int = 3
    noise_scale: float = 1.0


@dataclass
class MatrixPool:
    """Sample subjects without replacement from a fixed matrix pool."""

    matrices: list

    def __post_init__(self):
        if len(self.matrices) == 0:
            raise ValueError("matrix pool is empty")


@dataclass(frozen=True)
class ScenarioConfig:
    """One cell of the simulation grid."""

    name: str = "scenario"
    seed: int = 0
    n_subjects: int = 75
    n_replicates: int = 100
    feature: str = "cc"
    strategy: str = "weight"
    grid_step: float = 0.01
    negative_policy: str = "zero"
    matrices: object = field(default_factory=SyntheticMatrices)
    outcome: OutcomeModel = field(default_factory=OutcomeModel)
    contamination: ContaminationSpec = field(default_factory=ContaminationSpec)
    methods: tuple = ("oracle", "opt", "avg", "flex", "null")
    cv_folds: int = 5
    cv_repeats: int = 1

    def __post_init__(self):
        if self.n_subjects < 1:
            raise ValueError("n_subjects must be >= 1")
        if self.n_replicates < 1:
            raise ValueError("n_replicates must be >= 1")
        if not self.methods:
            raise ValueError("at least one method is required")
        if self.strategy not in ("weight", "density"):
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.negative_policy not in ("zero", "absolute"):
            raise ValueError(f"unknown negative_policy {self.negative_policy!r}")

    def to_dict(self):
        out = asdict(self)
        if isinstance(self.matrices, SyntheticMatrices):
            out["matrices"] = {"synthetic": asdict(self.matrices)}
        else:
            out["matrices"] = {"pool_size": len(self.matrices.matrices)}
        out["methods"] = list(self.methods)
        out["outcome"] = asdict(self.outcome)
        out["outcome"]["tau_range"] = list(self.outcome.tau_range)
        out["contamination"] = asdict(self.contamination)
        return out

    @classmethod
    def from_dict(cls, raw, pool_matrices=None):
        raw = dict(raw)
        mats = raw.pop("matrices", {})
        if pool_matrices is not None:
            matrices = MatrixPool(pool_matrices)
        elif "synthetic" in mats:
            matrices = SyntheticMatrices(**mats["synthetic"])
        else:
            matrices = SyntheticMatrices()
        outcome = raw.pop("outcome", {})
        if "tau_range" in outcome:
            outcome["tau_range"] = tuple(outcome["tau_range"])
        contamination = raw.pop("contamination", {})
        raw.pop("pool_size", None)
        if "methods" in raw:
            raw["methods"] = tuple(raw["methods"])
        return cls(matrices=matrices,
                   outcome=OutcomeModel(**outcome),
                   contamination=ContaminationSpec(**contamination),
                   **raw)


@dataclass
class ReplicateResult:
    replicate: int
    measures: dict  # method -> measure -> value
    failed_methods: list
    seed_record: dict


@dataclass
class ScenarioResult:
    config: ScenarioConfig
    replicates: list
    aggregates: dict  # method -> measure -> stat -> value
    methods: tuple
    notes: list


MEASURES = ("rmspe", "r2", "calibration_slope")


def _replicate_streams(config, replicate):
    contam_seed = (config.contamination.seed
                   if config.contamination.seed is not None else config.seed)
    return {
        "matrices": np.random.SeedSequence([config.seed, replicate, 0]),
        "outcome": np.random.SeedSequence([config.seed, replicate, 1]),
        "contamination": np.random.SeedSequence([contam_seed, replicate, 2]),
        "cv": np.random.SeedSequence([config.seed, replicate, 3]),
    }


def _clean_matrices(config, rng):
    n = config.n_subjects
    src = config.matrices
    if isinstance(src, MatrixPool):
        if len(src.matrices) < n:
            raise ScenarioError(
                f"pool of {len(src.matrices)} matrices cannot supply "
                f"{n} subjects without replacement")
        picks = rng.choice(len(src.matrices), size=n, replace=False)
        return [np.asarray(src.matrices[i], dtype=float) for i in picks]
    return [synth_correlation(src.p, src.n_factors, src.noise_scale, rng)
            for _ in range(n)]


def _scenario_methods(config):
    """Configured methods, with the oracle dropped when it has no true weight."""
    methods = list(config.methods)
    notes = []
    if "oracle" in methods:
        if config.strategy != "weight":
            reason = "density-based thresholding has no defined true weight"
        elif config.outcome.kind == "random":
            reason = "the random-threshold mechanism has no common true weight"
        else:
            reason = None
        if reason:
            notes.append(f"oracle skipped: {reason}")
            methods = [m for m in methods if m != "oracle"]
    return methods, notes


def _build_model(method, config, grid, outcome):
    kwargs = {"grid": grid}
    if method in ("opt", "avg"):
        kwargs["strategy"] = config.strategy
    if method == "opt":
        kwargs["cv"] = config.cv_folds
    if method == "oracle":
        kwargs["weights"] = true_weight_curve(outcome, grid)
    return make_model(method, **kwargs)


def run_replicate(config, replicate, methods=None):
    """Run one scenario replicate; returns a ReplicateResult."""
    grid = make_grid(config.grid_step)
    if methods is None:
        methods, _ = _scenario_methods(config)
    streams = _replicate_streams(config, replicate)
    rng_mat = np.random.default_rng(streams["matrices"])
    rng_out = np.random.default_rng(streams["outcome"])
    rng_con = np.random.default_rng(streams["contamination"])
    cv_seed = int(streams["cv"].generate_state(1)[0])

    sigmas = _clean_matrices(config, rng_mat)
    clean_adj = [from_correlation(s, config.negative_policy) for s in sigmas]
    clean_curves = feature_curves(clean_adj, config.feature, config.strategy, grid)

    xstar = ogm_target(clean_curves, config.outcome, grid, rng_out)
    outcome = config.outcome
    sigma2 = outcome.sigma2
    if sigma2 is None:
        sigma2 = calibrate_sigma(xstar, outcome.beta1, outcome.r2_target)
    y = generate_outcomes(xstar, outcome.beta0, outcome.beta1, sigma2, rng_out)

    alpha = config.contamination.alpha
    deltas = rng_con.uniform(size=config.n_subjects)
    if alpha > 0:
        dirty = [contaminate_correlation(s, alpha, d, config.contamination.m,
                                         rng_con)
                 for s, d in zip(sigmas, deltas)]
        dirty_adj = [from_correlation(s, config.negative_policy) for s in dirty]
        curves = feature_curves(dirty_adj, config.feature, config.strategy, grid)
    else:
        curves = clean_curves

    measures = {}
    failed = []
    for method in methods:
        model = _build_model(method, config, grid, outcome)
        try:
            report = cross_validate(model, curves, y, k=config.cv_folds,
                                    repeats=config.cv_repeats, seed=cv_seed)
            measures[method] = report.measures()
            if not np.isfinite(report.rmspe):
                failed.append(method)
        except Exception as err:  # noqa: BLE001 - recorded, not fatal
            warnings.warn(f"method {method} failed in replicate {replicate}: "
                          f"{err}", stacklevel=2)
            measures[method] = {m: float("nan") for m in MEASURES}
            failed.append(method)

    usable = [m for m in methods if np.isfinite(measures[m]["rmspe"])]
    if usable:
        rel = relative_rmspe([measures[m]["rmspe"] for m in usable])
        for m, r in zip(usable, rel):
            measures[m]["relative_rmspe"] = float(r)
    for m in methods:
        measures[m].setdefault("relative_rmspe", float("nan"))

    seed_record = {
        "replicate": replicate,
        "matrices_seed": [config.seed, replicate, 0],
        "outcome_seed": [config.seed, replicate, 1],
        "contamination_seed": [
            config.contamination.seed if config.contamination.seed is not None
            else config.seed, replicate, 2],
        "cv_seed": cv_seed,
        "sigma2": float(sigma2),
        "deltas": [float(d) for d in deltas],
    }
    return ReplicateResult(replicate=replicate, measures=measures,
                           failed_methods=failed, seed_record=seed_record)


def _aggregate(replicates, methods):
    agg = {}
    all_measures = MEASURES + ("relative_rmspe",)
    for method in methods:
        agg[method] = {}
        for measure in all_measures:
            values = np.asarray([rep.measures[method][measure]
                                 for rep in replicates], dtype=float)
            finite = values[np.isfinite(values)]
            stats = {"mean": float(finite.mean()) if finite.size else float("nan"),
                     "n_defined": int(finite.size)}
            if finite.size >= 2:
                lo, hi = percentile_summary(finite)
                stats["p2.5"], stats["p97.5"] = lo, hi
                stats["mc_se"] = monte_carlo_se(finite)
            agg[method][measure] = stats
    return agg


def run_scenario(config, n_threads=1):
    """Run all replicates of a scenario and aggregate the measures.

    Replicates derive independent RNG streams from (seed, replicate), so the
    result is identical for any thread count.  A scenario fails only when
    more than half of its replicates produced no usable fit.
    """
    methods, notes = _scenario_methods(config)
    if not methods:
        raise ScenarioError("no methods left to run")
    indices = range(config.n_replicates)

    def one(r):
        return run_replicate(config, r, methods)

    if n_threads > 1 and config.n_replicates > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            replicates = list(pool.map(one, indices))
    else:
        replicates = [one(r) for r in indices]

    n_failed = sum(1 for rep in replicates if rep.failed_methods)
    if n_failed > config.n_replicates / 2:
        raise ScenarioError(
            f"{n_failed} of {config.n_replicates} replicates failed")
    if n_failed:
        notes = notes + [f"{n_failed} replicates had at least one failed method"]
    return ScenarioResult(config=config, replicates=replicates,
                          aggregates=_aggregate(replicates, methods),
                          methods=tuple(methods), notes=notes)
