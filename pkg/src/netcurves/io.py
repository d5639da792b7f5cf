"""File formats and the time-series ingestion pipeline.

All tabular output is CSV with one leading ``#`` comment line carrying the
tool version, the seed and a config digest; floats are written with 17
significant digits so a write/read round trip is bit-exact.  Structured
artifacts (fits, scenario configs, seed ledgers) are JSON.  The full schema
reference lives in FORMATS.md.
"""

import csv
import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .data import CurveDataset
from .graphs import feature_curve, from_correlation
from .grid import make_grid
from .simulation import MatrixPool, ScenarioConfig

FLOAT_FMT = ".17g"
MISSING = "NA"


def format_value(x):
    """17-significant-digit decimal, or NA for undefined values."""
    if x is None:
        return MISSING
    x = float(x)
    if np.isnan(x):
        return MISSING
    return format(x, FLOAT_FMT)


def config_digest(obj):
    """sha256 over the canonical JSON form of a configuration mapping."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def jsonable(obj):
    """Recursively convert numpy scalars and NaN to JSON-safe values."""
    if isinstance(obj, dict):
        return {k: jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return None if np.isnan(x) else x
    return obj


def output_header(seed=None, digest=None):
    parts = [f"netcurves v{__version__}"]
    parts.append(f"seed={'none' if seed is None else seed}")
    if digest is not None:
        parts.append(f"config=sha256:{digest}")
    return "# " + " ".join(parts)


def _write_lines(path, lines):
    Path(path).write_text("\n".join(lines) + "\n")


def _data_lines(path):
    for line in Path(path).read_text().splitlines():
        if line and not line.startswith("#"):
            yield line


# --- adjacency matrices ---------------------------------------------------------

def write_adjacency_csv(path, weights, seed=None, digest=None):
    """Dense p x p matrix, one row per line, no column header."""
    weights = np.asarray(weights, dtype=float)
    lines = [output_header(seed, digest)]
    lines += [",".join(format_value(v) for v in row) for row in weights]
    _write_lines(path, lines)


def read_adjacency_csv(path):
    rows = [[float(v) for v in line.split(",")] for line in _data_lines(path)]
    if not rows:
        raise ValueError(f"{path}: no matrix rows found")
    mat = np.asarray(rows, dtype=float)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValueError(f"{path}: expected a square matrix, got {mat.shape}")
    return mat


def write_edge_list_csv(path, graph, seed=None, digest=None):
    """Edge list r,s with 0-based node indices, one edge per line."""
    lines = [output_header(seed, digest), "r,s"]
    lines += [f"{r},{s}" for r, s in graph.edges]
    _write_lines(path, lines)


# --- time series and Spearman correlation ------------------------------------------

@dataclass
class TimeSeriesTable:
    """Validated signal table: rows are time points, columns are nodes."""

    values: np.ndarray
    columns: list


def read_time_series_csv(path):
    """Numeric CSV with one header row of node names.

    Missing or non-numeric cells are hard errors; at least 3 time points and
    3 nodes are required.
    """
    path = Path(path)
    lines = list(_data_lines(path))
    if not lines:
        raise ValueError(f"{path}: empty time-series file")
    reader = csv.reader(lines)
    columns = next(reader)
    problems = []
    rows = []
    for i, row in enumerate(reader, start=2):
        if len(row) != len(columns):
            problems.append(f"line {i}: expected {len(columns)} cells, got {len(row)}")
            continue
        vals = []
        for name, cell in zip(columns, row):
            cell = cell.strip()
            if cell == "":
                problems.append(f"line {i}: missing value in column {name!r}")
                vals.append(np.nan)
                continue
            try:
                vals.append(float(cell))
            except ValueError:
                problems.append(f"line {i}: non-numeric value {cell!r} in "
                                f"column {name!r}")
                vals.append(np.nan)
        rows.append(vals)
    if problems:
        raise ValueError(f"{path}: " + "; ".join(problems[:10]))
    values = np.asarray(rows, dtype=float)
    if np.isnan(values).any():
        raise ValueError(f"{path}: missing values in time series")
    if values.shape[0] < 3:
        raise ValueError(f"{path}: need at least 3 time points, got {values.shape[0]}")
    if values.shape[1] < 3:
        raise ValueError(f"{path}: need at least 3 nodes, got {values.shape[1]}")
    return TimeSeriesTable(values=values, columns=columns)


def _average_ranks(column):
    order = np.argsort(column, kind="stable")
    ranks = np.empty(column.size)
    sorted_vals = column[order]
    i = 0
    while i < column.size:
        j = i
        while j + 1 < column.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0  # average rank, 1-based
        i = j + 1
    return ranks


def spearman_correlation(table):
    """Rank-transform each column (average ranks for ties), then Pearson."""
    if isinstance(table, TimeSeriesTable):
        values, columns = table.values, table.columns
    else:
        values = np.asarray(table, dtype=float)
        columns = [str(i) for i in range(values.shape[1])]
    constant = [columns[j] for j in range(values.shape[1])
                if np.all(values[:, j] == values[0, j])]
    if constant:
        raise ValueError(f"constant time series for column(s): {constant}")
    ranks = np.column_stack([_average_ranks(values[:, j])
                             for j in range(values.shape[1])])
    corr = np.corrcoef(ranks, rowvar=False)
    corr = np.clip((corr + corr.T) / 2.0, -1.0, 1.0)
    np.fill_diagonal(corr, 1.0)
    return corr


# --- dataset manifests -----------------------------------------------------------------

@dataclass
class SubjectEntry:
    subject_id: str
    timeseries: Path
    outcome: float | None
    covariates: list


@dataclass
class DatasetManifest:
    grid_step: float
    feature: str
    strategy: str
    negative_policy: str
    covariate_names: list
    subjects: list
    name: str = "dataset"


class IngestError(ValueError):
    """Aggregated per-subject ingestion failures."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("ingestion failed:\n" + "\n".join(self.errors))


def read_manifest(path):
    """Load and validate a dataset manifest (JSON)."""
    path = Path(path)
    raw = json.loads(path.read_text())
    subjects = []
    errors = []
    seen = set()
    entries = raw.get("subjects", [])
    if not entries:
        raise ValueError(f"{path}: manifest lists no subjects")
    covariate_names = list(raw.get("covariates", []))
    for entry in entries:
        sid = str(entry.get("id", ""))
        if not sid:
            errors.append("subject with missing id")
            continue
        if sid in seen:
            errors.append(f"duplicate subject id {sid!r}")
            continue
        seen.add(sid)
        ts = path.parent / entry.get("timeseries", "")
        if not ts.is_file():
            errors.append(f"{sid}: time-series file not found: {ts}")
            continue
        covs = [float(v) for v in entry.get("covariates", [])]
        if len(covs) != len(covariate_names):
            errors.append(f"{sid}: expected {len(covariate_names)} covariates, "
                          f"got {len(covs)}")
            continue
        outcome = entry.get("outcome")
        subjects.append(SubjectEntry(
            subject_id=sid, timeseries=ts,
            outcome=None if outcome is None else float(outcome),
            covariates=covs))
    if errors:
        raise IngestError(errors)
    return DatasetManifest(
        grid_step=float(raw.get("grid_step", 0.01)),
        feature=raw.get("feature", "cc"),
        strategy=raw.get("strategy", "weight"),
        negative_policy=raw.get("negative_policy", "zero"),
        covariate_names=covariate_names,
        subjects=subjects,
        name=raw.get("name", path.stem),
    )


def manifest_settings(manifest, grid_step=None, strategy=None,
                      negative_policy=None, feature=None):
    """Resolved (grid, feature, strategy, policy) with CLI overrides applied."""
    step = grid_step if grid_step is not None else manifest.grid_step
    return {
        "grid": make_grid(step),
        "feature": feature if feature is not None else manifest.feature,
        "strategy": strategy if strategy is not None else manifest.strategy,
        "negative_policy": (negative_policy if negative_policy is not None
                            else manifest.negative_policy),
    }


def ingest(manifest, grid=None, feature=None, strategy=None,
           negative_policy=None, require_outcomes=False, n_threads=1):
    """Time series -> Spearman -> edge weights -> feature curves, per subject.

    Per-subject failures are aggregated into one IngestError listing every
    problem; any failure aborts the whole ingestion.  Subjects may be
    processed in parallel; results are assembled in manifest order so the
    output is independent of ``n_threads``.
    """
    settings = manifest_settings(manifest, strategy=strategy,
                                 negative_policy=negative_policy,
                                 feature=feature)
    if grid is not None:
        settings["grid"] = np.asarray(grid, dtype=float)
    grid = settings["grid"]
    n = len(manifest.subjects)
    curves = [None] * n
    problems = [None] * n

    def one(i):
        entry = manifest.subjects[i]
        try:
            table = read_time_series_csv(entry.timeseries)
            corr = spearman_correlation(table)
            weights = from_correlation(corr, settings["negative_policy"])
            curves[i] = feature_curve(weights, settings["feature"],
                                      settings["strategy"], grid)
        except ValueError as err:
            problems[i] = f"{entry.subject_id}: {err}"

    if n_threads > 1 and n > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            list(pool.map(one, range(n)))
    else:
        for i in range(n):
            one(i)
    errors = [p for p in problems if p is not None]
    if errors:
        raise IngestError(errors)
    outcomes = [e.outcome for e in manifest.subjects]
    if require_outcomes and any(o is None for o in outcomes):
        missing = [e.subject_id for e, o in zip(manifest.subjects, outcomes)
                   if o is None]
        raise IngestError([f"{sid}: missing outcome" for sid in missing])
    has_outcomes = all(o is not None for o in outcomes)
    return CurveDataset(
        curves=np.asarray(curves),
        grid=grid,
        outcomes=np.asarray(outcomes, dtype=float) if has_outcomes else None,
        covariates=np.asarray([e.covariates for e in manifest.subjects], dtype=float),
        subject_ids=[e.subject_id for e in manifest.subjects],
        feature=settings["feature"],
        strategy=settings["strategy"],
    )


# --- curves ---------------------------------------------------------------------------

def write_curve_csv(path, grid, values, seed=None, digest=None):
    lines = [output_header(seed, digest), "threshold,value"]
    lines += [f"{format_value(t)},{format_value(v)}"
              for t, v in zip(grid, values)]
    _write_lines(path, lines)


def read_curve_csv(path):
    pairs = [line.split(",") for line in _data_lines(path)]
    pairs = [p for p in pairs if p[0] != "threshold"]
    grid = np.asarray([float(p[0]) for p in pairs])
    values = np.asarray([float(p[1]) for p in pairs])
    return grid, values


# --- fits -----------------------------------------------------------------------------

def write_fit_json(path, fit_dict, seed=None, digest=None):
    doc = {"tool": f"netcurves v{__version__}",
           "seed": seed, "config": digest, "fit": jsonable(fit_dict)}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def write_weight_csv(path, weight_curve, seed=None, digest=None):
    header = "threshold,value"
    banded = weight_curve.lower is not None
    if banded:
        header += ",lower,upper"
    lines = [output_header(seed, digest), header]
    for j, t in enumerate(weight_curve.grid):
        row = [format_value(t), format_value(weight_curve.values[j])]
        if banded:
            row += [format_value(weight_curve.lower[j]),
                    format_value(weight_curve.upper[j])]
        lines.append(",".join(row))
    _write_lines(path, lines)


def write_standardized_csv(path, std_curve, seed=None, digest=None):
    lines = [output_header(seed, digest),
             "threshold,value,lower,upper,zero_variance"]
    for j, t in enumerate(std_curve.grid):
        lines.append(",".join([
            format_value(t),
            format_value(std_curve.values[j]),
            format_value(None if std_curve.lower is None else std_curve.lower[j]),
            format_value(None if std_curve.upper is None else std_curve.upper[j]),
            str(int(std_curve.zero_variance[j])),
        ]))
    _write_lines(path, lines)


# --- performance and scenario results ----------------------------------------------------

def write_performance_csv(path, reports, scenario_id, seed=None, digest=None):
    """Rows (scenario, method, measure, value) for a list of reports."""
    lines = [output_header(seed, digest), "scenario,method,measure,value"]
    for report in reports:
        for measure, value in report.measures().items():
            lines.append(f"{scenario_id},{report.method},{measure},"
                         f"{format_value(value)}")
        lines.append(f"{scenario_id},{report.method},n_failed_folds,"
                     f"{report.n_failed_folds}")
    _write_lines(path, lines)


def write_results_csv(path, result, seed=None, digest=None):
    """Per-replicate rows (scenario, replicate, method, measure, value)."""
    lines = [output_header(seed, digest),
             "scenario,replicate,method,measure,value"]
    name = result.config.name
    for rep in result.replicates:
        for method in result.methods:
            for measure, value in rep.measures[method].items():
                lines.append(f"{name},{rep.replicate},{method},{measure},"
                             f"{format_value(value)}")
    _write_lines(path, lines)


def write_aggregates_csv(path, result, seed=None, digest=None):
    """Aggregate rows (scenario, method, measure, stat, value)."""
    lines = [output_header(seed, digest),
             "scenario,method,measure,stat,value"]
    name = result.config.name
    for method, measures in result.aggregates.items():
        for measure, stats in measures.items():
            for stat, value in stats.items():
                lines.append(f"{name},{method},{measure},{stat},"
                             f"{format_value(value)}")
    _write_lines(path, lines)


def write_seed_ledger(path, result):
    doc = jsonable({
        "tool": f"netcurves v{__version__}",
        "scenario": result.config.name,
        "config": result.config.to_dict(),
        "notes": result.notes,
        "replicates": [rep.seed_record for rep in result.replicates],
    })
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


# --- scenario configs ----------------------------------------------------------------------

def read_scenario_json(path, pool_dir=None):
    """Load a ScenarioConfig; ``pool_dir`` supplies adjacency CSVs for a pool."""
    raw = json.loads(Path(path).read_text())
    pool = None
    pool_field = raw.get("matrices", {}).get("pool_dir") if isinstance(
        raw.get("matrices"), dict) else None
    source = pool_dir if pool_dir is not None else pool_field
    if source is not None:
        base = Path(source)
        if not base.is_absolute():
            base = Path(path).parent / base
        files = sorted(base.glob("*.csv"))
        if not files:
            raise ValueError(f"no matrix CSVs found in pool directory {base}")
        pool = [read_adjacency_csv(f) for f in files]
        raw.get("matrices", {}).pop("pool_dir", None)
    return ScenarioConfig.from_dict(raw, pool_matrices=pool)
