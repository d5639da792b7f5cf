"""Per-subject networks: sparsification and graph-feature curves.

A subject's network is a symmetric ``(p, p)`` edge-weight matrix with entries
in [0, 1]; the diagonal is ignored everywhere (self-loops are forbidden).
Sparsifying at a threshold yields a binary graph, summarised either by the
mean local clustering coefficient (``"cc"``) or the characteristic path
length (``"cpl"``).  Evaluating one feature at every point of a threshold
grid produces the subject's feature curve.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .grid import check_grid

FEATURES = ("cc", "cpl")
STRATEGIES = ("weight", "density")

_SYM_TOL = 1e-10


@dataclass(frozen=True)
class BinaryGraph:
    """Undirected simple graph: node count plus sorted (r, s) edge pairs."""

    n_nodes: int
    edges: np.ndarray  # (m, 2) int array, r < s, lexicographically sorted

    @property
    def n_edges(self):
        return len(self.edges)

    @property
    def density(self):
        possible = self.n_nodes * (self.n_nodes - 1) // 2
        return self.n_edges / possible if possible else 0.0

    def to_dense(self):
        """Boolean adjacency matrix with a zero diagonal."""
        dense = np.zeros((self.n_nodes, self.n_nodes), dtype=bool)
        if self.n_edges:
            r, s = self.edges[:, 0], self.edges[:, 1]
            dense[r, s] = True
            dense[s, r] = True
        return dense

    @classmethod
    def from_dense(cls, dense):
        dense = np.asarray(dense, dtype=bool)
        r, s = np.nonzero(np.triu(dense, k=1))
        return cls(n_nodes=dense.shape[0], edges=np.column_stack([r, s]))


def check_adjacency(weights):
    """Validate an edge-weight matrix and return a clean copy.

    Requires a square, symmetric (within 1e-10) matrix with finite
    off-diagonal entries in [0, 1].  The returned copy has a zero diagonal.
    """
    w = np.asarray(weights, dtype=float)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise ValueError(f"adjacency matrix must be square, got shape {w.shape}")
    if np.isnan(w).any():
        bad = np.argwhere(np.isnan(w))
        raise ValueError(f"adjacency matrix contains NaN at {bad[:5].tolist()}")
    asym = np.abs(w - w.T)
    if asym.max(initial=0.0) > _SYM_TOL:
        r, s = np.unravel_index(np.argmax(asym), w.shape)
        raise ValueError(
            f"adjacency matrix is not symmetric: entry ({r}, {s}) differs "
            f"from ({s}, {r}) by {asym[r, s]:.3g}"
        )
    w = w.copy()
    np.fill_diagonal(w, 0.0)
    if w.min() < -1e-8 or w.max() > 1 + 1e-8:
        raise ValueError("edge weights must lie in [0, 1]")
    return np.clip(w, 0.0, 1.0)


def from_correlation(corr, negative_policy="zero"):
    """Turn a correlation matrix into an edge-weight matrix in [0, 1].

    ``negative_policy`` is ``"zero"`` (clamp negative correlations to 0) or
    ``"absolute"`` (take absolute values).  The input must be symmetric with
    unit diagonal and entries in [-1, 1]; NaNs and asymmetries are rejected.
    """
    c = np.asarray(corr, dtype=float)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise ValueError(f"correlation matrix must be square, got shape {c.shape}")
    if np.isnan(c).any():
        bad = np.argwhere(np.isnan(c))
        raise ValueError(f"correlation matrix contains NaN at {bad[:5].tolist()}")
    asym = np.abs(c - c.T)
    if asym.max(initial=0.0) > _SYM_TOL:
        r, s = np.unravel_index(np.argmax(asym), c.shape)
        raise ValueError(
            f"correlation matrix is not symmetric: entry ({r}, {s}) differs "
            f"from ({s}, {r}) by {asym[r, s]:.3g}"
        )
    if np.abs(np.diag(c) - 1.0).max(initial=0.0) > 1e-8:
        raise ValueError("correlation matrix must have unit diagonal")
    if c.min() < -1 - 1e-8 or c.max() > 1 + 1e-8:
        raise ValueError("correlation entries must lie in [-1, 1]")
    c = np.clip(c, -1.0, 1.0)
    if negative_policy == "zero":
        w = np.maximum(c, 0.0)
    elif negative_policy == "absolute":
        w = np.abs(c)
    else:
        raise ValueError(f"unknown negative_policy {negative_policy!r}")
    np.fill_diagonal(w, 0.0)
    return w


def threshold_weight(weights, t):
    """Keep edges with weight >= t.  ``t = 0`` yields the complete graph."""
    if not 0 <= t <= 1:
        raise ValueError(f"threshold must lie in [0, 1], got {t}")
    w = check_adjacency(weights)
    dense = w >= t
    np.fill_diagonal(dense, False)
    return BinaryGraph.from_dense(dense)


def _density_rank(w):
    """Rank of each node pair in the keep order: weight desc, then pair asc.

    Pairs are the upper triangle in row-major order.  Returns (ranks, rows,
    cols) where ranks[i] is the position of pair i in the keep order.
    """
    rows, cols = np.triu_indices(w.shape[0], k=1)
    pair_w = w[rows, cols]
    order = np.lexsort((np.arange(pair_w.size), -pair_w))
    ranks = np.empty(pair_w.size, dtype=np.int64)
    ranks[order] = np.arange(pair_w.size)
    return ranks, rows, cols


def density_edge_count(p, t):
    """Number of retained edges under density thresholding at sparsity t."""
    return int(round((1.0 - t) * (p * (p - 1) // 2)))


def threshold_density(weights, t):
    """Keep the k strongest edges, k = round((1-t) * p(p-1)/2).

    ``t`` is the sparsity parameter: the fraction of possible edges removed
    (t = 0 keeps the complete graph, t = 1 none).  Ties are broken by
    descending weight, then ascending (r, s) pair order.
    """
    if not 0 <= t <= 1:
        raise ValueError(f"sparsity parameter must lie in [0, 1], got {t}")
    w = check_adjacency(weights)
    p = w.shape[0]
    ranks, rows, cols = _density_rank(w)
    keep = ranks < density_edge_count(p, t)
    dense = np.zeros((p, p), dtype=bool)
    dense[rows[keep], cols[keep]] = True
    dense |= dense.T
    return BinaryGraph.from_dense(dense)


def _as_stack(graph):
    if isinstance(graph, BinaryGraph):
        return graph.to_dense()[None, :, :]
    dense = np.asarray(graph, dtype=bool)
    if dense.ndim != 2 or dense.shape[0] != dense.shape[1]:
        raise ValueError("binary graph must be a square matrix or BinaryGraph")
    dense = dense.copy()
    np.fill_diagonal(dense, False)
    return dense[None, :, :]


def _cc_stack(stack):
    """Mean local clustering coefficient for a (g, p, p) boolean stack."""
    a = stack.astype(np.float64)
    deg = a.sum(axis=-1)
    # (A @ A) * A summed over the last axis counts closed 2-paths per node,
    # i.e. twice the triangle count; deg*(deg-1) counts ordered neighbour
    # pairs, so the ratio is the local clustering coefficient.
    closed = np.einsum("gik,gik->gi", np.matmul(a, a), a)
    triples = deg * (deg - 1.0)
    local = np.where(deg >= 2.0, closed / np.maximum(triples, 1.0), 0.0)
    return local.mean(axis=-1)


def _cpl_stack(stack):
    """Characteristic path length for a (g, p, p) boolean stack.

    Mean shortest-path length over connected node pairs; unreachable pairs
    are excluded, and a graph with no edges yields 0.
    """
    g, p, _ = stack.shape
    eye = np.eye(p, dtype=bool)
    reach = stack.copy()
    pair_count = reach.sum(axis=(1, 2)).astype(np.float64)
    dist_total = pair_count.copy()
    d = 1
    while d < p - 1:
        grown = np.matmul(reach.astype(np.float64), stack.astype(np.float64)) > 0
        grown |= reach
        grown &= ~eye
        new = grown & ~reach
        if not new.any():
            break
        d += 1
        cnt = new.sum(axis=(1, 2)).astype(np.float64)
        dist_total += cnt * d
        pair_count += cnt
        reach = grown
    return np.where(pair_count > 0, dist_total / np.maximum(pair_count, 1.0), 0.0)


def clustering_coefficient(graph):
    """Mean local clustering coefficient; nodes of degree < 2 contribute 0."""
    stack = _as_stack(graph)
    if stack.shape[1] < 3:
        raise ValueError("clustering coefficient requires at least 3 nodes")
    return float(_cc_stack(stack)[0])


def characteristic_path_length(graph):
    """Mean shortest-path length over connected node pairs (0 if no edges)."""
    return float(_cpl_stack(_as_stack(graph))[0])


def _binary_stacks(w, strategy, grid):
    """(|grid|, p, p) boolean stack of sparsified graphs."""
    p = w.shape[0]
    if strategy == "weight":
        stack = w[None, :, :] >= grid[:, None, None]
        diag = np.einsum("gii->gi", stack)
        diag[...] = False
        return stack
    if strategy == "density":
        ranks, rows, cols = _density_rank(w)
        n_pairs = p * (p - 1) // 2
        ks = np.array([density_edge_count(p, t) for t in grid])
        keep = ranks[None, :] < ks[:, None]  # (g, n_pairs)
        stack = np.zeros((grid.size, p, p), dtype=bool)
        stack[:, rows, cols] = keep
        stack |= stack.transpose(0, 2, 1)
        return stack
    raise ValueError(f"unknown strategy {strategy!r}")


def feature_curve(weights, feature="cc", strategy="weight", grid=None):
    """Evaluate one graph feature at every grid threshold.

    Returns a vector of length ``len(grid)``; equals applying
    :func:`clustering_coefficient` / :func:`characteristic_path_length` to
    the sparsified graph at each threshold in turn.
    """
    from .grid import default_grid

    grid = default_grid() if grid is None else check_grid(grid)
    if feature not in FEATURES:
        raise ValueError(f"feature must be one of {FEATURES}, got {feature!r}")
    w = check_adjacency(weights)
    if feature == "cc" and w.shape[0] < 3:
        raise ValueError("clustering coefficient requires at least 3 nodes")
    stack = _binary_stacks(w, strategy, grid)
    return _cc_stack(stack) if feature == "cc" else _cpl_stack(stack)


def feature_curves(matrices, feature="cc", strategy="weight", grid=None,
                   n_threads=1):
    """Feature curves for a sequence of weight matrices, one row per subject.

    Rows are assembled in input order regardless of ``n_threads``, so the
    result is identical for any degree of parallelism.
    """
    from .grid import default_grid

    grid = default_grid() if grid is None else check_grid(grid)
    matrices = list(matrices)
    out = np.empty((len(matrices), grid.size))

    def one(i):
        out[i] = feature_curve(matrices[i], feature, strategy, grid)

    if n_threads > 1 and len(matrices) > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            list(pool.map(one, range(len(matrices))))
    else:
        for i in range(len(matrices)):
            one(i)
    return out
