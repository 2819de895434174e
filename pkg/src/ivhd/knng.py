"""k-nearest-neighbor graphs: exact construction, neighbor-exploration
refinement, reverse-neighbor sets, connectivity, rigidity bound and a binary
disk cache.

Everything orders neighbors by (distance, index): on exact distance ties the
smaller index wins, matching the rank tie rule used by the quality metrics.
"""

import os
from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import (
    DegenerateMetricError,
    DimensionMismatchError,
    InvalidArgumentError,
    MalformedInputError,
)

_METRIC_IDS = {"euclidean": 0, "cosine": 1, "precomputed": 2}
_CACHE_MAGIC = b"IVHG"


@dataclass
class KnnGraph:
    """Per-point neighbor lists, rows sorted ascending by (distance, index)."""

    neighbors: np.ndarray  # (M, k) int32
    distances: np.ndarray | None  # (M, k) float64, optional
    metric: str = "euclidean"

    def __post_init__(self):
        self.neighbors = np.asarray(self.neighbors, dtype=np.int32)
        if self.neighbors.ndim != 2:
            raise DimensionMismatchError("neighbors must be an M x k matrix")
        if self.distances is not None:
            self.distances = np.asarray(self.distances, dtype=np.float64)
            if self.distances.shape != self.neighbors.shape:
                raise DimensionMismatchError("distances shape must match neighbors")
        if self.metric not in _METRIC_IDS:
            raise InvalidArgumentError(f"unknown metric {self.metric!r}")

    @property
    def M(self):
        return self.neighbors.shape[0]

    @property
    def k(self):
        return self.neighbors.shape[1]

    def validate(self):
        m, k = self.neighbors.shape
        if (self.neighbors == np.arange(m)[:, None]).any():
            raise InvalidArgumentError("graph contains self-loops")
        if self.neighbors.min() < 0 or self.neighbors.max() >= m:
            raise InvalidArgumentError("neighbor index out of range")
        if self.distances is not None:
            if (self.distances < 0).any():
                raise InvalidArgumentError("negative neighbor distance")
            d = self.distances
            tied = d[:, :-1] == d[:, 1:]
            if (d[:, :-1] > d[:, 1:]).any():
                raise InvalidArgumentError("neighbor rows are not sorted by distance")
            if (tied & (self.neighbors[:, :-1] > self.neighbors[:, 1:])).any():
                raise InvalidArgumentError("distance ties are not index-ordered")
        return self


@dataclass
class RnnSets:
    """Reverse-nearest-neighbor lists in CSR layout (sources sorted ascending)."""

    indptr: np.ndarray
    indices: np.ndarray

    def __getitem__(self, i):
        return self.indices[self.indptr[i] : self.indptr[i + 1]]

    def __len__(self):
        return len(self.indptr) - 1

    def counts(self):
        return np.diff(self.indptr)

    def gather(self, points):
        if len(points) == 0:
            return np.empty(0, dtype=self.indices.dtype)
        return np.concatenate([self[int(p)] for p in points])


def rigidity_bound(m, n):
    """Minimum edge count for an n-rigid structure of m joints."""
    if not (m >= n >= 1):
        raise InvalidArgumentError(f"need M >= n >= 1, got M={m}, n={n}")
    return n * m - n * (n + 1) // 2


# -------------------------------------------------------------- exact build


def _prep_matrix(data, metric):
    X = np.asarray(data, dtype=np.float64)
    if metric == "cosine":
        norms = np.linalg.norm(X, axis=1)
        bad = np.nonzero(norms == 0.0)[0]
        if bad.size:
            raise DegenerateMetricError(
                "zero-norm vector under cosine metric", row=int(bad[0])
            )
        X = X / norms[:, None]
    return X


def _chunk_rows(total, bytes_per_row, budget=256 << 20):
    rows = max(1, int(budget // max(bytes_per_row, 1)))
    return min(total, rows)


def _row_topk(dist_block, row_offset, k, out_idx, out_dist):
    """Select k smallest entries per row with (distance, index) tie order."""
    b, m = dist_block.shape
    rows = np.arange(b)
    dist_block[rows, row_offset + rows] = np.inf  # mask self

    if k >= m - 1:
        order = np.lexsort((np.broadcast_to(np.arange(m), (b, m)), dist_block), axis=1)
        chosen = order[:, :k]
        out_idx[row_offset : row_offset + b] = chosen
        out_dist[row_offset : row_offset + b] = np.take_along_axis(
            dist_block, chosen, axis=1
        )
        return

    cand = np.argpartition(dist_block, k, axis=1)[:, : k + 1]
    vals = np.take_along_axis(dist_block, cand, axis=1)
    order = np.lexsort((cand, vals), axis=1)
    cand = np.take_along_axis(cand, order, axis=1)
    vals = np.take_along_axis(vals, order, axis=1)

    # A value tie across the k-th/(k+1)-th boundary means the partition may
    # have dropped a smaller-index entry; redo those rows over the full row.
    boundary = np.nonzero(vals[:, k - 1] == vals[:, k])[0]
    out_idx[row_offset : row_offset + b] = cand[:, :k]
    out_dist[row_offset : row_offset + b] = vals[:, :k]
    for r in boundary:
        row = dist_block[r]
        kth = vals[r, k - 1]
        wide = np.nonzero(row <= kth)[0]
        worder = np.lexsort((wide, row[wide]))[:k]
        chosen = wide[worder]
        out_idx[row_offset + r] = chosen
        out_dist[row_offset + r] = row[chosen]


def build_exact_knn(dataset_or_matrix, k, metric="euclidean", chunk_budget=256 << 20):
    """Exact kNN graph by chunked scan; deterministic for any chunking.

    For euclidean/cosine the input is the feature matrix (or Dataset); for
    "precomputed" it is a square distance matrix.
    """
    data = getattr(dataset_or_matrix, "data", dataset_or_matrix)
    data = np.asarray(data)
    m = data.shape[0]
    if not (1 <= k < m):
        raise InvalidArgumentError(f"k must satisfy 1 <= k < M, got k={k}, M={m}")

    out_idx = np.empty((m, k), dtype=np.int32)
    out_dist = np.empty((m, k), dtype=np.float64)

    if metric == "precomputed":
        if data.ndim != 2 or data.shape[0] != data.shape[1]:
            raise DimensionMismatchError("precomputed metric needs a square matrix")
        D = np.array(data, dtype=np.float64)
        _row_topk(D, 0, k, out_idx, out_dist)
        return KnnGraph(out_idx, out_dist, metric=metric)

    X = _prep_matrix(data, metric)
    sq = np.einsum("ij,ij->i", X, X)
    rows = _chunk_rows(m, m * 8 + X.shape[1] * 8)
    for start in range(0, m, rows):
        stop = min(start + rows, m)
        g = X[start:stop] @ X.T
        if metric == "euclidean":
            block = sq[start:stop, None] + sq[None, :] - 2.0 * g
            np.maximum(block, 0.0, out=block)
            np.sqrt(block, out=block)
        else:
            block = 1.0 - g
            np.maximum(block, 0.0, out=block)
        _row_topk(block, start, k, out_idx, out_dist)
    return KnnGraph(out_idx, out_dist, metric=metric)


def _pairwise(X, idx_from, idx_to, metric):
    """Distances between X[idx_from[r]] and X[idx_to[r]] (row-wise)."""
    a = X[idx_from]
    b = X[idx_to]
    if metric == "cosine":
        return np.maximum(1.0 - np.einsum("ij,ij->i", a, b), 0.0)
    diff = a - b
    return np.sqrt(np.einsum("ij,ij->i", diff, diff))


# ----------------------------------------------- neighbor-exploration refine


def refine_neighbor_exploration(graph, dataset, iterations=1):
    """Improve an approximate graph by probing neighbors-of-neighbors.

    Candidates for each point are its current neighbors, its reverse
    neighbors, and the neighbors of both. Recall against the exact graph is
    nondecreasing per pass, and an exact graph is a fixed point.
    """
    data = getattr(dataset, "data", dataset)
    X = _prep_matrix(data, graph.metric)
    if graph.metric == "precomputed":
        raise InvalidArgumentError("refinement needs a feature-space metric")
    if X.shape[0] != graph.M:
        raise DimensionMismatchError("graph and dataset row counts differ")

    m, k = graph.M, graph.k
    nbrs = graph.neighbors.copy()
    dists = (
        graph.distances.copy()
        if graph.distances is not None
        else _pairwise(X, np.repeat(np.arange(m), k), nbrs.ravel(), graph.metric).reshape(m, k)
    )

    for _ in range(iterations):
        rev = reverse_neighbors(KnnGraph(nbrs, None, metric=graph.metric))
        new_nbrs = np.empty_like(nbrs)
        new_dists = np.empty_like(dists)
        for i in range(m):
            ring = np.concatenate([nbrs[i], rev[i]])
            cand = np.concatenate([ring, nbrs[ring].ravel(), rev.gather(ring)])
            cand = np.unique(cand)
            cand = cand[cand != i]
            d = _pairwise(X, np.full(cand.shape, i), cand, graph.metric)
            order = np.lexsort((cand, d))[:k]
            new_nbrs[i] = cand[order]
            new_dists[i] = d[order]
        nbrs, dists = new_nbrs, new_dists
    return KnnGraph(nbrs, dists, metric=graph.metric)


def recall_against(graph, exact):
    """Fraction of exact neighbor slots recovered by `graph`."""
    hits = 0
    for i in range(graph.M):
        hits += np.intersect1d(graph.neighbors[i], exact.neighbors[i]).size
    return hits / exact.neighbors.size


# ------------------------------------------------------------- connectivity


def largest_connected_component(graph):
    """Size and membership mask of the largest component (edges undirected)."""
    m, k = graph.neighbors.shape
    src = np.repeat(np.arange(m, dtype=np.int32), k)
    dst = graph.neighbors.ravel()
    adj = coo_matrix((np.ones(src.size, dtype=np.int8), (src, dst)), shape=(m, m))
    n_comp, labels = connected_components(adj, directed=False)
    counts = np.bincount(labels, minlength=n_comp)
    best = int(np.argmax(counts))
    return int(counts[best]), labels == best


def reverse_neighbors(helper):
    """Invert the helper adjacency: j in RNN(i) iff i in helper-kNN(j)."""
    m, k = helper.neighbors.shape
    flat_targets = helper.neighbors.ravel()
    sources = np.repeat(np.arange(m, dtype=np.int32), k)
    order = np.argsort(flat_targets, kind="stable")
    sorted_targets = flat_targets[order]
    indptr = np.searchsorted(sorted_targets, np.arange(m + 1))
    return RnnSets(indptr.astype(np.int64), sources[order])


# -------------------------------------------------------------------- cache


def cache_write(graph, path):
    """Binary cache: magic, version, M, k, metric id, distance flag, payload."""
    has_dist = graph.distances is not None
    header = np.asarray(
        [1, graph.M, graph.k, _METRIC_IDS[graph.metric], int(has_dist)], dtype="<u4"
    )
    try:
        with open(path, "wb") as fh:
            fh.write(_CACHE_MAGIC)
            fh.write(header.tobytes())
            fh.write(np.ascontiguousarray(graph.neighbors, dtype="<u4").tobytes())
            if has_dist:
                fh.write(np.ascontiguousarray(graph.distances, dtype="<f4").tobytes())
    except OSError as exc:
        raise MalformedInputError(f"{path}: cannot write graph cache: {exc}")


def cache_read(path):
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise MalformedInputError(f"{path}: cannot read graph cache: {exc}")
    if blob[:4] != _CACHE_MAGIC:
        raise MalformedInputError(f"{path}: not a graph cache file")
    version, m, k, metric_id, has_dist = np.frombuffer(blob[4:24], dtype="<u4")
    if version != 1:
        raise MalformedInputError(f"{path}: unsupported cache version {version}")
    offset = 24
    nbytes = int(m) * int(k) * 4
    if len(blob) < offset + nbytes * (1 + int(has_dist)):
        raise MalformedInputError(f"{path}: truncated graph cache")
    neighbors = (
        np.frombuffer(blob[offset : offset + nbytes], dtype="<u4")
        .reshape(int(m), int(k))
        .astype(np.int32)
    )
    offset += nbytes
    distances = None
    if has_dist:
        distances = (
            np.frombuffer(blob[offset : offset + nbytes], dtype="<f4")
            .reshape(int(m), int(k))
            .astype(np.float64)
        )
    metric = {v: key for key, v in _METRIC_IDS.items()}[int(metric_id)]
    return KnnGraph(neighbors, distances, metric=metric)


def export_edges_csv(graph, path):
    """Edge list as i,j,dist rows (dist blank when not stored)."""
    with open(path, "w") as fh:
        for i in range(graph.M):
            for c in range(graph.k):
                j = graph.neighbors[i, c]
                if graph.distances is not None:
                    fh.write(f"{i},{j},{float(graph.distances[i, c])!r}\n")
                else:
                    fh.write(f"{i},{j},\n")


def ensure_dir(path):
    d = os.path.dirname(os.path.abspath(path))
    if d:
        os.makedirs(d, exist_ok=True)
    return path
