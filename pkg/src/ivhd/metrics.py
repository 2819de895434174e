"""Embedding quality measurement: rank-based curves (neighborhood agreement,
its random-baseline rescaling and the log-k area under it), class-aware kNN
gain, trustworthiness/continuity, neighbor hit, and Shepard/co-rank samples.

Ranks use the tie rule "smaller index wins on equal distance" everywhere.
Row blocks are streamed so no M x M matrix is materialized for large inputs.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatchError, InvalidArgumentError

_BLOCK_BUDGET = 128 << 20  # bytes of scratch per distance block


@dataclass
class RankData:
    """Full rank matrices for a (X, Y) pair; rank[i, i] is 0 by convention."""

    hd_ranks: np.ndarray
    ld_ranks: np.ndarray | None = None


@dataclass
class MetricCurves:
    """Per-k quality curves plus scalar summaries."""

    k: np.ndarray
    q_nx: np.ndarray
    r_nx: np.ndarray
    auc_rnx: float
    g_nn: np.ndarray | None = None
    auc_gnn: float | None = None
    trust: dict = field(default_factory=dict)  # k -> M1(k)
    continuity: dict = field(default_factory=dict)  # k -> M2(k)
    cf_nn: np.ndarray | None = None
    cf: float | None = None

    def summary(self):
        out = {"auc_rnx": self.auc_rnx}
        if self.auc_gnn is not None:
            out["auc_gnn"] = self.auc_gnn
        if self.cf is not None:
            out["cf"] = self.cf
            for probe in (2, 10, 100):
                if self.cf_nn is not None and probe <= len(self.cf_nn):
                    out[f"cf_{probe}"] = float(self.cf_nn[probe - 1])
        for k, v in self.trust.items():
            out[f"trustworthiness_k{k}"] = v
        for k, v in self.continuity.items():
            out[f"continuity_k{k}"] = v
        return out


def _as_matrix(data):
    mat = np.asarray(getattr(data, "data", data), dtype=np.float64)
    if mat.ndim != 2:
        raise DimensionMismatchError(f"expected a 2-D matrix, got shape {mat.shape}")
    return mat


def _block_rows(m, per_row_bytes):
    return max(1, min(m, int(_BLOCK_BUDGET // max(per_row_bytes, 1))))


class _BlockSource:
    """Produces row blocks of squared distances (or given distances)."""

    def __init__(self, X, precomputed=False):
        self.X = X
        self.precomputed = precomputed
        if precomputed:
            if X.shape[0] != X.shape[1]:
                raise DimensionMismatchError("precomputed distances must be square")
            self.sq = None
        else:
            self.sq = np.einsum("ij,ij->i", X, X)

    def block(self, start, stop):
        if self.precomputed:
            return np.array(self.X[start:stop], dtype=np.float64)
        block = (
            self.sq[start:stop, None]
            + self.sq[None, :]
            - 2.0 * (self.X[start:stop] @ self.X.T)
        )
        np.maximum(block, 0.0, out=block)
        return block


def _distance_blocks(X, precomputed=False):
    """Yield (start, stop, block) of squared distances (or given distances)."""
    m = X.shape[0]
    src = _BlockSource(X, precomputed)
    rows = _block_rows(m, m * 8 * 3)
    for start in range(0, m, rows):
        stop = min(start + rows, m)
        yield start, stop, src.block(start, stop)


def _rank_block(block, row_offset):
    """Rank rows (1..M-1, self = 0) and the per-row neighbor order."""
    b, m = block.shape
    rows = np.arange(b)
    block[rows, row_offset + rows] = np.inf  # self sorts last
    idx = np.broadcast_to(np.arange(m), (b, m))
    order = np.lexsort((idx, block), axis=1)
    ranks = np.empty((b, m), dtype=np.int64)
    np.put_along_axis(ranks, order, np.broadcast_to(np.arange(1, m + 1), (b, m)), axis=1)
    ranks[rows, row_offset + rows] = 0
    return ranks, order


def compute_ranks(distances=None, dataset=None, ld_distances=None):
    """Exact rank matrix (matrices) under the index tie rule.

    Accepts a square distance matrix or a Dataset/feature matrix. When
    ld_distances is given the result carries both high- and low-dimensional
    ranks.
    """
    if (distances is None) == (dataset is None):
        raise InvalidArgumentError("pass exactly one of distances / dataset")
    if distances is not None:
        D = _as_matrix(distances)
        if D.shape[0] != D.shape[1]:
            raise DimensionMismatchError("distance matrix must be square")
        source, pre = D, True
    else:
        source, pre = _as_matrix(dataset), False
    m = source.shape[0]
    if m < 2:
        raise InvalidArgumentError("need at least two points to rank")

    hd = np.empty((m, m), dtype=np.int64)
    for start, stop, block in _distance_blocks(source, precomputed=pre):
        hd[start:stop], _ = _rank_block(block, start)

    ld = None
    if ld_distances is not None:
        ld = compute_ranks(distances=ld_distances).hd_ranks
    return RankData(hd_ranks=hd, ld_ranks=ld)


# --------------------------------------------------------------- curve engine


def _curve_pass(X, Y, labels, k_max, report_ks, x_precomputed=False):
    """One streamed pass accumulating Q_NX counts, G_NN sums and M1/M2 terms."""
    m = X.shape[0]
    agree = np.zeros(m + 1, dtype=np.int64)  # bincount of max(rho, r)
    same_ld = np.zeros(k_max, dtype=np.int64)
    same_hd = np.zeros(k_max, dtype=np.int64)
    trust_pen = dict.fromkeys(report_ks, 0)
    cont_pen = dict.fromkeys(report_ks, 0)

    x_src = _BlockSource(X, x_precomputed)
    y_src = _BlockSource(Y)
    block_rows = _block_rows(m, m * 8 * 6)
    for start in range(0, m, block_rows):
        stop = min(start + block_rows, m)
        hd, hd_order = _rank_block(x_src.block(start, stop), start)
        ld, ld_order = _rank_block(y_src.block(start, stop), start)

        peak = np.maximum(hd, ld)
        rows = np.arange(stop - start)
        peak[rows, start + rows] = m  # self never agrees
        counts = np.bincount(np.minimum(peak, m).ravel(), minlength=m + 1)
        agree += counts

        if labels is not None:
            own = labels[start + rows][:, None]
            same_ld += (labels[ld_order[:, :k_max]] == own).sum(axis=0)
            same_hd += (labels[hd_order[:, :k_max]] == own).sum(axis=0)

        for k in report_ks:
            entrants = (ld <= k) & (hd > k)
            trust_pen[k] += int((hd[entrants] - k).sum())
            leavers = (hd <= k) & (hd > 0) & (ld > k)
            cont_pen[k] += int((ld[leavers] - k).sum())
    return agree, same_ld, same_hd, trust_pen, cont_pen


def rnx_curve(X, Y, k_max=None):
    """Neighborhood-agreement curves and their log-k area.

    Q_NX(k) averages |k-NN(X) intersect k-NN(Y)| / k; R_NX rescales it so 0 is
    a random embedding and 1 a perfect one; the area weights R_NX(k) by 1/k.
    """
    X, Y = _as_matrix(X), _as_matrix(Y)
    m = X.shape[0]
    if Y.shape[0] != m:
        raise DimensionMismatchError("X and Y row counts differ")
    if m < 4:
        raise InvalidArgumentError("need at least 4 points")
    k_max = default_k_max(m) if k_max is None else int(k_max)
    if not (1 <= k_max <= m - 2):
        raise InvalidArgumentError(f"k_max must be in [1, {m - 2}]")

    agree, _, _, _, _ = _curve_pass(X, Y, None, 1, ())
    return _curves_from_counts(agree, m, k_max)


def default_k_max(m):
    return min(m - 2, 1000)


def _curves_from_counts(agree, m, k_max):
    cum = np.cumsum(agree)[1 : k_max + 1]
    k = np.arange(1, k_max + 1)
    q_nx = cum / (k * m)
    r_nx = ((m - 1) * q_nx - k) / (m - 1 - k)
    inv_k = 1.0 / k
    auc = float(np.sum(r_nx * inv_k) / np.sum(inv_k))
    return k, q_nx, r_nx, auc


def gnn_curve(X, Y, labels, k_max=None):
    """Per-k same-class neighbor gain of the embedding over the source space."""
    if labels is None:
        raise InvalidArgumentError("kNN gain needs class labels")
    X, Y = _as_matrix(X), _as_matrix(Y)
    labels = np.asarray(labels)
    m = X.shape[0]
    k_max = default_k_max(m) if k_max is None else int(k_max)
    if not (1 <= k_max <= m - 2):
        raise InvalidArgumentError(f"k_max must be in [1, {m - 2}]")
    _, same_ld, same_hd, _, _ = _curve_pass(X, Y, labels, k_max, ())
    return _gnn_from_counts(same_ld, same_hd, m, k_max)


def _gnn_from_counts(same_ld, same_hd, m, k_max):
    k = np.arange(1, k_max + 1)
    g = (np.cumsum(same_ld) - np.cumsum(same_hd)) / (k * m)
    inv_k = 1.0 / k
    auc = float(np.sum(g * inv_k) / np.sum(inv_k))
    return k, g, auc


def trust_continuity(X, Y, k):
    """Trustworthiness (entrant penalty) and continuity (leaver penalty) at k."""
    X, Y = _as_matrix(X), _as_matrix(Y)
    m = X.shape[0]
    if Y.shape[0] != m:
        raise DimensionMismatchError("X and Y row counts differ")
    if not (1 <= k < m / 2):
        raise InvalidArgumentError(f"k must satisfy 1 <= k < M/2, got {k}")
    _, _, _, trust_pen, cont_pen = _curve_pass(X, Y, None, 1, (int(k),))
    scale = 2.0 / (m * k * (2 * m - 3 * k - 1))
    return 1.0 - scale * trust_pen[k], 1.0 - scale * cont_pen[k]


def neighbor_hit(y_or_graph, labels, nn_max=100):
    """Same-class fraction of embedded neighborhoods, averaged over sizes.

    Accepts embedded points or a prebuilt KnnGraph over them. cf_nn[j] is the
    fraction for neighborhoods of size j+1; cf averages cf_nn over 1..nn_max.
    """
    if labels is None:
        raise InvalidArgumentError("neighbor hit needs class labels")
    labels = np.asarray(labels)

    from .knng import KnnGraph, build_exact_knn

    if isinstance(y_or_graph, KnnGraph):
        graph = y_or_graph
        if graph.k < nn_max:
            raise InvalidArgumentError(
                f"graph stores {graph.k} neighbors, need nn_max={nn_max}"
            )
        nbrs = graph.neighbors[:, :nn_max]
    else:
        Y = _as_matrix(y_or_graph)
        m = Y.shape[0]
        if not (1 <= nn_max < m):
            raise InvalidArgumentError(f"nn_max must be in [1, M), got {nn_max}")
        if m > 20000 and Y.shape[1] <= 3:
            # Low-dimensional and large: a tree query is much faster, and the
            # averaged hit fraction is insensitive to distance-tie order.
            from scipy.spatial import cKDTree

            _, idx = cKDTree(Y).query(Y, k=nn_max + 1, workers=1)
            nbrs = idx[:, 1:]
        else:
            nbrs = build_exact_knn(Y, nn_max).neighbors
    if labels.shape[0] != nbrs.shape[0]:
        raise DimensionMismatchError("labels and points row counts differ")

    same = labels[nbrs] == labels[:, None]
    per_size = same.cumsum(axis=1).sum(axis=0)  # total hits within first j+1
    sizes = np.arange(1, nn_max + 1)
    cf_nn = per_size / (sizes * labels.shape[0])
    return cf_nn, float(cf_nn.mean())


def shepard_and_corank(X, Y, sample_pairs=10000, seed=0):
    """Sampled distance pairs, rank pairs, and R^2 of co-ranks vs identity."""
    X, Y = _as_matrix(X), _as_matrix(Y)
    m = X.shape[0]
    if Y.shape[0] != m:
        raise DimensionMismatchError("X and Y row counts differ")
    total = m * (m - 1) // 2
    if sample_pairs > total:
        raise InvalidArgumentError(f"at most {total} distinct pairs exist")
    rng = np.random.default_rng(seed)
    flat = rng.choice(total, size=sample_pairs, replace=False)
    i_idx, j_idx = _unrank_pairs(flat, m)

    deltas = np.linalg.norm(X[i_idx] - X[j_idx], axis=1)
    dists = np.linalg.norm(Y[i_idx] - Y[j_idx], axis=1)

    rho = _pair_ranks(X, i_idx, j_idx)
    r = _pair_ranks(Y, i_idx, j_idx)

    resid = r.astype(np.float64) - rho.astype(np.float64)
    centered = r - r.mean()
    ss_tot = float(np.sum(centered * centered))
    r2 = 1.0 - float(np.sum(resid * resid)) / ss_tot if ss_tot > 0 else 1.0
    return (deltas, dists), (rho, r), r2


def _unrank_pairs(flat, m):
    """Map linear indices over the upper triangle to (i, j), i < j."""
    i = (m - 2 - np.floor(np.sqrt(-8.0 * flat + 4.0 * m * (m - 1) - 7) / 2.0 - 0.5)).astype(
        np.int64
    )
    j = (flat + i + 1 - (m * (m - 1)) // 2 + ((m - i) * (m - i - 1)) // 2).astype(np.int64)
    return i, j


def _pair_ranks(Z, i_idx, j_idx):
    """Exact rank of each j among i's neighbors (index tie rule)."""
    order = np.argsort(i_idx, kind="stable")
    ranks = np.empty(len(i_idx), dtype=np.int64)
    sq = np.einsum("ij,ij->i", Z, Z)
    pos = 0
    while pos < len(order):
        end = pos
        i = i_idx[order[pos]]
        while end < len(order) and i_idx[order[end]] == i:
            end += 1
        row = sq[i] + sq - 2.0 * (Z @ Z[i])
        np.maximum(row, 0.0, out=row)
        row[i] = np.inf
        sel = order[pos:end]
        for s in sel:
            j = j_idx[s]
            dij = row[j]
            less = np.count_nonzero(row < dij)
            ties = np.count_nonzero((row == dij) & (np.arange(len(row)) < j))
            ranks[s] = 1 + less + ties
        pos = end
    return ranks


def evaluate_embedding(
    X, Y, labels=None, k_max=None, nn_max=100, report_ks=(15, 50, 100), x_precomputed=False
):
    """Full quality report for an (X, Y) pair in one streamed pass."""
    Xm = _as_matrix(X)
    Ym = _as_matrix(Y)
    m = Xm.shape[0]
    if Ym.shape[0] != m:
        raise DimensionMismatchError("X and Y row counts differ")
    if m < 4:
        raise InvalidArgumentError("need at least 4 points")
    k_max = default_k_max(m) if k_max is None else min(int(k_max), m - 2)
    report_ks = tuple(int(k) for k in report_ks if k < m / 2)
    lab = None if labels is None else np.asarray(labels)

    agree, same_ld, same_hd, trust_pen, cont_pen = _curve_pass(
        Xm, Ym, lab, k_max, report_ks, x_precomputed=x_precomputed
    )
    k, q_nx, r_nx, auc_rnx = _curves_from_counts(agree, m, k_max)
    curves = MetricCurves(k=k, q_nx=q_nx, r_nx=r_nx, auc_rnx=auc_rnx)
    if lab is not None:
        _, g, auc_g = _gnn_from_counts(same_ld, same_hd, m, k_max)
        curves.g_nn, curves.auc_gnn = g, auc_g
        curves.cf_nn, curves.cf = neighbor_hit(Ym, lab, nn_max=min(nn_max, m - 1))
    for kk in report_ks:
        scale = 2.0 / (m * kk * (2 * m - 3 * kk - 1))
        curves.trust[kk] = 1.0 - scale * trust_pen[kk]
        curves.continuity[kk] = 1.0 - scale * cont_pen[kk]
    return curves
