import numpy as np
import pytest

from ivhd.datasets import Dataset, SyntheticSpec, generate_synthetic
from ivhd.errors import (
    DegenerateMetricError,
    InvalidArgumentError,
    MalformedInputError,
)
from ivhd.knng import (
    KnnGraph,
    build_exact_knn,
    cache_read,
    cache_write,
    export_edges_csv,
    largest_connected_component,
    recall_against,
    refine_neighbor_exploration,
    reverse_neighbors,
    rigidity_bound,
)


def oracle_knn(X, k, metric="euclidean"):
    """Quadratic scan with naive per-pair distances and the index tie rule."""
    X = np.asarray(X, dtype=np.float64)
    m = len(X)
    if metric == "cosine":
        Xn = X / np.linalg.norm(X, axis=1, keepdims=True)
    idx = np.empty((m, k), dtype=np.int64)
    dist = np.empty((m, k))
    for i in range(m):
        cand = []
        for j in range(m):
            if j == i:
                continue
            if metric == "euclidean":
                d = np.sqrt(((X[i] - X[j]) ** 2).sum())
            else:
                d = max(1.0 - float(Xn[i] @ Xn[j]), 0.0)
            cand.append((d, j))
        cand.sort()
        idx[i] = [j for _, j in cand[:k]]
        dist[i] = [d for d, _ in cand[:k]]
    return idx, dist


class TestExactBuild:
    def test_collinear_tie_break(self):
        X = np.array([[0.0], [1.0], [2.0], [3.0]])
        g = build_exact_knn(X, 1)
        assert g.neighbors.ravel().tolist() == [1, 0, 1, 2]

    def test_unit_square_ties(self):
        # exact representable ties: smaller index wins
        X = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
        g = build_exact_knn(X, 3)
        assert g.neighbors[0].tolist() == [1, 2, 3]
        assert g.neighbors[3].tolist() == [1, 2, 0]
        # boundary tie at k=1 picks the smaller index
        g1 = build_exact_knn(X, 1)
        assert g1.neighbors.ravel().tolist() == [1, 0, 0, 1]

    def test_matches_oracle_euclidean(self):
        rng = np.random.default_rng(0)
        X = rng.standard_normal((100, 10))
        g = build_exact_knn(X, 5)
        idx, _ = oracle_knn(X, 5)
        np.testing.assert_array_equal(g.neighbors, idx)

    def test_matches_oracle_cosine(self):
        rng = np.random.default_rng(1)
        X = rng.standard_normal((80, 6))
        g = build_exact_knn(X, 4, metric="cosine")
        idx, _ = oracle_knn(X, 4, metric="cosine")
        np.testing.assert_array_equal(g.neighbors, idx)

    def test_chunking_invariance(self):
        rng = np.random.default_rng(2)
        X = rng.standard_normal((64, 4))
        g1 = build_exact_knn(X, 3)
        g2 = build_exact_knn(X, 3, chunk_budget=4096)
        np.testing.assert_array_equal(g1.neighbors, g2.neighbors)

    def test_hypertetrahedra_intra_simplex(self):
        d = generate_synthetic(SyntheticSpec("hypertetrahedra-pair", 38, 18, seed=5))
        g = build_exact_knn(d, 2)
        # brute-force check over all 38x37 pairs: neighbors stay in-simplex
        side = d.labels[g.neighbors]
        np.testing.assert_array_equal(side, np.repeat(d.labels[:, None], 2, axis=1))

    def test_k_bounds(self):
        X = np.zeros((4, 2))
        with pytest.raises(InvalidArgumentError):
            build_exact_knn(X, 4)
        with pytest.raises(InvalidArgumentError):
            build_exact_knn(X, 0)

    def test_cosine_zero_norm_names_row(self):
        X = np.array([[1.0, 0.0], [0.0, 0.0], [0.0, 1.0]])
        with pytest.raises(DegenerateMetricError, match="row 1"):
            build_exact_knn(X, 1, metric="cosine")

    def test_precomputed(self):
        D = np.array(
            [[0.0, 1.0, 4.0], [1.0, 0.0, 2.0], [4.0, 2.0, 0.0]]
        )
        g = build_exact_knn(D, 2, metric="precomputed")
        assert g.neighbors[0].tolist() == [1, 2]
        assert g.neighbors[2].tolist() == [1, 0]

    def test_precomputed_requires_square(self):
        from ivhd.errors import DimensionMismatchError

        with pytest.raises(DimensionMismatchError):
            build_exact_knn(np.zeros((3, 4)), 1, metric="precomputed")

    def test_full_k_equals_m_minus_one(self):
        rng = np.random.default_rng(3)
        X = rng.standard_normal((12, 3))
        g = build_exact_knn(X, 11)
        idx, _ = oracle_knn(X, 11)
        np.testing.assert_array_equal(g.neighbors, idx)

    def test_rows_sorted_and_validate(self):
        rng = np.random.default_rng(4)
        g = build_exact_knn(rng.standard_normal((50, 5)), 6)
        g.validate()
        assert (np.diff(g.distances, axis=1) >= 0).all()


class TestRefinement:
    def test_exact_graph_is_fixed_point(self):
        rng = np.random.default_rng(0)
        X = rng.standard_normal((60, 5))
        exact = build_exact_knn(X, 4)
        refined = refine_neighbor_exploration(exact, X, iterations=3)
        np.testing.assert_array_equal(refined.neighbors, exact.neighbors)

    def test_recall_increases_on_corrupted_graph(self):
        rng = np.random.default_rng(1)
        X = rng.standard_normal((500, 10))
        exact = build_exact_knn(X, 5)
        nbrs = exact.neighbors.copy()
        corrupt = rng.random(nbrs.shape) < 0.5
        random_nbrs = rng.integers(0, 500, size=nbrs.shape)
        random_nbrs = np.where(random_nbrs == np.arange(500)[:, None],
                               (random_nbrs + 1) % 500, random_nbrs)
        nbrs[corrupt] = random_nbrs[corrupt]
        rough = KnnGraph(nbrs, None, metric="euclidean")
        r0 = recall_against(rough, exact)
        last = r0
        g = rough
        for _ in range(5):
            g = refine_neighbor_exploration(g, X, iterations=1)
            r = recall_against(g, exact)
            assert r >= last - 1e-12
            last = r
        assert last > r0

    def test_chain_converges_fast(self):
        # collinear points with a shifted ring as the k=1 seed graph
        X = np.arange(6, dtype=np.float64)[:, None]
        seed = KnnGraph(((np.arange(6) + 1) % 6)[:, None], None, metric="euclidean")
        exact = build_exact_knn(X, 1)
        g = refine_neighbor_exploration(seed, X, iterations=2)
        np.testing.assert_array_equal(g.neighbors, exact.neighbors)


class TestComponentsAndReverse:
    def test_two_simplices_two_components(self):
        d = generate_synthetic(SyntheticSpec("hypertetrahedra-pair", 38, 18, seed=7))
        g = build_exact_knn(d, 2)
        size, mask = largest_connected_component(g)
        assert size == 19
        assert mask.sum() == 19

    def test_fully_connected(self):
        rng = np.random.default_rng(2)
        g = build_exact_knn(rng.standard_normal((10, 2)), 9)
        size, mask = largest_connected_component(g)
        assert size == 10 and mask.all()

    def test_single_point(self):
        g = KnnGraph(np.empty((1, 0), dtype=np.int32), None)
        size, mask = largest_connected_component(g)
        assert size == 1 and mask.tolist() == [True]

    def test_reverse_neighbors_figure_configuration(self):
        # p4's two nearest are p2 and p3, but nobody lists p4 back
        pts = np.array([[0.0, 0.0], [1.0, 0.0], [1.2, 0.4], [3.0, 0.0]])
        helper = build_exact_knn(pts, 2)
        assert helper.neighbors[3].tolist() == [2, 1]
        rnn = reverse_neighbors(helper)
        assert rnn[3].size == 0
        assert 3 in rnn[1] and 3 in rnn[2]

    def test_mutual_pair(self):
        pts = np.array([[0.0], [1.0], [10.0], [11.0]])
        g = build_exact_knn(pts, 1)
        rnn = reverse_neighbors(g)
        assert rnn[0].tolist() == [1] and rnn[1].tolist() == [0]

    def test_matches_brute_force_inversion(self):
        rng = np.random.default_rng(3)
        g = build_exact_knn(rng.standard_normal((200, 8)), 6)
        rnn = reverse_neighbors(g)
        for i in range(200):
            expected = sorted(
                j for j in range(200) if i in g.neighbors[j]
            )
            assert rnn[i].tolist() == expected

    def test_rnn_invariant_iff(self):
        rng = np.random.default_rng(4)
        g = build_exact_knn(rng.standard_normal((60, 3)), 4)
        rnn = reverse_neighbors(g)
        for i in range(60):
            for j in range(60):
                assert (j in rnn[i]) == (i in g.neighbors[j])


class TestRigidityAndCache:
    def test_bound_values(self):
        assert rigidity_bound(10, 2) == 17
        assert rigidity_bound(38, 2) == 73
        assert rigidity_bound(5, 3) == 9

    def test_bound_preconditions(self):
        with pytest.raises(InvalidArgumentError):
            rigidity_bound(1, 2)

    def test_augmented_edges_exceed_bound(self):
        for m in (3, 10, 100, 10000):
            for nn in (2, 3):
                rn = 1
                if nn + rn >= 3:
                    assert nn * m + rn * m >= rigidity_bound(m, 2)

    def test_cache_roundtrip(self, tmp_path):
        rng = np.random.default_rng(5)
        g = build_exact_knn(rng.standard_normal((120, 6)), 5, metric="cosine")
        p = tmp_path / "g.knng"
        cache_write(g, str(p))
        back = cache_read(str(p))
        np.testing.assert_array_equal(back.neighbors, g.neighbors)
        assert back.metric == "cosine"
        np.testing.assert_allclose(back.distances, g.distances, rtol=1e-6, atol=1e-7)
        # a second write of the reloaded graph is byte-identical
        p2 = tmp_path / "g2.knng"
        cache_write(back, str(p2))
        assert p.read_bytes() == p2.read_bytes()

    def test_cache_bad_magic(self, tmp_path):
        p = tmp_path / "junk"
        p.write_bytes(b"NOPE" + b"\x00" * 40)
        with pytest.raises(MalformedInputError):
            cache_read(str(p))

    def test_cache_missing_file(self, tmp_path):
        with pytest.raises(MalformedInputError, match="cannot read"):
            cache_read(str(tmp_path / "missing"))

    def test_edge_export(self, tmp_path):
        g = build_exact_knn(np.array([[0.0], [1.0], [3.0]]), 1)
        p = tmp_path / "edges.csv"
        export_edges_csv(g, str(p))
        lines = p.read_text().strip().splitlines()
        assert lines[0] == "0,1,1.0"
        assert len(lines) == 3

    def test_dataset_input(self):
        d = Dataset(np.random.default_rng(6).standard_normal((30, 4)))
        g = build_exact_knn(d, 3)
        assert g.M == 30
