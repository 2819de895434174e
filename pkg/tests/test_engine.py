import numpy as np
import pytest

from ivhd.datasets import SyntheticSpec, generate_synthetic
from ivhd.engine import (
    EmbeddingConfig,
    init_layout,
    rnn_edge_filter,
    run_embedding,
    sample_random_neighbors,
)
from ivhd.errors import InvalidArgumentError, NumericalDivergenceError
from ivhd.knng import build_exact_knn
from ivhd.optim import IntegratorParams


@pytest.fixture(scope="module")
def blob_data():
    rng = np.random.default_rng(0)
    centers = rng.standard_normal((4, 8)) * 4
    data = np.vstack([centers[i] + rng.standard_normal((50, 8)) for i in range(4)])
    return data


@pytest.fixture(scope="module")
def blob_graph(blob_data):
    return build_exact_knn(blob_data, 12)


class TestInitLayout:
    def test_single_point(self):
        y = init_layout(1, 2, seed=0)
        assert y.shape == (1, 2)
        assert np.abs(y).max() <= 1.0

    def test_determinism(self):
        np.testing.assert_array_equal(init_layout(100, 2, 5), init_layout(100, 2, 5))

    def test_seeds_differ(self):
        assert not np.array_equal(init_layout(100, 2, 1), init_layout(100, 2, 2))

    def test_range(self):
        y = init_layout(1000, 3, 3)
        assert y.min() >= -1.0 and y.max() <= 1.0


class TestRandomNeighborSampling:
    def test_forced_choice(self):
        nn_sets = np.array([[1], [2], [0]])
        assign = sample_random_neighbors(3, nn_sets, 1, seed=0)
        assert assign.ravel().tolist() == [2, 0, 1]

    def test_excludes_self_and_nn(self):
        rng = np.random.default_rng(1)
        nn_sets = np.argsort(rng.standard_normal((200, 200)), axis=1)[:, :5]
        nn_sets = np.where(nn_sets == np.arange(200)[:, None], 199, nn_sets)[:, :5]
        assign = sample_random_neighbors(200, nn_sets, 3, seed=2)
        for i in range(200):
            assert i not in assign[i]
            assert not set(assign[i]) & set(nn_sets[i])

    def test_too_small(self):
        with pytest.raises(InvalidArgumentError):
            sample_random_neighbors(3, np.array([[1], [2], [0]]), 2, seed=0)

    def test_uniformity_chi_square(self):
        # 1e5 draws over the allowed set stay within 3 sigma of chi-square
        m = 25
        nn_sets = np.tile(np.array([[1, 2]]), (m, 1))
        nn_sets[1] = [2, 3]
        nn_sets[2] = [3, 4]
        draws = []
        for seed in range(500):
            draws.append(sample_random_neighbors(m, nn_sets, 8, seed=seed))
        counts = np.bincount(np.concatenate([d[0] for d in draws]).ravel(), minlength=m)
        allowed = np.ones(m, bool)
        allowed[[0, 1, 2]] = False  # self + nn of point 0
        assert counts[~allowed].sum() == 0
        exp = counts.sum() / allowed.sum()
        chi2 = float(((counts[allowed] - exp) ** 2 / exp).sum())
        df = allowed.sum() - 1
        assert chi2 < df + 3 * np.sqrt(2 * df)


class TestRunBasics:
    def test_zero_iterations_returns_initial_layout(self, blob_graph):
        cfg = EmbeddingConfig(nn=3, rn=1, c=0.1, iterations=0, seed=11)
        res = run_embedding(graph=blob_graph, config=cfg)
        expected = init_layout(blob_graph.M, 2, np.random.default_rng(11))
        np.testing.assert_array_equal(res.embedding.points, expected)
        assert res.trace.iterations == []
        assert np.isfinite(res.state.stress)

    def test_repeat_runs_bit_identical(self, blob_graph):
        cfg = EmbeddingConfig(nn=3, rn=1, c=0.1, iterations=50, seed=3)
        a = run_embedding(graph=blob_graph, config=cfg)
        b = run_embedding(graph=blob_graph, config=cfg)
        np.testing.assert_array_equal(a.embedding.points, b.embedding.points)
        assert a.trace.stress == b.trace.stress

    def test_thread_count_bit_identical(self, blob_graph):
        cfg = EmbeddingConfig(nn=3, rn=1, c=0.1, iterations=50, seed=3)
        a = run_embedding(graph=blob_graph, config=cfg, threads=1)
        b = run_embedding(graph=blob_graph, config=cfg, threads=4)
        np.testing.assert_array_equal(a.embedding.points, b.embedding.points)
        assert a.trace.stress == b.trace.stress

    def test_all_optimizers_run(self, blob_graph):
        for kind in ("force-directed", "sgd", "momentum", "nesterov", "adam", "adadelta"):
            cfg = EmbeddingConfig(nn=3, rn=1, c=0.1, iterations=30, seed=1, optimizer=kind)
            res = run_embedding(graph=blob_graph, config=cfg)
            assert np.isfinite(res.embedding.points).all(), kind

    def test_divergence_carries_state(self, blob_graph):
        cfg = EmbeddingConfig(
            nn=3, rn=1, c=0.1, iterations=500, seed=1,
            integrator=IntegratorParams(a=1.0, b=1e6, auto_adapt=False),
        )
        with pytest.raises(NumericalDivergenceError) as err:
            run_embedding(graph=blob_graph, config=cfg)
        assert err.value.iteration >= 0
        assert np.isfinite(err.value.state.positions).all()

    def test_stress_decreases_overall(self, blob_graph):
        cfg = EmbeddingConfig(nn=3, rn=1, c=0.05, iterations=400, seed=5)
        res = run_embedding(graph=blob_graph, config=cfg)
        assert res.trace.stress[-1] < res.trace.stress[0]

    def test_labels_carried(self):
        d = generate_synthetic(SyntheticSpec("ball-in-sphere", 300, 8, seed=0))
        g = build_exact_knn(d, 3)
        res = run_embedding(graph=g, config=EmbeddingConfig(iterations=10), dataset=d)
        np.testing.assert_array_equal(res.embedding.labels, d.labels)

    def test_target_dim_3(self, blob_graph):
        cfg = EmbeddingConfig(nn=2, rn=1, c=0.1, iterations=20, seed=2, target_dim=3)
        res = run_embedding(graph=blob_graph, config=cfg)
        assert res.embedding.points.shape == (blob_graph.M, 3)


class TestConfigValidation:
    def test_c_range(self):
        with pytest.raises(InvalidArgumentError):
            EmbeddingConfig(c=0.0)
        with pytest.raises(InvalidArgumentError):
            EmbeddingConfig(c=1.0)

    def test_phase_budget(self):
        with pytest.raises(InvalidArgumentError):
            EmbeddingConfig(iterations=100, l1_final_steps=200)

    def test_nn_rn_warning(self):
        with pytest.warns(UserWarning, match="long-range"):
            EmbeddingConfig(nn=1, rn=2)

    def test_roundtrip_dict(self):
        cfg = EmbeddingConfig(nn=4, rn=2, c=0.05, optimizer="adam")
        back = EmbeddingConfig.from_dict(cfg.to_dict())
        assert back.to_dict() == cfg.to_dict()

    def test_euclidean_needs_distances_and_dataset(self, blob_graph, blob_data):
        from ivhd.knng import KnnGraph

        bare = KnnGraph(blob_graph.neighbors, None)
        cfg = EmbeddingConfig(nn=3, rn=1, distance_mode="euclidean", iterations=5)
        with pytest.raises(InvalidArgumentError, match="distances"):
            run_embedding(graph=bare, config=cfg)
        with pytest.raises(InvalidArgumentError, match="dataset"):
            run_embedding(graph=blob_graph, config=cfg)


class TestModesAndPhases:
    def test_euclidean_mode_runs(self, blob_graph, blob_data):
        from ivhd.datasets import Dataset

        cfg = EmbeddingConfig(nn=3, rn=1, c=0.1, distance_mode="euclidean", iterations=60, seed=4)
        res = run_embedding(graph=blob_graph, config=cfg, dataset=Dataset(blob_data))
        assert np.isfinite(res.embedding.points).all()
        assert res.trace.stress[-1] < res.trace.stress[0]

    def test_phase_names_reported(self, blob_graph, blob_data):
        from ivhd.datasets import Dataset

        seen = []

        def watch(it, pos, stress, params):
            seen.append(params["phase"])

        cfg = EmbeddingConfig(
            nn=3, rn=1, c=0.1, iterations=40, l1_final_steps=10,
            rnn_final_steps=20, seed=6,
        )
        run_embedding(graph=blob_graph, config=cfg, dataset=Dataset(blob_data), observer=watch)
        assert seen[:20] == ["main"] * 20
        assert seen[20:30] == ["rnn"] * 10
        assert seen[30:] == ["rnn+l1"] * 10

    def test_rnn_filter_prunes_oneway_edges(self, blob_data):
        calc = build_exact_knn(blob_data, 2)
        helper = build_exact_knn(blob_data, 8)
        m = calc.M
        nn_edges = np.column_stack(
            [np.repeat(np.arange(m, dtype=np.int32), 2), calc.neighbors.ravel()]
        )
        keep = rnn_edge_filter(nn_edges, calc.neighbors, helper)
        # oracle: edge (i, j) survives iff i sits in j's helper neighborhood,
        # except a point keeps its closest edge when all would fall
        raw = np.array([i in helper.neighbors[j] for i, j in nn_edges])
        orphaned = ~raw.reshape(m, 2).any(axis=1)
        expected = raw.reshape(m, 2)
        expected[orphaned, 0] = True
        np.testing.assert_array_equal(keep, expected.ravel())
        assert 0 < keep.sum() <= len(nn_edges)
        # every particle keeps at least one attractive edge
        assert keep.reshape(m, 2).any(axis=1).all()

    def test_rnn_phase_needs_helper_or_dataset(self, blob_data):
        narrow = build_exact_knn(blob_data, 3)  # too few columns to self-serve
        cfg = EmbeddingConfig(nn=3, rn=1, c=0.1, iterations=10, rnn_final_steps=5)
        with pytest.raises(InvalidArgumentError, match="helper"):
            run_embedding(graph=narrow, config=cfg)

    def test_rn_resampling(self, blob_graph):
        observed = []

        def watch(it, pos, stress, params):
            pass

        cfg_fixed = EmbeddingConfig(nn=3, rn=1, c=0.1, iterations=9, seed=8,
                                    rn_resample_period=0)
        res_fixed = run_embedding(graph=blob_graph, config=cfg_fixed)
        cfg_moving = EmbeddingConfig(nn=3, rn=1, c=0.1, iterations=9, seed=8,
                                     rn_resample_period=3)
        res_moving = run_embedding(graph=blob_graph, config=cfg_moving)
        # resampling changes the trajectory; fixed assignments do not
        assert not np.array_equal(res_fixed.embedding.points, res_moving.embedding.points)

    def test_l1_only_phase(self, blob_graph):
        cfg = EmbeddingConfig(nn=3, rn=1, c=0.1, iterations=30, l1_final_steps=10, seed=9)
        res = run_embedding(graph=blob_graph, config=cfg)
        assert np.isfinite(res.embedding.points).all()


class TestObserverMutations:
    def test_mutation_log_and_determinism(self, blob_graph):
        def mutate(it, pos, stress, params):
            if it == 10:
                return {"c": 0.02}
            return None

        cfg = EmbeddingConfig(nn=3, rn=1, c=0.1, iterations=30, seed=12)
        a = run_embedding(graph=blob_graph, config=cfg, observer=mutate)
        assert (10, "c", 0.02) in a.mutations
        b = run_embedding(graph=blob_graph, config=cfg, observer=mutate)
        np.testing.assert_array_equal(a.embedding.points, b.embedding.points)
        plain = run_embedding(graph=blob_graph, config=cfg)
        assert not np.array_equal(a.embedding.points, plain.embedding.points)

    def test_optimizer_swap(self, blob_graph):
        def mutate(it, pos, stress, params):
            if it == 5:
                return {"optimizer": "adam"}

        cfg = EmbeddingConfig(nn=3, rn=1, c=0.1, iterations=20, seed=13)
        res = run_embedding(graph=blob_graph, config=cfg, observer=mutate)
        assert (5, "optimizer", "adam") in res.mutations

    def test_stop(self, blob_graph):
        def mutate(it, pos, stress, params):
            if it == 7:
                return {"stop": True}

        cfg = EmbeddingConfig(nn=3, rn=1, c=0.1, iterations=1000, seed=14)
        res = run_embedding(graph=blob_graph, config=cfg, observer=mutate)
        assert len(res.trace.iterations) == 8

    def test_invalid_mutation_raises(self, blob_graph):
        def mutate(it, pos, stress, params):
            return {"c": 42.0}

        cfg = EmbeddingConfig(nn=3, rn=1, c=0.1, iterations=5, seed=15)
        with pytest.raises(InvalidArgumentError):
            run_embedding(graph=blob_graph, config=cfg, observer=mutate)

    def test_phase_trigger_via_observer(self, blob_graph, blob_data):
        from ivhd.datasets import Dataset

        phases = []

        def mutate(it, pos, stress, params):
            phases.append(params["phase"])
            if it == 4:
                return {"start_l1": True}

        cfg = EmbeddingConfig(nn=3, rn=1, c=0.1, iterations=12, seed=16)
        run_embedding(graph=blob_graph, config=cfg, dataset=Dataset(blob_data), observer=mutate)
        assert phases[:5] == ["main"] * 5
        assert all(p == "l1" for p in phases[5:])


class TestStressTrace:
    def test_trace_csv(self, blob_graph, tmp_path):
        cfg = EmbeddingConfig(nn=3, rn=1, c=0.1, iterations=5, seed=17)
        res = run_embedding(graph=blob_graph, config=cfg)
        p = tmp_path / "trace.csv"
        res.trace.to_csv(str(p))
        lines = p.read_text().strip().splitlines()
        assert lines[0] == "iteration,stress,b"
        assert len(lines) == 6
