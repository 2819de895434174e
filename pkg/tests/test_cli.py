import json
import os

import numpy as np
import pytest
from click.testing import CliRunner

from ivhd.cli import main
from ivhd.datasets import load_embedding
from ivhd.engine import init_layout


@pytest.fixture()
def runner():
    return CliRunner()


@pytest.fixture()
def tetra_csv(tmp_path, runner):
    path = tmp_path / "tetra.csv"
    res = runner.invoke(
        main,
        ["synth", "--kind", "hypertetrahedra-pair", "--m", "38", "--n", "18",
         "--seed", "1", "--out", str(path)],
    )
    assert res.exit_code == 0, res.output
    return path


class TestSynthKnn:
    def test_synth_writes_labeled_csv(self, tetra_csv):
        lines = tetra_csv.read_text().strip().splitlines()
        assert len(lines) == 38
        assert len(lines[0].split(",")) == 19  # 18 features + label

    def test_knn_cache(self, tmp_path, runner, tetra_csv):
        out = tmp_path / "g.knng"
        res = runner.invoke(
            main,
            ["knn", "--input", str(tetra_csv), "--label-column", "--k", "2",
             "--out", str(out), "--export-edges", str(tmp_path / "edges.csv")],
        )
        assert res.exit_code == 0, res.output
        assert "largest component 19/38" in res.output
        assert out.exists()
        assert (tmp_path / "edges.csv").read_text().count("\n") == 76

    def test_usage_error_exit_2(self, runner):
        res = runner.invoke(main, ["knn", "--nope"])
        assert res.exit_code == 2

    def test_runtime_error_exit_1(self, tmp_path, runner):
        bad = tmp_path / "bad.csv"
        bad.write_text("1,2\n3,nan\n")
        res = runner.invoke(
            main, ["knn", "--input", str(bad), "--k", "1", "--out", str(tmp_path / "g")]
        )
        assert res.exit_code == 1
        assert "ivhd: error:" in res.output


class TestEmbed:
    def test_zero_iterations_is_initial_layout(self, tmp_path, runner, tetra_csv):
        out = tmp_path / "run"
        res = runner.invoke(
            main,
            ["embed", "--input", str(tetra_csv), "--label-column", "--nn", "2",
             "--rn", "1", "--c", "0.1", "--iterations", "0", "--seed", "9",
             "--out-dir", str(out)],
        )
        assert res.exit_code == 0, res.output
        emb = load_embedding(str(out / "embedding.csv"))
        expected = init_layout(38, 2, np.random.default_rng(9))
        np.testing.assert_array_equal(emb.points, expected)

    def test_flags_recorded_in_manifest(self, tmp_path, runner, tetra_csv):
        out = tmp_path / "run"
        res = runner.invoke(
            main,
            ["embed", "--input", str(tetra_csv), "--label-column", "--nn", "2",
             "--rn", "1", "--c", "0.01", "--iterations", "5", "--out-dir", str(out)],
        )
        assert res.exit_code == 0, res.output
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["embedding"]["nn"] == 2
        assert manifest["embedding"]["rn"] == 1
        assert manifest["embedding"]["c"] == 0.01

    def test_manifest_reproduces_run_across_threads(self, tmp_path, runner, tetra_csv):
        out1 = tmp_path / "r1"
        res = runner.invoke(
            main,
            ["embed", "--input", str(tetra_csv), "--label-column", "--nn", "2",
             "--rn", "1", "--c", "0.1", "--iterations", "60", "--seed", "3",
             "--out-dir", str(out1)],
        )
        assert res.exit_code == 0, res.output
        out2 = tmp_path / "r2"
        res = runner.invoke(
            main,
            ["embed", "--config", str(out1 / "manifest.json"), "--threads", "3",
             "--out-dir", str(out2)],
        )
        assert res.exit_code == 0, res.output
        assert (out1 / "embedding.csv").read_bytes() == (out2 / "embedding.csv").read_bytes()

    def test_graph_cache_route_with_plots_and_checkpoints(self, tmp_path, runner, tetra_csv):
        cache = tmp_path / "g.knng"
        runner.invoke(
            main,
            ["knn", "--input", str(tetra_csv), "--label-column", "--k", "2",
             "--out", str(cache)],
        )
        out = tmp_path / "run"
        res = runner.invoke(
            main,
            ["embed", "--graph", str(cache), "--nn", "2", "--rn", "1", "--c", "0.1",
             "--iterations", "40", "--checkpoint-interval", "20",
             "--emit-plots", "--out-dir", str(out)],
        )
        assert res.exit_code == 0, res.output
        assert (out / "embedding.svg").exists()
        assert (out / "stress.svg").exists()
        assert (out / "checkpoint_000020.csv").exists()
        assert (out / "checkpoint_000040.csv").exists()
        trace = (out / "stress.csv").read_text().strip().splitlines()
        assert trace[0] == "iteration,stress,b"
        assert len(trace) == 41

    def test_needs_input_or_graph(self, tmp_path, runner):
        res = runner.invoke(main, ["embed", "--out-dir", str(tmp_path / "x")])
        assert res.exit_code == 2


class TestMetricsCommand:
    def test_identity_embedding_auc_one(self, tmp_path, runner):
        rng = np.random.default_rng(0)
        X = rng.standard_normal((40, 2))
        hd = tmp_path / "x.csv"
        with open(hd, "w") as fh:
            for row in X:
                fh.write(f"{float(row[0])!r},{float(row[1])!r}\n")
        ld = tmp_path / "y.csv"
        with open(ld, "w") as fh:
            for row in X:  # first-2-columns copy of a 2-D dataset
                fh.write(f"{float(row[0])!r},{float(row[1])!r}\n")
        out = tmp_path / "m"
        res = runner.invoke(
            main,
            ["metrics", "--hd", str(hd), "--ld", str(ld), "--sample-pairs", "100",
             "--out-dir", str(out), "--emit-plots"],
        )
        assert res.exit_code == 0, res.output
        summary = json.loads((out / "summary.json").read_text())
        assert summary["auc_rnx"] == 1.0
        assert summary["corank_r2"] == 1.0
        assert (out / "rnx.csv").exists()
        assert (out / "rnx.svg").exists()
        assert (out / "shepard.csv").exists()

    def test_labeled_metrics_files(self, tmp_path, runner, tetra_csv):
        out_run = tmp_path / "run"
        runner.invoke(
            main,
            ["embed", "--input", str(tetra_csv), "--label-column", "--nn", "2",
             "--rn", "1", "--c", "0.1", "--iterations", "150", "--out-dir", str(out_run)],
        )
        out = tmp_path / "metrics"
        res = runner.invoke(
            main,
            ["metrics", "--hd", str(tetra_csv), "--label-column",
             "--ld", str(out_run / "embedding.csv"), "--sample-pairs", "200",
             "--out-dir", str(out)],
        )
        assert res.exit_code == 0, res.output
        for name in ("qnx.csv", "rnx.csv", "gnn.csv", "cf.csv", "summary.json",
                     "shepard.csv", "corank.csv"):
            assert (out / name).exists(), name
        summary = json.loads((out / "summary.json").read_text())
        assert "auc_gnn" in summary and "cf" in summary


class TestCentroidsCommand:
    def test_transform_outputs(self, tmp_path, runner):
        rng = np.random.default_rng(1)
        data = np.vstack([rng.standard_normal((30, 4)), rng.standard_normal((30, 4)) + 6])
        labels = np.repeat([0, 1], 30)
        src = tmp_path / "d.csv"
        with open(src, "w") as fh:
            for row, lab in zip(data, labels):
                fh.write(",".join(repr(float(v)) for v in row) + f",{lab}\n")
        out = tmp_path / "c"
        res = runner.invoke(
            main,
            ["centroids", "--input", str(src), "--label-column", "--n-local", "3",
             "--n-global", "2", "--mode", "hybrid", "--out-dir", str(out)],
        )
        assert res.exit_code == 0, res.output
        assert (out / "model.json").exists()
        lines = (out / "transformed.csv").read_text().strip().splitlines()
        assert len(lines) == 60
        assert len(lines[0].split(",")) == 6  # 3 local + 2 global + label
