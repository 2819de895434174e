"""Command-line surface: synth, knn, embed, metrics, centroids, serve.

Subcommands compose through files only. Runtime failures print a
machine-parsable `ivhd: error: <kind>: message` line on stderr and exit 1;
usage errors exit 2 (click's convention).
"""

import functools
import json
import os
import sys

import click
import numpy as np

from . import centroids as centroids_mod
from . import datasets as ds
from . import knng
from . import metrics as metrics_mod
from .engine import EmbeddingConfig, run_embedding
from .errors import IvhdError
from .manifest import RunManifest
from .optim import OPTIMIZER_KINDS, IntegratorParams, OptimizerParams

_FORMATS = ("csv", "raw-f32", "labels-sidecar")


def _run_guarded(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except IvhdError as exc:
            click.echo(f"ivhd: error: {type(exc).__name__}: {exc}", err=True)
            sys.exit(1)

    return wrapper


def _dataset_options(fn):
    fn = click.option("--labels-path", default=None, help="Sidecar labels file.")(fn)
    fn = click.option(
        "--label-column/--no-label-column",
        default=False,
        help="Treat the final CSV column as integer class labels.",
    )(fn)
    fn = click.option(
        "--format", "fmt", type=click.Choice(_FORMATS), default="csv", show_default=True
    )(fn)
    return fn


def _load_input(path, fmt, label_column, labels_path):
    return ds.load_dataset(path, fmt=fmt, label_column=label_column, labels_path=labels_path)


@click.group()
def main():
    """kNN-graph embedding engine with binary distances, plus quality metrics,
    centroid-supervised preprocessing and a live steering server."""


# ---------------------------------------------------------------------- synth


@main.command()
@click.option("--kind", type=click.Choice(ds.SYNTHETIC_KINDS), required=True)
@click.option("--m", "m", type=int, required=True, help="Point count.")
@click.option("--n", "n", type=int, required=True, help="Ambient dimension.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--pbc", is_flag=True, help="Periodic boundary (grid-2d only).")
@click.option("--format", "fmt", type=click.Choice(("csv", "raw-f32")), default="csv")
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@_run_guarded
def synth(kind, m, n, seed, pbc, fmt, out):
    """Generate a structured synthetic dataset."""
    data = ds.generate_synthetic(ds.SyntheticSpec(kind=kind, M=m, N=n, seed=seed, pbc=pbc))
    knng.ensure_dir(out)
    ds.save_dataset(data, out, fmt=fmt)
    click.echo(f"wrote {data.M}x{data.N} dataset to {out}")


# ------------------------------------------------------------------------ knn


@main.command()
@click.option("--input", "input_path", type=click.Path(exists=True, dir_okay=False), required=True)
@_dataset_options
@click.option("--k", type=int, required=True)
@click.option(
    "--metric", type=click.Choice(("euclidean", "cosine")), default="euclidean", show_default=True
)
@click.option("--refine-iters", type=int, default=0, show_default=True,
              help="Neighbor-exploration passes after the exact build.")
@click.option("--out", type=click.Path(dir_okay=False), required=True, help="Graph cache file.")
@click.option("--export-edges", type=click.Path(dir_okay=False), default=None,
              help="Also write an i,j,dist edge list CSV.")
@_run_guarded
def knn(input_path, fmt, label_column, labels_path, k, metric, refine_iters, out, export_edges):
    """Build (and cache) the exact k-nearest-neighbor graph."""
    data = _load_input(input_path, fmt, label_column, labels_path)
    graph = knng.build_exact_knn(data, k, metric=metric)
    if refine_iters > 0:
        graph = knng.refine_neighbor_exploration(graph, data, iterations=refine_iters)
    knng.ensure_dir(out)
    knng.cache_write(graph, out)
    size, _ = knng.largest_connected_component(graph)
    click.echo(f"graph {graph.M}x{graph.k} ({metric}); largest component {size}/{graph.M}")
    if export_edges:
        knng.export_edges_csv(graph, export_edges)


# ---------------------------------------------------------------------- embed


def _embed_options(fn):
    opts = [
        click.option("--input", "input_path", type=click.Path(dir_okay=False), default=None),
        click.option("--graph", "graph_path", type=click.Path(dir_okay=False), default=None,
                     help="Graph cache from `ivhd knn`."),
        click.option("--nn", type=int, default=None, help="Nearest neighbors per point."),
        click.option("--rn", type=int, default=None, help="Random neighbors per point."),
        click.option("--c", "c_scale", type=float, default=None, help="Random-force scale in (0,1)."),
        click.option("--distance-mode", type=click.Choice(("binary", "euclidean")), default=None),
        click.option("--iterations", type=int, default=None),
        click.option("--l1-final-steps", type=int, default=None),
        click.option("--rnn-final-steps", type=int, default=None),
        click.option("--optimizer", type=click.Choice(OPTIMIZER_KINDS), default=None),
        click.option("--seed", type=int, default=None),
        click.option("--target-dim", type=click.Choice(("2", "3")), default=None),
        click.option("--rn-resample-period", type=int, default=None),
        click.option("--graph-metric", type=click.Choice(("euclidean", "cosine")), default=None),
        click.option("--a", "a_friction", type=float, default=None, help="Velocity retention."),
        click.option("--b", "b_scale", type=float, default=None, help="Force scale."),
        click.option("--alpha", type=float, default=None, help="Optimizer learning rate."),
        click.option("--no-auto-adapt", is_flag=True, help="Freeze b during the run."),
        click.option("--threads", type=int, default=1, show_default=True),
        click.option("--deterministic/--no-deterministic", default=True, show_default=True),
        click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
                     help="Manifest JSON with defaults (flags win)."),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


def _build_config(manifest, kwargs):
    """Manifest defaults overlaid with explicitly provided flags."""
    fields = dict(manifest.embedding)
    flag_map = {
        "nn": "nn",
        "rn": "rn",
        "c_scale": "c",
        "distance_mode": "distance_mode",
        "iterations": "iterations",
        "l1_final_steps": "l1_final_steps",
        "rnn_final_steps": "rnn_final_steps",
        "optimizer": "optimizer",
        "seed": "seed",
        "rn_resample_period": "rn_resample_period",
        "graph_metric": "graph_metric",
    }
    for flag, field_name in flag_map.items():
        if kwargs.get(flag) is not None:
            fields[field_name] = kwargs[flag]
    if kwargs.get("target_dim") is not None:
        fields["target_dim"] = int(kwargs["target_dim"])
    integrator = dict(fields.get("integrator") or IntegratorParams().__dict__)
    if kwargs.get("a_friction") is not None:
        integrator["a"] = kwargs["a_friction"]
    if kwargs.get("b_scale") is not None:
        integrator["b"] = kwargs["b_scale"]
    if kwargs.get("no_auto_adapt"):
        integrator["auto_adapt"] = False
    fields["integrator"] = integrator
    opt = dict(fields.get("opt") or OptimizerParams().__dict__)
    if kwargs.get("alpha") is not None:
        opt["alpha"] = kwargs["alpha"]
    fields["opt"] = opt
    return EmbeddingConfig.from_dict(fields)


def _resolve_run_inputs(manifest, config, input_path, graph_path, fmt, label_column, labels_path):
    input_path = input_path or manifest.dataset.get("path")
    graph_path = graph_path or manifest.graph.get("cache")
    dataset = None
    graph = None
    if input_path:
        dataset = _load_input(
            input_path,
            fmt if fmt else manifest.dataset.get("format", "csv"),
            label_column or manifest.dataset.get("label_column", False),
            labels_path or manifest.dataset.get("labels_path"),
        )
    if graph_path:
        graph = knng.cache_read(graph_path)
    if dataset is None and graph is None:
        raise click.UsageError("need --input and/or --graph")
    return dataset, graph, input_path, graph_path


@main.command()
@_embed_options
@_dataset_options
@click.option("--out-dir", type=click.Path(file_okay=False), required=True)
@click.option("--checkpoint-interval", type=int, default=0, show_default=True,
              help="Write a positions CSV every N iterations (0 = off).")
@click.option("--emit-plots", is_flag=True, help="Also render SVG figures.")
@_run_guarded
def embed(input_path, graph_path, fmt, label_column, labels_path, out_dir,
          checkpoint_interval, emit_plots, config_path, threads, deterministic, **kwargs):
    """Embed a dataset (or cached graph) into 2-D/3-D."""
    manifest = RunManifest.load(config_path) if config_path else RunManifest()
    config = _build_config(manifest, kwargs)
    dataset, graph, input_path, graph_path = _resolve_run_inputs(
        manifest, config, input_path, graph_path, fmt, label_column, labels_path
    )

    os.makedirs(out_dir, exist_ok=True)
    observer = None
    if checkpoint_interval > 0:
        def observer(it, positions, stress, params):
            if (it + 1) % checkpoint_interval == 0:
                snap = ds.Embedding(positions.copy(), labels=None if dataset is None else dataset.labels)
                ds.save_embedding(snap, os.path.join(out_dir, f"checkpoint_{it + 1:06d}.csv"))

    result = run_embedding(
        graph=graph, config=config, dataset=dataset, observer=observer, threads=threads
    )

    emb_path = os.path.join(out_dir, "embedding.csv")
    ds.save_embedding(result.embedding, emb_path)
    result.trace.to_csv(os.path.join(out_dir, "stress.csv"))

    manifest.embedding = config.to_dict()
    manifest.dataset = {
        "path": input_path, "format": fmt, "label_column": label_column,
        "labels_path": labels_path,
    }
    manifest.graph = {"cache": graph_path, "k": None if graph is None else graph.k,
                      "metric": config.graph_metric}
    manifest.output_dir = out_dir
    manifest.threads = threads
    manifest.deterministic = deterministic
    manifest.parameter_timeline = [
        {"iteration": it, "param": key, "value": val} for it, key, val in result.mutations
    ]
    manifest.save(os.path.join(out_dir, "manifest.json"))

    if emit_plots:
        from . import plots

        plots.scatter_embedding(result.embedding, os.path.join(out_dir, "embedding.svg"))
        if result.trace.iterations:
            plots.line_stress(result.trace, os.path.join(out_dir, "stress.svg"))
    click.echo(f"embedded {result.embedding.M} points; final stress {result.state.stress:.6g}")


# -------------------------------------------------------------------- metrics


@main.command()
@click.option("--hd", "hd_path", type=click.Path(exists=True, dir_okay=False), required=True,
              help="High-dimensional dataset.")
@_dataset_options
@click.option("--ld", "ld_path", type=click.Path(exists=True, dir_okay=False), required=True,
              help="Embedding CSV.")
@click.option("--k-max", type=int, default=None)
@click.option("--nn-max", type=int, default=100, show_default=True)
@click.option("--sample-pairs", type=int, default=10000, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out-dir", type=click.Path(file_okay=False), required=True)
@click.option("--emit-plots", is_flag=True)
@_run_guarded
def metrics(hd_path, fmt, label_column, labels_path, ld_path, k_max, nn_max,
            sample_pairs, seed, out_dir, emit_plots):
    """Quality curves and summary for a (dataset, embedding) pair."""
    data = _load_input(hd_path, fmt, label_column, labels_path)
    emb = ds.load_embedding(ld_path)
    labels = emb.labels if emb.labels is not None else data.labels
    os.makedirs(out_dir, exist_ok=True)

    curves = metrics_mod.evaluate_embedding(
        data.data, emb.points, labels=labels, k_max=k_max,
        nn_max=min(nn_max, data.M - 1),
    )
    _write_curve(os.path.join(out_dir, "qnx.csv"), curves.k, curves.q_nx, "q_nx")
    _write_curve(os.path.join(out_dir, "rnx.csv"), curves.k, curves.r_nx, "r_nx")
    if curves.g_nn is not None:
        _write_curve(os.path.join(out_dir, "gnn.csv"), curves.k, curves.g_nn, "g_nn")
    if curves.cf_nn is not None:
        _write_curve(
            os.path.join(out_dir, "cf.csv"),
            np.arange(1, len(curves.cf_nn) + 1), curves.cf_nn, "cf_nn",
        )

    pairs = min(sample_pairs, data.M * (data.M - 1) // 2)
    (deltas, dists), (rho, r_rank), r2 = metrics_mod.shepard_and_corank(
        data.data, emb.points, sample_pairs=pairs, seed=seed
    )
    with open(os.path.join(out_dir, "shepard.csv"), "w") as fh:
        fh.write("delta_hd,d_ld\n")
        for a, b in zip(deltas, dists):
            fh.write(f"{float(a)!r},{float(b)!r}\n")
    with open(os.path.join(out_dir, "corank.csv"), "w") as fh:
        fh.write("rank_hd,rank_ld\n")
        for a, b in zip(rho, r_rank):
            fh.write(f"{a},{b}\n")

    summary = curves.summary()
    summary["corank_r2"] = r2
    summary["sampled_pairs"] = int(pairs)
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")

    if emit_plots:
        from . import plots

        plots.line_curve(curves.k, curves.r_nx, os.path.join(out_dir, "rnx.svg"), "R_NX(k)")
        if curves.g_nn is not None:
            plots.line_curve(curves.k, curves.g_nn, os.path.join(out_dir, "gnn.svg"), "G_NN(k)")
        plots.scatter_pairs(deltas, dists, os.path.join(out_dir, "shepard.svg"),
                            "source distance", "embedded distance")
        plots.scatter_pairs(rho, r_rank, os.path.join(out_dir, "corank.svg"),
                            "source rank", "embedded rank", identity=True)
    click.echo(json.dumps(summary))


def _write_curve(path, k, values, name):
    with open(path, "w") as fh:
        fh.write(f"k,{name}\n")
        for kk, v in zip(k, values):
            fh.write(f"{kk},{float(v)!r}\n")


# ------------------------------------------------------------------ centroids


@main.command()
@click.option("--input", "input_path", type=click.Path(exists=True, dir_okay=False), required=True)
@_dataset_options
@click.option("--n-local", type=int, default=100, show_default=True)
@click.option("--n-global", type=int, default=100, show_default=True)
@click.option("--mode", type=click.Choice(centroids_mod.TRANSFORM_MODES), default="hybrid",
              show_default=True)
@click.option("--sigma", type=float, default=None, help="Gaussian activation width (optional).")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out-dir", type=click.Path(file_okay=False), required=True)
@_run_guarded
def centroids(input_path, fmt, label_column, labels_path, n_local, n_global, mode,
              sigma, seed, out_dir):
    """Rewrite a labeled dataset as distances to local/global centroids."""
    data = _load_input(input_path, fmt, label_column, labels_path)
    model = centroids_mod.fit(data, n_local=n_local, n_global=n_global, seed=seed)
    transformed = centroids_mod.transform(data, model, mode=mode, sigma=sigma)
    os.makedirs(out_dir, exist_ok=True)
    ds.save_dataset(transformed, os.path.join(out_dir, "transformed.csv"), fmt="csv")
    with open(os.path.join(out_dir, "model.json"), "w") as fh:
        fh.write(model.to_json())
        fh.write("\n")
    click.echo(f"transformed to {transformed.M}x{transformed.N} ({mode})")


# -------------------------------------------------------------------- serve


@main.command()
@_embed_options
@_dataset_options
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8765, show_default=True)
@click.option("--frame-interval", type=int, default=10, show_default=True,
              help="Broadcast a frame every N iterations.")
@click.option("--frame-cap", type=int, default=50000, show_default=True,
              help="Decimate frames beyond this many points.")
@click.option("--out-dir", type=click.Path(file_okay=False), default=".", show_default=True)
@_run_guarded
def serve(input_path, graph_path, fmt, label_column, labels_path, host, port,
          frame_interval, frame_cap, out_dir, config_path, threads, deterministic, **kwargs):
    """Run an embedding job behind a live steering server."""
    from .server import SteerServer

    manifest = RunManifest.load(config_path) if config_path else RunManifest()
    config = _build_config(manifest, kwargs)
    dataset, graph, input_path, graph_path = _resolve_run_inputs(
        manifest, config, input_path, graph_path, fmt, label_column, labels_path
    )
    manifest.embedding = config.to_dict()
    manifest.dataset = {"path": input_path, "format": fmt, "label_column": label_column,
                        "labels_path": labels_path}
    manifest.graph = {"cache": graph_path}
    manifest.output_dir = out_dir
    manifest.threads = threads

    server = SteerServer(
        config=config, dataset=dataset, graph=graph, manifest=manifest,
        frame_interval=frame_interval, frame_cap=frame_cap, threads=threads,
    )
    click.echo(f"steering server on http://{host}:{port} (ws at /ws)")
    server.run_blocking(host=host, port=port)


if __name__ == "__main__":
    main()
