"""The embedding engine: run configuration, phase schedule and the main loop.

A run minimizes the binary-distance stress of a kNN graph plus per-point
random neighbors. The main phase uses plain L2 geometry over all graph edges;
the final steps can restrict nearest-neighbor interactions to reverse-neighbor
confirmed ones (against a larger helper graph) and/or switch the distance in
the stress terms to the 1-norm, which pulls stragglers into cluster cores.
"""

import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from . import forces as F
from .datasets import Embedding
from .errors import InvalidArgumentError, NumericalDivergenceError
from .knng import KnnGraph, _pairwise, reverse_neighbors
from .optim import (
    OPTIMIZER_KINDS,
    IntegratorParams,
    OptimizerParams,
    make_optimizer,
    step_optimizer,
)

DISTANCE_MODES = ("binary", "euclidean")


@dataclass
class EmbeddingConfig:
    """Everything a run needs besides the data itself."""

    nn: int = 3
    rn: int = 1
    c: float = 0.1
    distance_mode: str = "binary"
    iterations: int = 2500
    l1_final_steps: int = 0
    rnn_final_steps: int = 0
    optimizer: str = "force-directed"
    seed: int = 0
    target_dim: int = 2
    rn_resample_period: int = 0
    graph_metric: str = "euclidean"
    normalize_targets: bool = True
    integrator: IntegratorParams = field(default_factory=IntegratorParams)
    opt: OptimizerParams = field(default_factory=OptimizerParams)

    def __post_init__(self):
        if self.nn < 1 or self.rn < 1:
            raise InvalidArgumentError("nn and rn must be >= 1")
        if not (0.0 < self.c < 1.0):
            raise InvalidArgumentError(f"c must be in (0, 1), got {self.c}")
        if self.target_dim not in (2, 3):
            raise InvalidArgumentError("target_dim must be 2 or 3")
        if self.iterations < 0:
            raise InvalidArgumentError("iterations must be >= 0")
        if self.l1_final_steps < 0 or self.rnn_final_steps < 0:
            raise InvalidArgumentError("phase step counts must be >= 0")
        if max(self.l1_final_steps, self.rnn_final_steps) > self.iterations:
            raise InvalidArgumentError("final phases cannot exceed total iterations")
        if self.optimizer not in OPTIMIZER_KINDS:
            raise InvalidArgumentError(f"unknown optimizer {self.optimizer!r}")
        if self.distance_mode not in DISTANCE_MODES:
            raise InvalidArgumentError(f"unknown distance mode {self.distance_mode!r}")
        if self.rn_resample_period < 0:
            raise InvalidArgumentError("rn_resample_period must be >= 0")
        if self.nn < self.rn:
            warnings.warn(
                f"nn={self.nn} < rn={self.rn}: long-range forces may dominate",
                stacklevel=2,
            )
        if isinstance(self.integrator, dict):
            self.integrator = IntegratorParams(**self.integrator)
        if isinstance(self.opt, dict):
            self.opt = OptimizerParams(**self.opt)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, payload):
        return cls(**payload)


@dataclass
class EmbeddingState:
    """Mutable particle-system state during a run."""

    positions: np.ndarray
    deltas: np.ndarray
    rn_assignments: np.ndarray
    iteration: int = 0
    stress: float = float("nan")


@dataclass
class StressTrace:
    iterations: list = field(default_factory=list)
    stress: list = field(default_factory=list)
    step_size: list = field(default_factory=list)

    def append(self, iteration, stress, step_size):
        self.iterations.append(int(iteration))
        self.stress.append(float(stress))
        self.step_size.append(float(step_size))

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("iteration,stress,b\n")
            for i, s, b in zip(self.iterations, self.stress, self.step_size):
                fh.write(f"{i},{s!r},{b!r}\n")


@dataclass
class RunResult:
    embedding: Embedding
    trace: StressTrace
    state: EmbeddingState
    mutations: list = field(default_factory=list)


def init_layout(m, target_dim, seed):
    """Uniform i.i.d. positions in [-1, 1]^dim; deterministic per seed."""
    if m < 1:
        raise InvalidArgumentError("need at least one point")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return rng.uniform(-1.0, 1.0, size=(m, target_dim))


def sample_random_neighbors(m, nn_sets, rn, seed):
    """Per-point random partners, uniform over non-self, non-nn indices."""
    nn_sets = np.asarray(nn_sets)
    if m <= nn_sets.shape[1] + rn:
        raise InvalidArgumentError(
            f"M={m} too small for nn={nn_sets.shape[1]} plus rn={rn}"
        )
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    assign = rng.integers(0, m, size=(m, rn))
    own = np.arange(m)[:, None]
    while True:
        bad = (assign == own) | (assign[:, :, None] == nn_sets[:, None, :]).any(axis=2)
        if not bad.any():
            return assign.astype(np.int32)
        assign[bad] = rng.integers(0, m, size=int(bad.sum()))


def _phase_name(rnn_active, l1_active):
    if rnn_active and l1_active:
        return "rnn+l1"
    if rnn_active:
        return "rnn"
    if l1_active:
        return "l1"
    return "main"


class _Run:
    """Internal assembly of one embedding run."""

    def __init__(self, graph, config, dataset=None, helper_graph=None, threads=1):
        self.config = config
        self.threads = max(1, int(threads))
        self.rng = np.random.default_rng(config.seed)
        data = None if dataset is None else np.asarray(dataset.data, dtype=np.float64)
        self.data = data
        self.labels = None if dataset is None else dataset.labels

        if graph is None:
            if dataset is None:
                raise InvalidArgumentError("need a graph or a dataset to embed")
            from .knng import build_exact_knn

            k = config.nn * 4 if config.rnn_final_steps > 0 else config.nn
            graph = build_exact_knn(dataset, min(k, dataset.M - 1), config.graph_metric)
        self.graph = graph
        m = graph.M

        ncols = min(config.nn, graph.k)
        if graph.k < config.nn:
            warnings.warn(
                f"graph stores k={graph.k} < nn={config.nn}; using all stored neighbors",
                stacklevel=3,
            )
        self.nn_sets = graph.neighbors[:, :ncols]

        if config.rnn_final_steps > 0:
            if helper_graph is None:
                if graph.k >= min(4 * config.nn, m - 1):
                    helper_graph = graph
                elif data is not None:
                    from .knng import build_exact_knn

                    helper_graph = build_exact_knn(
                        dataset, min(4 * config.nn, m - 1), config.graph_metric
                    )
                else:
                    raise InvalidArgumentError(
                        "reverse-neighbor phase needs a helper graph or the dataset"
                    )
            self.helper_graph = helper_graph
        else:
            self.helper_graph = None

        if config.distance_mode == "euclidean":
            if graph.distances is None:
                raise InvalidArgumentError("euclidean mode needs stored graph distances")
            if data is None:
                raise InvalidArgumentError(
                    "euclidean mode needs the dataset to measure random-pair targets"
                )

        self.positions = init_layout(m, config.target_dim, self.rng)
        self.rn_assignments = sample_random_neighbors(m, self.nn_sets, config.rn, self.rng)
        self.c = config.c
        self.target_scale = None
        self._build_edges()
        self.optimizer = make_optimizer(
            config.optimizer, m, config.target_dim, config.integrator, config.opt
        )

    # ------------------------------------------------------------ connections

    def _nn_edge_arrays(self):
        m, ncols = self.nn_sets.shape
        src = np.repeat(np.arange(m, dtype=np.int32), ncols)
        dst = self.nn_sets.ravel().astype(np.int32)
        if self.config.distance_mode == "euclidean":
            targets = self.graph.distances[:, : ncols].ravel().astype(np.float64)
        else:
            targets = np.zeros(src.size)
        return np.column_stack([src, dst]), targets

    def _rn_edge_arrays(self):
        m, rn = self.rn_assignments.shape
        src = np.repeat(np.arange(m, dtype=np.int32), rn)
        dst = self.rn_assignments.ravel().astype(np.int32)
        if self.config.distance_mode == "euclidean":
            targets = _pairwise(self.data, src, dst, self.graph.metric)
        else:
            targets = np.ones(src.size)
        return np.column_stack([src, dst]), targets

    def _build_edges(self):
        nn_edges, nn_targets = self._nn_edge_arrays()
        rn_edges, rn_targets = self._rn_edge_arrays()
        if self.config.distance_mode == "euclidean" and self.config.normalize_targets:
            if self.target_scale is None:
                peak = max(float(nn_targets.max(initial=0.0)), float(rn_targets.max(initial=0.0)))
                self.target_scale = 1.0 / peak if peak > 0 else 1.0
            nn_targets = nn_targets * self.target_scale
            rn_targets = rn_targets * self.target_scale

        self._nn_part = (nn_edges, nn_targets)
        self._rn_part = (rn_edges, rn_targets)
        self.conn_full = F.ConnectionSet(
            np.vstack([nn_edges, rn_edges]),
            np.concatenate([nn_targets, rn_targets]),
            np.repeat([False, True], [len(nn_edges), len(rn_edges)]),
        )
        self._conn_filtered = None  # rebuilt lazily when the rnn phase runs

    def _resample_rn(self):
        self.rn_assignments = sample_random_neighbors(
            self.graph.M, self.nn_sets, self.config.rn, self.rng
        )
        self._build_edges()

    def rnn_filtered(self):
        if self._conn_filtered is None:
            nn_edges, nn_targets = self._nn_part
            keep = rnn_edge_filter(nn_edges, self.nn_sets, self.helper_graph)
            rn_edges, rn_targets = self._rn_part
            # Each particle's attraction budget concentrates on its surviving
            # neighbors: pruning selects interactions, not a weaker coupling.
            ncols = self.nn_sets.shape[1]
            kept_per = keep.reshape(-1, ncols).sum(axis=1)
            scale = (ncols / kept_per)[nn_edges[keep][:, 0]]
            self._conn_filtered = F.ConnectionSet(
                np.vstack([nn_edges[keep], rn_edges]),
                np.concatenate([nn_targets[keep], rn_targets]),
                np.repeat([False, True], [int(keep.sum()), len(rn_edges)]),
                scale=np.concatenate([scale, np.ones(len(rn_edges))]),
            )
        return self._conn_filtered


def rnn_edge_filter(nn_edges, nn_sets, helper_graph):
    """Keep a nearest-neighbor interaction (i, j) iff the pair is mutual or j
    claims i back within the helper graph (i.e. j is a reverse neighbor of i).

    Since the calculation neighborhoods are subsets of the helper ones, the
    mutual condition folds into the reverse-neighbor containment i in
    helper-kNN(j), which is the test applied per edge. A point whose every
    edge fails the test keeps its closest one: particles never lose all
    attraction (same principle as selecting all neighbors when fewer than nn
    exist).
    """
    j_rows = helper_graph.neighbors[nn_edges[:, 1]]
    keep = (j_rows == nn_edges[:, 0][:, None]).any(axis=1)
    m, ncols = nn_sets.shape
    per_point = keep.reshape(m, ncols)
    orphaned = ~per_point.any(axis=1)
    if orphaned.any():
        keep = per_point.copy()
        keep[orphaned, 0] = True
        keep = keep.ravel()
    return keep


def run_embedding(
    graph=None,
    config=None,
    dataset=None,
    helper_graph=None,
    observer=None,
    threads=1,
):
    """Execute a full embedding run.

    observer, when given, is called between iterations as
    observer(iteration, positions, stress, params) and may return a dict of
    parameter mutations ({"c", "b", "optimizer", "rn_resample_period",
    "start_l1", "start_rnn", "stop"}) applied atomically at the boundary.
    Returns a RunResult; raises NumericalDivergenceError with the last finite
    state attached if an update blows up.
    """
    config = config or EmbeddingConfig()
    run = _Run(graph, config, dataset=dataset, helper_graph=helper_graph, threads=threads)
    total = config.iterations
    trace = StressTrace()
    mutations = []
    l1_from = total - config.l1_final_steps if config.l1_final_steps > 0 else None
    rnn_from = total - config.rnn_final_steps if config.rnn_final_steps > 0 else None
    resample_period = config.rn_resample_period

    state = EmbeddingState(
        positions=run.positions,
        deltas=np.zeros_like(run.positions),
        rn_assignments=run.rn_assignments,
        iteration=0,
    )

    stop = False
    for it in range(total):
        if resample_period > 0 and it > 0 and it % resample_period == 0:
            run._resample_rn()
            state.rn_assignments = run.rn_assignments

        rnn_active = rnn_from is not None and it >= rnn_from
        l1_active = l1_from is not None and it >= l1_from
        if rnn_active and run.helper_graph is None:
            raise InvalidArgumentError(
                "reverse-neighbor phase needs a helper graph or the dataset"
            )
        conn = run.rnn_filtered() if rnn_active else run.conn_full
        norm = F.NORM_L1 if l1_active else F.NORM_L2

        eval_pos = run.optimizer.lookahead(run.positions)
        if eval_pos is run.positions:
            force, energy = F.compute_forces(
                eval_pos, conn, run.c, norm, rng=run.rng, threads=run.threads,
                with_stress=True,
            )
        else:
            force = F.compute_forces(
                eval_pos, conn, run.c, norm, rng=run.rng, threads=run.threads
            )
            energy = F.stress(run.positions, conn, run.c, norm)

        new_positions = step_optimizer(run.optimizer, run.positions, force)
        if not np.isfinite(new_positions).all():
            state.positions = run.positions
            state.iteration = it
            state.stress = energy
            raise NumericalDivergenceError(it, state)

        state.deltas = new_positions - run.positions
        run.positions = new_positions
        state.positions = run.positions
        state.iteration = it + 1
        state.stress = energy
        trace.append(it, energy, run.optimizer.step_size)

        if observer is not None:
            snapshot = {
                "c": run.c,
                "b": run.optimizer.step_size,
                "optimizer": config.optimizer,
                "phase": _phase_name(rnn_active, l1_active),
            }
            requested = observer(it, run.positions, energy, snapshot)
            if requested:
                for key, value in requested.items():
                    applied = _apply_mutation(run, key, value, it, total)
                    if applied is not None:
                        mutations.append((it, key, applied))
                    if key == "stop":
                        stop = True
                    elif key == "start_l1":
                        l1_from = it + 1
                    elif key == "start_rnn":
                        rnn_from = it + 1
                    elif key == "rn_resample_period":
                        resample_period = int(value)
        if stop:
            break

    if total == 0 or state.stress != state.stress:  # NaN check for 0-iteration runs
        state.stress = F.stress(run.positions, run.conn_full, run.c, F.NORM_L2)

    embedding = Embedding(run.positions.copy(), labels=run.labels)
    return RunResult(embedding=embedding, trace=trace, state=state, mutations=mutations)


def _apply_mutation(run, key, value, iteration, total):
    if key == "c":
        value = float(value)
        if not (0.0 < value < 1.0):
            raise InvalidArgumentError(f"c must be in (0, 1), got {value}")
        run.c = value
        return value
    if key == "b":
        value = float(value)
        if value <= 0:
            raise InvalidArgumentError(f"step size must be positive, got {value}")
        if hasattr(run.optimizer, "params"):
            run.optimizer.params.b = value
        elif hasattr(run.optimizer, "alpha"):
            run.optimizer.alpha = value
        return value
    if key == "optimizer":
        if value not in OPTIMIZER_KINDS:
            raise InvalidArgumentError(f"unknown optimizer {value!r}")
        run.config.optimizer = value
        run.optimizer = make_optimizer(
            value, run.graph.M, run.config.target_dim, run.config.integrator, run.config.opt
        )
        return value
    if key == "rn_resample_period":
        value = int(value)
        if value < 0:
            raise InvalidArgumentError("rn_resample_period must be >= 0")
        return value
    if key in ("start_l1", "start_rnn", "stop"):
        return bool(value)
    raise InvalidArgumentError(f"unknown mutation {key!r}")
