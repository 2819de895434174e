"""Fast kNN-graph embedding of high-dimensional data with binary distances,
embedding quality measurement, centroid-supervised preprocessing, and a live
steering server."""

from .datasets import (
    Dataset,
    Embedding,
    SyntheticSpec,
    generate_synthetic,
    load_dataset,
    load_embedding,
    mnist_like,
    pca_reduce,
    save_dataset,
    save_embedding,
)
from .engine import (
    EmbeddingConfig,
    EmbeddingState,
    RunResult,
    StressTrace,
    init_layout,
    run_embedding,
    sample_random_neighbors,
)
from .errors import (
    DegenerateMetricError,
    DimensionMismatchError,
    InvalidArgumentError,
    IvhdError,
    MalformedInputError,
    NumericalDivergenceError,
)
from .forces import ConnectionSet, compute_forces, stress
from .knng import (
    KnnGraph,
    RnnSets,
    build_exact_knn,
    cache_read,
    cache_write,
    largest_connected_component,
    refine_neighbor_exploration,
    reverse_neighbors,
    rigidity_bound,
)
from .manifest import RunManifest
from .metrics import (
    MetricCurves,
    compute_ranks,
    evaluate_embedding,
    gnn_curve,
    neighbor_hit,
    rnx_curve,
    shepard_and_corank,
    trust_continuity,
)
from .optim import IntegratorParams, OptimizerParams, auto_adapt_b, make_optimizer

__version__ = "0.1.0"
