"""Supervised meta-preprocessing: rewrite samples as distance vectors to
per-class (local) and dataset-wide (global) centroids, so any unsupervised
embedder downstream behaves like a supervised one.

Local blocks give each class its own coordinate frame (classes separate);
global blocks give all samples a shared frame (mutual layout survives).
"""

import json
from dataclasses import dataclass

import numpy as np

from .datasets import Dataset
from .errors import InvalidArgumentError

TRANSFORM_MODES = ("local", "global", "hybrid")


def kmeans(points, k, seed=0, max_iters=100):
    """Lloyd iterations from greedy spread-out seeding.

    Returns (centroids, assignment, inertia_per_iteration). The within-cluster
    sum of squares is non-increasing per iteration; an emptied cluster is
    re-seeded from the point farthest from its centroid.
    """
    X = np.asarray(getattr(points, "data", points), dtype=np.float64)
    if X.ndim != 2 or len(X) == 0:
        raise InvalidArgumentError("kmeans needs a nonempty 2-D point set")
    if not (1 <= k <= len(X)):
        raise InvalidArgumentError(f"k must be in [1, {len(X)}], got {k}")
    rng = np.random.default_rng(seed)

    centroids = _plusplus_seed(X, k, rng)
    inertia = []
    for _ in range(max_iters):
        d2 = _sq_dists(X, centroids)
        assign = d2.argmin(axis=1)
        best = d2[np.arange(len(X)), assign]
        inertia.append(float(best.sum()))
        new = np.zeros_like(centroids)
        counts = np.bincount(assign, minlength=k).astype(np.float64)
        for axis in range(X.shape[1]):
            new[:, axis] = np.bincount(assign, weights=X[:, axis], minlength=k)
        empty = counts == 0
        new[~empty] /= counts[~empty, None]
        if empty.any():
            # Re-seed each empty cluster from the current farthest point.
            order = np.argsort(best)[::-1]
            for slot, point in zip(np.nonzero(empty)[0], order):
                new[slot] = X[point]
        if np.array_equal(new, centroids):
            break
        centroids = new
    d2 = _sq_dists(X, centroids)
    assign = d2.argmin(axis=1)
    inertia.append(float(d2[np.arange(len(X)), assign].sum()))
    return centroids, assign, inertia


def _plusplus_seed(X, k, rng):
    """Distance-weighted greedy seeding (the k-means++ scheme)."""
    m = len(X)
    centroids = np.empty((k, X.shape[1]))
    centroids[0] = X[rng.integers(m)]
    closest = _sq_dists(X, centroids[:1]).ravel()
    for slot in range(1, k):
        total = closest.sum()
        if total <= 0:
            centroids[slot] = X[rng.integers(m)]
            continue
        pick = np.searchsorted(np.cumsum(closest), rng.random() * total)
        centroids[slot] = X[min(pick, m - 1)]
        closest = np.minimum(closest, _sq_dists(X, centroids[slot : slot + 1]).ravel())
    return centroids


def _sq_dists(X, C):
    d2 = (
        np.einsum("ij,ij->i", X, X)[:, None]
        + np.einsum("ij,ij->i", C, C)[None, :]
        - 2.0 * (X @ C.T)
    )
    return np.maximum(d2, 0.0)


@dataclass
class CentroidModel:
    """Fitted local (per-class) and global centroid sets."""

    global_centroids: np.ndarray
    local_centroids: dict  # class id -> (L_c, N) matrix
    n_local: int
    n_global: int

    def classes(self):
        return sorted(self.local_centroids)

    def to_json(self):
        return json.dumps(
            {
                "n_local": self.n_local,
                "n_global": self.n_global,
                "global_centroids": self.global_centroids.tolist(),
                "local_centroids": {
                    str(c): m.tolist() for c, m in self.local_centroids.items()
                },
            }
        )

    @classmethod
    def from_json(cls, payload):
        raw = json.loads(payload)
        return cls(
            global_centroids=np.asarray(raw["global_centroids"], dtype=np.float64),
            local_centroids={
                int(c): np.asarray(m, dtype=np.float64)
                for c, m in raw["local_centroids"].items()
            },
            n_local=int(raw["n_local"]),
            n_global=int(raw["n_global"]),
        )


def fit(dataset, n_local, n_global, seed=0, max_iters=100):
    """Cluster globally and per class; per-class k clamps to the class size."""
    if dataset.labels is None:
        raise InvalidArgumentError("centroid fitting needs class labels")
    if n_local < 0 or n_global < 0 or n_local + n_global == 0:
        raise InvalidArgumentError("need a positive number of centroids")
    X = np.asarray(dataset.data, dtype=np.float64)

    global_centroids = np.empty((0, X.shape[1]))
    if n_global > 0:
        if n_global > len(X):
            raise InvalidArgumentError("more global centroids than samples")
        global_centroids, _, _ = kmeans(X, n_global, seed=seed, max_iters=max_iters)

    local = {}
    if n_local > 0:
        for offset, cls in enumerate(np.unique(dataset.labels)):
            members = X[dataset.labels == cls]
            k = min(n_local, len(members))
            if k < n_local:
                import warnings

                warnings.warn(
                    f"class {cls} has {len(members)} samples; clamping local "
                    f"centroids to {k}",
                    stacklevel=2,
                )
            local[int(cls)], _, _ = kmeans(
                members, k, seed=seed + offset + 1, max_iters=max_iters
            )
    return CentroidModel(
        global_centroids=global_centroids,
        local_centroids=local,
        n_local=n_local,
        n_global=n_global,
    )


def nearest_centroid_classifier(model):
    """Assign each sample to the class of its closest local-centroid set."""

    def classify(samples):
        X = np.asarray(samples, dtype=np.float64)
        classes = model.classes()
        best = np.full(len(X), -1, dtype=np.int64)
        best_d = np.full(len(X), np.inf)
        for cls in classes:
            d = _sq_dists(X, model.local_centroids[cls]).min(axis=1)
            take = d < best_d
            best[take] = cls
            best_d[take] = d[take]
        return best

    return classify


def transform(samples, model, mode="hybrid", classifier=None, labels=None, sigma=None):
    """Distance-to-centroid coordinates for each sample.

    mode picks the blocks: "local" uses the assigned class's local centroids,
    "global" the shared set, "hybrid" concatenates both (width n_local +
    n_global). The class assignment comes from `labels` (the default,
    perfect-classifier route) or any `classifier(samples) -> class ids` hook.
    sigma, when given, applies the Gaussian activation exp(-d^2 / sigma^2).
    """
    if mode not in TRANSFORM_MODES:
        raise InvalidArgumentError(f"unknown transform mode {mode!r}")
    X = np.asarray(getattr(samples, "data", samples), dtype=np.float64)
    if labels is None and getattr(samples, "labels", None) is not None:
        labels = samples.labels

    blocks = []
    if mode in ("local", "hybrid"):
        if not model.local_centroids:
            raise InvalidArgumentError("model holds no local centroids")
        if classifier is not None:
            assigned = np.asarray(classifier(X))
        elif labels is not None:
            assigned = np.asarray(labels)
        else:
            raise InvalidArgumentError("local transform needs labels or a classifier")
        known = set(model.local_centroids)
        unknown = set(np.unique(assigned)) - known
        if unknown:
            raise InvalidArgumentError(f"classifier produced unknown classes {sorted(unknown)}")
        local_block = np.empty((len(X), model.n_local))
        for cls in model.classes():
            rows = np.nonzero(assigned == cls)[0]
            if rows.size == 0:
                continue
            d = np.sqrt(_sq_dists(X[rows], model.local_centroids[cls]))
            if d.shape[1] < model.n_local:
                # Clamped class: keep the output width fixed by repeating the
                # last centroid distance.
                pad = np.repeat(d[:, -1:], model.n_local - d.shape[1], axis=1)
                d = np.hstack([d, pad])
            local_block[rows] = d
        blocks.append(local_block)
    if mode in ("global", "hybrid"):
        if model.n_global == 0:
            raise InvalidArgumentError("model holds no global centroids")
        blocks.append(np.sqrt(_sq_dists(X, model.global_centroids)))

    out = np.hstack(blocks)
    if sigma is not None:
        if sigma <= 0:
            raise InvalidArgumentError("sigma must be positive")
        out = np.exp(-(out * out) / (sigma * sigma))
    name = getattr(samples, "name", "")
    out_labels = labels if labels is not None else None
    return Dataset(out, labels=out_labels, name=f"{name}-centroid-{mode}" if name else "")
