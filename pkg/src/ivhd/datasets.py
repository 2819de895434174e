"""Dataset and embedding containers, file formats, PCA and synthetic generators.

Canonical interchange is CSV ('.' decimal, comma separator, optional final
integer label column). A raw little-endian f32 matrix format with an 8-byte
(M, N as u32) header covers large data; labels then live in a text sidecar
file `<path>.labels` with one integer per line.
"""

import io
import math
import os
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .errors import DimensionMismatchError, InvalidArgumentError, MalformedInputError

SYNTHETIC_KINDS = (
    "hypertetrahedra-pair",
    "ball-halves",
    "ball-in-sphere",
    "ball-in-2-spheres",
    "ball-in-empty-ball",
    "grid-2d",
)


def _check_labels(labels, m):
    labels = np.asarray(labels)
    if labels.shape != (m,):
        raise DimensionMismatchError(
            f"labels shape {labels.shape} does not match point count {m}"
        )
    if not np.issubdtype(labels.dtype, np.integer):
        if not np.all(labels == np.floor(labels)):
            raise MalformedInputError("labels must be integers")
        labels = labels.astype(np.int64)
    if labels.size and labels.min() < 0:
        raise InvalidArgumentError("labels must be nonnegative class ids")
    return labels.astype(np.int64)


@dataclass
class Dataset:
    """Dense M x N feature matrix with optional integer class labels."""

    data: np.ndarray
    labels: np.ndarray | None = None
    name: str = ""

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if not np.issubdtype(self.data.dtype, np.floating):
            self.data = self.data.astype(np.float64)
        if self.data.ndim != 2:
            raise DimensionMismatchError(f"data must be 2-D, got shape {self.data.shape}")
        if self.data.shape[0] < 1 or self.data.shape[1] < 1:
            raise InvalidArgumentError("dataset must have M >= 1 and N >= 1")
        if not np.isfinite(self.data).all():
            raise MalformedInputError("dataset contains NaN or Inf values")
        if self.labels is not None:
            self.labels = _check_labels(self.labels, self.data.shape[0])

    @property
    def M(self):
        return self.data.shape[0]

    @property
    def N(self):
        return self.data.shape[1]

    @property
    def n_classes(self):
        if self.labels is None:
            return 0
        return int(self.labels.max()) + 1


@dataclass
class Embedding:
    """Low-dimensional point set (n in {2, 3}) mirroring a source dataset."""

    points: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] not in (2, 3):
            raise DimensionMismatchError(
                f"embedding must be M x 2 or M x 3, got shape {self.points.shape}"
            )
        if not np.isfinite(self.points).all():
            raise MalformedInputError("embedding contains NaN or Inf values")
        if self.labels is not None:
            self.labels = _check_labels(self.labels, self.points.shape[0])

    @property
    def M(self):
        return self.points.shape[0]


# ---------------------------------------------------------------- file formats

_RAW_MAGIC_LEN = 8  # two u32: M, N


def _read_csv_matrix(path):
    try:
        frame = pd.read_csv(
            path, header=None, dtype=np.float64, engine="c", float_precision="round_trip"
        )
    except pd.errors.EmptyDataError:
        raise MalformedInputError(f"{path}: empty file")
    except pd.errors.ParserError as exc:
        raise DimensionMismatchError(f"{path}: {exc}")
    except ValueError:
        # Re-scan to localize the first non-numeric token.
        with open(path) as fh:
            for row, line in enumerate(fh):
                for tok in line.strip().split(","):
                    try:
                        float(tok)
                    except ValueError:
                        raise MalformedInputError(
                            f"{path}: cannot parse value {tok!r}", row=row
                        )
        raise MalformedInputError(f"{path}: unparseable numeric data")
    values = frame.to_numpy()
    if np.isnan(values).any():
        # Distinguish a short row (width mismatch) from an explicit NaN.
        widths = _csv_widths(path)
        bad = np.nonzero(widths != widths[0])[0]
        if bad.size:
            raise DimensionMismatchError(
                f"{path}: row {bad[0]} has {widths[bad[0]]} columns, expected {widths[0]}"
            )
        row = int(np.nonzero(np.isnan(values).any(axis=1))[0][0])
        raise MalformedInputError(f"{path}: NaN value", row=row)
    if not np.isfinite(values).all():
        row = int(np.nonzero(~np.isfinite(values).all(axis=1))[0][0])
        raise MalformedInputError(f"{path}: non-finite value", row=row)
    return values


def _csv_widths(path):
    widths = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                widths.append(line.count(",") + 1)
    return np.asarray(widths)


def _read_raw_f32(path):
    with open(path, "rb") as fh:
        header = fh.read(_RAW_MAGIC_LEN)
        if len(header) != _RAW_MAGIC_LEN:
            raise MalformedInputError(f"{path}: truncated raw-f32 header")
        m, n = np.frombuffer(header, dtype="<u4")
        if m < 1 or n < 1:
            raise MalformedInputError(f"{path}: degenerate raw-f32 shape {m}x{n}")
        body = fh.read()
    expected = int(m) * int(n) * 4
    if len(body) != expected:
        raise DimensionMismatchError(
            f"{path}: raw-f32 body holds {len(body)} bytes, expected {expected}"
        )
    data = np.frombuffer(body, dtype="<f4").reshape(int(m), int(n)).astype(np.float64)
    if not np.isfinite(data).all():
        row = int(np.nonzero(~np.isfinite(data).all(axis=1))[0][0])
        raise MalformedInputError(f"{path}: non-finite value", row=row)
    return data


def _read_labels_file(path):
    try:
        raw = np.loadtxt(path, dtype=np.int64, ndmin=1)
    except ValueError as exc:
        raise MalformedInputError(f"{path}: {exc}")
    return raw


def load_dataset(path, fmt="csv", label_column=False, labels_path=None, name=None):
    """Load a dataset.

    fmt is one of "csv", "raw-f32" or "labels-sidecar" (data file of either
    kind plus `<path>.labels`). With label_column=True the final CSV column is
    split out as integer class ids.
    """
    if fmt not in ("csv", "raw-f32", "labels-sidecar"):
        raise InvalidArgumentError(f"unknown dataset format {fmt!r}")
    if not os.path.exists(path):
        raise MalformedInputError(f"{path}: no such file")

    sidecar = None
    if fmt == "labels-sidecar":
        sidecar = labels_path or path + ".labels"
        fmt = "raw-f32" if _looks_raw(path) else "csv"

    data = _read_raw_f32(path) if fmt == "raw-f32" else _read_csv_matrix(path)

    labels = None
    if label_column and fmt == "csv":
        if data.shape[1] < 2:
            raise DimensionMismatchError(f"{path}: no feature columns besides the label")
        labels = data[:, -1]
        if not np.all(labels == np.floor(labels)):
            raise MalformedInputError(f"{path}: label column is not integral")
        data = data[:, :-1]
    if sidecar is not None:
        labels = _read_labels_file(sidecar)
    elif labels_path is not None:
        labels = _read_labels_file(labels_path)

    return Dataset(data, labels=labels, name=name or os.path.basename(path))


def _looks_raw(path):
    if path.endswith(".f32") or path.endswith(".bin") or path.endswith(".raw"):
        return True
    with open(path, "rb") as fh:
        head = fh.read(64)
    return b"," not in head and b"\n" not in head


def save_dataset(dataset, path, fmt="csv"):
    """Write a dataset; CSV appends the label column, raw-f32 writes a sidecar."""
    if fmt == "csv":
        cols = [dataset.data]
        if dataset.labels is not None:
            cols.append(dataset.labels[:, None].astype(np.float64))
        _write_csv_matrix(np.hstack(cols), path)
    elif fmt == "raw-f32":
        m, n = dataset.data.shape
        with open(path, "wb") as fh:
            fh.write(np.asarray([m, n], dtype="<u4").tobytes())
            fh.write(np.ascontiguousarray(dataset.data, dtype="<f4").tobytes())
        if dataset.labels is not None:
            np.savetxt(path + ".labels", dataset.labels, fmt="%d")
    else:
        raise InvalidArgumentError(f"unknown dataset format {fmt!r}")


def _write_csv_matrix(values, path):
    buf = io.StringIO()
    for row in values:
        buf.write(",".join(repr(float(v)) for v in row))
        buf.write("\n")
    with open(path, "w") as fh:
        fh.write(buf.getvalue())


def save_embedding(embedding, path):
    """Write embedding CSV (x,y[,z][,label]) at full round-trip precision."""
    cols = [embedding.points]
    if embedding.labels is not None:
        cols.append(embedding.labels[:, None].astype(np.float64))
    _write_csv_matrix(np.hstack(cols), path)


def load_embedding(path, with_labels=None):
    """Read an embedding CSV; 3- and 4-column files are disambiguated by flag.

    with_labels=None infers: 2 columns -> 2-D, 4 columns -> 3-D + label,
    3 columns -> ambiguous, defaults to 2-D + label.
    """
    values = _read_csv_matrix(path)
    ncol = values.shape[1]
    if with_labels is None:
        with_labels = ncol in (3, 4)
    dim = ncol - (1 if with_labels else 0)
    if dim not in (2, 3):
        raise DimensionMismatchError(
            f"{path}: {ncol} columns do not form a 2-D/3-D embedding"
        )
    labels = None
    if with_labels:
        lab = values[:, -1]
        if not np.all(lab == np.floor(lab)):
            raise MalformedInputError(f"{path}: label column is not integral")
        labels = lab.astype(np.int64)
    return Embedding(values[:, :dim], labels=labels)


# ------------------------------------------------------------------------ PCA


def pca_reduce(dataset, dims=None, variance_fraction=None):
    """Project onto leading principal components of the mean-centered data.

    Exactly one of dims / variance_fraction selects the width. Returns
    (reduced Dataset, cumulative explained-variance curve). The curve is
    monotone nondecreasing and ends at 1.

    The spectrum comes from the N x N covariance when N <= 2000, else from
    the M x M Gram matrix, which shares its positive eigenvalues.
    """
    if (dims is None) == (variance_fraction is None):
        raise InvalidArgumentError("specify exactly one of dims / variance_fraction")
    X = np.asarray(dataset.data, dtype=np.float64)
    m, n = X.shape
    bound = min(m, n)
    if dims is not None and not (1 <= dims <= bound):
        raise InvalidArgumentError(f"dims must be in [1, {bound}], got {dims}")
    if variance_fraction is not None and not (0.0 < variance_fraction <= 1.0):
        raise InvalidArgumentError("variance_fraction must be in (0, 1]")

    mean = X.mean(axis=0)
    Xc = X - mean

    if n <= max(2000, m):
        cov = (Xc.T @ Xc) / max(m - 1, 1)
        evals, evecs = np.linalg.eigh(cov)
        order = np.argsort(evals)[::-1]
        evals = np.clip(evals[order], 0.0, None)
        directions = evecs[:, order]
    else:
        gram = (Xc @ Xc.T) / max(m - 1, 1)
        evals, evecs = np.linalg.eigh(gram)
        order = np.argsort(evals)[::-1]
        evals = np.clip(evals[order], 0.0, None)
        scale = np.sqrt(np.maximum(evals * max(m - 1, 1), 1e-300))
        directions = Xc.T @ (evecs[:, order] / scale)

    total = evals.sum()
    if total <= 0.0:
        curve = np.ones_like(evals)
        k = 1 if dims is None else dims
    else:
        cum = np.cumsum(evals)
        curve = cum / cum[-1]
        if dims is not None:
            k = dims
        else:
            k = int(np.searchsorted(curve, variance_fraction - 1e-12) + 1)
            k = min(k, bound)

    picked = directions[:, :k]
    # Deterministic sign: largest-magnitude loading of each component positive.
    flips = np.sign(picked[np.abs(picked).argmax(axis=0), np.arange(k)])
    flips[flips == 0] = 1.0
    picked = picked * flips
    scores = Xc @ picked

    reduced = Dataset(scores, labels=dataset.labels, name=f"{dataset.name}-pca{k}")
    return reduced, curve


# ------------------------------------------------------------ synthetic data


@dataclass
class SyntheticSpec:
    """Recipe for a structured test dataset; a pure function of (spec, seed)."""

    kind: str
    M: int
    N: int
    seed: int = 0
    pbc: bool = False

    def __post_init__(self):
        if self.kind not in SYNTHETIC_KINDS:
            raise InvalidArgumentError(
                f"unknown synthetic kind {self.kind!r}; choose from {SYNTHETIC_KINDS}"
            )


def _unit_simplex(n):
    """Vertices of a regular n-simplex in R^n with unit edge length."""
    pts = np.eye(n + 1) / math.sqrt(2.0)
    pts -= pts.mean(axis=0)
    # The centered vertices span an n-dim subspace; rotate into R^n.
    _, s, vt = np.linalg.svd(pts, full_matrices=False)
    coords = pts @ vt[:n].T
    return coords


def _random_rotation(n, rng):
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def _ball_points(m, n, radius, rng, hollow_from=None):
    dirs = rng.standard_normal((m, n))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    u = rng.random(m)
    if hollow_from is None:
        radii = radius * u ** (1.0 / n)
    else:
        lo = hollow_from**n
        radii = (lo + u * (radius**n - lo)) ** (1.0 / n)
    return dirs * radii[:, None]


def _sphere_points(m, n, radius, rng):
    dirs = rng.standard_normal((m, n))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return dirs * radius


def generate_synthetic(spec):
    """Materialize a synthetic dataset; deterministic for a fixed spec."""
    rng = np.random.default_rng(spec.seed)
    kind, m, n = spec.kind, spec.M, spec.N

    if kind == "hypertetrahedra-pair":
        if n < 2:
            raise InvalidArgumentError("hypertetrahedra-pair needs N >= 2")
        if m != 2 * (n + 1):
            raise InvalidArgumentError(
                f"hypertetrahedra-pair forces M = 2*(N+1) = {2 * (n + 1)}, got {m}"
            )
        first = _unit_simplex(n)
        rotation = _random_rotation(n, rng)
        shift_dir = rng.standard_normal(n)
        shift_dir /= np.linalg.norm(shift_dir)
        second = first @ rotation.T + 4.0 * shift_dir
        data = np.vstack([first, second])
        labels = np.repeat([0, 1], n + 1)

    elif kind == "ball-halves":
        data = _ball_points(m, n, 1.0, rng)
        labels = (data[:, 0] > 0).astype(np.int64)

    elif kind == "ball-in-sphere":
        m_in = m // 2
        inner = _ball_points(m_in, n, 0.5, rng)
        shell = _sphere_points(m - m_in, n, 1.0, rng)
        data = np.vstack([inner, shell])
        labels = np.repeat([0, 1], [m_in, m - m_in])

    elif kind == "ball-in-2-spheres":
        m_in = m // 3
        m_s1 = (m - m_in) // 2
        m_s2 = m - m_in - m_s1
        data = np.vstack(
            [
                _ball_points(m_in, n, 0.5, rng),
                _sphere_points(m_s1, n, 1.0, rng),
                _sphere_points(m_s2, n, 1.5, rng),
            ]
        )
        labels = np.repeat([0, 1, 2], [m_in, m_s1, m_s2])

    elif kind == "ball-in-empty-ball":
        m_in = m // 2
        inner = _ball_points(m_in, n, 0.5, rng)
        hollow = _ball_points(m - m_in, n, 1.0, rng, hollow_from=0.8)
        data = np.vstack([inner, hollow])
        labels = np.repeat([0, 1], [m_in, m - m_in])

    elif kind == "grid-2d":
        side = math.isqrt(m)
        if side * side != m:
            raise InvalidArgumentError(f"grid-2d needs a square M, got {m}")
        ii, jj = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
        if spec.pbc:
            # Torus embedding in 4-D with unit spacing between lattice neighbors.
            r = 1.0 / (2.0 * math.sin(math.pi / side))
            tx = 2.0 * math.pi * ii.ravel() / side
            ty = 2.0 * math.pi * jj.ravel() / side
            data = np.column_stack(
                [r * np.cos(tx), r * np.sin(tx), r * np.cos(ty), r * np.sin(ty)]
            )
        else:
            data = np.column_stack([ii.ravel(), jj.ravel()]).astype(np.float64)
        labels = None

    else:  # pragma: no cover - guarded by SyntheticSpec
        raise InvalidArgumentError(f"unknown synthetic kind {kind!r}")

    name = f"{kind}-{m}x{data.shape[1]}-s{spec.seed}"
    return Dataset(np.asarray(data, dtype=np.float64), labels=labels, name=name)


# ------------------------------------------------- MNIST-scale surrogate data

# Surrogate constants, tuned so the covariance spectrum mirrors MNIST's
# (cumulative explained variance ~0.92 at 100 components) while each class is
# a curved low-dimensional manifold: nearest neighbors are locality-faithful
# (reverse-neighbor confirmation behaves like on real digits) and a 2-D
# embedding loses some purity, leaving the late-phase mechanisms real work.
_SURR_CONTENT_DIM = 12
_SURR_LOCAL_DIM = 3
_SURR_CENTER_SCALE = 6.0
_SURR_MANIFOLD_SCALE = 2.2
_SURR_BULK_SCALE = 1.9
_SURR_BULK_DECAY = 0.95
_SURR_FREQ = 3.0
_SURR_TAIL_FRACTION = 0.06
_SURR_TAIL_SCALE = 2.2


def mnist_like(m=70000, n=784, k=10, seed=0):
    """Deterministic labeled surrogate at MNIST scale.

    Each class is a smooth 3-D manifold: a linear piece inside a shared
    content subspace (class separation and crossings live there) plus a
    random-Fourier lift into the remaining dimensions whose power-law
    amplitudes shape the global spectrum. A small heavy-tailed fraction of
    each class sits far out along its manifold. Used by the benchmark suite
    when no real digits file is available; see README for pointing the suite
    at a real mnist.npz.
    """
    if m < k:
        raise InvalidArgumentError("need at least one sample per class")
    if n <= _SURR_CONTENT_DIM:
        raise InvalidArgumentError(f"need n > {_SURR_CONTENT_DIM}")
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    content_basis = q[:, :_SURR_CONTENT_DIM]
    bulk_basis = q[:, _SURR_CONTENT_DIM:]
    nb = n - _SURR_CONTENT_DIM
    amps = _SURR_BULK_SCALE * np.arange(1, nb + 1, dtype=np.float64) ** (
        -_SURR_BULK_DECAY / 2.0
    )
    centers = rng.standard_normal((k, _SURR_CONTENT_DIM))
    centers *= _SURR_CENTER_SCALE / np.linalg.norm(centers, axis=1, keepdims=True)
    frames = [
        np.linalg.qr(rng.standard_normal((_SURR_CONTENT_DIM, _SURR_LOCAL_DIM)))[0]
        * _SURR_MANIFOLD_SCALE
        for _ in range(k)
    ]
    freqs = [
        rng.standard_normal((nb, _SURR_LOCAL_DIM)) * (_SURR_FREQ / _SURR_MANIFOLD_SCALE)
        for _ in range(k)
    ]
    phases = [rng.uniform(0.0, 2.0 * math.pi, nb) for _ in range(k)]

    labels = np.arange(m, dtype=np.int64) % k
    data = np.empty((m, n), dtype=np.float32)
    for start in range(0, m, 4096):
        stop = min(start + 4096, m)
        rows = stop - start
        lab = labels[start:stop]
        t = rng.standard_normal((rows, _SURR_LOCAL_DIM))
        spread = np.where(
            rng.random(rows) < _SURR_TAIL_FRACTION, _SURR_TAIL_SCALE, 1.0
        )
        t *= spread[:, None]
        content = centers[lab].copy()
        bulk = np.empty((rows, nb))
        for cls in range(k):
            sel = np.nonzero(lab == cls)[0]
            if sel.size:
                tt = t[sel]
                content[sel] += tt @ frames[cls].T
                bulk[sel] = math.sqrt(2.0) * np.cos(tt @ freqs[cls].T + phases[cls]) * amps
        data[start:stop] = content @ content_basis.T + bulk @ bulk_basis.T
    order = rng.permutation(m)
    return Dataset(data[order], labels=labels[order], name=f"mnist-like-{m}")
