"""Stress and force kernels over a sparse connection set.

Evaluation is two-phase: phase 1 computes one force component per directed
connection (each connection owns a positive slot at its source and a negative
slot at its target), phase 2 sums slots per particle in a fixed index order,
so results are identical for any slab split or worker count.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError, InvalidArgumentError

NORM_L2 = "l2"
NORM_L1 = "l1"


@dataclass
class ConnectionSet:
    """Directed interaction list: nearest-neighbor and random-neighbor pairs.

    targets holds the desired distance per connection (0/1 in binary mode,
    stored dissimilarities in euclidean mode); is_random marks connections
    whose stress term is scaled by the random-force factor c. scale, when
    given, multiplies individual connection weights (used by the filtered
    final phase to concentrate a particle's attraction budget on its
    surviving neighbors).
    """

    edges: np.ndarray  # (L, 2) int32
    targets: np.ndarray  # (L,) float64
    is_random: np.ndarray  # (L,) bool
    scale: np.ndarray | None = None  # (L,) float64 weight multipliers

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=np.int32)
        self.targets = np.asarray(self.targets, dtype=np.float64)
        self.is_random = np.asarray(self.is_random, dtype=bool)
        if self.edges.ndim != 2 or self.edges.shape[1] != 2:
            raise DimensionMismatchError("edges must be (L, 2)")
        if self.targets.shape != (len(self.edges),) or self.is_random.shape != (
            len(self.edges),
        ):
            raise DimensionMismatchError("targets/is_random must be length L")
        if self.scale is not None:
            self.scale = np.asarray(self.scale, dtype=np.float64)
            if self.scale.shape != (len(self.edges),):
                raise DimensionMismatchError("scale must be length L")

    def __len__(self):
        return len(self.edges)

    def weights(self, c):
        w = np.where(self.is_random, c, 1.0)
        if self.scale is not None:
            w = w * self.scale
        return w

    def subset(self, mask):
        return ConnectionSet(
            self.edges[mask],
            self.targets[mask],
            self.is_random[mask],
            None if self.scale is None else self.scale[mask],
        )


def _distances(diff, norm):
    if norm == NORM_L2:
        return np.sqrt(np.einsum("ij,ij->i", diff, diff))
    if norm == NORM_L1:
        return np.abs(diff).sum(axis=1)
    raise InvalidArgumentError(f"unknown norm {norm!r}")


def stress(positions, conn, c, norm=NORM_L2):
    """E = sum over connections of w * (target - d)^2, w = c on random pairs."""
    diff = positions[conn.edges[:, 0]] - positions[conn.edges[:, 1]]
    d = _distances(diff, norm)
    resid = conn.targets - d
    return float(np.sum(conn.weights(c) * resid * resid))


def connection_components(positions, conn, c, norm, out, energy_out=None, start=0, stop=None):
    """Phase 1: per-connection force component w * (target - d) * unit(diff).

    Writes into out[start:stop] and, when given, per-connection stress terms
    w * (target - d)^2 into energy_out[start:stop]. Rows at d == 0 with a
    nonzero target are left zero and flagged; the caller resolves them with a
    seeded random direction (see compute_forces). Returns the degenerate mask.
    """
    stop = len(conn) if stop is None else stop
    edges = conn.edges[start:stop]
    targets = conn.targets[start:stop]
    w = np.where(conn.is_random[start:stop], c, 1.0)
    if conn.scale is not None:
        w = w * conn.scale[start:stop]
    diff = positions[edges[:, 0]] - positions[edges[:, 1]]
    slab = out[start:stop]

    if norm == NORM_L1:
        d = np.abs(diff).sum(axis=1)
        resid = targets - d
        np.multiply(np.sign(diff), (w * resid)[:, None], out=slab)
        degenerate = np.zeros(len(edges), dtype=bool)  # sign(0) = 0 at kinks
    elif norm == NORM_L2:
        d = np.sqrt(np.einsum("ij,ij->i", diff, diff))
        resid = targets - d
        zero = d == 0.0
        # Zero-target pairs reduce exactly to -w * diff (no division involved).
        # Non-finite intermediates (diverging runs) pass through; the engine's
        # divergence check owns them.
        with np.errstate(invalid="ignore"):
            factor = np.where(targets == 0.0, -w, w * resid / np.where(zero, 1.0, d))
        degenerate = zero & (targets != 0.0)
        factor = np.where(degenerate, 0.0, factor)
        np.multiply(diff, factor[:, None], out=slab)
    else:
        raise InvalidArgumentError(f"unknown norm {norm!r}")

    if energy_out is not None:
        np.multiply(w, resid * resid, out=energy_out[start:stop])
    return degenerate


def accumulate_forces(components, edges, m):
    """Phase 2: fixed-order per-particle summation of connection slots."""
    dim = components.shape[1]
    f = np.empty((m, dim))
    for axis in range(dim):
        f[:, axis] = np.bincount(
            edges[:, 0], weights=components[:, axis], minlength=m
        ) - np.bincount(edges[:, 1], weights=components[:, axis], minlength=m)
    return f


def compute_forces(positions, conn, c, norm=NORM_L2, rng=None, threads=1, with_stress=False):
    """Force matrix equal to -1/2 of the stress gradient.

    Random-pair connections at exactly zero embedded distance get a seeded
    random unit direction (magnitude w * target), drawn in connection order so
    the result does not depend on the slab split.
    """
    m, dim = positions.shape
    total = len(conn)
    components = np.empty((total, dim))
    energy_terms = np.empty(total) if with_stress else None

    if threads > 1 and total >= 4 * threads:
        bounds = np.linspace(0, total, threads + 1, dtype=int)
        degenerate = np.zeros(total, dtype=bool)

        def work(t):
            dg = connection_components(
                positions, conn, c, norm, components, energy_terms,
                start=bounds[t], stop=bounds[t + 1],
            )
            degenerate[bounds[t] : bounds[t + 1]] = dg

        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, range(threads)))
    else:
        degenerate = connection_components(positions, conn, c, norm, components, energy_terms)

    bad = np.nonzero(degenerate)[0]
    if bad.size:
        if rng is None:
            rng = np.random.default_rng(0)
        dirs = rng.standard_normal((bad.size, dim))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        w = conn.weights(c)[bad]
        components[bad] = dirs * (w * conn.targets[bad])[:, None]

    f = accumulate_forces(components, conn.edges, m)
    if with_stress:
        # Single fixed-order reduction over the full term buffer keeps the
        # reported stress identical for any worker count.
        return f, float(np.sum(energy_terms))
    return f


def gradient(positions, conn, c, norm=NORM_L2, rng=None, threads=1):
    """Stress gradient, i.e. -2 * compute_forces."""
    return -2.0 * compute_forces(positions, conn, c, norm, rng=rng, threads=threads)
