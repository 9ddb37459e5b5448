"""Affinity graphs: self-tuning construction, cluster/background split and the
linear deformation ``W(t) = W0 + t E`` between them."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from .errors import (
    DimensionMismatch,
    IndexOutOfRange,
    OutOfRange,
    SizeMismatch,
    ValidationError,
    ZeroScale,
)

# above this size kNN search switches from exact brute force to a kd-tree
BRUTE_FORCE_MAX_N = 6000
_CHUNK = 512


@dataclass(frozen=True)
class AffinityGraph:
    """Symmetric nonnegative weights plus their row sums.

    Treat instances as immutable; no function in this package mutates one.
    """

    weights: sparse.csr_matrix
    degrees: np.ndarray

    @classmethod
    def from_weights(cls, weights) -> "AffinityGraph":
        w = sparse.csr_matrix(weights, dtype=float)
        w.sum_duplicates()
        w.sort_indices()
        if w.shape[0] != w.shape[1]:
            raise DimensionMismatch(f"weights must be square, got {w.shape}")
        return cls(w, np.asarray(w.sum(axis=1)).ravel())

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    def dense(self) -> np.ndarray:
        return self.weights.toarray()


@dataclass(frozen=True)
class Partition:
    """Node labels: 0 is background, ``1..K`` are the sub-clusters."""

    labels: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 1 or not np.issubdtype(labels.dtype, np.integer):
            raise ValidationError("partition labels must be a 1-d integer vector")
        if labels.min(initial=0) < 0:
            raise ValidationError("partition labels must be >= 0")
        k = int(labels.max(initial=0))
        if k == 0:
            raise ValidationError("partition has no cluster nodes")
        if np.all(labels > 0):
            raise ValidationError("partition has no background nodes")
        present = np.unique(labels[labels > 0])
        if len(present) != k:
            raise ValidationError(f"cluster labels must cover 1..{k} without gaps")
        object.__setattr__(self, "labels", labels.astype(np.int64))

    @classmethod
    def from_truth(cls, truth, cluster_id=None) -> "Partition":
        truth = np.asarray(truth, dtype=bool)
        if cluster_id is None:
            return cls(truth.astype(np.int64))
        cid = np.asarray(cluster_id, dtype=np.int64)
        labels = np.zeros(len(truth), dtype=np.int64)
        # relabel cluster ids to 1..K in sorted order
        ids = np.unique(cid[truth])
        for j, c in enumerate(ids, start=1):
            labels[truth & (cid == c)] = j
        return cls(labels)

    @property
    def n(self) -> int:
        return len(self.labels)

    @property
    def k(self) -> int:
        return int(self.labels.max())

    @property
    def cluster_mask(self) -> np.ndarray:
        return self.labels > 0

    @property
    def background_mask(self) -> np.ndarray:
        return self.labels == 0

    @property
    def delta(self) -> float:
        return float(self.cluster_mask.mean())

    def cluster_sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.k + 1)[1:]


@dataclass(frozen=True)
class DeformationPair:
    w0: AffinityGraph
    e: sparse.csr_matrix


def _as_points(points) -> np.ndarray:
    points = getattr(points, "points", points)
    try:
        x = np.asarray(points, dtype=float)
    except ValueError as exc:
        raise DimensionMismatch(f"ragged point cloud: {exc}") from None
    if x.ndim != 2:
        raise DimensionMismatch(f"points must be an n x d array, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValidationError("points contain non-finite values")
    return x


def knn(x: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Distances and indices of the ``k`` nearest neighbours of every row, self excluded.

    Exact with ties broken by lower index for ``n <= BRUTE_FORCE_MAX_N``.
    """
    n = len(x)
    if n <= BRUTE_FORCE_MAX_N:
        dist = np.empty((n, k))
        idx = np.empty((n, k), dtype=np.int64)
        for start in range(0, n, _CHUNK):
            stop = min(start + _CHUNK, n)
            d2 = cdist(x[start:stop], x, "sqeuclidean")
            d2[np.arange(stop - start), np.arange(start, stop)] = np.inf
            order = np.argsort(d2, axis=1, kind="stable")[:, :k]
            idx[start:stop] = order
            dist[start:stop] = np.sqrt(np.take_along_axis(d2, order, axis=1))
        return dist, idx
    tree = cKDTree(x)
    d, i = tree.query(x, k=k + 1)
    rows = np.arange(n)[:, None]
    is_self = i == rows
    # duplicates can push self out of column 0; drop self if found, else the farthest
    drop = np.where(is_self.any(axis=1), is_self.argmax(axis=1), k)
    keep = np.ones_like(i, dtype=bool)
    keep[np.arange(n), drop] = False
    return d[keep].reshape(n, k), i[keep].reshape(n, k)


def build_affinity(points, k_nn: int, k_st: int, dense: bool = False) -> AffinityGraph:
    """Self-tuning Gaussian affinity ``exp(-|x-y|^2 / (s_x s_y))``.

    ``s_x`` is the distance from ``x`` to its ``k_st``-th nearest neighbour.
    Edges are the union of the kNN lists (``k_nn`` neighbours each), or all
    pairs when ``dense``. The diagonal is 1. Entries that underflow to exactly
    zero are not stored.
    """
    x = _as_points(points)
    n = len(x)
    if not (1 <= k_st <= k_nn < n):
        raise ValidationError(f"need 1 <= k_st <= k_nn < n, got k_st={k_st}, k_nn={k_nn}, n={n}")
    dist, idx = knn(x, k_nn)
    sigma = dist[:, k_st - 1]
    if np.any(sigma == 0):
        bad = np.flatnonzero(sigma == 0)[:5].tolist()
        raise ZeroScale(f"zero self-tuning scale at nodes {bad} (duplicate points)")

    if dense:
        rows, cols, vals = [], [], []
        for start in range(0, n, _CHUNK):
            stop = min(start + _CHUNK, n)
            d2 = cdist(x[start:stop], x, "sqeuclidean")
            k = np.exp(-d2 / np.outer(sigma[start:stop], sigma))
            r, c = np.nonzero(k)
            rows.append(r + start)
            cols.append(c)
            vals.append(k[r, c])
        w = sparse.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
        )
        return AffinityGraph.from_weights(w)

    diag = np.arange(n)
    r = np.concatenate([np.repeat(diag, k_nn), diag])
    c = np.concatenate([idx.ravel(), diag])
    pattern = sparse.coo_matrix((np.ones(len(r)), (r, c)), shape=(n, n))
    pattern = (pattern + pattern.T).tocoo()
    pattern.sum_duplicates()
    r, c = pattern.row, pattern.col
    d2 = np.einsum("ij,ij->i", x[r] - x[c], x[r] - x[c])
    vals = np.exp(-d2 / (sigma[r] * sigma[c]))
    keep = vals > 0
    w = sparse.csr_matrix((vals[keep], (r[keep], c[keep])), shape=(n, n))
    return AffinityGraph.from_weights(w)


def _check_sizes(g: AffinityGraph, part: Partition):
    if g.n != part.n:
        raise SizeMismatch(f"graph has {g.n} nodes, partition has {part.n}")


def split_blocks(g: AffinityGraph, part: Partition) -> DeformationPair:
    """Split weights into the block-diagonal part and the cross-block part."""
    _check_sizes(g, part)
    coo = g.weights.tocoo()
    mask = part.cluster_mask
    cross = mask[coo.row] != mask[coo.col]
    shape = g.weights.shape
    w0 = sparse.csr_matrix((coo.data[~cross], (coo.row[~cross], coo.col[~cross])), shape=shape)
    e = sparse.csr_matrix((coo.data[cross], (coo.row[cross], coo.col[cross])), shape=shape)
    e.sort_indices()
    return DeformationPair(AffinityGraph.from_weights(w0), e)


def deform(pair: DeformationPair, t: float) -> AffinityGraph:
    if not 0.0 <= t <= 1.0:
        raise OutOfRange(f"t must lie in [0, 1], got {t}")
    if t == 0.0:
        return pair.w0
    return AffinityGraph.from_weights(pair.w0.weights + t * pair.e)


def connection_strength(g: AffinityGraph, part: Partition) -> float:
    """Total weight between background and clusters, each unordered pair once."""
    _check_sizes(g, part)
    b = part.background_mask
    return float(g.weights[b][:, ~b].sum())


def degree_bounds(g: AffinityGraph) -> tuple[float, float]:
    return float(g.degrees.min()), float(g.degrees.max())


def volume(g: AffinityGraph, subset) -> float:
    subset = np.asarray(subset)
    if subset.dtype == bool:
        if subset.shape != (g.n,):
            raise IndexOutOfRange(f"boolean subset must have length {g.n}")
        return float(g.degrees[subset].sum())
    subset = subset.astype(np.int64).ravel()
    if subset.size and (subset.min() < 0 or subset.max() >= g.n):
        raise IndexOutOfRange(f"subset indices must lie in [0, {g.n})")
    return float(g.degrees[np.unique(subset)].sum())


def write_triplets(g: AffinityGraph, path) -> None:
    """``n nnz`` header, then ``i j w`` with ``i <= j``, 0-indexed."""
    upper = sparse.triu(g.weights).tocoo()
    order = np.lexsort((upper.col, upper.row))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{g.n} {upper.nnz}\n")
        for i, j, w in zip(upper.row[order], upper.col[order], upper.data[order]):
            fh.write(f"{i} {j} {float(w)!r}\n")


def read_triplets(path) -> AffinityGraph:
    lines = Path(path).read_text(encoding="utf-8").split("\n")
    n, nnz = (int(v) for v in lines[0].split())
    body = [ln for ln in lines[1:] if ln.strip()]
    if len(body) != nnz:
        raise ValidationError(f"{path}: header says {nnz} entries, found {len(body)}")
    if nnz == 0:
        return AffinityGraph.from_weights(sparse.csr_matrix((n, n)))
    arr = np.array([ln.split() for ln in body], dtype=float)
    i, j, w = arr[:, 0].astype(np.int64), arr[:, 1].astype(np.int64), arr[:, 2]
    if np.any(i > j):
        raise ValidationError(f"{path}: triplets must have i <= j")
    off = i != j
    rows = np.concatenate([i, j[off]])
    cols = np.concatenate([j, i[off]])
    vals = np.concatenate([w, w[off]])
    return AffinityGraph.from_weights(sparse.csr_matrix((vals, (rows, cols)), shape=(n, n)))
