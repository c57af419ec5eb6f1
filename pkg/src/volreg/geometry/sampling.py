"""Farthest point sampling and k-nearest-neighbour search."""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree


def _valid_indices(n: int, valid) -> np.ndarray:
    if valid is None:
        return np.arange(n)
    valid = np.asarray(valid, dtype=bool)
    if len(valid) != n:
        raise ValueError("valid mask length differs from point count")
    return np.flatnonzero(valid)


def farthest_point_sample(points: np.ndarray, count: int, seed=None, valid=None,
                          start: int | None = None) -> np.ndarray:
    """Greedy max-min subset of ``count`` indices.

    The first index is ``start`` when given, otherwise drawn from ``seed``
    among the valid points. Ties go to the lowest index; invalid (padding)
    points are never selected.
    """
    points = np.asarray(points, dtype=np.float64)
    cand = _valid_indices(len(points), valid)
    if count > len(cand):
        raise ValueError(f"cannot sample {count} points from {len(cand)} valid points")
    if count <= 0:
        return np.zeros(0, dtype=np.int64)
    if start is None:
        start_local = int(np.random.default_rng(seed).integers(len(cand)))
    else:
        hits = np.flatnonzero(cand == start)
        if not len(hits):
            raise ValueError(f"start index {start} is not a valid point")
        start_local = int(hits[0])
    pts = points[cand]
    chosen = np.empty(count, dtype=np.int64)
    chosen[0] = start_local
    diff = pts - pts[start_local]
    mind = np.einsum("ij,ij->i", diff, diff)
    mind[start_local] = -1.0
    for i in range(1, count):
        nxt = int(np.argmax(mind))
        chosen[i] = nxt
        diff = pts - pts[nxt]
        np.minimum(mind, np.einsum("ij,ij->i", diff, diff), out=mind)
        mind[nxt] = -1.0
    return cand[chosen]


def centroid_farthest_index(points: np.ndarray, valid=None) -> int:
    """Valid point farthest from the valid centroid; independent of point order
    except for exact ties."""
    cand = _valid_indices(len(points), valid)
    p = points[cand]
    d = np.einsum("ij,ij->i", p - p.mean(axis=0), p - p.mean(axis=0))
    return int(cand[np.argmax(d)])


def _sq_dist(q: np.ndarray, t: np.ndarray) -> np.ndarray:
    diff = q[:, None, :] - t[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def knn(query: np.ndarray, target: np.ndarray, k: int, target_valid=None,
        tree: cKDTree | None = None) -> np.ndarray:
    """Indices of the ``k`` nearest valid target points per query row.

    Ordered by distance, ties by lower index; equal to exhaustive search.
    """
    query = np.asarray(query, dtype=np.float64).reshape(-1, 3)
    target = np.asarray(target, dtype=np.float64).reshape(-1, 3)
    cand = _valid_indices(len(target), target_valid)
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > len(cand):
        raise ValueError(f"k={k} exceeds the {len(cand)} valid target points")
    if len(query) == 0:
        return np.zeros((0, k), dtype=np.int64)
    tp = target[cand]
    extra = min(k + 1, len(cand))
    if tree is None:
        tree = cKDTree(tp)
    _, idx = tree.query(query, k=extra)
    idx = idx.reshape(len(query), extra)
    d = np.einsum("ijk,ijk->ij", query[:, None] - tp[idx], query[:, None] - tp[idx])
    # stable sort by exact squared distance, then by index
    order = np.lexsort((idx, d), axis=-1)
    idx = np.take_along_axis(idx, order, axis=1)
    d = np.take_along_axis(d, order, axis=1)
    out = idx[:, :k].copy()
    if extra > k:
        # a tie straddling the k-th slot may hide lower-index points: resolve exhaustively
        tol = 1e-12 * np.maximum(d[:, k], 1e-300)
        unsure = np.flatnonzero(d[:, k] - d[:, k - 1] <= tol)
        for s in range(0, len(unsure), 256):
            rows = unsure[s:s + 256]
            dd = _sq_dist(query[rows], tp)
            ii = np.broadcast_to(np.arange(len(tp)), dd.shape)
            order = np.lexsort((ii, dd), axis=-1)[:, :k]
            out[rows] = order
    return cand[out]

