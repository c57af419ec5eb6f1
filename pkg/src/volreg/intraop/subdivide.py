"""Midpoint subdivision of triangle surfaces."""

from __future__ import annotations

import numpy as np

from ..geometry.mesh import triangle_areas
from ..geometry.types import TriSurface


def midpoint_subdivide(surface: TriSurface) -> TriSurface:
    """Split every triangle into four through shared edge midpoints."""
    tri = surface.triangles
    v = surface.vertices
    e = np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]])
    key = np.sort(e, axis=1)
    uniq, inv = np.unique(key, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    mids = 0.5 * (v[uniq[:, 0]] + v[uniq[:, 1]])
    t = len(tri)
    m01, m12, m20 = (inv[k * t:(k + 1) * t] + len(v) for k in range(3))
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    new = np.concatenate([
        np.stack([a, m01, m20], 1), np.stack([m01, b, m12], 1),
        np.stack([m20, m12, c], 1), np.stack([m01, m12, m20], 1)])
    return TriSurface(np.concatenate([v, mids]), new)


def max_edge_length(surface: TriSurface) -> float:
    c = surface.corners()
    return float(np.max(np.linalg.norm(c - np.roll(c, 1, axis=1), axis=2))) if len(c) else 0.0


def subdivide_until(surface: TriSurface, max_area: float = 1e-5, max_edge: float = 1e-5,
                    factor: float = 10.0) -> TriSurface:
    """Subdivide until both limits hold or the vertex count would exceed
    ``factor`` times the input vertex count."""
    budget = factor * max(surface.n_vertices, 1)
    out = surface
    while out.n_triangles and (triangle_areas(out).max() > max_area or max_edge_length(out) > max_edge):
        # each pass adds one vertex per edge, about 3x the vertex count
        n_edges = len(np.unique(np.sort(np.concatenate([out.triangles[:, [0, 1]], out.triangles[:, [1, 2]],
                                                         out.triangles[:, [2, 0]]]), axis=1), axis=0))
        if out.n_vertices + n_edges > budget:
            break
        out = midpoint_subdivide(out)
    return out
