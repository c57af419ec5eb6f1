"""Triangle-surface kernels: areas, normals, exact point-to-mesh distance,
inside/outside classification and a few test primitives."""

from __future__ import annotations

import numpy as np
from scipy import sparse
from scipy.spatial import cKDTree

from .types import TriSurface


def triangle_areas(surface: TriSurface) -> np.ndarray:
    c = surface.corners()
    return 0.5 * np.linalg.norm(np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0]), axis=1)


def surface_area(surface: TriSurface) -> float:
    return float(triangle_areas(surface).sum()) if surface.n_triangles else 0.0


def face_normals(surface: TriSurface) -> np.ndarray:
    c = surface.corners()
    n = np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])
    norm = np.linalg.norm(n, axis=1, keepdims=True)
    return n / np.where(norm > 0, norm, 1.0)


def compute_normals(surface: TriSurface) -> np.ndarray:
    """Area-weighted vertex normals following the triangle winding."""
    c = surface.corners()
    cross = np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])  # length = 2 * area
    acc = np.zeros_like(surface.vertices)
    for j in range(3):
        np.add.at(acc, surface.triangles[:, j], cross)
    touched = np.zeros(surface.n_vertices, dtype=bool)
    touched[surface.triangles.reshape(-1)] = True
    if not touched.all():
        raise ValueError(f"{int((~touched).sum())} isolated vertices have no normal")
    norm = np.linalg.norm(acc, axis=1, keepdims=True)
    if (norm == 0).any():
        raise ValueError("vertex normal undefined (incident areas cancel)")
    return acc / norm


def vertex_areas(surface: TriSurface) -> np.ndarray:
    """One third of the incident triangle area per vertex."""
    a = triangle_areas(surface) / 3.0
    out = np.zeros(surface.n_vertices)
    for j in range(3):
        np.add.at(out, surface.triangles[:, j], a)
    return out


def unique_edges(triangles: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sorted undirected edges and how many triangles share each."""
    e = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    e.sort(axis=1)
    edges, counts = np.unique(e, axis=0, return_counts=True)
    return edges, counts


def is_watertight(surface: TriSurface) -> bool:
    if surface.n_triangles == 0:
        return False
    _, counts = unique_edges(surface.triangles)
    return bool((counts == 2).all())


def edge_graph(surface: TriSurface) -> sparse.csr_matrix:
    """Symmetric sparse matrix of edge lengths (for Dijkstra)."""
    edges, _ = unique_edges(surface.triangles)
    w = np.linalg.norm(surface.vertices[edges[:, 0]] - surface.vertices[edges[:, 1]], axis=1)
    n = surface.n_vertices
    g = sparse.coo_matrix((np.r_[w, w], (np.r_[edges[:, 0], edges[:, 1]], np.r_[edges[:, 1], edges[:, 0]])),
                          shape=(n, n))
    return g.tocsr()


def triangle_adjacency(surface: TriSurface) -> list[list[int]]:
    """Triangles sharing an edge with each triangle."""
    tri = surface.triangles
    e = np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]])
    e.sort(axis=1)
    owner = np.tile(np.arange(len(tri)), 3)
    order = np.lexsort((e[:, 1], e[:, 0]))
    e, owner = e[order], owner[order]
    adj: list[list[int]] = [[] for _ in range(len(tri))]
    same = (e[1:] == e[:-1]).all(axis=1)
    start = 0
    n = len(e)
    while start < n:
        stop = start + 1
        while stop < n and same[stop - 1]:
            stop += 1
        group = owner[start:stop]
        for a in group:
            for b in group:
                if a != b:
                    adj[a].append(int(b))
        start = stop
    return adj


def connected_components(surface: TriSurface) -> np.ndarray:
    """Component label per vertex (edge connectivity)."""
    from scipy.sparse.csgraph import connected_components as cc

    _, labels = cc(edge_graph(surface), directed=False)
    return labels


def closest_point_on_triangles(p: np.ndarray, a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Closest point on triangle (a, b, c) to p, row by row (Voronoi-region test)."""
    ab, ac, ap = b - a, c - a, p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    with np.errstate(divide="ignore", invalid="ignore"):
        denom = va + vb + vc
        v = np.where(denom != 0, vb / denom, 0.0)
        w = np.where(denom != 0, vc / denom, 0.0)
        out = a + ab * v[:, None] + ac * w[:, None]

        done = np.zeros(len(p), dtype=bool)

        def assign(mask, value):
            nonlocal done
            m = mask & ~done
            out[m] = value[m] if value.ndim == 2 else value
            done |= m

        assign((d1 <= 0) & (d2 <= 0), a)
        assign((d3 >= 0) & (d4 <= d3), b)
        t = d1 / (d1 - d3)
        assign((vc <= 0) & (d1 >= 0) & (d3 <= 0), a + ab * t[:, None])
        assign((d6 >= 0) & (d5 <= d6), c)
        t = d2 / (d2 - d6)
        assign((vb <= 0) & (d2 >= 0) & (d6 <= 0), a + ac * t[:, None])
        t = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        assign((va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0), b + (c - b) * t[:, None])
    return out


def _brute_closest(points, corners, chunk=2_000_000):
    n, t = len(points), len(corners)
    best_d = np.full(n, np.inf)
    best_p = np.zeros((n, 3))
    best_t = np.zeros(n, dtype=np.int64)
    rows = max(1, chunk // max(t, 1))
    for s in range(0, n, rows):
        p = points[s:s + rows]
        m = len(p)
        pp = np.repeat(p, t, axis=0)
        cc = np.tile(corners, (m, 1, 1))
        q = closest_point_on_triangles(pp, cc[:, 0], cc[:, 1], cc[:, 2])
        d = np.einsum("ij,ij->i", pp - q, pp - q).reshape(m, t)
        j = np.argmin(d, axis=1)
        best_d[s:s + m] = d[np.arange(m), j]
        best_p[s:s + m] = q.reshape(m, t, 3)[np.arange(m), j]
        best_t[s:s + m] = j
    return np.sqrt(best_d), best_p, best_t


def closest_points_on_mesh(points: np.ndarray, surface: TriSurface, candidates: int = 16):
    """Exact point-to-triangle distance, closest point and triangle index.

    Candidate triangles come from a tree over triangle centroids; rows whose
    candidate set cannot be certified fall back to exhaustive search.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if surface.n_triangles == 0:
        raise ValueError("empty target surface")
    corners = surface.corners()
    t = len(corners)
    if len(points) == 0:
        return np.zeros(0), np.zeros((0, 3)), np.zeros(0, dtype=np.int64)
    k = min(candidates, t)
    if k == t:
        return _brute_closest(points, corners)
    cent = corners.mean(axis=1)
    radius = np.linalg.norm(corners - cent[:, None], axis=2).max()
    tree = cKDTree(cent)
    dist_c, idx = tree.query(points, k=k)
    pp = np.repeat(points, k, axis=0)
    cc = corners[idx.reshape(-1)]
    q = closest_point_on_triangles(pp, cc[:, 0], cc[:, 1], cc[:, 2])
    d = np.sqrt(np.einsum("ij,ij->i", pp - q, pp - q)).reshape(-1, k)
    j = np.argmin(d, axis=1)
    rows = np.arange(len(points))
    best_d = d[rows, j]
    best_p = q.reshape(-1, k, 3)[rows, j]
    best_t = idx[rows, j]
    # any triangle outside the candidate set is at least (kth centroid distance - radius) away
    unsure = np.flatnonzero(best_d > dist_c[:, -1] - radius)
    if len(unsure):
        # a closer triangle must have its centroid within best_d + radius: search that ball exactly
        balls = tree.query_ball_point(points[unsure], best_d[unsure] + radius)
        counts = np.fromiter((len(b) for b in balls), dtype=np.int64, count=len(balls))
        owner = np.repeat(np.arange(len(unsure)), counts)
        tri = np.fromiter((i for b in balls for i in b), dtype=np.int64, count=int(counts.sum()))
        step = 2_000_000
        for s in range(0, len(tri), step):
            o, tt = owner[s:s + step], tri[s:s + step]
            pp = points[unsure[o]]
            cc = corners[tt]
            q = closest_point_on_triangles(pp, cc[:, 0], cc[:, 1], cc[:, 2])
            d = np.sqrt(np.einsum("ij,ij->i", pp - q, pp - q))
            # lexicographic order on (row, distance, triangle) keeps ties deterministic
            order = np.lexsort((tt, d, o))
            first = order[np.r_[True, o[order][1:] != o[order][:-1]]]
            rows_u = unsure[o[first]]
            better = d[first] < best_d[rows_u]
            rows_u, first = rows_u[better], first[better]
            best_d[rows_u], best_p[rows_u], best_t[rows_u] = d[first], q[first], tt[first]
    return best_d, best_p, best_t


def winding_number(points: np.ndarray, surface: TriSurface, chunk: int = 4_000_000) -> np.ndarray:
    """Generalized winding number (1 inside, 0 outside a closed surface)."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    corners = surface.corners()
    t = len(corners)
    out = np.zeros(len(points))
    rows = max(1, chunk // max(t, 1))
    for s in range(0, len(points), rows):
        p = points[s:s + rows]
        a = corners[None, :, 0] - p[:, None]
        b = corners[None, :, 1] - p[:, None]
        c = corners[None, :, 2] - p[:, None]
        la, lb, lc = (np.linalg.norm(x, axis=2) for x in (a, b, c))
        det = np.einsum("ijk,ijk->ij", a, np.cross(b, c))
        den = (la * lb * lc + np.einsum("ijk,ijk->ij", a, b) * lc
               + np.einsum("ijk,ijk->ij", b, c) * la + np.einsum("ijk,ijk->ij", c, a) * lb)
        out[s:s + rows] = np.arctan2(det, den).sum(axis=1) / (2.0 * np.pi)
    return out


def _ray_crossings(points: np.ndarray, corners: np.ndarray, eps: float = 1e-9):
    """Count +z ray crossings per point using an xy bin grid over triangles.

    Returns (crossings, ambiguous) where ambiguous rows graze an edge or vertex.
    """
    n = len(points)
    lo2, hi2 = corners[:, :, :2].min(axis=1), corners[:, :, :2].max(axis=1)
    cell = max(float(np.median(np.max(hi2 - lo2, axis=1))), 1e-12)
    origin = lo2.min(axis=0)
    t0 = np.floor((lo2 - origin) / cell).astype(np.int64)
    t1 = np.floor((hi2 - origin) / cell).astype(np.int64)
    ny = int(t1[:, 1].max()) + 1
    span = t1 - t0 + 1
    total = span[:, 0] * span[:, 1]
    tri_rep = np.repeat(np.arange(len(corners)), total)
    local = np.arange(total.sum()) - np.repeat(np.cumsum(total) - total, total)
    sy = span[tri_rep, 1]
    keys = (t0[tri_rep, 0] + local // sy) * ny + t0[tri_rep, 1] + local % sy
    order = np.argsort(keys, kind="stable")
    skeys, stri = keys[order], tri_rep[order]
    pc = np.floor((points[:, :2] - origin) / cell).astype(np.int64)
    inside_grid = (pc[:, 0] >= 0) & (pc[:, 1] >= 0) & (pc[:, 1] < ny)
    pkey = np.where(inside_grid, pc[:, 0] * ny + pc[:, 1], -1)
    start = np.searchsorted(skeys, pkey, "left")
    cnt = np.where(inside_grid, np.searchsorted(skeys, pkey, "right") - start, 0)
    pid = np.repeat(np.arange(n), cnt)
    off = np.arange(cnt.sum()) - np.repeat(np.cumsum(cnt) - cnt, cnt)
    tid = stri[np.repeat(start, cnt) + off]
    c = corners[tid]
    p = points[pid]
    a, b, d = c[:, 0], c[:, 1], c[:, 2]
    v0, v1, v2 = b[:, :2] - a[:, :2], d[:, :2] - a[:, :2], p[:, :2] - a[:, :2]
    den = v0[:, 0] * v1[:, 1] - v0[:, 1] * v1[:, 0]
    ok = np.abs(den) > 1e-300
    inv = np.where(ok, 1.0 / np.where(ok, den, 1.0), 0.0)
    u = (v2[:, 0] * v1[:, 1] - v2[:, 1] * v1[:, 0]) * inv
    v = (v0[:, 0] * v2[:, 1] - v0[:, 1] * v2[:, 0]) * inv
    w = 1.0 - u - v
    hit = ok & (u >= -eps) & (v >= -eps) & (w >= -eps)
    z = a[:, 2] + u * (b[:, 2] - a[:, 2]) + v * (d[:, 2] - a[:, 2])
    above = hit & (z > p[:, 2])
    graze = hit & ((np.minimum(np.minimum(u, v), w) <= eps) | (np.abs(z - p[:, 2]) <= eps * cell))
    crossings = np.bincount(pid[above], minlength=n)
    ambiguous = np.bincount(pid[graze], minlength=n) > 0
    return crossings, ambiguous


def inside_mask(points: np.ndarray, surface: TriSurface) -> np.ndarray:
    """Inside test for closed surfaces: ray parity, winding number where a ray grazes."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(points) == 0 or surface.n_triangles == 0:
        return np.zeros(len(points), bool)
    crossings, ambiguous = _ray_crossings(points, surface.corners())
    out = crossings % 2 == 1
    if ambiguous.any():
        out[ambiguous] = winding_number(points[ambiguous], surface) > 0.5
    return out


def signed_volume(surface: TriSurface) -> float:
    c = surface.corners()
    return float(np.einsum("ij,ij->i", c[:, 0], np.cross(c[:, 1], c[:, 2])).sum() / 6.0)


def remove_unused_vertices(surface: TriSurface) -> TriSurface:
    used = np.unique(surface.triangles)
    remap = -np.ones(surface.n_vertices, dtype=np.int64)
    remap[used] = np.arange(len(used))
    return TriSurface(surface.vertices[used], remap[surface.triangles])


def drop_degenerate(surface: TriSurface, eps: float = 1e-14) -> TriSurface:
    keep = triangle_areas(surface) > eps
    t = surface.triangles[keep]
    t = t[(t[:, 0] != t[:, 1]) & (t[:, 1] != t[:, 2]) & (t[:, 0] != t[:, 2])]
    return remove_unused_vertices(TriSurface(surface.vertices, t))


def submesh(surface: TriSurface, tri_mask: np.ndarray) -> TriSurface:
    return remove_unused_vertices(TriSurface(surface.vertices, surface.triangles[tri_mask]))


def icosphere(subdivisions: int = 3, radius: float = 1.0, center=(0.0, 0.0, 0.0)) -> TriSurface:
    t = (1.0 + 5 ** 0.5) / 2.0
    v = np.array([[-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0], [0, -1, t], [0, 1, t],
                  [0, -1, -t], [0, 1, -t], [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1]], float)
    f = np.array([[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11], [1, 5, 9], [5, 11, 4],
                  [11, 10, 2], [10, 7, 6], [7, 1, 8], [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8],
                  [3, 8, 9], [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]])
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    for _ in range(subdivisions):
        from ..intraop.subdivide import midpoint_subdivide

        s = midpoint_subdivide(TriSurface(v, f))
        v = s.vertices / np.linalg.norm(s.vertices, axis=1, keepdims=True)
        f = s.triangles
    return TriSurface(v * radius + np.asarray(center, float), f)


def box_surface(lo=(0.0, 0.0, 0.0), hi=(1.0, 1.0, 1.0), divisions: int = 1) -> TriSurface:
    """Closed, outward-wound axis-aligned box with ``divisions`` quads per edge."""
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    n = divisions
    verts, tris, index = [], [], {}

    def vid(p):
        key = tuple(np.round(p, 12))
        if key not in index:
            index[key] = len(verts)
            verts.append(p)
        return index[key]

    g = np.linspace(0.0, 1.0, n + 1)
    for axis in range(3):
        u, w = [a for a in range(3) if a != axis]
        for side in (0, 1):
            for i in range(n):
                for j in range(n):
                    quad = []
                    for di, dj in ((0, 0), (1, 0), (1, 1), (0, 1)):
                        p = np.empty(3)
                        p[axis] = side
                        p[u] = g[i + di]
                        p[w] = g[j + dj]
                        quad.append(vid(lo + p * (hi - lo)))
                    a, b, c, d = quad
                    # (u, w, axis) is right-handed for axis 0 and 2, left-handed for axis 1
                    flip = (side == 0) ^ (axis == 1)
                    if flip:
                        tris += [[a, c, b], [a, d, c]]
                    else:
                        tris += [[a, b, c], [a, c, d]]
    return TriSurface(np.array(verts), np.array(tris))
