"""Per-point input features and fixed-size batching."""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from .mesh import closest_points_on_mesh, compute_normals, inside_mask, is_watertight, surface_area, triangle_areas
from .sampling import farthest_point_sample
from .types import FEATURE_CHANNELS, FeaturedInput, PointCloud, TriSurface

DEFAULT_FREQUENCIES = (0.5, 2.0, 4.0, 8.0, 16.0, 32.0)
SENTINEL = 1000.0


def point_distance_field(source: np.ndarray, target: np.ndarray, target_valid=None) -> np.ndarray:
    """Distance from each source point to its nearest (valid) target point."""
    source = np.asarray(source, dtype=np.float64).reshape(-1, 3)
    target = np.asarray(target, dtype=np.float64).reshape(-1, 3)
    if target_valid is not None:
        target = target[np.asarray(target_valid, dtype=bool)]
    if len(target) == 0:
        raise ValueError("distance field needs a non-empty target")
    d, _ = cKDTree(target).query(source, k=1)
    return np.asarray(d, dtype=np.float64)


def positional_encoding(points: np.ndarray, frequencies=DEFAULT_FREQUENCIES) -> np.ndarray:
    """``[sin(f*xyz), cos(f*xyz)]`` per listed frequency; width 6 * len(frequencies)."""
    freqs = np.asarray(list(frequencies), dtype=np.float64)
    if freqs.size == 0:
        raise ValueError("positional encoding needs at least one frequency")
    points = np.asarray(points, dtype=np.float64)
    arg = points[..., None, :] * freqs[:, None]  # (..., F, 3)
    enc = np.concatenate([np.sin(arg), np.cos(arg)], axis=-1)  # (..., F, 6)
    return enc.reshape(points.shape[:-1] + (6 * len(freqs),))


def own_surface_distance(points: np.ndarray, surface: TriSurface) -> np.ndarray:
    d, _, _ = closest_points_on_mesh(points, surface)
    return d


def preop_features(volume: PointCloud, boundary: TriSurface, intraop_points: np.ndarray) -> np.ndarray:
    """Feature channels for the preoperative volume cloud.

    Surface points carry their normal; interior points get zero normals and
    their exact distance to ``boundary``.
    """
    n = len(volume)
    feats = np.zeros((n, len(FEATURE_CHANNELS)))
    on_surf = volume.on_surface if volume.on_surface is not None else np.zeros(n, dtype=bool)
    if volume.normals is not None:
        feats[on_surf, 0:3] = volume.normals[on_surf]
    feats[:, 3] = point_distance_field(volume.points, intraop_points)
    inner = ~on_surf
    if inner.any():
        feats[inner, 4] = own_surface_distance(volume.points[inner], boundary)
    return feats


def intraop_features(intraop: PointCloud, preop_boundary: TriSurface) -> np.ndarray:
    """Normals plus distance to the preoperative surface; own-surface channel is 0."""
    feats = np.zeros((len(intraop), len(FEATURE_CHANNELS)))
    if intraop.normals is not None:
        feats[:, 0:3] = intraop.normals
    feats[:, 3] = own_surface_distance(intraop.points, preop_boundary)
    return feats


def standardize(cloud: PointCloud, n: int, seed=None, frequencies=DEFAULT_FREQUENCIES) -> FeaturedInput:
    """Subsample or pad ``cloud`` to exactly ``n`` rows.

    Padding rows sit at a far-away sentinel, are flagged invalid and carry
    zero features and encodings.
    """
    if n <= 0:
        raise ValueError("n must be positive")
    m = len(cloud)
    if m == 0:
        raise ValueError("cannot standardize an empty cloud")
    feats = cloud.features if cloud.features is not None else np.zeros((m, len(FEATURE_CHANNELS)))
    if m > n:
        rng = np.random.default_rng(seed)
        idx = np.sort(rng.choice(m, size=n, replace=False))
    else:
        idx = np.arange(m)
    k = len(idx)
    pos = np.empty((n, 3))
    pos[:k] = cloud.points[idx]
    lo, hi = pos[:k].min(axis=0), pos[:k].max(axis=0)
    extent = float(np.max(hi - lo))
    reach = float(np.max(np.abs(np.r_[lo, hi])))
    pos[k:] = max(SENTINEL, reach + 10.0 * extent + 1.0)
    enc = np.zeros((n, 6 * len(tuple(frequencies))))
    enc[:k] = positional_encoding(pos[:k], frequencies)
    f = np.zeros((n, len(FEATURE_CHANNELS)))
    f[:k] = feats[idx]
    valid = np.zeros(n, dtype=bool)
    valid[:k] = True
    src = -np.ones(n, dtype=np.int64)
    src[:k] = idx
    return FeaturedInput(pos, enc, f, valid, src)


def sample_surface_uniform(surface: TriSurface, count: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Area-uniform random points on the surface and their triangle ids."""
    areas = triangle_areas(surface)
    tri = rng.choice(surface.n_triangles, size=count, p=areas / areas.sum())
    r1, r2 = rng.random(count), rng.random(count)
    s = np.sqrt(r1)
    c = surface.corners()[tri]
    pts = c[:, 0] * (1 - s)[:, None] + c[:, 1] * (s * (1 - r2))[:, None] + c[:, 2] * (s * r2)[:, None]
    return pts, tri


def resample_to_resolution(surface: TriSurface, target_spacing: float, seed=0,
                           interior: bool = True, oversample: int = 12) -> PointCloud:
    """Evenly spread points at roughly ``target_spacing``.

    Surface points are farthest-point picks from dense area-uniform samples.
    For closed input with ``interior=True`` a regular lattice clipped to the
    inside is added; ``on_surface`` flags which is which.
    """
    if target_spacing <= 0:
        raise ValueError("target_spacing must be positive")
    area = surface_area(surface) if surface.n_triangles else 0.0
    if area <= 0:
        raise ValueError("empty geometry")
    rng = np.random.default_rng(seed)
    count = max(1, int(round(area / target_spacing ** 2)))
    dense, tri = sample_surface_uniform(surface, count * oversample, rng)
    pick = farthest_point_sample(dense, count, start=0)
    surf_pts = dense[pick]
    fn = np.cross(*(surface.corners()[tri[pick]][:, j] - surface.corners()[tri[pick]][:, 0] for j in (1, 2)))
    normals = fn / np.linalg.norm(fn, axis=1, keepdims=True)

    inner = np.zeros((0, 3))
    if interior and is_watertight(surface):
        lo, hi = surface.vertices.min(axis=0), surface.vertices.max(axis=0)
        axes = [np.arange(a + 0.5 * target_spacing, b, target_spacing) for a, b in zip(lo, hi)]
        if all(len(a) for a in axes):
            grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
            grid = grid[inside_mask(grid, surface)]
            if len(grid):
                d, _, _ = closest_points_on_mesh(grid, surface)
                inner = grid[d > 0.5 * target_spacing]
    pts = np.concatenate([surf_pts, inner])
    norms = np.concatenate([normals, np.zeros_like(inner)])
    flag = np.r_[np.ones(len(surf_pts), bool), np.zeros(len(inner), bool)]
    return PointCloud(pts, normals=norms, on_surface=flag)


def vertex_cloud(surface: TriSurface) -> PointCloud:
    return PointCloud(surface.vertices, normals=compute_normals(surface), on_surface=np.ones(surface.n_vertices, bool))
