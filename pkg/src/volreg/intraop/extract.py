"""Partial-surface extraction: random score-ordered regions and camera views."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.sparse.csgraph import dijkstra

from ..geometry.mesh import (closest_points_on_mesh, compute_normals, edge_graph, face_normals, inside_mask,
                             submesh, triangle_areas)
from ..geometry.types import TriSurface
from .perlin import perlin


class ExtractionError(ValueError):
    pass


@dataclass
class RandomExtractionSpec:
    surface_fraction: float = 0.5
    geodesic_weight: float = 1.0
    normal_weight: float = 0.5
    noise_weight: float = 0.5
    noise_frequency: float = 15.0
    noise_phase: tuple = (0.0, 0.0, 0.0)
    reference_vertex: int = 0

    @classmethod
    def sample(cls, rng: np.random.Generator, n_vertices: int, fraction_range=(0.1, 1.0)) -> "RandomExtractionSpec":
        return cls(surface_fraction=float(rng.uniform(*fraction_range)),
                   geodesic_weight=float(rng.uniform(0.1, 1.0)),
                   normal_weight=float(rng.uniform(0.1, 1.0)),
                   noise_weight=float(rng.uniform(0.1, 1.0)),
                   noise_phase=tuple(float(x) for x in rng.uniform(0.0, 150.0, 3)),
                   reference_vertex=int(rng.integers(n_vertices)))

    def to_dict(self) -> dict:
        return asdict(self)


def vertex_scores(surface: TriSurface, spec: RandomExtractionSpec, noise_seed=0) -> np.ndarray:
    """Weighted sum of normalized geodesic distance, normal deviation and noise.

    Vertices unreachable from the reference get ``inf``.
    """
    ref = spec.reference_vertex
    geo = dijkstra(edge_graph(surface), indices=ref)
    reach = np.isfinite(geo)
    gmax = geo[reach].max()
    geo_n = np.where(reach, geo / gmax if gmax > 0 else 0.0, np.inf)
    normals = compute_normals(surface)
    ang = np.arccos(np.clip(normals @ normals[ref], -1.0, 1.0)) / np.pi
    noise = 0.5 * (perlin(surface.vertices, spec.noise_frequency, spec.noise_phase, seed=noise_seed) + 1.0)
    return spec.geodesic_weight * geo_n + spec.normal_weight * ang + spec.noise_weight * noise


def extract_random_surface(surface: TriSurface, seed=None, spec: RandomExtractionSpec | None = None) -> tuple[TriSurface, RandomExtractionSpec]:
    """Keep the lowest-scoring triangles until the sampled area fraction is reached."""
    rng = np.random.default_rng(seed)
    if spec is None:
        spec = RandomExtractionSpec.sample(rng, surface.n_vertices)
    noise_seed = int(rng.integers(2**31))
    areas = triangle_areas(surface)
    total = areas.sum()
    target = spec.surface_fraction * total
    if spec.surface_fraction >= 1.0:
        return submesh(surface, np.ones(surface.n_triangles, bool)), spec
    vs = vertex_scores(surface, spec, noise_seed)
    ts = vs[surface.triangles].mean(axis=1)
    reachable = np.isfinite(ts)
    if areas[reachable].sum() < target:
        raise ExtractionError("reference component is smaller than the requested surface fraction")
    order = np.lexsort((np.arange(len(ts)), ts))
    cum = np.cumsum(areas[order])
    # smallest prefix reaching the target, or the closer of the two neighbours
    j = int(np.searchsorted(cum, target))
    if j > 0 and abs(cum[j - 1] - target) < abs(cum[j] - target):
        j -= 1
    keep = np.zeros(len(ts), bool)
    keep[order[:j + 1]] = True
    return submesh(surface, keep), spec


@dataclass
class CameraSpec:
    position: np.ndarray
    target: np.ndarray
    hfov_deg: float = 70.0
    aspect: float = 16.0 / 9.0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64)
        self.target = np.asarray(self.target, dtype=np.float64)

    def basis(self):
        fwd = self.target - self.position
        fwd = fwd / np.linalg.norm(fwd)
        helper = np.array([0.0, 0.0, 1.0]) if abs(fwd[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
        right = np.cross(fwd, helper)
        right /= np.linalg.norm(right)
        up = np.cross(right, fwd)
        return fwd, right, up

    def to_dict(self) -> dict:
        return {"position": self.position.tolist(), "target": self.target.tolist(),
                "hfov_deg": self.hfov_deg, "aspect": self.aspect, **self.extra}


def sample_camera(surface: TriSurface, rng: np.random.Generator, distance_range=(0.05, 0.2),
                  tries: int = 50) -> CameraSpec:
    """Place a camera outside the mesh along a random vertex normal, looking back at it."""
    normals = compute_normals(surface)
    for _ in range(tries):
        v = int(rng.integers(surface.n_vertices))
        dist = float(rng.uniform(*distance_range))
        aspect = 16.0 / 9.0 if rng.random() < 0.5 else 4.0 / 3.0
        pos = surface.vertices[v] + dist * normals[v]
        if inside_mask(pos[None], surface)[0]:
            continue
        d, _, _ = closest_points_on_mesh(pos[None], surface)
        if distance_range[0] - 1e-9 <= d[0] <= distance_range[1] + 1e-9:
            return CameraSpec(pos, surface.vertices[v], 70.0, aspect, {"distance": float(d[0]), "vertex": v})
    raise ExtractionError("no camera placement outside the mesh found")


def ray_hits(origins: np.ndarray, dirs: np.ndarray, corners: np.ndarray, eps: float = 1e-12) -> tuple[np.ndarray, np.ndarray]:
    """Moller-Trumbore; returns (R, T) hit mask and ray parameter."""
    a, b, c = corners[:, 0], corners[:, 1], corners[:, 2]
    e1, e2 = b - a, c - a
    pvec = np.cross(dirs[:, None, :], e2[None])
    det = np.einsum("tk,rtk->rt", e1, pvec)
    ok = np.abs(det) > eps
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    tvec = origins[:, None, :] - a[None]
    u = np.einsum("rtk,rtk->rt", tvec, pvec) * inv
    qvec = np.cross(tvec, e1[None])
    v = np.einsum("rk,rtk->rt", dirs, qvec) * inv
    t = np.einsum("tk,rtk->rt", e2, qvec) * inv
    hit = ok & (u >= 0) & (v >= 0) & (u + v <= 1)
    return hit, t


def visible_triangles(surface: TriSurface, camera: CameraSpec, chunk: int = 64) -> np.ndarray:
    corners = surface.corners()
    cent = corners.mean(axis=1)
    fwd, right, up = camera.basis()
    d = cent - camera.position
    z = d @ fwd
    th = np.tan(np.radians(camera.hfov_deg) / 2.0)
    tv = th / camera.aspect
    in_frustum = (z > 0) & (np.abs(d @ right) <= z * th) & (np.abs(d @ up) <= z * tv)
    front = np.einsum("ij,ij->i", face_normals(surface), d) < 0
    cand = np.flatnonzero(in_frustum & front)
    keep = np.zeros(surface.n_triangles, bool)
    for s in range(0, len(cand), chunk):
        rows = cand[s:s + chunk]
        dirs = d[rows]
        hit, t = ray_hits(np.broadcast_to(camera.position, dirs.shape), dirs, corners)
        hit[np.arange(len(rows)), rows] = False
        blocked = (hit & (t > 1e-9) & (t < 1.0 - 1e-9)).any(axis=1)
        keep[rows[~blocked]] = True
    return keep


def extract_camera_surface(surface: TriSurface, camera: CameraSpec) -> TriSurface:
    """Triangles whose centroid is in the frustum, front-facing and unoccluded."""
    keep = visible_triangles(surface, camera)
    if not keep.any():
        raise ExtractionError("no triangle visible from the camera")
    return submesh(surface, keep)
