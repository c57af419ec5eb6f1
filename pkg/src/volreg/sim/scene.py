"""Boundary conditions and random scene assembly around a deformable organ."""

from __future__ import annotations

from collections import deque
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial import ConvexHull

from ..geometry.mesh import compute_normals, triangle_adjacency, triangle_areas
from ..geometry.types import TriSurface
from ..intraop.perlin import perlin
from .material import Material
from .tetmesh import TetMesh, tetrahedralize


class SceneError(RuntimeError):
    pass


@dataclass
class Springs:
    vertices: np.ndarray  # organ vertex per spring
    anchors: np.ndarray  # (S, 3) fixed anchor positions
    stiffness: np.ndarray  # N/m
    rest_length: np.ndarray  # m
    ligament: np.ndarray  # bundle id per spring

    @classmethod
    def empty(cls) -> "Springs":
        return cls(np.zeros(0, np.int64), np.zeros((0, 3)), np.zeros(0), np.zeros(0), np.zeros(0, np.int64))

    def __len__(self) -> int:
        return len(self.vertices)


@dataclass
class BoundaryConditions:
    gravity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    fixed: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    springs: Springs = field(default_factory=Springs.empty)


@dataclass
class Scene:
    organ: TetMesh
    material: Material
    bcs: BoundaryConditions
    seed: object = None
    provenance: dict = field(default_factory=dict)


@dataclass
class SceneConfig:
    max_edge: float = 0.02
    youngs_range: tuple = (3000.0, 30000.0)
    poisson_range: tuple = (0.45, 0.48)
    density_range: tuple = (1050.0, 1090.0)
    lame_convention: str = "bulk"
    fixed_fraction: tuple = (0.02, 0.05)
    stiffness_range: tuple = (100.0, 300.0)
    rest_factor_range: tuple = (0.9, 1.1)
    path_length: float = 0.1
    ligament_probs: tuple = (1.0, 0.3)
    placeholder_probs: tuple = (0.9, 0.5, 0.5)
    placeholder_size: tuple = (0.05, 0.2)
    outset_range: tuple = (0.0, 0.05)
    outset_noise_amplitude: tuple = (0.0, 0.02)
    outset_noise_frequency: tuple = (1.0, 10.0)
    gravity: float = 9.81

    def to_dict(self) -> dict:
        return asdict(self)


def spring_forces(positions: np.ndarray, springs: Springs) -> np.ndarray:
    """Per-vertex linear spring force -k * (l - l0) along the spring axis."""
    out = np.zeros_like(positions)
    if len(springs) == 0:
        return out
    d = positions[springs.vertices] - springs.anchors
    length = np.linalg.norm(d, axis=1)
    f = -(springs.stiffness * (length - springs.rest_length) / np.maximum(length, 1e-300))[:, None] * d
    np.add.at(out, springs.vertices, f)
    return out


def spring_energy(positions: np.ndarray, springs: Springs) -> float:
    if len(springs) == 0:
        return 0.0
    length = np.linalg.norm(positions[springs.vertices] - springs.anchors, axis=1)
    return float(0.5 * np.sum(springs.stiffness * (length - springs.rest_length) ** 2))


def spring_hessian_blocks(positions: np.ndarray, springs: Springs) -> np.ndarray:
    """(S, 3, 3) positive semidefinite spring stiffness blocks."""
    d = positions[springs.vertices] - springs.anchors
    length = np.maximum(np.linalg.norm(d, axis=1), 1e-300)
    n = d / length[:, None]
    nn = np.einsum("si,sj->sij", n, n)
    geo = np.maximum(1.0 - springs.rest_length / length, 0.0)
    return springs.stiffness[:, None, None] * (nn + geo[:, None, None] * (np.eye(3) - nn))


def grow_fixed_patch(surface: TriSurface, rng: np.random.Generator, fraction_range=(0.02, 0.05)):
    """Breadth-first region growing from a random face up to a sampled area fraction."""
    areas = triangle_areas(surface)
    total = areas.sum()
    target = rng.uniform(*fraction_range) * total
    hi = fraction_range[1] * total
    adj = triangle_adjacency(surface)
    seed_face = int(rng.integers(surface.n_triangles))
    picked, acc = [], 0.0
    seen = {seed_face}
    queue = deque([seed_face])
    while queue and acc < target:
        f = queue.popleft()
        if acc + areas[f] > hi:
            continue
        picked.append(f)
        acc += areas[f]
        for g in adj[f]:
            if g not in seen:
                seen.add(g)
                queue.append(g)
    return np.array(picked, dtype=np.int64), acc / total


def surface_path(surface: TriSurface, rng: np.random.Generator, length: float, start: int,
                 avoid: np.ndarray) -> list[int]:
    """Random, roughly straight walk along mesh edges of the given length."""
    nbrs = [set() for _ in range(surface.n_vertices)]
    for a, b, c in surface.triangles:
        nbrs[a].update((b, c))
        nbrs[b].update((a, c))
        nbrs[c].update((a, b))
    v = surface.vertices
    path, acc = [start], 0.0
    heading = None
    blocked = set(int(x) for x in avoid)
    while acc < length:
        cur = path[-1]
        opts = [n for n in nbrs[cur] if n not in path and n not in blocked]
        if not opts:
            break
        dirs = v[opts] - v[cur]
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        score = rng.random(len(opts)) * 0.5
        if heading is not None:
            score += dirs @ heading
        j = int(np.argmax(score))
        heading = dirs[j]
        acc += float(np.linalg.norm(v[opts[j]] - v[cur]))
        path.append(int(opts[j]))
    return path


def wall_anchors(points: np.ndarray, normals: np.ndarray, hull_points: np.ndarray, base_outset: float,
                 noise_amp: float, noise_freq: float, noise_seed: int) -> np.ndarray:
    """Cast each point along its normal onto the hull, then push out along the hull normal."""
    hull = ConvexHull(hull_points)
    a, b = hull.equations[:, :3], hull.equations[:, 3]
    anchors = np.empty_like(points)
    for i, (p, n) in enumerate(zip(points, normals)):
        rate = a @ n
        ok = rate > 1e-12
        if not ok.any():
            raise SceneError("no valid anchor direction found")
        t = -(a[ok] @ p + b[ok]) / rate[ok]
        j = int(np.argmin(t))
        hit = p + max(t[j], 0.0) * n
        out = base_outset + noise_amp * 0.5 * (perlin(hit[None], noise_freq, 0.0, seed=noise_seed)[0] + 1.0)
        anchors[i] = hit + out * a[ok][j]
    return anchors


def _placeholders(rng, center, radius, cfg: SceneConfig):
    pts, info = [], []
    for i, p in enumerate(cfg.placeholder_probs):
        if rng.random() >= p:
            continue
        size = rng.uniform(*cfg.placeholder_size, 3)
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        c = center + d * (radius + 0.5 * float(size.max()))
        u = rng.normal(size=(40, 3))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        pts.append(c + 0.5 * u * size)
        info.append({"center": c.tolist(), "size": size.tolist()})
    return pts, info


def build_scene(organ: TriSurface | TetMesh, seed, config: SceneConfig | None = None) -> Scene:
    """Sample material, fixed patch, ligaments and gravity around ``organ``."""
    cfg = config or SceneConfig()
    rng = np.random.default_rng(seed)
    mesh = organ if isinstance(organ, TetMesh) else tetrahedralize(organ, cfg.max_edge)
    material = Material.sample(rng, cfg.youngs_range, cfg.poisson_range, cfg.density_range, cfg.lame_convention)
    surf, used = mesh.compact_boundary()

    faces, frac = grow_fixed_patch(surf, rng, cfg.fixed_fraction)
    fixed = used[np.unique(surf.triangles[faces])]

    center = surf.vertices.mean(axis=0)
    radius = float(np.max(np.linalg.norm(surf.vertices - center, axis=1)))
    extra, ph_info = _placeholders(rng, center, radius, cfg)
    hull_pts = np.concatenate([surf.vertices] + extra)
    base = float(rng.uniform(*cfg.outset_range))
    amp = float(rng.uniform(*cfg.outset_noise_amplitude))
    freq = float(rng.uniform(*cfg.outset_noise_frequency))
    noise_seed = int(rng.integers(2**31))

    normals = compute_normals(surf)
    sv, anchors, ks, l0s, lig, lig_info = [], [], [], [], [], []
    for i, p in enumerate(cfg.ligament_probs):
        if rng.random() >= p:
            continue
        free = np.setdiff1d(np.arange(surf.n_vertices), np.searchsorted(used, fixed))
        start = int(free[rng.integers(len(free))])
        path = surface_path(surf, rng, cfg.path_length, start, np.searchsorted(used, fixed))
        k = float(rng.uniform(*cfg.stiffness_range))
        c0 = float(rng.uniform(*cfg.rest_factor_range))
        anc = wall_anchors(surf.vertices[path], normals[path], hull_pts, base, amp, freq, noise_seed)
        length = np.linalg.norm(anc - surf.vertices[path], axis=1)
        sv.append(used[path])
        anchors.append(anc)
        ks.append(np.full(len(path), k))
        l0s.append(c0 * length)
        lig.append(np.full(len(path), i))
        lig_info.append({"stiffness": k, "rest_factor": c0, "n_springs": len(path)})
    springs = (Springs(np.concatenate(sv), np.concatenate(anchors), np.concatenate(ks), np.concatenate(l0s),
                       np.concatenate(lig)) if sv else Springs.empty())
    gdir = rng.normal(size=3)
    gdir /= np.linalg.norm(gdir)
    bcs = BoundaryConditions(cfg.gravity * gdir, fixed, springs)
    prov = {
        "seed": seed if isinstance(seed, (int, type(None))) else str(seed),
        "config": cfg.to_dict(),
        "material": material.to_dict(),
        "fixed_area_fraction": float(frac),
        "n_fixed": int(len(fixed)),
        "ligaments": lig_info,
        "placeholders": ph_info,
        "wall": {"base_outset": base, "outset_noise_amplitude": amp, "outset_noise_frequency": freq},
        "gravity": bcs.gravity.tolist(),
        "n_vertices": mesh.n_vertices,
        "n_tets": mesh.n_tets,
    }
    return Scene(mesh, material, bcs, seed, prov)
