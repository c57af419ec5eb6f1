"""Random organ-like closed surfaces: a sphere with extrusions and subtractions, smoothed."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.spatial import ConvexHull
from skimage.measure import marching_cubes

from ..geometry.mesh import (connected_components, face_normals, is_watertight, remove_unused_vertices,
                             inside_mask, signed_volume, submesh)
from ..geometry.types import TriSurface
from ..intraop.perlin import perlin


class ShapeError(RuntimeError):
    pass


@dataclass
class ShapeConfig:
    size_range: tuple = (0.1, 0.3)
    grid: int = 36
    extrusions: tuple = (2, 6)
    subtractions: tuple = (1, 4)
    extrusion_size: float = 0.5
    twist: float = 0.6
    noise_amplitude: float = 0.08
    smoothing_iterations: int = 10
    max_retries: int = 10
    concavity_ratio: float = 0.97


def _unit(rng, n):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _implicit(rng: np.random.Generator, cfg: ShapeConfig):
    n_ext = int(rng.integers(cfg.extrusions[0], cfg.extrusions[1] + 1))
    n_sub = int(rng.integers(cfg.subtractions[0], cfg.subtractions[1] + 1))
    ext_c = _unit(rng, n_ext) * rng.uniform(0.6, 1.0, (n_ext, 1))
    ext_r = cfg.extrusion_size * rng.uniform(0.6, 1.2, n_ext)
    sub_c = _unit(rng, n_sub) * rng.uniform(1.0, 1.35, (n_sub, 1))
    sub_r = rng.uniform(0.35, 0.7, n_sub)
    twist = float(rng.uniform(-cfg.twist, cfg.twist))
    noise_seed = int(rng.integers(2**31))
    params = {"n_extrusions": n_ext, "n_subtractions": n_sub, "twist": twist}

    def f(x):
        ang = twist * x[..., 2]
        c, s = np.cos(ang), np.sin(ang)
        y = np.stack([c * x[..., 0] - s * x[..., 1], s * x[..., 0] + c * x[..., 1], x[..., 2]], axis=-1)
        val = 1.0 - np.linalg.norm(y, axis=-1)
        for cc, r in zip(ext_c, ext_r):
            val = np.maximum(val, r - np.linalg.norm(y - cc, axis=-1))
        for cc, r in zip(sub_c, sub_r):
            val = np.minimum(val, np.linalg.norm(y - cc, axis=-1) - r)
        return val + cfg.noise_amplitude * perlin(y, 2.0, 0.5, seed=noise_seed)

    return f, params


def taubin_smooth(surface: TriSurface, iterations: int = 10, lam: float = 0.5, mu: float = -0.53) -> TriSurface:
    t = surface.triangles
    n = surface.n_vertices
    e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    a = sparse.coo_matrix((np.ones(2 * len(e)), (np.r_[e[:, 0], e[:, 1]], np.r_[e[:, 1], e[:, 0]])), shape=(n, n)).tocsr()
    a.data[:] = 1.0
    deg = np.asarray(a.sum(axis=1)).ravel()
    w = sparse.diags(1.0 / deg) @ a
    v = surface.vertices.copy()
    for _ in range(iterations):
        v = v + lam * (w @ v - v)
        v = v + mu * (w @ v - v)
    return TriSurface(v, t)


def winding_consistent(surface: TriSurface, rel_eps: float = 1e-3) -> bool:
    """Self-intersection proxy: a point just behind every face is inside, just in front is outside."""
    c = surface.corners().mean(axis=1)
    n = face_normals(surface)
    eps = rel_eps * float(np.max(np.ptp(surface.vertices, axis=0)))
    return bool(inside_mask(c - eps * n, surface).all() and not inside_mask(c + eps * n, surface).any())


def is_concave(surface: TriSurface, ratio: float = 0.97) -> bool:
    return signed_volume(surface) < ratio * ConvexHull(surface.vertices).volume


def _attempt(rng: np.random.Generator, cfg: ShapeConfig):
    f, params = _implicit(rng, cfg)
    lim = 2.0
    g = np.linspace(-lim, lim, cfg.grid)
    vol = f(np.stack(np.meshgrid(g, g, g, indexing="ij"), axis=-1))
    vol[[0, -1], :, :] = vol[:, [0, -1], :] = vol[:, :, [0, -1]] = -1.0
    step = g[1] - g[0]
    verts, faces, _, _ = marching_cubes(vol, level=0.0, spacing=(step, step, step))
    s = TriSurface(verts - lim, faces)
    lab = connected_components(s)
    big = np.argmax(np.bincount(lab[s.triangles[:, 0]]))
    s = submesh(s, lab[s.triangles[:, 0]] == big)
    s = taubin_smooth(s, cfg.smoothing_iterations)
    if signed_volume(s) < 0:
        s = TriSurface(s.vertices, s.triangles[:, ::-1])
    ext = rng.uniform(*cfg.size_range, 3)
    lo, hi = s.vertices.min(axis=0), s.vertices.max(axis=0)
    v = (s.vertices - 0.5 * (lo + hi)) / (hi - lo) * ext
    s = remove_unused_vertices(TriSurface(v, s.triangles))
    params["extent"] = ext.tolist()
    return s, params


def generate_organ_shape(seed, config: ShapeConfig | None = None, return_params: bool = False):
    """Closed, watertight, concave organ-like surface with extents in ``size_range``."""
    cfg = config or ShapeConfig()
    rng = np.random.default_rng(seed)
    for attempt in range(cfg.max_retries):
        s, params = _attempt(rng, cfg)
        if is_watertight(s) and is_concave(s, cfg.concavity_ratio) and winding_consistent(s):
            params["attempt"] = attempt
            return (s, params) if return_params else s
    raise ShapeError(f"no valid organ shape after {cfg.max_retries} attempts")
