"""Surface noise model: subdivision, per-axis Perlin offsets, Gaussian jitter, sparsification."""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace

import numpy as np

from ..geometry.mesh import compute_normals
from ..geometry.types import PointCloud, TriSurface
from .perlin import perlin
from .subdivide import subdivide_until

BENCHMARK_PERLIN_MM = (0.0, 3.0, 6.0, 9.0, 12.0, 15.0)
BENCHMARK_SIGMA_MM = (0.0, 2.5, 5.0)


class NoiseError(ValueError):
    pass


@dataclass
class NoiseSpec:
    perlin_amplitude: float = 0.0
    perlin_frequency: tuple = (40.0, 40.0, 40.0)
    perlin_phase: tuple = (500.0, 500.0, 500.0)
    gaussian_sigma: float = 0.0
    subdivision_factor: float = 10.0
    max_triangle_area: float = 1e-5
    max_edge_length: float = 1e-5
    sparsify: bool = True
    sparsify_frequency: float = 3.0
    sparsify_phase: tuple = (0.0, 0.0, 0.0)
    sparsify_scale: float = 1.0
    sparsify_shift: float = -0.3
    min_points: int = 10

    def __post_init__(self):
        if self.perlin_amplitude < 0 or self.gaussian_sigma < 0:
            raise ValueError("noise amplitudes must be nonnegative")

    @classmethod
    def sample(cls, rng: np.random.Generator, amplitude_range=(0.0, 0.01), sigma_range=(0.0, 0.003)) -> "NoiseSpec":
        return cls(perlin_amplitude=float(rng.uniform(*amplitude_range)),
                   perlin_frequency=tuple(float(x) for x in rng.uniform(10.0, 70.0, 3)),
                   perlin_phase=tuple(float(x) for x in rng.uniform(1.0, 999.0, 3)),
                   gaussian_sigma=float(rng.uniform(*sigma_range)),
                   subdivision_factor=float(rng.uniform(5.0, 15.0)),
                   sparsify_frequency=float(rng.uniform(1.0, 5.0)),
                   sparsify_phase=tuple(float(x) for x in rng.uniform(1.0, 999.0, 3)))

    def to_dict(self) -> dict:
        return asdict(self)


def perlin_offsets(points: np.ndarray, spec: NoiseSpec, seed) -> np.ndarray:
    """Per-axis offsets from three independent Perlin fields sharing one amplitude."""
    seeds = np.random.SeedSequence(seed).spawn(3)
    out = np.empty_like(points)
    for i in range(3):
        s = int(seeds[i].generate_state(1)[0])
        out[:, i] = spec.perlin_amplitude * perlin(points, spec.perlin_frequency[i], spec.perlin_phase[i], seed=s)
    return out


def sparsify_mask(points: np.ndarray, spec: NoiseSpec, seed) -> np.ndarray:
    """True where a point survives; large coherent regions are dropped."""
    if not spec.sparsify:
        return np.ones(len(points), bool)
    s = int(np.random.SeedSequence([seed, 7]).generate_state(1)[0]) if seed is not None else 0
    val = spec.sparsify_scale * perlin(points, spec.sparsify_frequency, spec.sparsify_phase, seed=s) + spec.sparsify_shift
    return val <= 0


def apply_noise(patch: TriSurface, spec: NoiseSpec, seed=None, return_clean: bool = False):
    """Noisy point cloud sampled from ``patch``.

    Normals come from the clean subdivided patch; the sparsification mask is
    evaluated at clean positions so cells of a noise grid drop the same points.
    """
    if patch.n_triangles == 0:
        raise NoiseError("empty patch")
    sub = subdivide_until(patch, spec.max_triangle_area, spec.max_edge_length, spec.subdivision_factor)
    clean = sub.vertices
    normals = compute_normals(sub)
    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0] if seed is not None else None)
    noisy = clean + perlin_offsets(clean, spec, seed) + spec.gaussian_sigma * rng.standard_normal(clean.shape)
    keep = sparsify_mask(clean, spec, seed)
    if keep.sum() < spec.min_points:
        raise NoiseError(f"only {int(keep.sum())} points left after sparsification")
    cloud = PointCloud(noisy[keep], normals=normals[keep])
    if return_clean:
        return cloud, sub, keep
    return cloud


def make_noise_benchmark(patch: TriSurface, base: NoiseSpec | None = None, seed=0,
                         perlin_mm=BENCHMARK_PERLIN_MM, sigma_mm=BENCHMARK_SIGMA_MM):
    """One cloud per (A_P, sigma) grid cell; everything but the amplitudes is shared."""
    base = base if base is not None else NoiseSpec.sample(np.random.default_rng(seed))
    cells = []
    for s in sigma_mm:
        for a in perlin_mm:
            spec = replace(base, perlin_amplitude=a * 1e-3, gaussian_sigma=s * 1e-3)
            cells.append({"perlin_mm": a, "sigma_mm": s, "spec": spec, "cloud": apply_noise(patch, spec, seed)})
    return cells
