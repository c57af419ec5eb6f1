"""Classic 3D gradient noise, vectorized over points."""

from __future__ import annotations

import numpy as np

# the twelve cube-edge gradient directions
_GRAD = np.array([[1, 1, 0], [-1, 1, 0], [1, -1, 0], [-1, -1, 0],
                  [1, 0, 1], [-1, 0, 1], [1, 0, -1], [-1, 0, -1],
                  [0, 1, 1], [0, -1, 1], [0, 1, -1], [0, -1, -1]], dtype=np.float64)


def _fade(t):
    return t * t * t * (t * (t * 6.0 - 15.0) + 10.0)


class Perlin3D:
    """Gradient noise with a seeded permutation table; values clipped to [-1, 1]."""

    def __init__(self, seed=0):
        perm = np.random.default_rng(seed).permutation(256)
        self.perm = np.concatenate([perm, perm]).astype(np.int64)

    def __call__(self, p: np.ndarray) -> np.ndarray:
        p = np.asarray(p, dtype=np.float64)
        shape = p.shape[:-1]
        p = p.reshape(-1, 3)
        cell = np.floor(p)
        f = p - cell
        i = cell.astype(np.int64) & 255
        u = _fade(f)
        perm = self.perm
        out = np.zeros(len(p))
        for dx in (0, 1):
            for dy in (0, 1):
                for dz in (0, 1):
                    h = perm[perm[perm[i[:, 0] + dx] + i[:, 1] + dy] + i[:, 2] + dz]
                    g = _GRAD[h % 12]
                    d = f - np.array([dx, dy, dz], dtype=np.float64)
                    w = ((u[:, 0] if dx else 1 - u[:, 0]) * (u[:, 1] if dy else 1 - u[:, 1])
                         * (u[:, 2] if dz else 1 - u[:, 2]))
                    out += w * np.einsum("ij,ij->i", g, d)
        return np.clip(out, -1.0, 1.0).reshape(shape)


def perlin(points: np.ndarray, frequency=1.0, phase=0.0, seed=0) -> np.ndarray:
    """Noise sampled at ``points * frequency + phase`` (both broadcast per axis)."""
    q = np.asarray(points, dtype=np.float64) * np.asarray(frequency, dtype=np.float64) + np.asarray(phase, dtype=np.float64)
    return Perlin3D(seed)(q)
