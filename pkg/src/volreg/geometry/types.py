"""Point cloud, triangle surface and network-input containers. Units: meters."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

FEATURE_CHANNELS = ("normal_x", "normal_y", "normal_z", "dist_counterpart", "dist_own_surface")


@dataclass
class PointCloud:
    points: np.ndarray
    normals: np.ndarray | None = None
    features: np.ndarray | None = None
    # True for points on the boundary surface (volume clouds); None for pure surfaces
    on_surface: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.isfinite(self.points).all():
            raise ValueError("point positions must be finite")
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
            if len(self.normals) != len(self.points):
                raise ValueError("normals and points differ in length")
        if self.features is not None:
            self.features = np.asarray(self.features, dtype=np.float64)
            if len(self.features) != len(self.points):
                raise ValueError("features and points differ in length")
        if self.on_surface is not None:
            self.on_surface = np.asarray(self.on_surface, dtype=bool)

    def __len__(self) -> int:
        return len(self.points)

    def subset(self, idx) -> "PointCloud":
        pick = lambda a: None if a is None else a[idx]  # noqa: E731
        return PointCloud(self.points[idx], pick(self.normals), pick(self.features), pick(self.on_surface))


@dataclass
class TriSurface:
    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if self.triangles.size and (self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices)):
            raise ValueError("triangle index out of range")

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def corners(self) -> np.ndarray:
        """(T, 3, 3) array of triangle corner positions."""
        return self.vertices[self.triangles]

    def copy(self) -> "TriSurface":
        return TriSurface(self.vertices.copy(), self.triangles.copy())


@dataclass
class FeaturedInput:
    """Fixed-size network input; rows with ``valid_mask == False`` are padding."""

    positions: np.ndarray
    pos_encoding: np.ndarray
    features: np.ndarray
    valid_mask: np.ndarray
    # row -> index into the cloud it was drawn from, -1 for padding
    source_index: np.ndarray = field(default=None)

    def __post_init__(self):
        n = len(self.positions)
        if not (len(self.pos_encoding) == len(self.features) == len(self.valid_mask) == n):
            raise ValueError("FeaturedInput arrays differ in length")
        if self.features.shape[1] != len(FEATURE_CHANNELS):
            raise ValueError(f"expected {len(FEATURE_CHANNELS)} feature channels")
        if self.source_index is None:
            self.source_index = np.where(self.valid_mask, np.arange(n), -1)

    @property
    def n(self) -> int:
        return len(self.positions)

    @property
    def n_valid(self) -> int:
        return int(self.valid_mask.sum())

    def valid(self) -> "FeaturedInput":
        m = self.valid_mask
        return FeaturedInput(self.positions[m], self.pos_encoding[m], self.features[m],
                             self.valid_mask[m], self.source_index[m])

    def permuted(self, order) -> "FeaturedInput":
        return FeaturedInput(self.positions[order], self.pos_encoding[order], self.features[order],
                             self.valid_mask[order], self.source_index[order])
