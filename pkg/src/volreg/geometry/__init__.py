"""Geometry kernels and network-input preprocessing."""

from .features import (DEFAULT_FREQUENCIES, SENTINEL, intraop_features, point_distance_field, positional_encoding,
                       preop_features, resample_to_resolution, standardize)
from .mesh import (closest_points_on_mesh, compute_normals, connected_components, inside_mask, is_watertight,
                   surface_area, triangle_areas)
from .sampling import centroid_farthest_index, farthest_point_sample, knn
from .types import FEATURE_CHANNELS, FeaturedInput, PointCloud, TriSurface

__all__ = [
    "DEFAULT_FREQUENCIES", "SENTINEL", "FEATURE_CHANNELS", "FeaturedInput", "PointCloud", "TriSurface",
    "intraop_features", "point_distance_field", "positional_encoding", "preop_features",
    "resample_to_resolution", "standardize", "closest_points_on_mesh", "compute_normals",
    "connected_components", "inside_mask", "is_watertight", "surface_area", "triangle_areas",
    "centroid_farthest_index", "farthest_point_sample", "knn",
]
