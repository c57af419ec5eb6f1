"""Intraoperative partial surfaces and their noise model."""

from .extract import (CameraSpec, ExtractionError, RandomExtractionSpec, extract_camera_surface,
                      extract_random_surface, sample_camera)
from .noise import BENCHMARK_PERLIN_MM, BENCHMARK_SIGMA_MM, NoiseError, NoiseSpec, apply_noise, make_noise_benchmark
from .perlin import Perlin3D, perlin
from .subdivide import midpoint_subdivide, subdivide_until

__all__ = [
    "CameraSpec", "ExtractionError", "RandomExtractionSpec", "extract_camera_surface", "extract_random_surface",
    "sample_camera", "BENCHMARK_PERLIN_MM", "BENCHMARK_SIGMA_MM", "NoiseError", "NoiseSpec", "apply_noise",
    "make_noise_benchmark", "Perlin3D", "perlin", "midpoint_subdivide", "subdivide_until",
]
