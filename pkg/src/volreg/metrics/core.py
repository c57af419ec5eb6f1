"""Registration error metrics. All distances in meters."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull, QhullError, cKDTree
from scipy.stats import rankdata

from ..geometry.mesh import surface_area
from ..geometry.types import TriSurface


class MetricError(ValueError):
    pass


class LandmarkWarning(UserWarning):
    pass


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64).reshape(-1, 3)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 3)
    if a.shape != b.shape:
        raise MetricError(f"fields differ in length: {len(a)} vs {len(b)}")
    if len(a) == 0:
        raise MetricError("empty field")
    return a, b


def med(pred, gt) -> float:
    """Mean Euclidean distance between index-aligned displacement fields."""
    a, b = _pair(pred, gt)
    return float(np.mean(np.linalg.norm(a - b, axis=1)))


def rmse(pred, gt) -> float:
    """Norm of the mean residual vector (residuals of opposite sign cancel)."""
    a, b = _pair(pred, gt)
    return float(np.linalg.norm(np.mean(a - b, axis=0)))


def rms_error(pred, gt) -> float:
    """Conventional root-mean-square of per-point residual norms."""
    a, b = _pair(pred, gt)
    return float(np.sqrt(np.mean(np.sum((a - b) ** 2, axis=1))))


@dataclass
class LandmarkSet:
    preop: np.ndarray
    intraop: np.ndarray

    def __post_init__(self):
        self.preop, self.intraop = _pair(self.preop, self.intraop)
        if not (np.isfinite(self.preop).all() and np.isfinite(self.intraop).all()):
            raise MetricError("landmarks must be finite")

    def __len__(self) -> int:
        return len(self.preop)


def hull_excess(points: np.ndarray, queries: np.ndarray) -> np.ndarray:
    """How far each query lies outside the convex hull of ``points`` (0 inside)."""
    try:
        hull = ConvexHull(points)
    except QhullError:
        return cKDTree(points).query(queries)[0]
    eq = hull.equations
    return np.maximum((queries @ eq[:, :3].T + eq[:, 3]).max(axis=1), 0.0)


def idw_interpolate(points, values, queries, neighbors: int = 4, power: float = 2.0,
                    hull_tolerance: float = 0.01) -> np.ndarray:
    """Inverse-distance weighted field at ``queries`` from the nearest ``neighbors`` points.

    A query coinciding with a point takes that point's value. Queries more than
    ``hull_tolerance`` outside the hull of ``points`` raise a LandmarkWarning.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    values = np.asarray(values, dtype=np.float64)
    queries = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
    if len(points) != len(values):
        raise MetricError("points and values differ in length")
    j = min(neighbors, len(points))
    if j < 1:
        raise MetricError("no points to interpolate from")
    far = hull_excess(points, queries) > hull_tolerance
    if far.any():
        warnings.warn(f"{int(far.sum())} landmark(s) lie more than {hull_tolerance * 1e3:.0f} mm outside the "
                      "volume hull; interpolated values are extrapolated", LandmarkWarning, stacklevel=2)
    d, idx = cKDTree(points).query(queries, k=j)
    d, idx = d.reshape(len(queries), j), idx.reshape(len(queries), j)
    out = np.empty((len(queries),) + values.shape[1:])
    exact = d[:, 0] == 0.0
    out[exact] = values[idx[exact, 0]]
    w = 1.0 / d[~exact] ** power
    w /= w.sum(axis=1, keepdims=True)
    out[~exact] = np.einsum("qj,qj...->q...", w, values[idx[~exact]])
    return out


def tre_from_displacements(landmarks: LandmarkSet, phi_at_landmarks) -> float:
    """Mean ``||L_P + phi - L_I||`` with the field already sampled at the landmarks."""
    phi = np.asarray(phi_at_landmarks, dtype=np.float64).reshape(-1, 3)
    if len(phi) != len(landmarks):
        raise MetricError("one displacement per landmark is required")
    return float(np.mean(np.linalg.norm(landmarks.preop + phi - landmarks.intraop, axis=1)))


def tre(landmarks: LandmarkSet, volume_points, phi, neighbors: int = 4) -> float:
    """Target registration error with the dense field interpolated to the landmarks."""
    at = idw_interpolate(volume_points, phi, landmarks.preop, neighbors)
    return tre_from_displacements(landmarks, at)


def prd(phi_gt=None, landmarks: LandmarkSet | None = None) -> float:
    """Pre-registration displacement: error of the zero field."""
    if phi_gt is not None:
        gt = np.asarray(phi_gt, dtype=np.float64).reshape(-1, 3)
        return med(np.zeros_like(gt), gt)
    if landmarks is not None:
        return tre_from_displacements(landmarks, np.zeros_like(landmarks.preop))
    raise MetricError("prd needs a ground-truth field or landmarks")


def visibility(patch: TriSurface | None, surface: TriSurface) -> float:
    """Area of the observed patch over the area of the full organ surface."""
    total = surface_area(surface) if surface.n_triangles else 0.0
    if total <= 0.0:
        raise MetricError("organ surface has zero area")
    if patch is None or patch.n_triangles == 0:
        return 0.0
    return float(surface_area(patch) / total)


def failed(med_value: float, prd_value: float) -> bool:
    """A registration fails when it ends further from the truth than it started."""
    return bool(med_value > prd_value)


def _as_vectors(x, y) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if len(x) != len(y):
        raise MetricError("correlation inputs differ in length")
    if len(x) < 2:
        raise MetricError("correlation needs at least two samples")
    return x, y


def pearson(x, y) -> float:
    """Pearson r; NaN when either vector is constant."""
    x, y = _as_vectors(x, y)
    dx, dy = x - x.mean(), y - y.mean()
    den = math.sqrt(float(dx @ dx) * float(dy @ dy))
    if den == 0.0:
        return float("nan")
    return float(dx @ dy) / den


def spearman(x, y) -> float:
    """Spearman rho as Pearson r of average ranks; NaN when either vector is constant."""
    x, y = _as_vectors(x, y)
    return pearson(rankdata(x), rankdata(y))
