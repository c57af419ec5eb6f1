"""Tetrahedral meshes and lattice-based tetrahedralization."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components as _cc

from ..geometry.mesh import closest_points_on_mesh, inside_mask, is_watertight
from ..geometry.types import TriSurface

# outward faces of a positively oriented tet (a, b, c, d)
TET_FACES = np.array([[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]])


class MeshingError(ValueError):
    pass


def signed_volumes(vertices: np.ndarray, tets: np.ndarray) -> np.ndarray:
    x = vertices[tets]
    ds = np.stack([x[:, 1] - x[:, 0], x[:, 2] - x[:, 0], x[:, 3] - x[:, 0]], axis=-1)
    return np.linalg.det(ds) / 6.0


@dataclass
class TetMesh:
    vertices: np.ndarray
    tets: np.ndarray
    boundary_tris: np.ndarray = field(init=False)
    rest_volumes: np.ndarray = field(init=False)
    dm_inv: np.ndarray = field(init=False)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.tets = np.asarray(self.tets, dtype=np.int64).reshape(-1, 4)
        x = self.vertices[self.tets]
        dm = np.stack([x[:, 1] - x[:, 0], x[:, 2] - x[:, 0], x[:, 3] - x[:, 0]], axis=-1)
        self.rest_volumes = np.linalg.det(dm) / 6.0
        if len(self.tets) and self.rest_volumes.min() <= 0:
            raise MeshingError("tetrahedra must have strictly positive rest volume")
        self.dm_inv = np.linalg.inv(dm) if len(self.tets) else np.zeros((0, 3, 3))
        self.boundary_tris = boundary_faces(self.tets)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_tets(self) -> int:
        return len(self.tets)

    def boundary_vertices(self) -> np.ndarray:
        return np.unique(self.boundary_tris)

    def boundary_surface(self, displacement: np.ndarray | None = None) -> TriSurface:
        """Boundary as a surface over all mesh vertices (interior ones unused)."""
        v = self.vertices if displacement is None else self.vertices + displacement
        return TriSurface(v, self.boundary_tris)

    def compact_boundary(self, displacement: np.ndarray | None = None) -> tuple[TriSurface, np.ndarray]:
        """Boundary surface with only its own vertices, plus their mesh indices."""
        used = self.boundary_vertices()
        remap = -np.ones(self.n_vertices, dtype=np.int64)
        remap[used] = np.arange(len(used))
        v = self.vertices if displacement is None else self.vertices + displacement
        return TriSurface(v[used], remap[self.boundary_tris]), used

    def total_volume(self) -> float:
        return float(self.rest_volumes.sum())


def boundary_faces(tets: np.ndarray) -> np.ndarray:
    if len(tets) == 0:
        return np.zeros((0, 3), dtype=np.int64)
    faces = tets[:, TET_FACES].reshape(-1, 3)
    key = np.sort(faces, axis=1)
    _, inv, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    return faces[counts[inv.reshape(-1)] == 1]


def bcc_lattice(lo: np.ndarray, hi: np.ndarray, spacing: float, offset=(0.0, 0.0, 0.0)):
    """Body-centred cubic tets covering [lo, hi]: four tets around every cell face."""
    lo = np.asarray(lo, float) - spacing + np.asarray(offset, float) * spacing
    n = np.ceil((np.asarray(hi, float) + spacing - lo) / spacing).astype(int) + 1
    nx, ny, nz = n
    corner = np.stack(np.meshgrid(*[np.arange(k) for k in n], indexing="ij"), -1).reshape(-1, 3)
    centers = np.stack(np.meshgrid(*[np.arange(k - 1) for k in n], indexing="ij"), -1).reshape(-1, 3)
    verts = np.concatenate([lo + corner * spacing, lo + (centers + 0.5) * spacing])
    cid = lambda i, j, k: (i * ny + j) * nz + k  # noqa: E731
    base = nx * ny * nz
    mid = lambda i, j, k: base + (i * (ny - 1) + j) * (nz - 1) + k  # noqa: E731
    tets = []
    for axis in range(3):
        u, w = [a for a in range(3) if a != axis]
        shape = [nx - 1, ny - 1, nz - 1]
        shape[axis] -= 1
        if min(shape) <= 0:
            continue
        idx = np.stack(np.meshgrid(*[np.arange(s) for s in shape], indexing="ij"), -1).reshape(-1, 3)
        c1 = mid(*idx.T)
        nb = idx.copy()
        nb[:, axis] += 1
        c2 = mid(*nb.T)
        # corners of the shared face, in cyclic order
        f0 = nb.copy()
        ring = []
        for du, dw in ((0, 0), (1, 0), (1, 1), (0, 1)):
            p = f0.copy()
            p[:, u] += du
            p[:, w] += dw
            ring.append(cid(*p.T))
        for r in range(4):
            tets.append(np.stack([c1, c2, ring[r], ring[(r + 1) % 4]], axis=1))
    tets = np.concatenate(tets)
    vol = signed_volumes(verts, tets)
    flip = vol < 0
    tets[flip] = tets[flip][:, [0, 1, 3, 2]]
    return verts, tets


def _largest_component(tets: np.ndarray, n_vertices: int) -> np.ndarray:
    t = len(tets)
    rows = np.repeat(np.arange(t), 4)
    inc = sparse.coo_matrix((np.ones(4 * t), (rows, tets.ravel())), shape=(t, n_vertices)).tocsr()
    adj = inc @ inc.T
    _, lab = _cc(adj, directed=False)
    return lab == np.argmax(np.bincount(lab))


def _nonmanifold_edges(tets: np.ndarray) -> np.ndarray:
    """Boundary edges shared by more than two boundary faces."""
    f = boundary_faces(tets)
    e = np.sort(np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]]), axis=1)
    uniq, counts = np.unique(e, axis=0, return_counts=True)
    return uniq[counts > 2]


def _manifold_boundary(tets: np.ndarray, n_vertices: int, rounds: int = 20) -> np.ndarray:
    """Largest component with every boundary edge on exactly two faces.

    Tets touching a pinched edge are removed until none is left.
    """
    tets = tets[_largest_component(tets, n_vertices)]
    for _ in range(rounds):
        bad = _nonmanifold_edges(tets)
        if not len(bad):
            return tets
        key = bad[:, 0] * n_vertices + bad[:, 1]
        hit = np.zeros(len(tets), bool)
        for a, b in ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)):
            e = np.sort(tets[:, [a, b]], axis=1)
            hit |= np.isin(e[:, 0] * n_vertices + e[:, 1], key)
        tets = tets[~hit]
        if not len(tets):
            break
        tets = tets[_largest_component(tets, n_vertices)]
    raise MeshingError("could not make the lattice boundary manifold")


def tetrahedralize(surface: TriSurface, max_edge: float, offset=(0.137, 0.291, 0.433),
                   min_quality: float = 0.1, project: bool = True) -> TetMesh:
    """Lattice tetrahedralization clipped to the surface interior.

    Tets with an inside centroid are kept, interior vertices are guaranteed
    inside the surface, and boundary vertices are pulled onto the surface as
    far as element quality allows.
    """
    if max_edge <= 0:
        raise ValueError("max_edge must be positive")
    if not is_watertight(surface):
        raise MeshingError("surface must be watertight")
    lo, hi = surface.vertices.min(axis=0), surface.vertices.max(axis=0)
    verts, tets = bcc_lattice(lo, hi, max_edge, offset)
    # only test vertices that can matter
    inside_v = np.zeros(len(verts), bool)
    near = np.all((verts >= lo - max_edge) & (verts <= hi + max_edge), axis=1)
    inside_v[near] = inside_mask(verts[near], surface)
    cent = verts[tets].mean(axis=1)
    keep = inside_mask(cent, surface)
    tets = tets[keep]
    # interior (non-boundary) vertices must be inside: peel offending tets
    for _ in range(20):
        if not len(tets):
            break
        bverts = np.unique(boundary_faces(tets))
        interior = np.setdiff1d(np.unique(tets), bverts)
        bad = interior[~inside_v[interior]]
        if not len(bad):
            break
        tets = tets[~np.isin(tets, bad).any(axis=1)]
    if not len(tets):
        raise MeshingError("surface too thin for the lattice spacing")
    tets = _manifold_boundary(tets, len(verts))
    used = np.unique(tets)
    remap = -np.ones(len(verts), dtype=np.int64)
    remap[used] = np.arange(len(used))
    verts, tets = verts[used], remap[tets]
    if project:
        verts = _project_boundary(verts, tets, surface, min_quality)
    return TetMesh(verts, tets)


def _project_boundary(verts, tets, surface, min_quality, rounds: int = 12):
    rest = signed_volumes(verts, tets)
    bv = np.unique(boundary_faces(tets))
    _, target, _ = closest_points_on_mesh(verts[bv], surface)
    step = target - verts[bv]
    scale = np.ones(len(bv))
    out = verts.copy()
    pos = -np.ones(len(verts), dtype=np.int64)
    pos[bv] = np.arange(len(bv))
    for _ in range(rounds):
        out[bv] = verts[bv] + scale[:, None] * step
        vol = signed_volumes(out, tets)
        bad = vol < min_quality * rest
        if not bad.any():
            return out
        hit = pos[np.unique(tets[bad])]
        hit = hit[hit >= 0]
        scale[hit] *= 0.5
    scale[pos[np.unique(tets[signed_volumes(out, tets) < min_quality * rest])][lambda a: a >= 0]] = 0.0
    out[bv] = verts[bv] + scale[:, None] * step
    return out
