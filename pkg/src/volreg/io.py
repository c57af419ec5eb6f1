"""Array, mesh and manifest files.

Arrays are ``.npy`` files forced to little-endian float64 (magic header plus
shape prefix). Meshes go through meshio: OBJ/PLY for surfaces, MSH 2.2 ASCII
for tetrahedral meshes. JSON is written with sorted keys so identical content
gives identical bytes.
"""

from __future__ import annotations

import hashlib
import json
import re
from pathlib import Path

import meshio
import numpy as np
import yaml

from .geometry.types import FeaturedInput, TriSurface


class _Loader(yaml.SafeLoader):
    pass


# YAML 1.1 wants a dot and a signed exponent, so plain "1e9" would stay a string
_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"""^(?:[-+]?(?:[0-9][0-9_]*)\.[0-9_]*(?:[eE][-+]?[0-9]+)?
    |[-+]?(?:[0-9][0-9_]*)(?:[eE][-+]?[0-9]+)
    |\.[0-9_]+(?:[eE][-+][0-9]+)?
    |[-+]?\.(?:inf|Inf|INF)
    |\.(?:nan|NaN|NAN))$""", re.X),
    list("-+0123456789."))


def yaml_load(text: str):
    """safe_load that also reads exponent-only floats such as ``1e9``."""
    return yaml.load(text, Loader=_Loader)


class DataError(ValueError):
    pass


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def save_array(path, arr) -> None:
    a = np.asarray(arr)
    if a.dtype == bool or a.dtype.kind in "iu":
        a = a.astype(np.float64)
    np.save(Path(path), np.ascontiguousarray(a, dtype="<f8"), allow_pickle=False)


def load_array(path) -> np.ndarray:
    try:
        a = np.load(Path(path), allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read array {path}: {exc}") from exc
    if a.dtype != np.dtype("<f8"):
        raise DataError(f"{path}: expected little-endian float64, found {a.dtype}")
    return a


def json_dumps(obj) -> str:
    def default(o):
        if isinstance(o, (np.floating, np.integer, np.bool_)):
            return o.item()
        if isinstance(o, np.ndarray):
            return o.tolist()
        if isinstance(o, tuple):
            return list(o)
        raise TypeError(f"not JSON serializable: {type(o).__name__}")

    return json.dumps(obj, indent=2, sort_keys=True, default=default) + "\n"


def write_json(path, obj) -> str:
    """Write canonical JSON and return its sha256."""
    text = json_dumps(obj).encode("utf-8")
    Path(path).write_bytes(text)
    return sha256_bytes(text)


def read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc


# meshes -----------------------------------------------------------------

def save_surface(path, surface: TriSurface) -> None:
    path = Path(path)
    fmt = {".obj": "obj", ".ply": "ply"}.get(path.suffix.lower())
    if fmt is None:
        raise DataError(f"unsupported surface format {path.suffix}")
    m = meshio.Mesh(surface.vertices, [("triangle", surface.triangles.astype(np.int32))])
    kw = {"binary": False} if fmt == "ply" else {}
    meshio.write(path, m, file_format=fmt, **kw)
    # meshio stamps the write time into a header comment; drop it so equal
    # surfaces give equal bytes
    lines = path.read_bytes().split(b"\n")
    head = min(len(lines), 16)
    lines[:head] = [ln for ln in lines[:head] if b"Created by meshio" not in ln]
    path.write_bytes(b"\n".join(lines))


def load_surface(path) -> TriSurface:
    try:
        m = meshio.read(Path(path))
    except Exception as exc:  # meshio raises several unrelated types
        raise DataError(f"cannot read mesh {path}: {exc}") from exc
    tris = [c.data for c in m.cells if c.type == "triangle"]
    if not tris:
        raise DataError(f"{path} holds no triangles")
    return TriSurface(np.asarray(m.points, dtype=np.float64)[:, :3], np.concatenate(tris))


def save_tetmesh(path, vertices: np.ndarray, tets: np.ndarray) -> None:
    tets = np.asarray(tets, dtype=np.int64)
    tags = np.ones(len(tets), dtype=np.int64)
    m = meshio.Mesh(np.asarray(vertices, dtype=np.float64), [("tetra", tets)],
                    cell_data={"gmsh:physical": [tags], "gmsh:geometrical": [tags]})
    meshio.write(Path(path), m, file_format="gmsh22", binary=False)


def load_tetmesh(path) -> tuple[np.ndarray, np.ndarray]:
    try:
        m = meshio.read(Path(path))
    except Exception as exc:
        raise DataError(f"cannot read mesh {path}: {exc}") from exc
    tets = [c.data for c in m.cells if c.type == "tetra"]
    if not tets:
        raise DataError(f"{path} holds no tetrahedra")
    return np.asarray(m.points, dtype=np.float64), np.concatenate(tets).astype(np.int64)


# point clouds -----------------------------------------------------------

def load_points(path) -> np.ndarray:
    """(N, 3) points from ``.npy``, ``.xyz``/``.txt`` (whitespace columns) or any meshio format."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".npy":
        pts = load_array(path)
    elif suffix in (".xyz", ".txt", ".csv"):
        try:
            pts = np.loadtxt(path, delimiter="," if suffix == ".csv" else None, ndmin=2)
        except ValueError as exc:
            raise DataError(f"cannot parse {path}: {exc}") from exc
    else:
        try:
            pts = meshio.read(path).points
        except Exception as exc:
            raise DataError(f"cannot read {path}: {exc}") from exc
    pts = np.asarray(pts, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] < 3 or not np.isfinite(pts[:, :3]).all():
        raise DataError(f"{path}: expected finite (N, 3) points")
    return pts[:, :3]


FEATURED_FIELDS = ("positions", "pos_encoding", "features", "valid_mask", "source_index")


def save_featured(directory, prefix: str, inp: FeaturedInput) -> dict:
    """Write one featured input as arrays; returns {file name: sha256}."""
    out = {}
    for f in FEATURED_FIELDS:
        name = f"{prefix}_{f}.npy"
        save_array(Path(directory) / name, getattr(inp, f))
        out[name] = sha256_file(Path(directory) / name)
    return out


def load_featured(directory, prefix: str) -> FeaturedInput:
    a = {f: load_array(Path(directory) / f"{prefix}_{f}.npy") for f in FEATURED_FIELDS}
    return FeaturedInput(a["positions"], a["pos_encoding"], a["features"], a["valid_mask"].astype(bool),
                         a["source_index"].astype(np.int64))
