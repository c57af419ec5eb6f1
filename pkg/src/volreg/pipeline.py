"""Dataset generation: organ shape to featured network inputs.

One sample = shape -> scene -> simulation -> most-deformed state -> partial
deformed surface -> noise -> feature preprocessing. Every stage draws from
its own child of ``SeedSequence([seed, index, attempt])`` so samples are
independent of worker scheduling, and a failed attempt is retried with the
next attempt number.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from . import __version__
from .geometry import (DEFAULT_FREQUENCIES, FeaturedInput, PointCloud, intraop_features, is_watertight,
                       positional_encoding, preop_features, resample_to_resolution, standardize)
from .intraop import (ExtractionError, NoiseError, NoiseSpec, RandomExtractionSpec, apply_noise,
                      extract_camera_surface, extract_random_surface, sample_camera)
from .io import (DataError, load_array, load_featured, read_json, save_array, save_featured, save_surface,
                 save_tetmesh, sha256_bytes, sha256_file, write_json, json_dumps)
from .metrics import visibility
from .sim import (InversionError, MeshingError, SceneConfig, SceneError, ShapeConfig, ShapeError, SimConfig,
                  SolverError, TetMesh, build_scene, export_training_sample, generate_organ_shape, simulate)
from .sim.tetmesh import signed_volumes

log = logging.getLogger(__name__)

THREADS_ENV = "VOLREG_THREADS"
MANIFEST = "manifest.json"
INVALID_LOG = "invalid.jsonl"

# failures that mark a sampled configuration invalid instead of aborting the run
SAMPLE_ERRORS = (ShapeError, MeshingError, SceneError, SolverError, InversionError, ExtractionError, NoiseError,
                 FloatingPointError)


class GenerationError(RuntimeError):
    pass


@dataclass
class GenerateConfig:
    name: str = "synthetic"
    count: int = 10
    seed: int = 0
    n_points: int = 2500
    spacing: float = 0.005
    max_attempts: int = 5
    n_landmarks: int = 8
    # probability of a camera-view patch instead of a random surface region
    camera_probability: float = 0.5
    noise_amplitude_range: tuple = (0.0, 0.01)
    noise_sigma_range: tuple = (0.0, 0.003)
    threads: int = 1
    shape: dict = field(default_factory=dict)
    scene: dict = field(default_factory=dict)
    sim: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.count < 0 or self.n_points <= 0 or self.spacing <= 0 or self.max_attempts < 1:
            raise ValueError("count, n_points, spacing and max_attempts must be positive")
        for key, cls in (("shape", ShapeConfig), ("scene", SceneConfig), ("sim", SimConfig)):
            known = {f.name for f in fields(cls)}
            bad = set(getattr(self, key)) - known
            if bad:
                raise ValueError(f"unknown {key} option(s): {sorted(bad)}")
            setattr(self, key, {k: (tuple(v) if isinstance(v, list) else v) for k, v in getattr(self, key).items()})
        self.noise_amplitude_range = tuple(self.noise_amplitude_range)
        self.noise_sigma_range = tuple(self.noise_sigma_range)

    def shape_config(self) -> ShapeConfig:
        return replace(ShapeConfig(), **self.shape)

    def scene_config(self) -> SceneConfig:
        return replace(SceneConfig(), **self.scene)

    def sim_config(self) -> SimConfig:
        return replace(SimConfig(), **self.sim)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("threads")  # results do not depend on it
        return d


def default_threads() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ValueError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None


# ---- tetrahedral interpolation ---------------------------------------------

def locate_in_tets(mesh: TetMesh, points: np.ndarray, candidates: int = 16):
    """Containing tetrahedron and barycentric weights for each point.

    Points outside the mesh (numerically on the boundary) fall back to the
    candidate with the least negative weight, weights clamped and renormalized.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    x = mesh.vertices[mesh.tets]
    cent = x.mean(axis=1)
    tree = cKDTree(cent)
    k = min(candidates, mesh.n_tets)
    _, cand = tree.query(pts, k=k)
    cand = cand.reshape(len(pts), k)

    def bary(p, c):
        # lam_{1..3} = Dm^-1 (p - x0)
        lam = np.einsum("...ij,...j->...i", mesh.dm_inv[c], p - x[c, 0])
        return np.concatenate([1.0 - lam.sum(-1, keepdims=True), lam], axis=-1)

    b = bary(pts[:, None, :], cand)
    best = np.argmax(b.min(-1), axis=1)
    rows = np.arange(len(pts))
    tet, w = cand[rows, best], b[rows, best]
    # a containing tet has its centroid within the largest centroid-vertex
    # distance, so a ball query of that radius is exhaustive for misses
    radius = np.linalg.norm(x - cent[:, None], axis=-1).max()
    for i in np.flatnonzero(w.min(-1) < -1e-12):
        near = np.asarray(tree.query_ball_point(pts[i], radius), dtype=np.int64)
        if near.size:
            bn = bary(pts[i], near)
            j = np.argmax(bn.min(-1))
            if bn[j].min() > w[i].min():
                tet[i], w[i] = near[j], bn[j]
    w = np.clip(w, 0.0, None)
    w /= w.sum(axis=1, keepdims=True)
    return tet, w


def interpolate_nodal(mesh: TetMesh, values: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Linear finite-element interpolation of per-vertex ``values`` at ``points``."""
    tet, w = locate_in_tets(mesh, points)
    return np.einsum("nc,ncd->nd", w, values[mesh.tets[tet]])


# ---- validity ---------------------------------------------------------------

def validity_problems(rest: TetMesh, intraop: PointCloud, phi: np.ndarray) -> list[str]:
    problems = []
    surf, _ = rest.compact_boundary()
    if not is_watertight(surf):
        problems.append("rest boundary not watertight")
    if rest.n_tets == 0 or signed_volumes(rest.vertices, rest.tets).min() <= 0:
        problems.append("non-positive rest tetrahedron volume")
    if len(intraop) == 0:
        problems.append("empty intraoperative cloud")
    if not np.isfinite(phi).all():
        problems.append("non-finite displacement")
    return problems


def check_sample_dir(directory) -> list[str]:
    """Re-run the validity suite on a written sample."""
    from .io import load_tetmesh
    d = Path(directory)
    v, t = load_tetmesh(d / "rest.msh")
    try:
        mesh = TetMesh(v, t)
    except MeshingError as exc:
        return [str(exc)]
    intra = load_featured(d, "intraop")
    phi = load_array(d / "phi_gt.npy")
    return validity_problems(mesh, PointCloud(intra.positions[intra.valid_mask]), phi)


# ---- preprocessing -------------------------------------------------------------

def featurize_pair(volume: PointCloud, intra: PointCloud, rest_surface, n_points: int, seed_preop: int,
                   seed_intraop: int, frequencies=DEFAULT_FREQUENCIES) -> tuple[FeaturedInput, FeaturedInput]:
    """Standardize both clouds to ``n_points`` rows and fill their feature channels.

    Features are per point, so only rows that survive subsampling are computed.
    """
    preop_in = standardize(volume, n_points, seed=seed_preop, frequencies=frequencies)
    intra_in = standardize(intra, n_points, seed=seed_intraop, frequencies=frequencies)
    pv, iv = preop_in.valid_mask, intra_in.valid_mask
    kept_vol = volume.subset(preop_in.source_index[pv])
    kept_intra = intra.subset(intra_in.source_index[iv])
    preop_in.features[pv] = preop_features(kept_vol, rest_surface, intra.points)
    intra_in.features[iv] = intraop_features(kept_intra, rest_surface)
    return preop_in, intra_in


def reencode(inp: FeaturedInput, frequencies) -> FeaturedInput:
    """Same rows with the positional encoding recomputed for ``frequencies``."""
    enc = np.zeros((inp.n, 6 * len(tuple(frequencies))))
    enc[inp.valid_mask] = positional_encoding(inp.positions[inp.valid_mask], frequencies)
    return FeaturedInput(inp.positions, enc, inp.features, inp.valid_mask, inp.source_index)


# ---- one sample ---------------------------------------------------------------

def _child_seeds(seed: int, index: int, attempt: int) -> dict:
    names = ("shape", "scene", "extract", "noise", "resample", "standardize", "landmarks")
    kids = np.random.SeedSequence([seed, index, attempt]).spawn(len(names))
    return dict(zip(names, kids))


def _seed_int(ss: np.random.SeedSequence) -> int:
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


def build_sample(cfg: GenerateConfig, index: int, attempt: int) -> dict:
    """All arrays and provenance for one attempt; raises one of ``SAMPLE_ERRORS`` when invalid."""
    seeds = _child_seeds(cfg.seed, index, attempt)
    organ, shape_params = generate_organ_shape(seeds["shape"], cfg.shape_config(), return_params=True)
    scene = build_scene(organ, seeds["scene"], cfg.scene_config())
    traj = simulate(scene, cfg.sim_config())
    _, _, phi_nodes, best = export_training_sample(scene, traj)
    mesh = scene.organ
    if not np.isfinite(phi_nodes).all():
        raise SolverError("non-finite displacement")

    rest_surf, _ = mesh.compact_boundary()
    def_surf, _ = mesh.compact_boundary(phi_nodes)

    rng = np.random.default_rng(seeds["extract"])
    if rng.random() < cfg.camera_probability:
        camera = sample_camera(def_surf, rng)
        patch = extract_camera_surface(def_surf, camera)
        extraction = {"mode": "camera", "camera": camera.to_dict()}
    else:
        spec = RandomExtractionSpec.sample(rng, def_surf.n_vertices)
        patch, spec = extract_random_surface(def_surf, seed=_seed_int(seeds["extract"]), spec=spec)
        extraction = {"mode": "random", "spec": spec.to_dict()}
    noise = NoiseSpec.sample(np.random.default_rng(seeds["noise"]), cfg.noise_amplitude_range, cfg.noise_sigma_range)
    intra = apply_noise(patch, noise, seed=_seed_int(seeds["noise"]))

    volume = resample_to_resolution(rest_surf, cfg.spacing, seed=_seed_int(seeds["resample"]))
    std_seeds = seeds["standardize"].spawn(2)
    preop_in, intra_in = featurize_pair(volume, intra, rest_surf, cfg.n_points,
                                        _seed_int(std_seeds[0]), _seed_int(std_seeds[1]))
    pv = preop_in.valid_mask
    phi_gt = np.zeros((cfg.n_points, 3))
    phi_gt[pv] = interpolate_nodal(mesh, phi_nodes, preop_in.positions[pv])

    problems = validity_problems(mesh, intra, phi_gt)
    if problems:
        raise GenerationError("; ".join(problems))

    lrng = np.random.default_rng(seeds["landmarks"])
    inner = np.flatnonzero(~volume.on_surface)
    pool = inner if len(inner) >= cfg.n_landmarks else np.arange(len(volume))
    pick = np.sort(lrng.choice(pool, size=min(cfg.n_landmarks, len(pool)), replace=False))
    lm_pre = volume.points[pick]
    lm_intra = lm_pre + interpolate_nodal(mesh, phi_nodes, lm_pre)

    prd = float(np.linalg.norm(phi_gt[preop_in.valid_mask], axis=1).mean())
    return {
        "mesh": mesh, "phi_nodes": phi_nodes, "rest_surface": rest_surf, "deformed_surface": def_surf,
        "patch": patch, "preop": preop_in, "intraop": intra_in, "phi_gt": phi_gt,
        "landmarks_preop": lm_pre, "landmarks_intraop": lm_intra,
        "info": {
            "index": index, "attempt": attempt, "shape": shape_params, "scene": scene.provenance,
            "simulation": {"steps": len(traj) - 1, "converged": bool(traj.converged), "exported_step": int(best)},
            "extraction": extraction, "noise": noise.to_dict(),
            "n_volume_points": len(volume), "n_intraop_points": len(intra),
            "prd": prd, "visibility": float(visibility(patch, def_surf)),
        },
    }


def write_sample(directory, sample: dict) -> dict:
    """Write one sample; returns {file name: sha256}."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    hashes = {}
    hashes.update(save_featured(d, "preop", sample["preop"]))
    hashes.update(save_featured(d, "intraop", sample["intraop"]))
    for key in ("phi_gt", "landmarks_preop", "landmarks_intraop", "phi_nodes"):
        save_array(d / f"{key}.npy", sample[key])
        hashes[f"{key}.npy"] = sha256_file(d / f"{key}.npy")
    save_tetmesh(d / "rest.msh", sample["mesh"].vertices, sample["mesh"].tets)
    save_surface(d / "rest_surface.obj", sample["rest_surface"])
    save_surface(d / "deformed_surface.obj", sample["deformed_surface"])
    save_surface(d / "intraop_patch.ply", sample["patch"])
    for name in ("rest.msh", "rest_surface.obj", "deformed_surface.obj", "intraop_patch.ply"):
        hashes[name] = sha256_file(d / name)
    hashes["info.json"] = write_json(d / "info.json", sample["info"])
    return hashes


def _generate_one(cfg: GenerateConfig, index: int, out_dir: str):
    """Worker: try attempts until one is valid. Returns (entry or None, invalid records)."""
    invalid = []
    for attempt in range(cfg.max_attempts):
        try:
            sample = build_sample(cfg, index, attempt)
        except SAMPLE_ERRORS + (GenerationError,) as exc:
            invalid.append({"index": index, "attempt": attempt, "error": type(exc).__name__, "message": str(exc)})
            continue
        rel = f"samples/{index:05d}"
        hashes = write_sample(Path(out_dir) / rel, sample)
        info = sample["info"]
        entry = {
            "id": f"{index:05d}", "dir": rel, "attempt": attempt, "files": hashes,
            "preop": f"{rel}/preop_positions.npy", "intraop": f"{rel}/intraop_positions.npy",
            "phi_gt": f"{rel}/phi_gt.npy",
            "landmarks": [f"{rel}/landmarks_preop.npy", f"{rel}/landmarks_intraop.npy"],
            "prd": info["prd"], "visibility": info["visibility"],
        }
        return entry, invalid
    return None, invalid


def generate_dataset(cfg: GenerateConfig, out_dir, threads: int | None = None) -> dict:
    """Generate ``cfg.count`` samples into ``out_dir`` and write the manifest.

    Raises GenerationError when not a single sample is valid.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    threads = threads or cfg.threads or 1
    jobs = range(cfg.count)
    if threads > 1 and cfg.count > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_generate_one, [cfg] * cfg.count, jobs, [str(out)] * cfg.count))
    else:
        results = [_generate_one(cfg, i, str(out)) for i in jobs]

    entries, invalid = [], []
    for entry, bad in results:
        invalid.extend(bad)
        if entry is not None:
            entries.append(entry)
        elif bad:
            log.warning("sample %d: all %d attempts invalid", bad[0]["index"], cfg.max_attempts)
    with (out / INVALID_LOG).open("w") as fh:
        for rec in invalid:
            fh.write(json_dumps(rec).replace("\n", " ").strip() + "\n")
    if cfg.count and not entries:
        raise GenerationError(f"all {cfg.count} samples invalid after {cfg.max_attempts} attempts each")
    manifest = {
        "name": cfg.name, "seed": cfg.seed, "version": __version__, "config": cfg.to_dict(),
        "n_points": cfg.n_points, "frequencies": list(DEFAULT_FREQUENCIES),
        "samples": entries, "n_invalid_attempts": len(invalid),
        "n_failed_samples": cfg.count - len(entries),
    }
    write_json(out / MANIFEST, manifest)
    return manifest


# ---- loading ----------------------------------------------------------------

def manifest_hash(path) -> str:
    return sha256_file(path)


def load_manifest(path, verify: bool = False) -> dict:
    """Read a manifest and check that every referenced file exists."""
    p = Path(path)
    if p.is_dir():
        p = p / MANIFEST
    if not p.exists():
        raise DataError(f"manifest not found: {p}")
    m = read_json(p)
    if "samples" not in m:
        raise DataError(f"{p}: not a manifest (no 'samples')")
    root = p.parent
    for s in m["samples"]:
        refs = [s.get("preop"), s.get("intraop")] + ([s["phi_gt"]] if s.get("phi_gt") else [])
        refs += list(s.get("landmarks") or [])
        for r in refs:
            if r is None or not (root / r).exists():
                raise DataError(f"sample {s.get('id')}: missing file {r}")
        if verify:
            for name, digest in s.get("files", {}).items():
                if sha256_file(root / s["dir"] / name) != digest:
                    raise DataError(f"sample {s['id']}: hash mismatch for {name}")
    m["_root"] = str(root)
    m["_hash"] = sha256_file(p)
    return m


def sample_dir(manifest: dict, entry: dict) -> Path:
    return Path(manifest["_root"]) / entry["dir"]


def load_sample_inputs(manifest: dict, entry: dict) -> tuple[FeaturedInput, FeaturedInput]:
    d = sample_dir(manifest, entry)
    return load_featured(d, "preop"), load_featured(d, "intraop")


def load_phi_gt(manifest: dict, entry: dict) -> np.ndarray:
    if not entry.get("phi_gt"):
        raise DataError(f"sample {entry.get('id')}: no ground-truth displacement")
    return load_array(Path(manifest["_root"]) / entry["phi_gt"])


def sample_hashes(manifest: dict) -> str:
    """One digest over every sample file digest, in manifest order."""
    parts = [f"{s['id']}:{k}:{v}" for s in manifest["samples"] for k, v in sorted(s["files"].items())]
    return sha256_bytes("\n".join(parts).encode())
