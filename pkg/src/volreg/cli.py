"""``volreg`` command line.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import os

# single-threaded BLAS keeps every reduction order fixed (bit-identical reruns)
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import argparse  # noqa: E402
import logging  # noqa: E402
import math  # noqa: E402
import shutil  # noqa: E402
import sys  # noqa: E402
import time  # noqa: E402
from dataclasses import asdict  # noqa: E402
from pathlib import Path  # noqa: E402

import numpy as np  # noqa: E402
import yaml  # noqa: E402

from . import __version__  # noqa: E402
from .autodiff import CheckpointError  # noqa: E402
from .geometry import PointCloud, intraop_features, resample_to_resolution, standardize  # noqa: E402
from .geometry.features import point_distance_field, vertex_cloud  # noqa: E402
from .intraop import (ExtractionError, NoiseError, NoiseSpec, apply_noise, extract_camera_surface,  # noqa: E402
                      make_noise_benchmark, sample_camera)
from .io import (DataError, yaml_load, load_array, load_featured, load_points, load_surface, load_tetmesh, read_json,  # noqa: E402
                 save_array, save_featured, sha256_file, write_json)
from .metrics import (LandmarkSet, MetricError, SampleMetrics, deformation_level_report, evaluate_sample,  # noqa: E402
                      noise_sweep_report, tre, visibility, visibility_sweep_report, write_table)
from .network import (ConfigError, ModelInputError, NetworkConfig, ParamError, TrainConfig, TrainingError,  # noqa: E402
                      TrainingSample, load_config, load_model, network_gradcheck, op_gradchecks, train)
from .pipeline import (MANIFEST, GenerateConfig, GenerationError, default_threads, featurize_pair,  # noqa: E402
                       generate_dataset, load_manifest, load_phi_gt, reencode, sample_dir)
from .sim import InversionError, SolverError, TetMesh  # noqa: E402

log = logging.getLogger("volreg")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
PROTOCOLS = ("plain", "deformation-level", "noise-sweep", "visibility-sweep")
RUN_FILE = "run.json"


# ---- run records -------------------------------------------------------------

def start_run(out: Path, command: str, config: dict, seed, threads: int = 1, manifest_hash: str | None = None) -> Path:
    """Serialize the resolved run configuration before any work happens."""
    out.mkdir(parents=True, exist_ok=True)
    record = {"command": command, "version": __version__, "seed": seed, "threads": threads,
              "config": config, "manifest_hash": manifest_hash}
    write_json(out / RUN_FILE, record)
    return out / RUN_FILE


def update_run(out: Path, **fields) -> None:
    record = read_json(out / RUN_FILE)
    record.update(fields)
    write_json(out / RUN_FILE, record)


def _resolve_threads(args) -> int:
    if getattr(args, "deterministic", False):
        return 1
    return args.threads or default_threads()


def _parse_overrides(pairs) -> dict:
    """``section.key=value`` strings (values parsed as YAML) into a nested dict."""
    out: dict = {}
    for item in pairs or []:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value: {item!r}")
        key, raw = item.split("=", 1)
        try:
            value = yaml_load(raw)
        except yaml.YAMLError as exc:
            raise ConfigError(f"bad override value {raw!r}: {exc}") from exc
        node = out
        parts = key.strip().split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = value
    return out


def _merge(base: dict, extra: dict) -> dict:
    out = dict(base)
    for k, v in extra.items():
        out[k] = _merge(out.get(k) or {}, v) if isinstance(v, dict) else v
    return out


def _read_yaml(path) -> dict:
    try:
        raw = yaml_load(Path(path).read_text()) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config root must be a mapping")
    return raw


# ---- generate ------------------------------------------------------------------

def generate_config_from(args) -> GenerateConfig:
    raw = _read_yaml(args.config) if args.config else {}
    raw = raw.get("generate", raw)
    raw = _merge(raw, _parse_overrides(args.set))
    for key in ("count", "seed", "n_points", "name"):
        val = getattr(args, key, None)
        if val is not None:
            raw[key] = val
    try:
        return GenerateConfig(**raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid generate config: {exc}") from exc


def cmd_generate(args) -> int:
    cfg = generate_config_from(args)
    threads = _resolve_threads(args)
    out = Path(args.out)
    start_run(out, "generate", cfg.to_dict(), cfg.seed, threads)
    t0 = time.perf_counter()
    manifest = generate_dataset(cfg, out, threads=threads)
    mhash = sha256_file(out / MANIFEST)
    update_run(out, manifest_hash=mhash)
    print(f"generated {len(manifest['samples'])}/{cfg.count} valid samples "
          f"({manifest['n_invalid_attempts']} invalid attempts) in {time.perf_counter() - t0:.1f} s")
    print(f"manifest {out / MANIFEST} sha256 {mhash}")
    return EXIT_OK


# ---- train ---------------------------------------------------------------------

def training_configs(args) -> tuple[NetworkConfig, TrainConfig]:
    net_cfg, train_cfg = load_config(args.config) if args.config else (NetworkConfig(), TrainConfig())
    updates = {k: getattr(args, k) for k in ("epochs", "max_steps", "batch_size", "seed")
               if getattr(args, k, None) is not None}
    if updates:
        try:
            train_cfg = TrainConfig(**{**asdict(train_cfg), **updates})
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
    return net_cfg, train_cfg


def manifest_training_samples(manifest: dict, net_cfg: NetworkConfig) -> list[TrainingSample]:
    """Featured inputs plus ground truth for every sample; errors name the sample."""
    samples = []
    for entry in manifest["samples"]:
        if not entry.get("phi_gt"):
            raise DataError(f"sample {entry.get('id')} has no ground-truth displacement (phi_gt)")
        d = sample_dir(manifest, entry)
        pre, intra = load_featured(d, "preop"), load_featured(d, "intraop")
        if pre.n != net_cfg.n_points:
            raise ConfigError(f"sample {entry['id']} has {pre.n} rows but the network expects "
                              f"n_points={net_cfg.n_points}")
        phi = load_phi_gt(manifest, entry)
        samples.append(TrainingSample(reencode(pre, net_cfg.frequencies), reencode(intra, net_cfg.frequencies),
                                      phi, entry["id"]))
    if not samples:
        raise DataError("manifest lists no samples")
    return samples


def cmd_train(args) -> int:
    net_cfg, train_cfg = training_configs(args)
    manifest = load_manifest(args.manifest)
    samples = manifest_training_samples(manifest, net_cfg)
    out = Path(args.out)
    start_run(out, "train", {"network": net_cfg.to_dict(), "train": train_cfg.to_dict(),
                             "manifest": str(Path(args.manifest).resolve()),
                             "resume": str(args.resume) if args.resume else None},
              train_cfg.seed, 1, manifest["_hash"])
    t0 = time.perf_counter()
    _, losses = train(samples, net_cfg, train_cfg, out, resume=args.resume)
    if losses:
        print(f"trained {len(losses)} steps in {time.perf_counter() - t0:.1f} s; "
              f"loss {losses[0]:.6g} -> {losses[-1]:.6g}")
    else:
        print("nothing to do: checkpoint already at the final step")
    print(f"checkpoint {out / 'last.vrck'}")
    return EXIT_OK


# ---- register ------------------------------------------------------------------

def _load_net(path):
    try:
        return load_model(path)
    except (CheckpointError, ParamError, KeyError, TypeError) as exc:
        raise DataError(f"incompatible checkpoint {path}: {exc}") from exc


def _intraop_cloud(path) -> PointCloud:
    path = Path(path)
    if path.suffix.lower() in (".obj", ".ply", ".stl", ".off", ".vtk", ".vtu"):
        try:
            return vertex_cloud(load_surface(path))
        except DataError:
            pass  # plain point file in a mesh container
    return PointCloud(load_points(path))


def _preop_surface(path):
    path = Path(path)
    if path.suffix.lower() == ".msh":
        v, t = load_tetmesh(path)
        surf, _ = TetMesh(v, t).compact_boundary()
        return surf
    return load_surface(path)


def prepare_inputs(net, preop, intraop, seed: int, spacing: float):
    """(preop, intraop) featured inputs for a sample directory or raw geometry files."""
    cfg = net.config
    p = Path(preop)
    if p.is_dir() and intraop is None:
        pre, intra = load_featured(p, "preop"), load_featured(p, "intraop")
        return reencode(pre, cfg.frequencies), reencode(intra, cfg.frequencies)
    if intraop is None:
        raise DataError("an intraoperative input is required unless --preop is a sample directory")
    surface = load_surface(p / "rest_surface.obj") if p.is_dir() else _preop_surface(p)
    volume = resample_to_resolution(surface, spacing, seed=seed)
    ss = np.random.SeedSequence(seed).spawn(2)
    seeds = [int(s.generate_state(1, np.uint64)[0] >> np.uint64(1)) for s in ss]
    return featurize_pair(volume, _intraop_cloud(intraop), surface, cfg.n_points, seeds[0], seeds[1],
                          cfg.frequencies)


def predict_valid(net, pre, intra) -> np.ndarray:
    """Displacement for the valid preoperative rows, in row order."""
    return net.predict(pre, intra)[pre.valid_mask]


def cmd_register(args) -> int:
    net = _load_net(args.checkpoint)
    out = Path(args.out)
    config = {"checkpoint": str(Path(args.checkpoint).resolve()), "preop": args.preop, "intraop": args.intraop,
              "manifest": args.manifest, "spacing": args.spacing, "network": net.config.to_dict()}
    if args.manifest:
        manifest = load_manifest(args.manifest)
        start_run(out, "register", config, args.seed, 1, manifest["_hash"])
        t0 = time.perf_counter()
        for entry in manifest["samples"]:
            d = sample_dir(manifest, entry)
            pre, intra = prepare_inputs(net, d, None, args.seed, args.spacing)
            save_array(out / f"{entry['id']}.npy", predict_valid(net, pre, intra))
        print(f"registered {len(manifest['samples'])} samples in {time.perf_counter() - t0:.3f} s")
        return EXIT_OK
    if not args.preop:
        raise ConfigError("register needs --preop or --manifest")
    start_run(out, "register", config, args.seed, 1, None)
    t0 = time.perf_counter()
    pre, intra = prepare_inputs(net, args.preop, args.intraop, args.seed, args.spacing)
    t1 = time.perf_counter()
    phi = predict_valid(net, pre, intra)
    t2 = time.perf_counter()
    pts = pre.positions[pre.valid_mask]
    save_array(out / "displacement.npy", phi)
    save_array(out / "preop_points.npy", pts)
    save_array(out / "deformed.npy", pts + phi)
    np.savetxt(out / "deformed.xyz", pts + phi, fmt="%.17g")
    print(f"registered {len(phi)} points: preprocessing {t1 - t0:.3f} s, network {t2 - t1:.3f} s")
    return EXIT_OK


# ---- evaluate ------------------------------------------------------------------

def load_prediction(pred_dir: Path, entry: dict, n_valid: int, n_rows: int, valid) -> np.ndarray:
    path = Path(pred_dir) / f"{entry['id']}.npy"
    if not path.exists():
        raise DataError(f"missing prediction for sample {entry['id']}: {path}")
    pred = load_array(path)
    if pred.shape == (n_rows, 3) and n_rows != n_valid:
        pred = pred[valid]
    if pred.shape != (n_valid, 3):
        raise DataError(f"prediction for {entry['id']} has shape {pred.shape}, expected ({n_valid}, 3)")
    return pred


def evaluate_manifest(manifest: dict, pred_dir) -> tuple[list[SampleMetrics], list[dict]]:
    metrics, rows = [], []
    for entry in manifest["samples"]:
        d = sample_dir(manifest, entry)
        pre = load_featured(d, "preop")
        valid = pre.valid_mask
        gt = load_phi_gt(manifest, entry)[valid]
        pred = load_prediction(pred_dir, entry, int(valid.sum()), pre.n, valid)
        tre_value = math.nan
        lm = entry.get("landmarks")
        if lm:
            root = Path(manifest["_root"])
            marks = LandmarkSet(load_array(root / lm[0]), load_array(root / lm[1]))
            tre_value = tre(marks, pre.positions[valid], pred)
        m = evaluate_sample(entry["id"], pred, gt, tre_value, entry.get("visibility", math.nan))
        metrics.append(m)
        rows.append({**asdict(m), "perlin_mm": entry.get("perlin_mm"), "sigma_mm": entry.get("sigma_mm")})
    return metrics, rows


def _summary(values) -> dict:
    a = np.asarray([v for v in values if not math.isnan(v)], dtype=np.float64)
    if not len(a):
        return {"mean": None, "std": None, "count": 0}
    return {"mean": float(a.mean()), "std": float(a.std(ddof=1)) if len(a) > 1 else 0.0, "count": int(len(a))}


def run_evaluation(manifest: dict, pred_dir, protocol: str, out: Path) -> dict:
    metrics, rows = evaluate_manifest(manifest, pred_dir)
    base = {"protocol": protocol, "manifest_hash": manifest["_hash"], "version": __version__,
            "n_samples": len(metrics)}
    if protocol == "plain":
        write_table(out / "metrics.csv", [{k: v for k, v in r.items() if k not in ("perlin_mm", "sigma_mm")}
                                          for r in rows])
        report = {**base, "med_mm": _summary([m.med * 1e3 for m in metrics]),
                  "rmse_mm": _summary([m.rmse * 1e3 for m in metrics]),
                  "prd_mm": _summary([m.prd * 1e3 for m in metrics]),
                  "delta_re_mm": _summary([m.delta_re * 1e3 for m in metrics]),
                  "tre_mm": _summary([m.tre * 1e3 for m in metrics]),
                  "n_failed": int(sum(m.failed for m in metrics))}
    elif protocol == "deformation-level":
        rep = deformation_level_report(metrics)
        write_table(out / "deformation_levels.csv", rep["bins"])
        report = {**base, **rep}
    elif protocol == "noise-sweep":
        missing = [r["name"] for r in rows if r["perlin_mm"] is None or r["sigma_mm"] is None]
        if missing:
            raise DataError(f"noise-sweep needs perlin_mm/sigma_mm on every sample; missing on {missing[:3]}")
        cells = {}
        for r in rows:
            key = (float(r["perlin_mm"]), float(r["sigma_mm"]))
            cells.setdefault(key, []).append(r["med"])
        table = noise_sweep_report([{"perlin_mm": a, "sigma_mm": s, "med": v} for (a, s), v in cells.items()])
        write_table(out / "noise_sweep.csv", table)
        report = {**base, "rows": table}
    elif protocol == "visibility-sweep":
        alpha = [m.visibility for m in metrics]
        if any(math.isnan(a) for a in alpha):
            raise DataError("visibility-sweep needs a visibility value on every sample")
        table, notes = visibility_sweep_report(alpha, [m.tre for m in metrics])
        write_table(out / "visibility_sweep.csv", table)
        report = {**base, "rows": table, "notes": notes}
    else:
        raise ConfigError(f"unknown protocol {protocol!r}")
    write_json(out / "report.json", report)
    return report


def cmd_evaluate(args) -> int:
    manifest = load_manifest(args.manifest)
    out = Path(args.out)
    start_run(out, "evaluate", {"manifest": str(Path(args.manifest).resolve()), "predictions": args.predictions,
                                "protocol": args.protocol}, None, 1, manifest["_hash"])
    report = run_evaluation(manifest, args.predictions, args.protocol, out)
    if args.protocol == "plain":
        med = report["med_mm"]
        print(f"MED {med['mean']:.3f} +- {med['std']:.3f} mm over {med['count']} samples "
              f"({report['n_failed']} failed)")
    else:
        print(f"{args.protocol} report written to {out / 'report.json'}")
    return EXIT_OK


# ---- benchmarks ----------------------------------------------------------------

def _cell_entry(cell_id: str, base: dict, extra: dict) -> dict:
    rel = f"cells/{cell_id}"
    entry = {"id": cell_id, "dir": rel, "base": base["id"], "files": {},
             "preop": f"{rel}/preop_positions.npy", "intraop": f"{rel}/intraop_positions.npy",
             "phi_gt": f"{rel}/phi_gt.npy", "prd": base.get("prd")}
    if base.get("landmarks"):
        entry["landmarks"] = [f"{rel}/landmarks_preop.npy", f"{rel}/landmarks_intraop.npy"]
    entry.update(extra)
    return entry


def write_cell(out: Path, manifest: dict, base: dict, cell_id: str, cloud: PointCloud, n_points: int,
               seed: int, extra: dict) -> dict:
    """A benchmark sample: the base preop input with a new intraop cloud."""
    src = sample_dir(manifest, base)
    rest = load_surface(src / "rest_surface.obj")
    pre = load_featured(src, "preop")
    intra = standardize(cloud, n_points, seed=seed)
    iv = intra.valid_mask
    intra.features[iv] = intraop_features(cloud.subset(intra.source_index[iv]), rest)
    # the counterpart-distance channel of the preop rows depends on the intraop cloud
    pre.features[pre.valid_mask, 3] = point_distance_field(pre.positions[pre.valid_mask], cloud.points)
    entry = _cell_entry(cell_id, base, extra)
    d = out / entry["dir"]
    d.mkdir(parents=True, exist_ok=True)
    entry["files"].update(save_featured(d, "preop", pre))
    entry["files"].update(save_featured(d, "intraop", intra))
    names = ["phi_gt.npy"] + (["landmarks_preop.npy", "landmarks_intraop.npy"] if base.get("landmarks") else [])
    for name in names:
        shutil.copyfile(src / name, d / name)
        entry["files"][name] = sha256_file(d / name)
    return entry


def _finish_benchmark(args, out: Path, manifest: dict, entries: list, protocol: str, extra: dict) -> dict:
    bench = {"name": f"{manifest.get('name', 'dataset')}-{protocol}", "seed": args.seed, "version": __version__,
             "source_manifest_hash": manifest["_hash"], "samples": entries, **extra}
    write_json(out / MANIFEST, bench)
    bench = load_manifest(out)
    update_run(out, manifest_hash=bench["_hash"])
    if args.checkpoint:
        net = _load_net(args.checkpoint)
        pred_dir = out / "predictions"
        pred_dir.mkdir(exist_ok=True)
        for entry in bench["samples"]:
            pre, intra = prepare_inputs(net, sample_dir(bench, entry), None, args.seed, 0.005)
            save_array(pred_dir / f"{entry['id']}.npy", predict_valid(net, pre, intra))
        report_dir = out / "report"
        report_dir.mkdir(exist_ok=True)
        return run_evaluation(bench, pred_dir, protocol, report_dir)
    return {}


def _benchmark_bases(manifest: dict, limit) -> list[dict]:
    bases = manifest["samples"][: limit or None]
    if not bases:
        raise DataError("manifest lists no samples")
    return bases


def cmd_benchmark_noise(args) -> int:
    manifest = load_manifest(args.manifest)
    n_points = int(manifest.get("n_points") or load_featured(sample_dir(manifest, manifest["samples"][0]),
                                                             "preop").n)
    out = Path(args.out)
    start_run(out, "benchmark-noise", {"manifest": str(Path(args.manifest).resolve()), "samples": args.samples,
                                       "checkpoint": args.checkpoint}, args.seed, 1, manifest["_hash"])
    entries = []
    for i, base in enumerate(_benchmark_bases(manifest, args.samples)):
        patch = load_surface(sample_dir(manifest, base) / "intraop_patch.ply")
        for cell in make_noise_benchmark(patch, seed=args.seed + i):
            cid = f"{base['id']}_p{cell['perlin_mm']:g}_s{cell['sigma_mm']:g}"
            entries.append(write_cell(out, manifest, base, cid, cell["cloud"], n_points, args.seed + i,
                                      {"perlin_mm": cell["perlin_mm"], "sigma_mm": cell["sigma_mm"]}))
    report = _finish_benchmark(args, out, manifest, entries, "noise-sweep", {"n_points": n_points})
    print(f"noise benchmark: {len(entries)} cells" + (f", {len(report['rows'])} report rows" if report else ""))
    return EXIT_OK


def cmd_benchmark_visibility(args) -> int:
    manifest = load_manifest(args.manifest)
    n_points = int(manifest.get("n_points") or load_featured(sample_dir(manifest, manifest["samples"][0]),
                                                             "preop").n)
    out = Path(args.out)
    start_run(out, "benchmark-visibility", {"manifest": str(Path(args.manifest).resolve()),
                                            "samples": args.samples, "views": args.views,
                                            "checkpoint": args.checkpoint}, args.seed, 1, manifest["_hash"])
    entries, skipped = [], 0
    clean = NoiseSpec(sparsify=False)
    for i, base in enumerate(_benchmark_bases(manifest, args.samples)):
        surf = load_surface(sample_dir(manifest, base) / "deformed_surface.obj")
        rng = np.random.default_rng([args.seed, i])
        for v in range(args.views):
            try:
                patch = extract_camera_surface(surf, sample_camera(surf, rng))
                cloud = apply_noise(patch, clean, seed=args.seed)
            except (ExtractionError, NoiseError) as exc:
                log.info("sample %s view %d skipped: %s", base["id"], v, exc)
                skipped += 1
                continue
            alpha = float(visibility(patch, surf))
            entries.append(write_cell(out, manifest, base, f"{base['id']}_v{v}", cloud, n_points, args.seed + i,
                                      {"visibility": alpha}))
    if not entries:
        raise DataError("no camera view produced a visible patch")
    report = _finish_benchmark(args, out, manifest, entries, "visibility-sweep",
                               {"n_points": n_points, "skipped_views": skipped})
    print(f"visibility benchmark: {len(entries)} views ({skipped} skipped)"
          + (f", {len(report['rows'])} report rows" if report else ""))
    return EXIT_OK


# ---- gradcheck -----------------------------------------------------------------

def cmd_gradcheck(args) -> int:
    t0 = time.perf_counter()
    worst_ops: dict[str, float] = {}
    net_errors = []
    for seed in range(args.seeds):
        for name, err in op_gradchecks(seed).items():
            worst_ops[name] = max(worst_ops.get(name, 0.0), err)
        net_errors.append(network_gradcheck(seed))
    elapsed = time.perf_counter() - t0
    ok = max(max(worst_ops.values()), max(net_errors)) < args.tol
    for name, err in sorted(worst_ops.items()):
        print(f"{name:20s} {err:.3e}")
    print(f"{'toy network':20s} {max(net_errors):.3e}  ({args.seeds} seeds, {elapsed:.1f} s)")
    if args.out:
        out = Path(args.out)
        start_run(out, "gradcheck", {"seeds": args.seeds, "tol": args.tol}, list(range(args.seeds)))
        write_json(out / "gradcheck.json", {"ops": worst_ops, "network": net_errors, "tol": args.tol,
                                            "passed": ok, "seconds": elapsed})
    print("PASS" if ok else "FAIL")
    return EXIT_OK if ok else EXIT_NUMERIC


# ---- entry point ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="volreg", description="Volume-to-surface registration toolkit.")
    p.add_argument("--version", action="version", version=f"volreg {__version__}")
    p.add_argument("--log-level", default="WARNING")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="synthesize a dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--config", help="YAML with generation options")
    g.add_argument("--count", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--n-points", type=int, dest="n_points")
    g.add_argument("--name")
    g.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override, e.g. scene.stiffness_range=[1e6,1e6] (repeatable)")
    g.add_argument("--threads", type=int, help="worker processes (default $VOLREG_THREADS or 1)")
    g.add_argument("--deterministic", action="store_true", help="force one worker")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train on a manifest")
    t.add_argument("--manifest", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--config", help="YAML with network/train sections")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--epochs", type=int)
    t.add_argument("--max-steps", type=int, dest="max_steps")
    t.add_argument("--batch-size", type=int, dest="batch_size")
    t.add_argument("--seed", type=int)
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("register", help="predict a displacement field")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--preop", help="sample directory, tetrahedral .msh or closed surface mesh")
    r.add_argument("--intraop", help="intraoperative points or partial surface")
    r.add_argument("--manifest", help="register every sample of a manifest instead")
    r.add_argument("--out", required=True)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--spacing", type=float, default=0.005, help="preop resampling resolution (m)")
    r.set_defaults(func=cmd_register)

    e = sub.add_parser("evaluate", help="score predictions against a manifest")
    e.add_argument("--manifest", required=True)
    e.add_argument("--predictions", required=True)
    e.add_argument("--protocol", choices=PROTOCOLS, default="plain")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_evaluate)

    for name, func in (("benchmark-noise", cmd_benchmark_noise), ("benchmark-visibility", cmd_benchmark_visibility)):
        b = sub.add_parser(name, help=f"build the {name.split('-')[1]} benchmark (and score a checkpoint)")
        b.add_argument("--manifest", required=True)
        b.add_argument("--out", required=True)
        b.add_argument("--checkpoint")
        b.add_argument("--samples", type=int, help="use the first N samples")
        b.add_argument("--seed", type=int, default=0)
        if name == "benchmark-visibility":
            b.add_argument("--views", type=int, default=5)
        b.set_defaults(func=func)

    c = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    c.add_argument("--seeds", type=int, default=20)
    c.add_argument("--tol", type=float, default=1e-4)
    c.add_argument("--out")
    c.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, ModelInputError, MetricError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FloatingPointError, TrainingError, GenerationError, SolverError, InversionError,
            np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
