import csv
import json
import shutil
from pathlib import Path

import numpy as np
import pytest
import yaml
from hypothesis import given, settings
from hypothesis import strategies as st

from volreg import __version__
from volreg.cli import main
from volreg.geometry import is_watertight
from volreg.geometry.mesh import icosphere
from volreg.io import (DataError, json_dumps, load_array, load_points, load_surface, load_tetmesh, save_array,
                       save_surface, save_tetmesh, write_json)
from volreg.network import NetworkConfig, TrainConfig, Trainer
from volreg.pipeline import (GenerateConfig, build_sample, check_sample_dir, default_threads, interpolate_nodal,
                             load_manifest, locate_in_tets, reencode)
from volreg.sim import generate_organ_shape, tetrahedralize

SMALL = {"n_points": 200, "spacing": 0.008, "shape": {"size_range": [0.1, 0.14]}}

TOY_YAML = {
    "network": {"n_points": 200, "level_points": [64, 16], "level_widths": [16, 24], "full_width": 16, "k": 8,
                "heads": 2, "embed": 6},
    "train": {"epochs": 1000, "batch_size": 2, "lr_max": 3e-3, "lr_min": 1e-4, "seed": 0},
}


# ---- files -----------------------------------------------------------------

def test_array_roundtrip_forces_little_endian_f8(tmp_path):
    a = np.random.default_rng(0).normal(size=(4, 3))
    save_array(tmp_path / "a.npy", a)
    assert np.array_equal(load_array(tmp_path / "a.npy"), a)
    raw = (tmp_path / "a.npy").read_bytes()
    assert raw[:6] == b"\x93NUMPY" and b"'<f8'" in raw[:128] and b"(4, 3)" in raw[:128]
    save_array(tmp_path / "b.npy", np.array([True, False]))
    assert load_array(tmp_path / "b.npy").tolist() == [1.0, 0.0]
    np.save(tmp_path / "c.npy", a.astype(">f8"))
    with pytest.raises(DataError):
        load_array(tmp_path / "c.npy")


def test_json_is_canonical(tmp_path):
    a = write_json(tmp_path / "a.json", {"b": 1, "a": [np.float64(0.5), (1, 2)]})
    b = write_json(tmp_path / "b.json", {"a": [0.5, [1, 2]], "b": np.int64(1)})
    assert a == b and (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    assert json.loads(json_dumps({"x": 0.1}))["x"] == 0.1


@pytest.mark.parametrize("suffix", [".obj", ".ply"])
def test_surface_roundtrip(tmp_path, suffix):
    s = icosphere(2, radius=0.1)
    save_surface(tmp_path / f"s{suffix}", s)
    back = load_surface(tmp_path / f"s{suffix}")
    assert np.array_equal(back.triangles, s.triangles)
    assert np.allclose(back.vertices, s.vertices, rtol=0, atol=1e-12)
    pts = load_points(tmp_path / f"s{suffix}")
    assert pts.shape == (s.n_vertices, 3)


def test_tetmesh_roundtrip_and_points(tmp_path):
    mesh = tetrahedralize(icosphere(2, radius=0.05), 0.02)
    save_tetmesh(tmp_path / "m.msh", mesh.vertices, mesh.tets)
    assert (tmp_path / "m.msh").read_text().startswith("$MeshFormat\n2.2")
    v, t = load_tetmesh(tmp_path / "m.msh")
    assert np.array_equal(t, mesh.tets) and np.allclose(v, mesh.vertices, rtol=0, atol=1e-15)
    np.savetxt(tmp_path / "p.xyz", v[:5])
    assert np.array_equal(load_points(tmp_path / "p.xyz"), v[:5])
    (tmp_path / "bad.xyz").write_text("1 2\n")
    with pytest.raises(DataError):
        load_points(tmp_path / "bad.xyz")


# ---- tetrahedral interpolation -----------------------------------------------

@pytest.fixture(scope="module")
def blob_mesh():
    return tetrahedralize(generate_organ_shape(4), 0.02)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_interpolation_reproduces_affine_fields(blob_mesh, seed):
    """Linear elements interpolate affine fields exactly: independent closed-form oracle."""
    rng = np.random.default_rng(seed)
    A, b = rng.normal(size=(3, 3)), rng.normal(size=3)
    values = blob_mesh.vertices @ A.T + b
    x = blob_mesh.vertices[blob_mesh.tets]
    w = rng.dirichlet(np.ones(4), size=200)
    tet = rng.integers(0, blob_mesh.n_tets, 200)
    pts = np.einsum("nc,ncd->nd", w, x[tet])
    assert np.allclose(interpolate_nodal(blob_mesh, values, pts), pts @ A.T + b, rtol=0, atol=1e-12)


def test_locate_returns_containing_tet(blob_mesh):
    rng = np.random.default_rng(1)
    x = blob_mesh.vertices[blob_mesh.tets]
    w = rng.dirichlet(np.ones(4), size=300)
    tet = rng.integers(0, blob_mesh.n_tets, 300)
    pts = np.einsum("nc,ncd->nd", w, x[tet])
    found, bw = locate_in_tets(blob_mesh, pts)
    assert np.allclose(bw.sum(1), 1.0) and (bw >= 0).all()
    assert np.allclose(np.einsum("nc,ncd->nd", bw, x[found]), pts, rtol=0, atol=1e-14)
    # off-mesh points snap to a nearby element with clamped weights
    far, fw = locate_in_tets(blob_mesh, [[10.0, 10.0, 10.0]])
    assert (fw >= 0).all() and np.isclose(fw.sum(), 1.0)


@pytest.mark.parametrize("seed", range(12))
def test_lattice_boundary_is_watertight(seed):
    mesh = tetrahedralize(generate_organ_shape(seed), 0.02)
    surf, _ = mesh.compact_boundary()
    assert is_watertight(surf)
    assert mesh.rest_volumes.min() > 0


# ---- configuration -------------------------------------------------------------

def test_generate_config_validation(monkeypatch):
    with pytest.raises(ValueError):
        GenerateConfig(scene={"nonsense": 1})
    with pytest.raises(ValueError):
        GenerateConfig(count=-1)
    cfg = GenerateConfig(scene={"stiffness_range": [1.0, 2.0]})
    assert cfg.scene_config().stiffness_range == (1.0, 2.0)
    assert "threads" not in cfg.to_dict()
    monkeypatch.setenv("VOLREG_THREADS", "3")
    assert default_threads() == 3
    monkeypatch.setenv("VOLREG_THREADS", "x")
    with pytest.raises(ValueError):
        default_threads()


# ---- generated dataset (shared) ------------------------------------------------

@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    cfg = root / "gen.yaml"
    cfg.write_text(yaml.safe_dump({"generate": SMALL}))
    code = main(["generate", "--out", str(root / "ds"), "--config", str(cfg), "--count", "2", "--seed", "5"])
    assert code == 0
    return root / "ds"


@pytest.fixture(scope="module")
def toy_yaml(tmp_path_factory):
    p = tmp_path_factory.mktemp("cfg") / "toy.yaml"
    p.write_text(yaml.safe_dump(TOY_YAML))
    return p


def test_generated_samples_are_valid(dataset):
    m = load_manifest(dataset, verify=True)
    assert len(m["samples"]) == 2 and m["version"] == __version__
    run = json.loads((dataset / "run.json").read_text())
    assert run["manifest_hash"] == m["_hash"] and run["seed"] == 5 and run["version"] == __version__
    assert run["config"]["n_points"] == 200
    for s in m["samples"]:
        d = dataset / s["dir"]
        assert check_sample_dir(d) == []
        phi = load_array(d / "phi_gt.npy")
        valid = load_array(d / "preop_valid_mask.npy").astype(bool)
        assert phi.shape == (200, 3) and np.all(phi[~valid] == 0)
        assert load_array(d / "landmarks_preop.npy").shape == (8, 3)
        assert s["prd"] == pytest.approx(np.linalg.norm(phi[valid], axis=1).mean(), rel=1e-12)
        info = json.loads((d / "info.json").read_text())
        assert info["extraction"]["mode"] in ("camera", "random") and "youngs" in json.dumps(info["scene"])


def test_generate_is_byte_identical_across_worker_counts(dataset, tmp_path):
    cfg = tmp_path / "gen.yaml"
    cfg.write_text(yaml.safe_dump({"generate": SMALL}))
    assert main(["generate", "--out", str(tmp_path / "ds"), "--config", str(cfg), "--count", "2", "--seed", "5",
                 "--threads", "2"]) == 0
    assert (tmp_path / "ds" / "manifest.json").read_bytes() == (dataset / "manifest.json").read_bytes()
    for f in sorted((dataset / "samples" / "00000").iterdir()):
        assert f.read_bytes() == (tmp_path / "ds" / "samples" / "00000" / f.name).read_bytes(), f.name


def test_build_sample_is_deterministic():
    cfg = GenerateConfig(seed=11, **SMALL)
    a, b = build_sample(cfg, 0, 0), build_sample(cfg, 0, 0)
    for key in ("phi_gt", "landmarks_preop", "landmarks_intraop"):
        assert np.array_equal(a[key], b[key])
    assert np.array_equal(a["intraop"].positions, b["intraop"].positions)
    assert json_dumps(a["info"]) == json_dumps(b["info"])


def test_forced_inversion_is_logged(tmp_path):
    out = tmp_path / "bad"
    code = main(["generate", "--out", str(out), "--count", "1", "--seed", "2", "--n-points", "100",
                 "--set", "max_attempts=2", "--set", "scene.stiffness_range=[1e9,1e9]",
                 "--set", "scene.ligament_probs=[1.0,1.0]", "--set", "shape.size_range=[0.1,0.12]"])
    log = (out / "invalid.jsonl").read_text().splitlines()
    assert len(log) == 2
    assert {json.loads(r)["error"] for r in log} <= {"InversionError", "SolverError"}
    assert code == 4


def test_generate_config_errors(tmp_path, capsys):
    assert main(["generate", "--out", str(tmp_path / "x"), "--set", "scene.bogus=1"]) == 2
    bad = tmp_path / "bad.yaml"
    bad.write_text("[1, 2")
    assert main(["generate", "--out", str(tmp_path / "x"), "--config", str(bad)]) == 2
    with pytest.raises(SystemExit) as exc:
        main(["generate"])
    assert exc.value.code == 2


# ---- train ---------------------------------------------------------------------

def _log_steps(path):
    with open(path) as fh:
        return [int(r["step"]) for r in csv.DictReader(fh)]


def test_train_and_resume(dataset, toy_yaml, tmp_path):
    out = tmp_path / "run"
    assert main(["train", "--manifest", str(dataset), "--out", str(out), "--config", str(toy_yaml),
                 "--max-steps", "3"]) == 0
    assert (out / "last.vrck").exists() and (out / "run.json").exists()
    run = json.loads((out / "run.json").read_text())
    assert run["config"]["network"]["n_points"] == 200 and run["manifest_hash"]
    assert _log_steps(out / "train_log.csv") == [0, 1, 2]
    assert main(["train", "--manifest", str(dataset), "--out", str(out), "--config", str(toy_yaml),
                 "--max-steps", "5", "--resume", str(out / "last.vrck")]) == 0
    steps = _log_steps(out / "train_log.csv")
    assert steps == [0, 1, 2, 3, 4]


def test_train_missing_ground_truth_names_sample(dataset, toy_yaml, tmp_path, capsys):
    copy = tmp_path / "ds"
    shutil.copytree(dataset, copy)
    m = json.loads((copy / "manifest.json").read_text())
    victim = m["samples"][1]["id"]
    del m["samples"][1]["phi_gt"]
    (copy / "manifest.json").write_text(json.dumps(m))
    assert main(["train", "--manifest", str(copy), "--out", str(tmp_path / "r"), "--config", str(toy_yaml)]) == 3
    assert victim in capsys.readouterr().err


def test_train_shape_mismatch_is_config_error(dataset, tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(yaml.safe_dump({"network": {**TOY_YAML["network"], "n_points": 300}}))
    assert main(["train", "--manifest", str(dataset), "--out", str(tmp_path / "r"), "--config", str(cfg)]) == 2


# ---- register / evaluate ----------------------------------------------------------

@pytest.fixture(scope="module")
def zero_head_checkpoint(dataset, tmp_path_factory):
    """Untrained toy network whose displacement head is exactly zero."""
    out = tmp_path_factory.mktemp("ckpt")
    net_cfg = NetworkConfig(**{**TOY_YAML["network"], "head_gain": 0.0})
    from volreg.cli import manifest_training_samples
    samples = manifest_training_samples(load_manifest(dataset), net_cfg)
    trainer = Trainer(samples, net_cfg, TrainConfig(epochs=1))
    trainer.save(out / "zero.vrck")
    return out / "zero.vrck"


def test_register_zero_head_self(dataset, zero_head_checkpoint, tmp_path):
    sdir = dataset / "samples" / "00000"
    outs = []
    for k in range(2):
        out = tmp_path / f"r{k}"
        assert main(["register", "--checkpoint", str(zero_head_checkpoint), "--preop", str(sdir),
                     "--out", str(out)]) == 0
        outs.append(out)
    phi = load_array(outs[0] / "displacement.npy")
    n_valid = int(load_array(sdir / "preop_valid_mask.npy").sum())
    assert phi.shape == (n_valid, 3) and np.all(phi == 0.0)
    for name in ("displacement.npy", "deformed.npy", "deformed.xyz"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


def test_register_raw_geometry(dataset, zero_head_checkpoint, tmp_path):
    sdir = dataset / "samples" / "00001"
    out = tmp_path / "raw"
    assert main(["register", "--checkpoint", str(zero_head_checkpoint), "--preop", str(sdir / "rest.msh"),
                 "--intraop", str(sdir / "intraop_patch.ply"), "--out", str(out), "--spacing", "0.01"]) == 0
    pts = load_array(out / "preop_points.npy")
    assert load_array(out / "displacement.npy").shape == pts.shape and len(pts) <= 200


def test_register_incompatible_checkpoint(dataset, tmp_path):
    junk = tmp_path / "junk.vrck"
    junk.write_bytes(b"not a checkpoint")
    assert main(["register", "--checkpoint", str(junk), "--preop", str(dataset / "samples" / "00000"),
                 "--out", str(tmp_path / "o")]) == 3


def _write_predictions(dataset, pred_dir, which):
    m = load_manifest(dataset)
    pred_dir.mkdir()
    for s in m["samples"]:
        d = dataset / s["dir"]
        valid = load_array(d / "preop_valid_mask.npy").astype(bool)
        gt = load_array(d / "phi_gt.npy")[valid]
        save_array(pred_dir / f"{s['id']}.npy", gt if which == "gt" else np.zeros_like(gt))
    return m


def test_evaluate_zero_and_truth(dataset, tmp_path):
    m = _write_predictions(dataset, tmp_path / "zero", "zero")
    assert main(["evaluate", "--manifest", str(dataset), "--predictions", str(tmp_path / "zero"),
                 "--out", str(tmp_path / "ez")]) == 0
    with open(tmp_path / "ez" / "metrics.csv") as fh:
        rows = list(csv.DictReader(fh))
    for r, s in zip(rows, m["samples"]):
        assert float(r["med"]) == pytest.approx(s["prd"], rel=1e-12, abs=0)
    _write_predictions(dataset, tmp_path / "gt", "gt")
    assert main(["evaluate", "--manifest", str(dataset), "--predictions", str(tmp_path / "gt"),
                 "--out", str(tmp_path / "eg")]) == 0
    with open(tmp_path / "eg" / "metrics.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert all(float(r["med"]) == 0.0 and r["failed"] == "false" for r in rows)
    # landmarks are read through IDW from the sparse points, so only the
    # interpolation residual remains
    with open(tmp_path / "ez" / "metrics.csv") as fh:
        zero_tre = [float(r["tre"]) for r in csv.DictReader(fh)]
    assert all(float(r["tre"]) < 0.15 * z for r, z in zip(rows, zero_tre))
    rep = json.loads((tmp_path / "eg" / "report.json").read_text())
    assert rep["manifest_hash"] == m["_hash"]


def test_evaluate_missing_prediction(dataset, tmp_path, capsys):
    (tmp_path / "none").mkdir()
    assert main(["evaluate", "--manifest", str(dataset), "--predictions", str(tmp_path / "none"),
                 "--out", str(tmp_path / "e")]) == 3
    assert "00000" in capsys.readouterr().err


def test_noise_benchmark_emits_grid(dataset, zero_head_checkpoint, tmp_path):
    out = tmp_path / "noise"
    assert main(["benchmark-noise", "--manifest", str(dataset), "--out", str(out), "--samples", "1",
                 "--checkpoint", str(zero_head_checkpoint)]) == 0
    with open(out / "report" / "noise_sweep.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 18
    assert {(float(r["perlin_mm"]), float(r["sigma_mm"])) for r in rows} == {
        (a, s) for a in (0, 3, 6, 9, 12, 15) for s in (0, 2.5, 5)}
    # a zero field scores exactly the sample's PRD in every cell
    prd = load_manifest(dataset)["samples"][0]["prd"] * 1e3
    assert all(float(r["med_mm_mean"]) == pytest.approx(prd, rel=1e-12) for r in rows)
    # evaluate reproduces the same table from the benchmark manifest
    assert main(["evaluate", "--manifest", str(out), "--predictions", str(out / "predictions"),
                 "--protocol", "noise-sweep", "--out", str(tmp_path / "again")]) == 0
    assert (tmp_path / "again" / "noise_sweep.csv").read_bytes() == (out / "report" / "noise_sweep.csv").read_bytes()


def test_visibility_benchmark(dataset, zero_head_checkpoint, tmp_path):
    out = tmp_path / "vis"
    assert main(["benchmark-visibility", "--manifest", str(dataset), "--out", str(out), "--views", "3",
                 "--checkpoint", str(zero_head_checkpoint)]) == 0
    bench = load_manifest(out)
    assert bench["samples"] and all(0.0 < s["visibility"] <= 1.0 for s in bench["samples"])
    rep = json.loads((out / "report" / "report.json").read_text())
    assert sum(r["count"] for r in rep["rows"]) <= len(bench["samples"])


def test_reencode_matches_fresh_encoding(dataset):
    from volreg.geometry import positional_encoding
    from volreg.io import load_featured
    pre = load_featured(dataset / "samples" / "00000", "preop")
    again = reencode(pre, (0.5, 2.0, 4.0, 8.0, 16.0, 32.0))
    assert np.array_equal(again.pos_encoding, pre.pos_encoding)
    small = reencode(pre, (1.0,))
    v = pre.valid_mask
    assert np.array_equal(small.pos_encoding[v], positional_encoding(pre.positions[v], (1.0,)))
    assert np.all(small.pos_encoding[~v] == 0)


def test_gradcheck_command(tmp_path, capsys):
    assert main(["gradcheck", "--seeds", "1", "--out", str(tmp_path / "g")]) == 0
    out = capsys.readouterr().out
    assert "PASS" in out and "additive_attention" in out
    rep = json.loads((tmp_path / "g" / "gradcheck.json").read_text())
    assert rep["passed"] and len(rep["network"]) == 1
    assert Path(tmp_path / "g" / "run.json").exists()


def test_yaml_reads_exponent_floats():
    from volreg.io import yaml_load
    assert yaml_load("a: [1e9, -3e-2, 2, .5, 1.0e+3, x]") == {"a": [1e9, -0.03, 2, 0.5, 1000.0, "x"]}


def test_surface_files_are_byte_stable(tmp_path):
    s = icosphere(1)
    for ext in ("obj", "ply"):
        save_surface(tmp_path / f"a.{ext}", s)
        save_surface(tmp_path / f"b.{ext}", s)
        assert (tmp_path / f"a.{ext}").read_bytes() == (tmp_path / f"b.{ext}").read_bytes()
        assert b"Created by" not in (tmp_path / f"a.{ext}").read_bytes()
