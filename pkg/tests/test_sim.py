import numpy as np
import pytest

from volreg.geometry import TriSurface
from volreg.geometry.mesh import box_surface, icosphere, inside_mask, is_watertight, signed_volume, surface_area
from volreg.sim import (BoundaryConditions, InversionError, Material, MeshingError, Scene, SceneConfig, SimConfig,
                        Springs, TetMesh, Trajectory, build_scene, export_training_sample, generate_organ_shape,
                        neohookean_energy, simulate, spring_forces, static_solve, tetrahedralize)
from volreg.sim.fem import stiffness_matrix
from volreg.sim.shapes import is_concave
from volreg.sim.tetmesh import boundary_faces


def two_tet(perturb=0.0, seed=0):
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [1, 1, 1]], float) * 0.05
    v = v + np.random.default_rng(seed).normal(size=v.shape) * perturb
    return TetMesh(v, [[0, 1, 2, 3], [1, 2, 3, 4]])


def energy_oracle(mesh, u, mu, lam):
    total = 0.0
    for t in mesh.tets:
        X, x = mesh.vertices[t], mesh.vertices[t] + u[t]
        Dm = np.column_stack([X[1] - X[0], X[2] - X[0], X[3] - X[0]])
        Ds = np.column_stack([x[1] - x[0], x[2] - x[0], x[3] - x[0]])
        F = Ds @ np.linalg.inv(Dm)
        J = np.linalg.det(F)
        vol = np.linalg.det(Dm) / 6
        total += vol * (mu / 2 * (np.trace(F.T @ F) - 3) - mu * np.log(J) + lam / 2 * np.log(J) ** 2)
    return total


# ---- material --------------------------------------------------------------

def test_lame_parameters():
    m = Material(3000.0, 0.45)
    assert m.mu == pytest.approx(3000 / 2.9, abs=1e-9)
    assert m.mu == pytest.approx(1034.48, abs=5e-3)
    assert m.lam == pytest.approx(10000.0, rel=1e-12)
    c = Material(3000.0, 0.45, lame_convention="classical")
    assert c.lam == pytest.approx(3000 * 0.45 / (1.45 * 0.1))


def test_material_sampling_ranges():
    rng = np.random.default_rng(0)
    for _ in range(50):
        m = Material.sample(rng)
        assert 3000 <= m.youngs_modulus <= 30000
        assert 0.45 <= m.poisson_ratio <= 0.48
        assert 1050 <= m.density <= 1090
    with pytest.raises(ValueError):
        Material(1000, 0.5)


# ---- tet meshes ------------------------------------------------------------

def test_unit_cube_volume():
    m = tetrahedralize(box_surface((0, 0, 0), (1, 1, 1), 2), 0.25)
    assert abs(m.total_volume() - 1.0) <= 0.1
    assert m.rest_volumes.min() > 0


def test_tetmesh_invariants_sphere():
    s = icosphere(3, radius=0.1)
    m = tetrahedralize(s, 0.03)
    assert m.rest_volumes.min() > 0
    bverts = m.boundary_vertices()
    interior = np.setdiff1d(np.arange(m.n_vertices), bverts)
    assert len(interior) > 0
    assert inside_mask(m.vertices[interior], s).all()
    # boundary faces belong to exactly one tet
    faces = np.sort(m.tets[:, [[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]]].reshape(-1, 3), axis=1)
    _, counts = np.unique(faces, axis=0, return_counts=True)
    assert counts.max() == 2
    assert len(m.boundary_tris) == np.sum(counts == 1)
    surf, _ = m.compact_boundary()
    assert is_watertight(surf)
    assert signed_volume(surf) == pytest.approx(m.total_volume(), rel=1e-9)
    assert abs(m.total_volume() - 4 / 3 * np.pi * 0.1 ** 3) < 0.1 * 4 / 3 * np.pi * 0.1 ** 3


def test_tetrahedralize_errors():
    open_patch = TriSurface([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])
    with pytest.raises(MeshingError):
        tetrahedralize(open_patch, 0.1)
    thin = box_surface((0, 0, 0), (1, 1, 0.01), 1)
    with pytest.raises(MeshingError):
        tetrahedralize(thin, 0.5)
    with pytest.raises(MeshingError):
        TetMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], [[0, 2, 1, 3]])


def test_boundary_faces_single_tet():
    t = np.array([[0, 1, 2, 3]])
    assert len(boundary_faces(t)) == 4


# ---- neo-Hookean -----------------------------------------------------------

def test_rest_state_zero():
    m = two_tet()
    e, f = neohookean_energy(m, np.zeros((5, 3)), Material(3000, 0.45))
    assert e == 0.0
    assert np.abs(f).max() < 1e-12


@pytest.mark.parametrize("seed", range(5))
def test_energy_matches_oracle_and_forces_fd(seed):
    m = two_tet(0.005, seed)
    mat = Material(10000.0, 0.46)
    u = np.random.default_rng(seed + 10).normal(size=(5, 3)) * 0.004
    e, f = neohookean_energy(m, u, mat)
    assert e == pytest.approx(energy_oracle(m, u, mat.mu, mat.lam), rel=1e-12)
    h = 1e-6
    g = np.zeros_like(u)
    for i in range(5):
        for j in range(3):
            up, um = u.copy(), u.copy()
            up[i, j] += h
            um[i, j] -= h
            g[i, j] = (energy_oracle(m, up, mat.mu, mat.lam) - energy_oracle(m, um, mat.mu, mat.lam)) / (2 * h)
    assert np.linalg.norm(f + g) / np.linalg.norm(g) < 1e-3


def test_stiffness_matches_force_derivative():
    m = two_tet(0.003, 1)
    mat = Material(5000.0, 0.47)
    u = np.random.default_rng(2).normal(size=(5, 3)) * 0.003
    K = stiffness_matrix(m, u, mat, project=False).toarray()
    h = 1e-7
    Kn = np.zeros((15, 15))
    for i in range(15):
        up, um = u.ravel().copy(), u.ravel().copy()
        up[i] += h
        um[i] -= h
        Kn[:, i] = -(neohookean_energy(m, up.reshape(5, 3), mat)[1] - neohookean_energy(m, um.reshape(5, 3), mat)[1]).ravel() / (2 * h)
    assert np.abs(K - Kn).max() / np.abs(Kn).max() < 1e-5
    Kp = stiffness_matrix(m, u, mat).toarray()
    assert np.linalg.eigvalsh(Kp).min() > -1e-8 * np.abs(Kp).max()


def test_translation_invariance_and_zero_net_force():
    m = tetrahedralize(icosphere(2, 0.05), 0.03)
    mat = Material(8000.0, 0.45)
    u = np.random.default_rng(0).normal(size=(m.n_vertices, 3)) * 1e-3
    e1, f1 = neohookean_energy(m, u, mat)
    e2, f2 = neohookean_energy(m, u + np.array([0.3, -0.2, 0.05]), mat)
    assert abs(e1 - e2) <= 1e-10 * max(abs(e1), 1e-300)
    assert np.abs(f1 - f2).max() <= 1e-10 * np.abs(f1).max()
    assert np.abs(f1.sum(axis=0)).max() <= 1e-10 * np.abs(f1).max()


def test_rotation_has_zero_energy():
    m = two_tet()
    th = 0.7
    R = np.array([[np.cos(th), -np.sin(th), 0], [np.sin(th), np.cos(th), 0], [0, 0, 1]])
    u = m.vertices @ R.T - m.vertices
    e, f = neohookean_energy(m, u, Material(3000, 0.45))
    assert abs(e) < 1e-12 and np.abs(f).max() < 1e-9


def test_inversion_raises():
    m = two_tet()
    u = np.zeros((5, 3))
    u[3] = [0, 0, -0.1]  # push apex through the base
    with pytest.raises(InversionError):
        neohookean_energy(m, u, Material(3000, 0.45))


# ---- springs ---------------------------------------------------------------

def test_spring_initial_pull_exact():
    k, l, c0 = 100.0, 0.1, 0.9
    springs = Springs(np.array([0]), np.array([[0.0, 0.0, l]]), np.array([k]), np.array([c0 * l]), np.array([0]))
    f = spring_forces(np.zeros((1, 3)), springs)
    assert abs(np.linalg.norm(f[0]) - k * abs(l - c0 * l)) <= 1e-12
    assert f[0, 2] > 0  # stretched spring pulls toward the anchor


# ---- organ shapes and scenes -----------------------------------------------

@pytest.mark.parametrize("seed", [0, 1, 2])
def test_organ_shape_contract(seed):
    s = generate_organ_shape(seed)
    ext = np.ptp(s.vertices, axis=0)
    assert np.all((ext >= 0.1 - 1e-12) & (ext <= 0.3 + 1e-12))
    assert is_watertight(s)
    assert is_concave(s)
    assert signed_volume(s) > 0


def test_organ_shape_deterministic():
    a, b = generate_organ_shape(7), generate_organ_shape(7)
    assert np.array_equal(a.vertices, b.vertices) and np.array_equal(a.triangles, b.triangles)


@pytest.fixture(scope="module")
def scene5():
    return build_scene(generate_organ_shape(5), 5)


def test_fixed_patch_fraction(scene5):
    frac = scene5.provenance["fixed_area_fraction"]
    assert 0.02 <= frac <= 0.05
    surf, used = scene5.organ.compact_boundary()
    fixed_local = np.searchsorted(used, scene5.bcs.fixed)
    tri_fixed = np.isin(surf.triangles, fixed_local).all(axis=1)
    assert surface_area(TriSurface(surf.vertices, surf.triangles[tri_fixed])) / surface_area(surf) >= 0.02


def test_ligament_springs_share_parameters(scene5):
    sp = scene5.bcs.springs
    assert len(sp) > 0
    for lig in np.unique(sp.ligament):
        sel = sp.ligament == lig
        assert len(np.unique(sp.stiffness[sel])) == 1
        length = np.linalg.norm(scene5.organ.vertices[sp.vertices[sel]] - sp.anchors[sel], axis=1)
        c0 = sp.rest_length[sel] / length
        assert np.allclose(c0, c0[0], rtol=1e-12)
        assert 100 <= sp.stiffness[sel][0] <= 300 and 0.9 <= c0[0] <= 1.1
        if c0[0] < 1:
            assert np.all(sp.rest_length[sel] < length)


def test_scene_regenerates_from_seed(scene5):
    again = build_scene(generate_organ_shape(5), scene5.provenance["seed"])
    assert np.array_equal(again.bcs.springs.anchors, scene5.bcs.springs.anchors)
    assert np.array_equal(again.bcs.fixed, scene5.bcs.fixed)
    assert again.provenance == scene5.provenance
    assert abs(np.linalg.norm(scene5.bcs.gravity) - 9.81) < 1e-12


def test_scene_stiff_override():
    s = build_scene(generate_organ_shape(5), 5, SceneConfig(stiffness_range=(1e7, 1e7)))
    assert np.all(s.bcs.springs.stiffness == 1e7)


# ---- simulation ------------------------------------------------------------

def small_scene(gravity=(0, 0, 0), fixed=None):
    m = tetrahedralize(icosphere(2, 0.05), 0.025)
    fx = np.zeros(0, np.int64) if fixed is None else fixed(m)
    return Scene(m, Material(5000, 0.45, 1000), BoundaryConditions(np.array(gravity, float), fx))


def test_no_forces_stays_at_rest():
    tr = simulate(small_scene(), SimConfig(max_steps=10))
    assert all(np.all(u == 0) for u in tr.displacements)
    assert tr.converged


def test_energy_non_increasing_with_damping():
    sc = small_scene()
    u0 = np.zeros((sc.organ.n_vertices, 3))
    u0[:, 0] = 0.15 * sc.organ.vertices[:, 0]
    tr = simulate(sc, SimConfig(max_steps=40, equilibrium_velocity=0.0), u0=u0, track_energy=True)
    e = np.array(tr.energy)
    assert np.all(e[1:] <= e[:-1] * (1 + 1e-6) + 1e-15)
    assert e[-1] < 0.01 * e[0]


def test_simulation_deterministic_and_fixed_held():
    fixed = lambda m: np.flatnonzero(m.vertices[:, 2] > 0.03)  # noqa: E731
    a = simulate(small_scene((0, 0, -9.81), fixed), SimConfig(max_steps=15))
    b = simulate(small_scene((0, 0, -9.81), fixed), SimConfig(max_steps=15))
    assert all(np.array_equal(x, y) for x, y in zip(a.displacements, b.displacements))
    sc = small_scene((0, 0, -9.81), fixed)
    assert np.all(a.displacements[-1][sc.bcs.fixed] == 0)
    assert a.displacements[-1][:, 2].mean() < 0


def test_export_picks_most_deformed_step():
    sc = small_scene()
    n = sc.organ.n_vertices
    one = Trajectory([np.zeros((n, 3))], [0.0], [0.0])
    rest, deformed, phi, step = export_training_sample(sc, one)
    assert step == 0 and np.all(phi == 0) and np.array_equal(rest, deformed)
    grow = Trajectory([np.full((n, 3), 0.001 * i) for i in range(5)], list(range(5)), [0.0] * 5)
    assert export_training_sample(sc, grow)[3] == 4
    peak = Trajectory([np.full((n, 3), x) for x in (0.0, 0.003, 0.001)], [0, 1, 2], [0.0] * 3)
    _, deformed, phi, step = export_training_sample(sc, peak)
    assert step == 1 and np.allclose(deformed - sc.organ.vertices, phi)
    with pytest.raises(ValueError):
        export_training_sample(sc, Trajectory())


def test_cantilever_against_refined_reference():
    L, W = 0.06, 0.02
    box = box_surface((0, 0, 0), (L, W, W), 4)

    def make(h):
        m = tetrahedralize(box, h)
        return Scene(m, Material(1e5, 0.3, 1000.0), BoundaryConditions(np.array([0, 0, -9.81]),
                                                                         np.flatnonzero(m.vertices[:, 0] < 1e-9)))

    def tip(sc, u):
        return u[sc.organ.vertices[:, 0] > L - 1e-9, 2].mean()

    coarse = make(0.01)
    tr = simulate(coarse, SimConfig())
    assert tr.converged
    fine = make(0.0025)
    ref = tip(fine, static_solve(fine))
    got = tip(coarse, tr.displacements[-1])
    assert abs(got - ref) <= 0.15 * abs(ref)


@pytest.mark.parametrize("seed", range(5))
def test_projected_tangent_matches_dense_eigh(seed):
    from volreg.sim.fem import piola_tangent, piola_tangent_reference
    rng = np.random.default_rng(seed)
    # includes strongly compressed and sheared states where the raw tangent is indefinite
    F = np.eye(3) + rng.normal(size=(200, 3, 3)) * 0.4
    F = F[np.linalg.det(F) > 0.05]
    mat = Material(5000.0, 0.45)
    fast = piola_tangent(F, mat, project=True)
    ref = piola_tangent_reference(F, mat)
    scale = np.abs(ref).max(axis=(1, 2), keepdims=True)
    assert np.all(np.abs(fast - ref) <= 1e-10 * scale)
    assert np.linalg.eigvalsh(fast).min() >= -1e-9 * scale.max()
    assert np.allclose(piola_tangent(F, mat, project=False), piola_tangent(F, mat, project=False).transpose(0, 2, 1))


@pytest.mark.parametrize("seed", range(8))
def test_generated_meshes_have_manifold_boundary(seed):
    from volreg.sim import generate_organ_shape
    mesh = tetrahedralize(generate_organ_shape(seed), 0.02)
    surf, _ = mesh.compact_boundary()
    assert is_watertight(surf)
