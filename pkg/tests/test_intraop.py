import numpy as np
import pytest

from volreg.geometry import TriSurface
from volreg.geometry.mesh import (closest_points_on_mesh, face_normals, icosphere, surface_area)
from volreg.intraop import (BENCHMARK_PERLIN_MM, BENCHMARK_SIGMA_MM, CameraSpec, ExtractionError, NoiseError,
                            NoiseSpec, Perlin3D, RandomExtractionSpec, apply_noise, extract_camera_surface,
                            extract_random_surface, make_noise_benchmark, midpoint_subdivide, perlin, sample_camera,
                            subdivide_until)
from volreg.intraop.extract import vertex_scores


def grid_patch(n=10, size=0.1, z=0.0):
    g = np.linspace(0, size, n + 1)
    x, y = np.meshgrid(g, g, indexing="ij")
    v = np.c_[x.ravel(), y.ravel(), np.full(x.size, z)]
    idx = np.arange(v.shape[0]).reshape(n + 1, n + 1)
    a, b, c, d = idx[:-1, :-1].ravel(), idx[1:, :-1].ravel(), idx[1:, 1:].ravel(), idx[:-1, 1:].ravel()
    return TriSurface(v, np.r_[np.c_[a, b, c], np.c_[a, c, d]])


# ---- perlin ----------------------------------------------------------------

def test_perlin_bounded_and_deterministic():
    p = np.random.default_rng(0).random((50000, 3)) * 100
    a, b = Perlin3D(3)(p), Perlin3D(3)(p)
    assert np.all(np.abs(a) <= 1.0)
    assert np.array_equal(a, b)
    assert a.std() > 0.1


def test_perlin_zero_on_lattice():
    g = np.random.default_rng(1).integers(-20, 20, (100, 3)).astype(float)
    assert np.allclose(Perlin3D(0)(g), 0.0)


def test_perlin_continuity_at_default_frequencies():
    rng = np.random.default_rng(2)
    spec = NoiseSpec.sample(rng, amplitude_range=(0.015, 0.015))
    p = rng.random((2000, 3)) * 0.2
    q = p + rng.normal(size=p.shape) * 1e-6 / np.sqrt(3) * 0.5
    for i in range(3):
        a = spec.perlin_amplitude * perlin(p, spec.perlin_frequency[i], spec.perlin_phase[i], seed=i)
        b = spec.perlin_amplitude * perlin(q, spec.perlin_frequency[i], spec.perlin_phase[i], seed=i)
        assert np.max(np.abs(a - b)) < 1e-4


# ---- subdivision -----------------------------------------------------------

def test_midpoint_subdivide_preserves_area_and_closedness():
    s = icosphere(1)
    t = midpoint_subdivide(s)
    assert t.n_triangles == 4 * s.n_triangles
    assert surface_area(t) == pytest.approx(surface_area(s), rel=1e-12)
    assert np.allclose(face_normals(t)[: s.n_triangles], face_normals(s))


def test_subdivide_until_respects_budget():
    p = grid_patch(4)
    out = subdivide_until(p, 1e-5, 1e-5, factor=12)
    assert out.n_vertices <= 12 * p.n_vertices
    assert midpoint_subdivide(out).n_vertices > 12 * p.n_vertices
    loose = subdivide_until(p, 1.0, 1.0, factor=100)
    assert loose.n_vertices == p.n_vertices


# ---- random extraction -----------------------------------------------------

def test_random_full_surface():
    s = icosphere(2)
    spec = RandomExtractionSpec(surface_fraction=1.0)
    patch, _ = extract_random_surface(s, seed=0, spec=spec)
    assert patch.n_triangles == s.n_triangles


def test_random_geodesic_disk():
    s = icosphere(3)
    spec = RandomExtractionSpec(surface_fraction=0.3, geodesic_weight=1.0, normal_weight=0.0, noise_weight=0.0,
                                reference_vertex=5)
    patch, _ = extract_random_surface(s, seed=0, spec=spec)
    ref = s.vertices[5]
    kept_r = np.linalg.norm(patch.corners().mean(1) - ref, axis=1)
    all_r = np.linalg.norm(s.corners().mean(1) - ref, axis=1)
    # a disk: every kept triangle is closer than most dropped ones, and the patch is one cap
    dropped_r = np.setdiff1d(np.round(all_r, 12), np.round(kept_r, 12))
    assert kept_r.max() <= np.quantile(dropped_r, 0.05) + 0.1
    assert np.linalg.norm(patch.vertices.mean(0) / np.linalg.norm(patch.vertices.mean(0)) - ref) < 0.05


@pytest.mark.parametrize("seed", range(8))
def test_random_fraction_accuracy(seed):
    s = icosphere(3, radius=0.1)
    patch, spec = extract_random_surface(s, seed=seed)
    frac = surface_area(patch) / surface_area(s)
    assert abs(frac - spec.surface_fraction) <= 0.05 * spec.surface_fraction


def test_random_weights_sampled_in_range():
    spec = RandomExtractionSpec.sample(np.random.default_rng(0), 100)
    for w in (spec.geodesic_weight, spec.normal_weight, spec.noise_weight):
        assert 0.1 <= w <= 1.0
    assert 0.1 <= spec.surface_fraction <= 1.0


def test_random_disconnected_errors():
    a = icosphere(1)
    b = icosphere(1, center=(5, 0, 0))
    s = TriSurface(np.r_[a.vertices, b.vertices], np.r_[a.triangles, b.triangles + a.n_vertices])
    spec = RandomExtractionSpec(surface_fraction=0.8, reference_vertex=0)
    with pytest.raises(ExtractionError):
        extract_random_surface(s, seed=0, spec=spec)
    assert np.isinf(vertex_scores(s, spec)[a.n_vertices:]).all()


# ---- camera extraction -----------------------------------------------------

def test_camera_looking_away_errors():
    s = icosphere(2, radius=0.05)
    cam = CameraSpec([0, 0, 0.15], [0, 0, 1.0])
    with pytest.raises(ExtractionError):
        extract_camera_surface(s, cam)


def test_camera_convex_front_facing():
    s = icosphere(3, radius=0.05)
    cam = CameraSpec([0, 0, 0.15], [0, 0, 0])
    patch = extract_camera_surface(s, cam)
    d = patch.corners().mean(1) - cam.position
    assert np.all(np.einsum("ij,ij->i", face_normals(patch), d) < 0)
    assert 0 < patch.n_triangles < s.n_triangles / 2


def test_camera_occlusion_two_planes():
    near = grid_patch(4, size=0.02, z=0.0)
    near = TriSurface(near.vertices - [0.01, 0.01, 0], near.triangles)
    far = grid_patch(8, size=0.2, z=-0.1)
    far = TriSurface(far.vertices - [0.1, 0.1, 0], far.triangles)
    s = TriSurface(np.r_[near.vertices, far.vertices], np.r_[near.triangles, far.triangles + near.n_vertices])
    cam = CameraSpec([0, 0, 0.1], [0, 0, 0], hfov_deg=120.0, aspect=1.0)
    from volreg.intraop.extract import visible_triangles
    keep = visible_triangles(s, cam)
    assert keep[: near.n_triangles].all()
    cent = s.corners().mean(1)[near.n_triangles:]
    # far triangles whose centroid ray passes through the near square are hidden
    t = (0.0 - 0.1) / (cent[:, 2] - 0.1)
    hit = cam.position + t[:, None] * (cent - cam.position)
    shadowed = (np.abs(hit[:, 0]) < 0.01) & (np.abs(hit[:, 1]) < 0.01)
    assert shadowed.any() and (~shadowed).any()
    assert not keep[near.n_triangles:][shadowed].any()


def test_sample_camera_outside_within_range():
    s = icosphere(3, radius=0.1)
    cam = sample_camera(s, np.random.default_rng(3))
    d, _, _ = closest_points_on_mesh(cam.position[None], s)
    assert 0.05 - 1e-9 <= d[0] <= 0.2 + 1e-9
    assert cam.hfov_deg == 70.0


# ---- noise -----------------------------------------------------------------

def test_identity_noise_on_patch():
    p = grid_patch(6)
    spec = NoiseSpec(sparsify=False, subdivision_factor=10)
    cloud, sub, keep = apply_noise(p, spec, seed=0, return_clean=True)
    assert np.array_equal(cloud.points, sub.vertices)
    s = icosphere(2, radius=0.1)
    patch, _ = extract_random_surface(s, seed=1)
    cloud = apply_noise(patch, spec, seed=1)
    d, _, _ = closest_points_on_mesh(cloud.points, patch)
    assert d.max() < 1e-15


def test_perlin_offset_bound():
    spec = NoiseSpec(perlin_amplitude=0.012, sparsify=False)
    cloud, sub, _ = apply_noise(grid_patch(12), spec, seed=3, return_clean=True)
    off = cloud.points - sub.vertices
    assert np.all(np.abs(off) <= 0.012)
    assert np.abs(off).max() > 0.002


def test_gaussian_std_large_sample():
    spec = NoiseSpec(gaussian_sigma=0.002, sparsify=False, subdivision_factor=5)
    cloud, sub, _ = apply_noise(grid_patch(200), spec, seed=4, return_clean=True)
    off = (cloud.points - sub.vertices).ravel()
    assert off.size >= 100_000
    assert abs(off.std() - 0.002) <= 0.05 * 0.002


def test_sparsification_removes_but_never_moves():
    spec = NoiseSpec(sparsify=True, sparsify_frequency=20.0)
    cloud, sub, keep = apply_noise(grid_patch(20), spec, seed=5, return_clean=True)
    assert 0 < keep.sum() < len(keep)
    assert np.array_equal(cloud.points, sub.vertices[keep])


def test_too_few_points_errors():
    spec = NoiseSpec(sparsify=True, sparsify_shift=5.0)
    with pytest.raises(NoiseError):
        apply_noise(grid_patch(3), spec, seed=0)
    with pytest.raises(ValueError):
        NoiseSpec(perlin_amplitude=-1.0)


def test_noise_determinism():
    spec = NoiseSpec.sample(np.random.default_rng(0))
    a = apply_noise(grid_patch(8), spec, seed=11)
    b = apply_noise(grid_patch(8), spec, seed=11)
    assert np.array_equal(a.points, b.points)


def test_benchmark_grid():
    s = icosphere(3, radius=0.1)
    cam = CameraSpec([0, 0, 0.25], [0, 0, 0])
    patch = extract_camera_surface(s, cam)
    cells = make_noise_benchmark(patch, seed=2)
    assert len(cells) == 18
    assert {(c["perlin_mm"], c["sigma_mm"]) for c in cells} == {
        (a, g) for a in (0, 3, 6, 9, 12, 15) for g in (0, 2.5, 5)}
    assert BENCHMARK_PERLIN_MM == (0.0, 3.0, 6.0, 9.0, 12.0, 15.0) and BENCHMARK_SIGMA_MM == (0.0, 2.5, 5.0)
    by = {(c["perlin_mm"], c["sigma_mm"]): c for c in cells}
    base = by[(0.0, 0.0)]
    clean, sub, keep = apply_noise(patch, base["spec"], seed=2, return_clean=True)
    assert np.array_equal(base["cloud"].points, sub.vertices[keep])
    dist = lambda c: closest_points_on_mesh(c.points, sub)[0].mean()  # noqa: E731
    assert dist(by[(15.0, 5.0)]["cloud"]) > dist(by[(3.0, 0.0)]["cloud"])
    # only amplitudes differ: all cells keep the same points
    assert len({len(c["cloud"]) for c in cells}) == 1
