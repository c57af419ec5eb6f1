import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from volreg.geometry import (FeaturedInput, PointCloud, TriSurface, compute_normals, farthest_point_sample, knn,
                             point_distance_field, positional_encoding, resample_to_resolution, standardize)
from volreg.geometry.mesh import (box_surface, closest_points_on_mesh, icosphere, inside_mask, is_watertight,
                                  signed_volume, surface_area)
from volreg.geometry.sampling import centroid_farthest_index


# ---- independent oracles -------------------------------------------------

def greedy_fps_oracle(points, count, start):
    chosen = [start]
    for _ in range(count - 1):
        best, best_d = None, -1.0
        for i in range(len(points)):
            if i in chosen:
                continue
            d = min(float(np.sum((points[i] - points[j]) ** 2)) for j in chosen)
            if d > best_d:
                best, best_d = i, d
        chosen.append(best)
    return np.array(chosen)


def exhaustive_knn(query, target, k):
    out = []
    for q in query:
        d = [(float(np.sum((q - t) ** 2)), i) for i, t in enumerate(target)]
        d.sort()
        out.append([i for _, i in d[:k]])
    return np.array(out)


def min_pairwise(points):
    d = np.linalg.norm(points[:, None] - points[None], axis=2)
    return d[np.triu_indices(len(points), 1)].min()


def point_triangle_oracle(p, a, b, c, n=200):
    # dense barycentric sampling upper-bounds the true distance
    u, v = np.meshgrid(np.linspace(0, 1, n), np.linspace(0, 1, n))
    m = u + v <= 1
    pts = a + u[m, None] * (b - a) + v[m, None] * (c - a)
    return np.linalg.norm(pts - p, axis=1).min()


# ---- FPS -----------------------------------------------------------------

def test_fps_unit_square_corners():
    sq = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]], float)
    assert list(farthest_point_sample(sq, 2, start=0)) == [0, 3]


def test_fps_exhaustion_is_permutation():
    pts = np.random.default_rng(0).random((30, 3))
    idx = farthest_point_sample(pts, 30, seed=4)
    assert sorted(idx) == list(range(30))


def test_fps_grid_matches_oracle():
    g = np.stack(np.meshgrid(np.arange(5.0), np.arange(5.0), indexing="ij"), -1).reshape(-1, 2)
    pts = np.c_[g, np.zeros(25)]
    assert list(farthest_point_sample(pts, 4, start=7)) == list(greedy_fps_oracle(pts, 4, 7))


@pytest.mark.parametrize("seed", range(10))
def test_fps_random_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    pts = rng.random((60, 3))
    idx = farthest_point_sample(pts, 12, start=int(rng.integers(60)))
    ref = greedy_fps_oracle(pts, 12, idx[0])
    assert np.array_equal(idx, ref)
    assert min_pairwise(pts[idx]) == min_pairwise(pts[ref])


def test_fps_skips_invalid_and_errors():
    pts = np.random.default_rng(1).random((10, 3))
    valid = np.arange(10) % 2 == 0
    idx = farthest_point_sample(pts, 5, seed=0, valid=valid)
    assert set(idx) == {0, 2, 4, 6, 8}
    with pytest.raises(ValueError):
        farthest_point_sample(pts, 6, valid=valid)


def test_fps_seed_determinism():
    pts = np.random.default_rng(2).random((100, 3))
    assert np.array_equal(farthest_point_sample(pts, 10, seed=3), farthest_point_sample(pts, 10, seed=3))


def test_centroid_farthest_is_order_invariant():
    pts = np.random.default_rng(3).random((50, 3))
    perm = np.random.default_rng(4).permutation(50)
    assert perm[centroid_farthest_index(pts[perm])] == centroid_farthest_index(pts)


# ---- kNN -----------------------------------------------------------------

def test_knn_coincident_point():
    t = np.random.default_rng(0).random((20, 3))
    assert knn(t[[7]], t, 1)[0, 0] == 7


def test_knn_collinear_ordering():
    t = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0], [4, 0, 0]], float)
    assert list(knn(np.zeros((1, 3)), t, 2)[0]) == [0, 1]


def test_knn_200_random_k30():
    rng = np.random.default_rng(5)
    t = rng.random((200, 3))
    assert np.array_equal(knn(t, t, 30), exhaustive_knn(t, t, 30))


def test_knn_ties_lowest_index():
    # lattice points give many exact distance ties
    g = np.stack(np.meshgrid(*[np.arange(4.0)] * 3, indexing="ij"), -1).reshape(-1, 3)
    q = g + 0.0
    assert np.array_equal(knn(q, g, 7), exhaustive_knn(q, g, 7))


def test_knn_excludes_invalid_and_errors():
    t = np.random.default_rng(6).random((10, 3))
    valid = np.ones(10, bool)
    valid[3] = False
    idx = knn(t, t, 4, target_valid=valid)
    assert 3 not in idx
    with pytest.raises(ValueError):
        knn(t, t, 10, target_valid=valid)


def test_knn_permutation_invariance():
    rng = np.random.default_rng(7)
    t, q = rng.random((80, 3)), rng.random((15, 3))
    perm = rng.permutation(80)
    a = knn(q, t, 6)
    b = perm[knn(q, t[perm], 6)]
    assert np.array_equal(np.sort(a, 1), np.sort(b, 1))


# ---- normals -------------------------------------------------------------

def test_normals_planar_square():
    s = TriSurface([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], [[0, 1, 2], [0, 2, 3]])
    assert np.allclose(compute_normals(s), [0, 0, 1])


def test_normals_icosphere_radial():
    s = icosphere(3)
    n = compute_normals(s)
    ang = np.degrees(np.arccos(np.clip(np.sum(n * s.vertices, 1), -1, 1)))
    assert ang.max() < 5.0
    assert np.allclose(np.linalg.norm(n, axis=1), 1.0, atol=1e-6)


def test_normals_isolated_vertex_errors():
    s = TriSurface([[0, 0, 0], [1, 0, 0], [0, 1, 0], [5, 5, 5]], [[0, 1, 2]])
    with pytest.raises(ValueError):
        compute_normals(s)


# ---- distance fields -----------------------------------------------------

def test_distance_field_trivial():
    p = np.random.default_rng(0).random((30, 3))
    assert np.all(point_distance_field(p, p) == 0)
    assert point_distance_field(np.zeros((1, 3)), np.array([[0, 0, 0.05]]))[0] == pytest.approx(0.05, abs=1e-15)
    with pytest.raises(ValueError):
        point_distance_field(p, np.zeros((0, 3)))


def test_distance_field_random_oracle():
    rng = np.random.default_rng(1)
    a, b = rng.random((100, 3)), rng.random((70, 3))
    ref = np.linalg.norm(a[:, None] - b[None], axis=2).min(1)
    assert np.allclose(point_distance_field(a, b), ref, rtol=0, atol=1e-14)


def test_distance_zero_iff_coincident():
    rng = np.random.default_rng(2)
    b = rng.random((40, 3))
    a = b[:10].copy()
    assert np.all(point_distance_field(a, b) == 0)
    a[3] += 1e-9
    assert point_distance_field(a, b)[3] > 0


def test_point_to_triangle_exact():
    rng = np.random.default_rng(3)
    s = icosphere(1, radius=0.05)
    pts = rng.normal(size=(25, 3)) * 0.05
    d, cp, tri = closest_points_on_mesh(pts, s)
    for p, di, ti in zip(pts, d, tri):
        a, b, c = s.vertices[s.triangles[ti]]
        assert di <= point_triangle_oracle(p, a, b, c) + 1e-12
        brute = min(point_triangle_oracle(p, *s.vertices[t], n=40) for t in s.triangles)
        assert di <= brute + 1e-12
        assert di >= brute - 0.05 * 2 / 40 - 1e-12
    assert np.allclose(np.linalg.norm(cp - pts, axis=1), d)


def test_inside_mask_sphere():
    s = icosphere(3)
    pts = np.array([[0, 0, 0], [0.5, 0, 0], [2, 0, 0], [0, 0, -1.5]])
    assert list(inside_mask(pts, s)) == [True, True, False, False]


def test_box_is_closed_and_outward():
    b = box_surface((0, 0, 0), (1, 2, 3), 3)
    assert is_watertight(b)
    assert signed_volume(b) == pytest.approx(6.0)


# ---- positional encoding -------------------------------------------------

def test_pe_origin_and_dims():
    e = positional_encoding(np.zeros((1, 3)))
    assert e.shape == (1, 36)
    per = e.reshape(6, 6)
    assert np.all(per[:, :3] == 0) and np.all(per[:, 3:] == 1)


def test_pe_quarter_turn():
    e = positional_encoding(np.array([[np.pi / 2, 0, 0]]), [1.0])
    assert e[0, 0] == pytest.approx(1.0) and abs(e[0, 3]) < 1e-15


def test_pe_empty_frequencies():
    with pytest.raises(ValueError):
        positional_encoding(np.zeros((2, 3)), [])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=3, max_size=3))
def test_pe_bounded(p):
    e = positional_encoding(np.array([p]))
    assert np.all(np.abs(e) <= 1.0)


# ---- standardize ---------------------------------------------------------

def _cloud(m, seed=0):
    rng = np.random.default_rng(seed)
    return PointCloud(rng.random((m, 3)) * 0.2, features=rng.random((m, 5)))


def test_standardize_identity_count():
    c = _cloud(50)
    s = standardize(c, 50, seed=0)
    assert s.n_valid == 50
    assert np.array_equal(np.sort(s.source_index), np.arange(50))


def test_standardize_padding():
    s = standardize(_cloud(1000), 2500, seed=0)
    assert s.n == 2500 and s.n_valid == 1000
    assert np.all(s.features[~s.valid_mask] == 0)
    assert np.all(s.pos_encoding[~s.valid_mask] == 0)
    assert np.all(s.positions[~s.valid_mask] == 1000.0)


def test_standardize_subsample_reproducible():
    c = _cloud(5000)
    a, b = standardize(c, 2500, seed=9), standardize(c, 2500, seed=9)
    assert np.array_equal(a.positions, b.positions)
    assert a.n_valid == 2500
    assert len(np.unique(a.source_index)) == 2500


def test_standardize_errors():
    with pytest.raises(ValueError):
        standardize(_cloud(5), 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 80), st.integers(1, 120), st.floats(0.001, 200.0), st.integers(0, 10))
def test_standardize_dummies_outside_inflated_box(m, n, scale, seed):
    rng = np.random.default_rng(seed)
    c = PointCloud((rng.random((m, 3)) - 0.5) * scale)
    s = standardize(c, n, seed=seed)
    v = s.positions[s.valid_mask]
    lo, hi = v.min(0), v.max(0)
    mid, half = (lo + hi) / 2, (hi - lo) / 2
    for d in s.positions[~s.valid_mask]:
        assert np.any(np.abs(d - mid) > 10 * half)


def test_featured_input_channel_check():
    with pytest.raises(ValueError):
        FeaturedInput(np.zeros((2, 3)), np.zeros((2, 36)), np.zeros((2, 4)), np.ones(2, bool))


# ---- resampling ----------------------------------------------------------

def test_resample_unit_cube_count_and_spacing():
    from scipy.spatial import cKDTree

    cube = box_surface((0, 0, 0), (0.1, 0.1, 0.1), 4)
    pc = resample_to_resolution(cube, 0.005, seed=0)
    surf = pc.points[pc.on_surface]
    assert 1500 <= len(surf) <= 4500
    d, _ = cKDTree(pc.points).query(pc.points, k=2)
    assert 0.7 * 0.005 <= d[:, 1].mean() <= 1.3 * 0.005
    assert (~pc.on_surface).sum() > 0
    assert np.all(inside_mask(pc.points[~pc.on_surface], cube))


def test_resample_flat_has_no_interior():
    flat = TriSurface([[0, 0, 0], [0.1, 0, 0], [0.1, 0.1, 0], [0, 0.1, 0]], [[0, 1, 2], [0, 2, 3]])
    pc = resample_to_resolution(flat, 0.005, seed=1)
    assert pc.on_surface.all() and len(pc) > 0


def test_resample_deterministic_and_errors():
    s = icosphere(2, radius=0.05)
    a, b = resample_to_resolution(s, 0.01, seed=3), resample_to_resolution(s, 0.01, seed=3)
    assert np.array_equal(a.points, b.points)
    with pytest.raises(ValueError):
        resample_to_resolution(s, 0.0)
    with pytest.raises(ValueError):
        resample_to_resolution(TriSurface(np.zeros((0, 3)), np.zeros((0, 3), int)), 0.01)


def test_surface_area_cube():
    assert surface_area(box_surface((0, 0, 0), (0.1, 0.1, 0.1), 2)) == pytest.approx(0.06)


def test_closest_points_ball_search_matches_exhaustive():
    from volreg.geometry.mesh import _brute_closest
    rng = np.random.default_rng(11)
    s = icosphere(3, radius=0.1)
    # deep interior points leave the nearest-centroid candidates uncertified
    pts = np.concatenate([rng.normal(size=(60, 3)) * 0.01, rng.normal(size=(60, 3)) * 0.08])
    d, cp, tri = closest_points_on_mesh(pts, s, candidates=4)
    bd, bp, bt = _brute_closest(pts, s.corners())
    assert np.array_equal(d, bd)
    # triangle ids may differ only at exact ties, where the points agree
    assert np.allclose(np.linalg.norm(cp - pts, axis=1), d, rtol=0, atol=1e-15)
    assert np.allclose(cp[tri != bt], bp[tri != bt], rtol=0, atol=1e-15)
