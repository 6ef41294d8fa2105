import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import random_mesh
from oracles import fps_violations, point_mesh_distance
from occlusim.mesh import MeshError, TriangleMesh, box, uv_sphere
from occlusim.sampling import (
    PointCloud, fps_indices, load_pointcloud, sample_fas, sample_fps, save_pointcloud,
)

TRI = TriangleMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])


def test_single_triangle_points_inside():
    c = sample_fas(TRI, 4, seed=3)
    x, y = c.points[:, 0], c.points[:, 1]
    assert np.all((x >= 0) & (y >= 0) & (x + y <= 1)) and np.all(c.points[:, 2] == 0)
    np.testing.assert_array_equal(c.normals, np.tile([0, 0, 1.0], (4, 1)))


def test_area_weighting_binomial():
    # triangle areas 9 and 1
    v = [[0, 0, 0], [3, 0, 0], [0, 6, 0], [10, 0, 0], [11, 0, 0], [10, 2, 0]]
    m = TriangleMesh(v, [[0, 1, 2], [3, 4, 5]])
    c = sample_fas(m, 10000, seed=0)
    n_big = int(np.count_nonzero(c.points[:, 0] < 5))
    assert 8700 <= n_big <= 9300


def test_fas_deterministic():
    m = uv_sphere(0.5, 8, 16)
    a, b = sample_fas(m, 100, 7), sample_fas(m, 100, 7)
    np.testing.assert_array_equal(a.points, b.points)
    np.testing.assert_array_equal(a.normals, b.normals)


def test_zero_area_errors():
    flat = TriangleMesh([[0, 0, 0], [1, 0, 0], [2, 0, 0]], [[0, 1, 2]])
    with pytest.raises(MeshError):
        sample_fas(flat, 3)


def test_zero_area_faces_never_sampled():
    v = [[0, 0, 0], [1, 0, 0], [0, 1, 0], [5, 5, 5], [6, 6, 6], [7, 7, 7]]
    m = TriangleMesh(v, [[3, 4, 5], [0, 1, 2], [3, 4, 5]])
    c = sample_fas(m, 500, 1)
    assert np.all(c.points[:, 2] == 0)


def test_fps_full_pool_is_permutation():
    m = box((0, 0, 0), (1, 1, 1))
    c = sample_fps(m, 40, seed=2, pool=40)
    pool = sample_fas(m, 40, 2)
    assert sorted(map(tuple, c.points)) == sorted(map(tuple, pool.points))


def test_fps_cube_corners():
    corners = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], dtype=float)
    sel = fps_indices(corners, 2)
    assert sel[0] == 0  # all corners tie; lowest index wins
    np.testing.assert_array_equal(corners[sel[1]], 1 - corners[sel[0]])


def test_fps_sphere_exhaustive_oracle():
    pts = sample_fas(uv_sphere(1.0, 16, 32), 600, 4).points
    sel = fps_indices(pts, 64)
    assert fps_violations(pts, sel) == 0


def test_fps_spreads_more_than_fas(rng):
    for seed in range(50):
        m = random_mesh(np.random.default_rng(seed), 10)
        fas = sample_fas(m, 30, seed).points
        fps = sample_fps(m, 30, seed).points

        def min_pair(p):
            d = np.linalg.norm(p[:, None] - p[None], axis=2)
            return d[np.triu_indices(len(p), 1)].min()
        assert min_pair(fps) >= min_pair(fas)


@given(st.integers(0, 2**32 - 1))
def test_points_on_surface(seed):
    m = random_mesh(np.random.default_rng(seed), 4)
    tris = m.triangles()
    for cloud in (sample_fas(m, 20, seed), sample_fps(m, 10, seed)):
        assert max(point_mesh_distance(p, tris) for p in cloud.points) <= 1e-9
        np.testing.assert_allclose(np.linalg.norm(cloud.normals, axis=1), 1.0, atol=1e-6)


@pytest.mark.parametrize("suffix", [".bin", ".txt"])
def test_pointcloud_io(tmp_path, suffix):
    c = sample_fas(box((0, 0, 0), (1, 2, 3)), 50, 0)
    p = tmp_path / f"c{suffix}"
    save_pointcloud(c, p)
    back = load_pointcloud(p)
    dtype = np.float32 if suffix == ".bin" else np.float64
    np.testing.assert_array_equal(back.points, c.points.astype(dtype))
    np.testing.assert_array_equal(back.normals, c.normals.astype(dtype))


def test_binary_layout(tmp_path):
    c = PointCloud([[1, 2, 3]], [[0, 0, 1]])
    save_pointcloud(c, tmp_path / "c.bin")
    raw = (tmp_path / "c.bin").read_bytes()
    assert raw[:4] == (1).to_bytes(4, "little")
    assert np.frombuffer(raw[4:], "<f4").tolist() == [1, 2, 3, 0, 0, 1]
