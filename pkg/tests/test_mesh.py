import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import random_mesh
from occlusim.mesh import (
    MeshError, ObjParseError, ShapeDatabase, ShapeRecord, SimilarityTransform, TriangleMesh,
    apply_transform, bbox, box, face_areas, load_obj, normalize_canonical, write_obj, write_shape_db,
)


def _write(tmp_path, text, name="m.obj"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_single_triangle(tmp_path):
    m = load_obj(_write(tmp_path, "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n"))
    assert m.n_vertices == 3 and m.n_faces == 1
    assert m.vertex_normals is None


def test_quad_fan_triangulation(tmp_path):
    m = load_obj(_write(tmp_path, "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n"))
    assert m.faces.tolist() == [[0, 1, 2], [0, 2, 3]]


def test_out_of_range_index_names_line(tmp_path):
    p = _write(tmp_path, "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\n# comment\nf 1 2 5\n")
    with pytest.raises(ObjParseError) as err:
        load_obj(p)
    assert err.value.lineno == 6
    assert ":6:" in str(err.value)


def test_face_forms_and_negative_indices(tmp_path):
    text = ("v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nvn 0 0 1\n"
            "f 1/1/1 2/1/1 3/1/1\nf -3//1 -2//1 -1//1\n")
    m = load_obj(_write(tmp_path, text))
    assert m.faces.tolist() == [[0, 1, 2], [0, 1, 2]]
    np.testing.assert_array_equal(m.vertex_normals, np.tile([0.0, 0.0, 1.0], (3, 1)))


def test_empty_geometry(tmp_path):
    with pytest.raises(MeshError):
        load_obj(_write(tmp_path, "v 0 0 0\n"))


def test_mesh_invariants():
    with pytest.raises(MeshError):
        TriangleMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 3]])
    with pytest.raises(MeshError):
        TriangleMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 1]])
    with pytest.raises(MeshError):
        TriangleMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]], vertex_normals=[[0, 0, 2]] * 3)


def test_normalize_offset_cube():
    m, t = normalize_canonical(box((4.5, 4.5, 4.5), (5.5, 5.5, 5.5)))
    lo, hi = bbox(m)
    np.testing.assert_allclose(lo, -0.5)
    np.testing.assert_allclose(hi, 0.5)
    assert t.uniform_scale == 1.0
    np.testing.assert_allclose(t.translation, [-5, -5, -5])


def test_normalize_max_extent():
    m, _ = normalize_canonical(box((0, 0, 0), (2, 1, 1)))
    lo, hi = bbox(m)
    np.testing.assert_allclose(hi - lo, [1, 0.5, 0.5])


def test_normalize_idempotent(rng):
    m, _ = normalize_canonical(random_mesh(rng))
    _, t2 = normalize_canonical(m)
    assert t2.is_identity(1e-9)


def test_normalize_degenerate():
    flat = TriangleMesh(np.zeros((3, 3)), np.zeros((0, 3)))
    with pytest.raises(MeshError):
        normalize_canonical(flat)


def test_face_area_and_bbox():
    tri = TriangleMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])
    assert face_areas(tri)[0] == 0.5
    lo, hi = bbox(box((-0.5,) * 3, (0.5,) * 3))
    assert lo.tolist() == [-0.5] * 3 and hi.tolist() == [0.5] * 3


def test_identity_transform_bit_identical(rng):
    m = random_mesh(rng)
    out = apply_transform(m, SimilarityTransform.identity())
    np.testing.assert_array_equal(out.vertices, m.vertices)
    np.testing.assert_array_equal(out.faces, m.faces)


def test_transform_normals_rotate_only():
    m = TriangleMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]], vertex_normals=[[1, 0, 0]] * 3)
    out = apply_transform(m, SimilarityTransform(3.0, np.pi / 2, [1, 2, 3]))
    np.testing.assert_allclose(np.linalg.norm(out.vertex_normals, axis=1), 1.0)
    np.testing.assert_allclose(out.vertex_normals[0], [0, 0, -1], atol=1e-12)


def test_short_side():
    rec = ShapeRecord("a", "table", box((0, 0, 0), (2.0, 0.7, 0.9)))
    assert rec.short_side == pytest.approx(0.9)
    with pytest.raises(MeshError):
        ShapeRecord("b", "", box((0, 0, 0), (1, 1, 1)))


def test_similarity_invariants():
    with pytest.raises(ValueError):
        SimilarityTransform(0.0, 0.0, [0, 0, 0])
    with pytest.raises(ValueError):
        SimilarityTransform(1.0, np.diag([1.0, 1.0, -1.0]), [0, 0, 0])


def test_shape_database_roundtrip(tmp_path, furniture):
    db = write_shape_db(tmp_path, furniture)
    again = ShapeDatabase.open(tmp_path)
    assert again.ids() == sorted(s.shape_id for s in furniture)
    assert again.categories() == ["bed", "chair", "sofa", "table"]
    rec = furniture[0]
    np.testing.assert_array_equal(again.mesh(rec.shape_id).vertices, rec.mesh.vertices)
    assert db.category(rec.shape_id) == rec.category
    with pytest.raises(KeyError):
        again.get("nope")


@given(st.integers(0, 2**32 - 1))
def test_obj_roundtrip(tmp_path_factory, seed):
    m = random_mesh(np.random.default_rng(seed), 5)
    p = tmp_path_factory.mktemp("obj") / "m.obj"
    write_obj(m, p)
    back = load_obj(p)
    np.testing.assert_array_equal(back.vertices, m.vertices)
    np.testing.assert_array_equal(back.faces, m.faces)


@given(st.integers(0, 2**32 - 1))
def test_normalized_extent_is_one(seed):
    rng = np.random.default_rng(seed)
    m, _ = normalize_canonical(random_mesh(rng, 8, scale=rng.uniform(0.01, 100)))
    lo, hi = bbox(m)
    assert abs((hi - lo).max() - 1.0) <= 1e-9
    np.testing.assert_allclose((lo + hi) / 2, 0, atol=1e-9)


@given(st.integers(0, 2**32 - 1))
def test_transform_inverse_roundtrip(seed):
    rng = np.random.default_rng(seed)
    m = random_mesh(rng, 6)
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    rot = np.array([[1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
                    [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
                    [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)]])
    t = SimilarityTransform(rng.uniform(0.1, 10), rot, rng.normal(size=3))
    back = apply_transform(apply_transform(m, t), t.inverse())
    np.testing.assert_allclose(back.vertices, m.vertices, atol=1e-9)
