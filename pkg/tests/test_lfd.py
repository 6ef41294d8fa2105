import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate

from masks import disk, ellipse, l_shape, random_blob, rect
from occlusim.lfd import (
    DESCRIPTOR_DIM, N_ZERNIKE, DescriptorError, DescriptorStore, LightFieldDescriptor, _radial_coeffs,
    compute_lfd, fourier_contour, lfd_distance, load_lfd, mask_descriptor, save_lfd, trace_contour,
    vlfd_distance, zernike_indices, zernike_moments,
)
from occlusim.mesh import SimilarityTransform, apply_transform, box, merge
from occlusim.render import dodecahedron_cameras, lfd_rig


def test_zernike_index_set():
    idx = zernike_indices()
    assert len(idx) == 35 == N_ZERNIKE
    assert idx == sorted(idx)
    assert all(m >= 0 and (n - m) % 2 == 0 and n <= 10 for n, m in idx)


def test_empty_mask_errors():
    with pytest.raises(DescriptorError):
        zernike_moments(np.zeros((8, 8)))
    with pytest.raises(DescriptorError):
        mask_descriptor(np.zeros((8, 8)))
    assert not mask_descriptor(np.zeros((8, 8)), strict=False).any()


def _radial_oracle(n, a):
    """2(n+1) * integral_0^a R_n0(rho) rho drho, by quadrature of the textbook radial polynomial."""
    def radial(rho):
        return sum((-1) ** s * math.factorial(n - s) / (math.factorial(s) * math.factorial(n // 2 - s) ** 2)
                   * rho ** (n - 2 * s) for s in range(n // 2 + 1))
    val, _ = integrate.quad(lambda r: radial(r) * r, 0.0, a)
    return abs(2 * (n + 1) * val)


def test_disk_zernike_against_radial_integration():
    m = disk(1024, 500)
    z = zernike_moments(m)
    rows, cols = np.nonzero(m)
    rmax = np.sqrt(((rows - rows.mean()) ** 2 + (cols - cols.mean()) ** 2).max())
    a = math.sqrt(m.sum() / math.pi) / rmax
    for k, (n, mm) in enumerate(zernike_indices()):
        if mm:
            assert z[k] < 1e-3, (n, mm, z[k])
        else:
            assert abs(z[k] - _radial_oracle(n, a)) < 1e-3, (n, z[k])


def test_radial_coefficients_match_textbook():
    # R_4^0 = 6 rho^4 - 6 rho^2 + 1
    assert sorted(_radial_coeffs(4, 0)) == [(0, 1.0), (1, -6.0), (2, 6.0)]
    # R_3^1 = 3 rho^3 - 2 rho
    assert sorted(_radial_coeffs(3, 1)) == [(0, -2.0), (1, 3.0)]


def test_translation_invariance():
    a = l_shape(128, 12, (20, 20))
    b = l_shape(128, 12, (30, 30))
    assert np.abs(mask_descriptor(a) - mask_descriptor(b)).sum() < 1e-3


def test_fourier_scale_invariance():
    a = l_shape(256, 10, (20, 20))
    b = l_shape(256, 10, (20, 20), scale=2)
    assert np.abs(fourier_contour(a) - fourier_contour(b)).sum() < 2e-2


def test_circle_fourier_single_harmonic():
    assert np.all(fourier_contour(disk(256, 100)) < 1e-2)


def test_shape_discrimination():
    circle = disk(200, 60)
    square = rect(200, 47, 47, 106, 106)
    oval = ellipse(200, 66, 55)
    d = lambda x, y: np.abs(fourier_contour(x) - fourier_contour(y)).sum()
    assert d(square, circle) > d(circle, oval)


def test_short_contour_errors():
    with pytest.raises(DescriptorError):
        fourier_contour(rect(10, 4, 4, 2, 2))


def test_trace_contour_square():
    c = trace_contour(rect(8, 2, 2, 3, 3))
    assert len(c) == 8
    assert {tuple(p) for p in c} == {(r, q) for r in range(2, 5) for q in range(2, 5)} - {(3, 3)}


def test_vlfd_component_oracle():
    a, b = disk(128, 40), rect(128, 29, 29, 70, 70)
    hand = (np.abs(zernike_moments(a) - zernike_moments(b)).sum()
            + np.abs(fourier_contour(a) - fourier_contour(b)).sum())
    assert vlfd_distance(a, b) == pytest.approx(hand, abs=1e-12)
    assert vlfd_distance(a, a) == 0.0


def test_vlfd_triangle_inequality():
    rng = np.random.default_rng(0)
    for _ in range(100):
        a, b, c = (random_blob(rng) for _ in range(3))
        assert vlfd_distance(a, c) <= vlfd_distance(a, b) + vlfd_distance(b, c) + 1e-12


def _table():
    return merge([box((-0.5, 0.4, -0.3), (0.5, 0.45, 0.3)), box((-0.45, 0, -0.25), (-0.4, 0.4, -0.2)),
                  box((0.4, 0, 0.2), (0.45, 0.4, 0.25))])


def test_compute_lfd_rig_and_determinism():
    rig = lfd_rig(10, seed=1, resolution=64)
    a = compute_lfd(_table(), rig, 64, 1)
    assert a.features.shape == (200, DESCRIPTOR_DIM)
    b = compute_lfd(_table(), rig, 64, 1)
    np.testing.assert_array_equal(a.features, b.features)
    assert lfd_distance(a, b) == 0.0


def test_compute_lfd_normalizes_first():
    rig = lfd_rig(1, seed=2, resolution=64)
    m = _table()
    moved = apply_transform(m, SimilarityTransform(2.0, 0.0, (4.0, -8.0, 2.0)))
    np.testing.assert_array_equal(compute_lfd(m, rig, 64).features, compute_lfd(moved, rig, 64).features)


def test_lfd_rig_mismatch():
    f = np.ones((20, DESCRIPTOR_DIM))
    with pytest.raises(DescriptorError):
        lfd_distance(LightFieldDescriptor(f, "a"), LightFieldDescriptor(f, "b"))


def test_lfd_hand_two_views():
    fa = np.zeros((2, DESCRIPTOR_DIM))
    fb = np.zeros((2, DESCRIPTOR_DIM))
    fb[0, :3] = [1, 2, 3]      # view 0: L1 = 6
    fb[1, -1] = 4              # view 1: L1 = 4
    assert lfd_distance(LightFieldDescriptor(fa, "r"), LightFieldDescriptor(fb, "r")) == 5.0


@given(st.integers(0, 2**32 - 1))
def test_lfd_pseudometric(seed):
    rng = np.random.default_rng(seed)
    a, b, c = (LightFieldDescriptor(rng.random((20, DESCRIPTOR_DIM)), "r") for _ in range(3))
    assert lfd_distance(a, a) == 0.0
    assert lfd_distance(a, b) == lfd_distance(b, a) >= 0
    assert lfd_distance(a, c) <= lfd_distance(a, b) + lfd_distance(b, c) + 1e-9


def test_descriptor_invariants():
    with pytest.raises(DescriptorError):
        LightFieldDescriptor(-np.ones((1, DESCRIPTOR_DIM)), "r")
    with pytest.raises(DescriptorError):
        LightFieldDescriptor(np.full((1, DESCRIPTOR_DIM), np.nan), "r")


def test_lfd_file_and_store(tmp_path):
    d = LightFieldDescriptor(np.random.default_rng(0).random((200, DESCRIPTOR_DIM)), "dodeca10-seed3", 3)
    save_lfd(d, tmp_path / "x.lfd")
    back = load_lfd(tmp_path / "x.lfd")
    np.testing.assert_array_equal(back.features, d.features)
    assert (back.rig_id, back.rig_seed) == (d.rig_id, 3)
    store = DescriptorStore(tmp_path / "store")
    store.put("s1", d)
    store.flush()
    again = DescriptorStore(tmp_path / "store")
    assert "s1" in again and again.index["rig"]["seed"] == 3
    np.testing.assert_array_equal(again.get("s1").features, d.features)
    with pytest.raises(DescriptorError):
        again.put("s2", LightFieldDescriptor(d.features, "other"))


def test_resolution_doubling_stability():
    cam = dodecahedron_cameras(1, seed=5)[3]
    from occlusim.render import render_mask
    m = _table()
    a = mask_descriptor(render_mask(m, None, cam.with_resolution(128)))
    b = mask_descriptor(render_mask(m, None, cam.with_resolution(256)))
    assert np.abs(a - b).sum() < 0.25
