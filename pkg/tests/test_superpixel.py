import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import ndimage

from pscpc.cube import HsiCube, generate_synthetic, SyntheticSpec, pca_reduce
from pscpc.superpixel import (GeomFeatures, Segmentation, all_geometry, enforce_connectivity,
                              fuse_attributes, geometry_columns, load_segmentation,
                              pool_features, pooling_matrix, sample_pixels, save_segmentation,
                              slic_segment, superpixel_geometry, write_pgm)

# reference run of the uniform 8x8 case, n_target=4
UNIFORM_8x8_BLOCKS = np.repeat(np.repeat(np.array([[0, 1], [2, 3]]), 4, axis=0), 4, axis=1)


def _connected(mask):
    return ndimage.label(mask, structure=ndimage.generate_binary_structure(2, 1))[1] == 1


def test_single_superpixel():
    seg = slic_segment(HsiCube(np.random.default_rng(0).normal(size=(5, 7, 2))), 1)
    assert seg.N == 1
    assert not seg.assignment.any()


def test_uniform_cube_gives_four_blocks():
    seg = slic_segment(HsiCube(np.ones((8, 8, 3))), 4, compactness=10.0)
    assert seg.areas().tolist() == [16, 16, 16, 16]
    assert all(_connected(seg.assignment == i) for i in range(4))
    assert np.array_equal(seg.assignment, UNIFORM_8x8_BLOCKS)


def test_two_region_boundary_follows_values():
    data = np.zeros((8, 8, 1))
    data[:, 4:] = 10.0
    seg = slic_segment(HsiCube(data), 2, compactness=10.0)
    assert len(np.unique(seg.assignment[:, :4])) == 1
    assert len(np.unique(seg.assignment[:, 4:])) == 1
    assert seg.assignment[0, 0] != seg.assignment[0, 7]


def test_slic_superpixels_are_connected_and_cover():
    cube, _ = generate_synthetic(SyntheticSpec(32, 32, 8, K=4, noise_sigma=5.0), 1)
    seg = slic_segment(pca_reduce(cube, 3), 64)
    assert seg.areas().sum() == 32 * 32
    assert all(_connected(seg.assignment == i) for i in range(seg.N))
    assert 32 <= seg.N <= 96


def test_slic_rejects_bad_target():
    with pytest.raises(ValueError):
        slic_segment(HsiCube(np.zeros((2, 2, 1))), 5)


def test_enforce_connectivity_merges_orphan_into_closest_spectrum():
    a = np.array([[0, 0, 1, 1],
                  [0, 0, 1, 1],
                  [2, 2, 0, 1],
                  [2, 2, 2, 1]])
    spectra = np.zeros((16, 1))
    spectra[a.ravel() == 1] = 5.0
    spectra[10] = 4.9  # the stray 0-pixel at (2, 2) looks like superpixel 1
    out = enforce_connectivity(a, spectra)
    assert out[2, 2] == out[0, 2]
    without = enforce_connectivity(a)  # falls back to the largest neighbour (ties: lower id)
    assert without[2, 2] == without[0, 2]


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_enforce_connectivity_property(seed):
    rng = np.random.default_rng(seed)
    a = rng.integers(0, 4, size=(6, 6))
    out = enforce_connectivity(a, rng.normal(size=(36, 2)))
    seg = Segmentation(out)
    assert all(_connected(out == i) for i in range(seg.N))


# ------------------------------------------------------------------------ geometry

def test_geometry_single_pixel():
    a = np.zeros((3, 3), dtype=int)
    a[1, 2] = 1
    g = superpixel_geometry(Segmentation(a), 1)
    assert (g.area, g.perimeter, g.aspect_ratio, g.centroid) == (1, 4, 1.0, (1.0, 2.0))


def test_geometry_rectangle():
    a = np.zeros((5, 6), dtype=int)
    a[1:3, 1:4] = 1
    g = superpixel_geometry(Segmentation(a), 1)
    assert (g.area, g.perimeter, g.aspect_ratio) == (6, 10, 1.5)


def test_geometry_l_shape():
    a = np.ones((3, 3), dtype=int)
    for y, x in [(0, 0), (1, 0), (1, 1)]:
        a[y, x] = 0
    g = superpixel_geometry(Segmentation(a), 0)
    assert (g.area, g.perimeter) == (3, 8)
    assert g.centroid == pytest.approx((2 / 3, 1 / 3), abs=1e-15)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_perimeter_oracle(seed):
    rng = np.random.default_rng(seed)
    seg = Segmentation(enforce_connectivity(rng.integers(0, 3, size=(5, 6))))
    for i in range(seg.N):
        # count member edges whose other side is outside the superpixel, one pixel at a time
        edges = 0
        for y, x in zip(*np.nonzero(seg.assignment == i)):
            for dy, dx in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                yy, xx = y + dy, x + dx
                inside = 0 <= yy < 5 and 0 <= xx < 6 and seg.assignment[yy, xx] == i
                edges += not inside
        g = superpixel_geometry(seg, i)
        assert g.perimeter == edges >= 4


# ------------------------------------------------------------------- pooling/fusion

def test_pool_constant_features():
    seg = Segmentation(UNIFORM_8x8_BLOCKS)
    F = np.tile([1.5, -2.0, 0.25], (64, 1))
    assert np.array_equal(pool_features(F, seg), np.tile([1.5, -2.0, 0.25], (4, 1)))


def test_pool_two_pixels():
    seg = Segmentation(np.array([[0, 0]]))
    assert np.array_equal(pool_features(np.array([[1.0, 0.0], [0.0, 1.0]]), seg), [[0.5, 0.5]])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_pool_matches_sorted_segment_sums(seed):
    rng = np.random.default_rng(seed)
    seg = Segmentation(enforce_connectivity(rng.integers(0, 5, size=(6, 7))))
    F = rng.normal(size=(42, 3))
    flat = seg.assignment.ravel()
    order = np.argsort(flat, kind="stable")
    starts = np.r_[0, np.flatnonzero(np.diff(flat[order])) + 1]
    oracle = np.add.reduceat(F[order], starts, axis=0) / np.diff(np.r_[starts, 42])[:, None]
    assert np.allclose(pool_features(F, seg), oracle, atol=1e-12, rtol=0)
    assert np.allclose(pooling_matrix(seg) @ F, oracle, atol=1e-12, rtol=0)


def test_identical_geometry_gives_zero_columns():
    seg = Segmentation(UNIFORM_8x8_BLOCKS)
    fused = fuse_attributes(np.ones((4, 2)), [superpixel_geometry(seg, 0)] * 4)
    assert fused.shape == (4, 8)
    assert not fused[:, 2:].any()


def test_two_point_area_zscore():
    geoms = [GeomFeatures(2, 6, 1.0, (0.0, 0.0)), GeomFeatures(4, 8, 1.0, (0.0, 0.0))]
    cols = geometry_columns(geoms)
    assert cols[:, 0].tolist() == [-1.0, 1.0]
    assert cols[:, 5].tolist() == [0.0, 0.0]


def test_fused_columns_are_standardized():
    rng = np.random.default_rng(4)
    geoms = [GeomFeatures(int(rng.integers(1, 20)), int(rng.integers(4, 40)), float(rng.uniform(.2, 5)),
                          (float(rng.uniform(0, 9)), float(rng.uniform(0, 9)))) for _ in range(5)]
    cols = fuse_attributes(rng.normal(size=(5, 3)), geoms)[:, 3:8]
    for j in range(5):
        if np.any(cols[:, j]):
            assert abs(cols[:, j].mean()) < 1e-10
            assert abs(cols[:, j].std() - 1) < 1e-10


def test_fuse_weight_scales_geometry_only():
    seg = Segmentation(np.array([[0, 0, 1], [2, 2, 2]]))
    pooled = np.arange(6.0).reshape(3, 2)
    a = fuse_attributes(pooled, all_geometry(seg))
    b = fuse_attributes(pooled, all_geometry(seg), weight=0.1)
    assert np.array_equal(a[:, :2], b[:, :2])
    assert np.allclose(a[:, 2:] * 0.1, b[:, 2:])


# ------------------------------------------------------------------------- sampling

def test_exhaustive_sampling_returns_members():
    seg = Segmentation(UNIFORM_8x8_BLOCKS)
    for s, m in zip(sample_pixels(seg, 16, 0), seg.members()):
        assert np.array_equal(s, m)
        assert np.all(np.diff(s) > 0)


def test_single_sample_each():
    seg = Segmentation(UNIFORM_8x8_BLOCKS)
    for n, s in enumerate(sample_pixels(seg, 1, 5)):
        assert len(s) == 1 and seg.assignment.ravel()[s[0]] == n


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 20), st.integers(0, 2 ** 31))
def test_sampling_deterministic_and_valid(M, seed):
    seg = Segmentation(UNIFORM_8x8_BLOCKS)
    a, b = sample_pixels(seg, M, seed), sample_pixels(seg, M, seed)
    for n, (x, y) in enumerate(zip(a, b)):
        assert np.array_equal(x, y)
        assert len(x) == min(M, 16) == len(np.unique(x))
        assert np.all(seg.assignment.ravel()[x] == n)


def test_sampling_rejects_zero():
    with pytest.raises(ValueError):
        sample_pixels(Segmentation(UNIFORM_8x8_BLOCKS), 0, 0)


# -------------------------------------------------------------------------- export

def test_segmentation_round_trip_and_pgm(tmp_path):
    seg = Segmentation(UNIFORM_8x8_BLOCKS)
    save_segmentation(seg, tmp_path / "s.hsseg")
    assert np.array_equal(load_segmentation(tmp_path / "s.hsseg").assignment, seg.assignment)
    write_pgm(seg, tmp_path / "s.pgm")
    raw = (tmp_path / "s.pgm").read_bytes()
    assert raw.startswith(b"P5\n8 8\n255\n")
    assert np.array_equal(np.frombuffer(raw[-64:], np.uint8).reshape(8, 8), seg.assignment)


def test_segmentation_requires_dense_ids():
    with pytest.raises(ValueError):
        Segmentation(np.array([[0, 2]]))
