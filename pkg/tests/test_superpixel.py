import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import ndimage

from lfdepth import fixtures
from lfdepth.superpixel import (InvalidParams, SlicParams, grid_dims, grid_neighbors,
                                kernel_offsets, min_neighbor_similarity,
                                min_neighbor_similarity_all, neighbor_table, rgb_to_lab,
                                slic_segment, write_stats)

from oracles import naive_kernel


def _noise_image(seed, h=48, w=64):
    rng = np.random.default_rng(seed)
    img = ndimage.gaussian_filter(rng.random((h, w, 3)), (2, 2, 0))
    return (img - img.min()) / (img.max() - img.min())


def _fixture_images():
    out = []
    for spec in (fixtures.fronto_wall(64, 48), fixtures.staircase(72, 48),
                 fixtures.occlusion(80, 60)):
        mvs, _ = fixtures.render_scene(spec)
        out.append(mvs.images[0])
    return out


def _check_grid(grid, h, w):
    assert grid.labels.shape == (h, w)
    assert grid.counts.sum() == h * w
    assert np.all(grid.counts > 0)
    assert set(np.unique(grid.labels)) == set(range(grid.grid_w * grid.grid_h))
    ys, xs = np.mgrid[0:h, 0:w]
    for s in range(grid.n):
        m = grid.labels == s
        np.testing.assert_allclose(grid.centroids[s], [xs[m].mean(), ys[m].mean()], atol=1e-6)
        _, ncomp = ndimage.label(m)
        assert ncomp == 1, f"superpixel {s} is not 4-connected"
        np.testing.assert_array_equal(np.sort(grid.members(s)), np.flatnonzero(m.ravel()))


# -- params --------------------------------------------------------------------

@pytest.mark.parametrize("kw", [dict(size=3), dict(compactness=0), dict(iterations=0)])
def test_invalid_params(kw):
    with pytest.raises(InvalidParams):
        SlicParams(**kw)


def test_image_smaller_than_size_rejected():
    with pytest.raises(InvalidParams):
        slic_segment(np.zeros((6, 20, 3)), SlicParams(8))


def test_grid_dims_ceil():
    assert grid_dims(64, 64, 8) == (8, 8)
    assert grid_dims(65, 50, 8) == (9, 7)


# -- segmentation -----------------------------------------------------------------

@pytest.mark.parametrize("m", [1.0, 10.0, 40.0])
def test_uniform_image_gives_square_cells(m):
    grid = slic_segment(np.full((64, 64, 3), 0.4), SlicParams(8, m))
    assert (grid.grid_w, grid.grid_h) == (8, 8)
    ys, xs = np.mgrid[0:64, 0:64]
    np.testing.assert_array_equal(grid.labels, (ys // 8) * 8 + xs // 8)


def test_single_superpixel():
    grid = slic_segment(_noise_image(0, 8, 8), SlicParams(8))
    assert grid.n == 1
    assert np.all(grid.labels == 0)
    np.testing.assert_allclose(grid.centroids[0], [3.5, 3.5])


@pytest.mark.parametrize("split", [29, 32, 35])
def test_two_tone_purity(split):
    img = np.zeros((64, 64, 3))
    img[:, :split] = [1.0, 0.0, 0.0]
    img[:, split:] = [0.0, 0.0, 1.0]
    grid = slic_segment(img, SlicParams(8, 40.0))
    left = np.zeros((64, 64), bool)
    left[:, :split] = True
    # brute force: every superpixel lies entirely on one side
    for s in range(grid.n):
        m = grid.labels == s
        inside = int((m & left).sum())
        assert inside in (0, int(m.sum())), f"superpixel {s} straddles the edge"
    _check_grid(grid, 64, 64)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_grid_invariants_on_noise(seed):
    img = _noise_image(seed, 50, 70)
    grid = slic_segment(img, SlicParams(8, 10.0))
    assert (grid.grid_w, grid.grid_h) == (9, 7)
    _check_grid(grid, 50, 70)
    lab = rgb_to_lab(img)
    for s in range(grid.n):
        np.testing.assert_allclose(grid.mean_colors[s], lab[grid.labels == s].mean(axis=0),
                                   atol=1e-9)


@given(st.integers(0, 10_000), st.integers(16, 40), st.integers(16, 40),
       st.sampled_from([4, 5, 8]), st.floats(1.0, 40.0))
def test_partition_properties(seed, h, w, size, m):
    img = _noise_image(seed, h, w)
    grid = slic_segment(img, SlicParams(size, m, 4))
    _check_grid(grid, h, w)


def test_deterministic():
    img = _noise_image(5)
    a = slic_segment(img, SlicParams(8))
    b = slic_segment(img.copy(), SlicParams(8))
    np.testing.assert_array_equal(a.labels, b.labels)
    np.testing.assert_array_equal(a.centroids, b.centroids)


def _spatial_variance(grid):
    h, w = grid.labels.shape
    ys, xs = np.mgrid[0:h, 0:w]
    var = []
    for s in range(grid.n):
        m = grid.labels == s
        var.append(xs[m].var() + ys[m].var())
    return float(np.mean(var))


@pytest.mark.parametrize("idx", [0, 1, 2])
def test_compactness_monotone(idx):
    img = _fixture_images()[idx]
    vals = [_spatial_variance(slic_segment(img, SlicParams(8, m))) for m in (2.0, 5.0, 10.0, 20.0, 40.0)]
    assert all(b <= a + 1e-9 for a, b in zip(vals, vals[1:])), vals


def test_stats_file(tmp_path):
    grid = slic_segment(_noise_image(1, 16, 16), SlicParams(8))
    write_stats(grid, tmp_path / "s.txt")
    rows = [r.split() for r in (tmp_path / "s.txt").read_text().splitlines()[1:]]
    assert len(rows) == 4
    assert [int(r[0]) for r in rows] == [0, 1, 2, 3]
    assert sum(int(r[-1]) for r in rows) == 256


# -- neighbours ---------------------------------------------------------------------

@pytest.fixture(scope="module")
def grid20():
    return slic_segment(np.full((160, 160, 3), 0.5), SlicParams(8))


def test_immediate8_interior_and_corner(grid20):
    assert len(grid_neighbors(grid20, grid20.sp_at(5, 5))) == 8
    corner = grid_neighbors(grid20, 0)
    assert sorted(corner) == sorted([grid20.sp_at(1, 0), grid20.sp_at(0, 1), grid20.sp_at(1, 1)])


def test_immediate8_ring_order(grid20):
    s = grid20.sp_at(4, 4)
    expect = [(5, 4), (5, 3), (4, 3), (3, 3), (3, 4), (3, 5), (4, 5), (5, 5)]
    assert grid_neighbors(grid20, s) == [grid20.sp_at(x, y) for x, y in expect]


def test_kernel_count_example(grid20):
    S = grid20.size
    s = grid20.sp_at(10, 10)
    got = grid_neighbors(grid20, s, "kernel", size_px=40 * S, step_sp=5)
    ref = naive_kernel(10, 10, 20, 20, 40 * S, 5, S)
    assert got == ref
    # radius 5 fits in every direction; radius 10 only towards the low-index
    # borders (W, NW, N); radii >= 15 all leave the 20x20 grid
    assert len(got) == 8 + 8 + 3
    assert len(set(got)) == len(got)


@given(st.integers(0, 19), st.integers(0, 19), st.floats(8, 400), st.integers(1, 7))
def test_kernel_matches_enumeration(grid20, gx, gy, size_px, step):
    s = grid20.sp_at(gx, gy)
    got = grid_neighbors(grid20, s, "kernel", size_px=size_px, step_sp=step)
    assert got == naive_kernel(gx, gy, 20, 20, size_px, step, grid20.size)
    assert got[:len(grid_neighbors(grid20, s))] == grid_neighbors(grid20, s)


def test_kernel_offsets_ring_first():
    offs = kernel_offsets(80, 2, 8)
    assert [tuple(o) for o in offs[:8]] == [(1, 0), (1, -1), (0, -1), (-1, -1),
                                            (-1, 0), (-1, 1), (0, 1), (1, 1)]
    assert (2, 0) in map(tuple, offs) and (10, -10) in map(tuple, offs)
    assert (12, 0) not in map(tuple, offs)


def test_neighbor_table_matches_grid_neighbors(grid20):
    tab = neighbor_table(20, 20)
    for s in (0, 19, 21, 210, 399):
        assert [j for j in tab[s] if j >= 0] == grid_neighbors(grid20, s)


# -- min neighbour similarity ---------------------------------------------------------

def test_min_similarity_uniform(grid20):
    assert np.all(min_neighbor_similarity_all(grid20, 7.5) == 1.0)
    assert min_neighbor_similarity(grid20, 50, 7.5) == 1.0


def _grid_with_colors(colors, gw=3, gh=3):
    grid = slic_segment(np.full((8 * gh, 8 * gw, 3), 0.5), SlicParams(8))
    object.__setattr__(grid, "mean_colors", np.asarray(colors, float))
    return grid


def test_min_similarity_one_sigma():
    colors = np.zeros((9, 3))
    colors[5] = [2.0, 0.0, 0.0]
    grid = _grid_with_colors(colors)
    assert min_neighbor_similarity(grid, 4, 2.0) == pytest.approx(np.exp(-0.5))
    assert min_neighbor_similarity_all(grid, 2.0)[4] == pytest.approx(np.exp(-0.5))


def test_min_similarity_black_white():
    colors = np.zeros((9, 3))
    colors[1] = [100.0, 0.0, 0.0]
    grid = _grid_with_colors(colors)
    assert min_neighbor_similarity(grid, 4, 0.1) == pytest.approx(0.0, abs=1e-300)


def test_min_similarity_all_matches_scalar():
    rng = np.random.default_rng(3)
    grid = _grid_with_colors(rng.random((20, 3)) * 30, 5, 4)
    allv = min_neighbor_similarity_all(grid, 7.5)
    for s in range(20):
        assert allv[s] == pytest.approx(min_neighbor_similarity(grid, s, 7.5), rel=1e-12)
