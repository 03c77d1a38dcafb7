import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from conftest import loop_conv_same
from metaconv.errors import InvalidInputError, LayoutOverflowError, WindowOverlapError
from metaconv.layout import (build_target_psf, check_windows, extract_feature_map, grid_shape,
                             split_pos_neg, tile_layout)
from metaconv.optical import sensor_from_psfs
from metaconv.sensor import NOISELESS


def test_split_example():
    w = np.array([[1.0, -2.0], [0.0, 3.0]])
    pos, neg = split_pos_neg(w)
    np.testing.assert_array_equal(pos, [[1, 0], [0, 3]])
    np.testing.assert_array_equal(neg, [[0, 2], [0, 0]])


def test_split_nonnegative_kernel_has_no_negative_part(rng):
    _, neg = split_pos_neg(rng.uniform(0, 1, (4, 3, 3, 3)))
    assert not neg.any()


def test_split_reconstructs_bit_exactly(rng):
    w = rng.normal(size=(100, 3, 3, 3))
    pos, neg = split_pos_neg(w)
    assert np.array_equal(pos - neg, w)
    assert (pos >= 0).all() and (neg >= 0).all()


def test_fig3_grid():
    assert grid_shape(96) == (8, 12)
    lay = tile_layout(48, 3, 20, 1024)
    assert lay.tile_size == 43
    assert len(lay.tile_centers) == 96
    assert lay.grid_rows * lay.grid_cols == 96


def test_fig3_grid_overflows_512():
    # 12 tiles of 43 pixels need 516 pixels across
    with pytest.raises(LayoutOverflowError):
        tile_layout(48, 3, 20, 512)


def test_pad8_tile_spacing():
    lay = tile_layout(8, 3, 8, 128)
    assert lay.tile_size == 19
    d = np.diff(np.unique(lay.tile_centers[:, 1]))
    np.testing.assert_array_equal(d, 19)
    # 16 zero pixels between neighbouring 3x3 sub-kernels
    assert d[0] - 3 == 16


def test_positive_top_negative_bottom_row_major():
    lay = tile_layout(6, 3, 2, 64)
    rows = lay.tile_centers[:, 0]
    assert rows[lay.polarity > 0].max() < rows[lay.polarity < 0].min()
    np.testing.assert_array_equal(lay.kernel_index[lay.polarity > 0], np.arange(6))
    np.testing.assert_array_equal(lay.kernel_index[lay.polarity < 0], np.arange(6))
    pos = lay.positive_centers()
    # row-major order: column increases fastest
    assert pos[1, 1] > pos[0, 1] and pos[1, 0] == pos[0, 0]


def test_target_psf_structure(rng):
    k = rng.normal(size=(4, 3, 3, 3))
    t = build_target_psf(k, 4, 64)
    v, lay = t.values, t.layout
    assert v.shape == (3, 64, 64)
    assert (v >= 0).all()
    np.testing.assert_allclose(v.sum(axis=(1, 2)), 64 * 64, rtol=1e-12)
    inside = np.zeros((64, 64), dtype=bool)
    h = 1
    for (r, c), s, j in zip(lay.tile_centers, lay.polarity, lay.kernel_index):
        inside[r - h:r + h + 1, c - h:c + h + 1] = True
        part = np.maximum(s * k[j], 0)
        np.testing.assert_allclose(v[:, r - h:r + h + 1, c - h:c + h + 1],
                                   part * lay.channel_scale[:, None, None], rtol=1e-13)
    assert not v[:, ~inside].any()


def test_target_efficiency_scales_energy(rng):
    k = rng.normal(size=(2, 1, 3, 3))
    t = build_target_psf(k, 2, 32, efficiency=0.8)
    assert t.values.sum() == pytest.approx(0.8 * 32 * 32, rel=1e-12)


@pytest.mark.parametrize("k", [2, 4])
def test_even_kernel_rejected(k):
    with pytest.raises(InvalidInputError):
        build_target_psf(np.ones((1, 1, k, k)), 2, 32)


def test_window_overlap_error():
    lay = tile_layout(2, 3, 2, 32)  # tile size 7
    check_windows(lay, 7)
    with pytest.raises(WindowOverlapError):
        check_windows(lay, 8)
    with pytest.raises(WindowOverlapError):
        extract_feature_map(np.zeros((32, 32)), lay, 8)


def test_zero_sensor_zero_features():
    lay = tile_layout(3, 3, 4, 64)
    assert not extract_feature_map(np.zeros((64, 64)), lay, 8).any()


def test_delta_input_recovers_kernels(rng):
    k = rng.normal(size=(4, 3, 3, 3))
    t = build_target_psf(k, 4, 64)
    s = 5
    for ch in range(3):
        scene = np.zeros((3, s, s))
        scene[ch, s // 2, s // 2] = 1.0
        sensor = sensor_from_psfs(scene, t.values, np.eye(3), NOISELESS, t.layout.channel_gains())
        f = extract_feature_map(sensor, t.layout, s)
        expected = np.zeros((4, s, s))
        expected[:, 1:4, 1:4] = k[:, ch]
        np.testing.assert_allclose(f, expected, atol=1e-10 * np.abs(k).max())


def test_round_trip_random_scene_matches_loop_convolution(rng):
    k = rng.normal(size=(3, 3, 3, 3))
    t = build_target_psf(k, 8, 128)
    scene = rng.uniform(size=(3, 16, 16))
    sensor = sensor_from_psfs(scene, t.values, np.eye(3), NOISELESS, t.layout.channel_gains())
    f = extract_feature_map(sensor, t.layout, 16)
    oracle = loop_conv_same(scene, k)
    assert np.linalg.norm(f - oracle) / np.linalg.norm(oracle) < 1e-10


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (32, 32), elements=st.floats(-1e3, 1e3)),
       arrays(np.float64, (32, 32), elements=st.floats(-1e3, 1e3)),
       st.floats(-10, 10))
def test_extract_is_linear(a, b, alpha):
    lay = tile_layout(2, 3, 2, 32)
    lay.normalization = 3.0
    lhs = extract_feature_map(alpha * a + b, lay, 6)
    rhs = alpha * extract_feature_map(a, lay, 6) + extract_feature_map(b, lay, 6)
    np.testing.assert_allclose(lhs, rhs, atol=1e-9 * (1 + abs(alpha)) * 1e3)
