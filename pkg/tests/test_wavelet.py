"""Haar transform oracles: closed-form coefficients, energy, inversion."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mwtdiff.wavelet import WaveletLevel, dwt2, dwt2_level, idwt2, idwt2_level


def test_constant_patch_concentrates_in_ll():
    """A constant image has LL = 2c per block and zero detail bands."""
    for c in (0.0, 1.0, -3.25, 0.5):
        img = np.full((8, 8), c)
        lvl = dwt2_level(img)
        np.testing.assert_allclose(lvl.ll, 2.0 * c, atol=1e-15)
        assert lvl.detail_energy() == pytest.approx(0.0, abs=1e-28)


def test_checkerboard_concentrates_in_hh():
    img = np.indices((16, 16)).sum(axis=0) % 2
    img = np.where(img == 0, 1.0, -1.0)
    lvl = dwt2_level(img)
    np.testing.assert_allclose(lvl.ll, 0.0, atol=1e-15)
    np.testing.assert_allclose(lvl.lh, 0.0, atol=1e-15)
    np.testing.assert_allclose(lvl.hl, 0.0, atol=1e-15)
    np.testing.assert_allclose(np.abs(lvl.hh), 2.0, atol=1e-15)


def test_horizontal_stripes_land_in_hl():
    """Rows alternating in intensity excite the vertical-contrast band."""
    img = np.tile(np.array([[1.0], [-1.0]]), (4, 8))
    lvl = dwt2_level(img)
    assert np.abs(lvl.hl).max() > 1.9
    np.testing.assert_allclose(lvl.lh, 0.0, atol=1e-15)
    np.testing.assert_allclose(lvl.hh, 0.0, atol=1e-15)


@settings(max_examples=40, deadline=None)
@given(
    h=st.sampled_from([8, 16, 32]),
    w=st.sampled_from([8, 16, 64]),
    depth=st.integers(min_value=1, max_value=3),
    seed=st.integers(min_value=0, max_value=2**31 - 1),
)
def test_round_trip_is_exact(h, w, depth, seed):
    rng = np.random.default_rng(seed)
    img = rng.normal(size=(h, w))
    back = idwt2(dwt2(img, depth=depth))
    np.testing.assert_allclose(back, img, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(
    depth=st.integers(min_value=1, max_value=3),
    seed=st.integers(min_value=0, max_value=2**31 - 1),
)
def test_energy_is_preserved(depth, seed):
    """Orthonormality: sum of squared coefficients equals image energy."""
    rng = np.random.default_rng(seed)
    img = rng.normal(size=(32, 32, 3))
    pyr = dwt2(img, depth=depth)
    img_energy = float(np.sum(img.astype(np.float64) ** 2))
    assert pyr.energy() == pytest.approx(img_energy, rel=1e-12)


def test_transform_is_linear():
    rng = np.random.default_rng(11)
    x, y = rng.normal(size=(2, 16, 16))
    a, b = 2.5, -0.75
    combo = dwt2_level(a * x + b * y)
    px, py = dwt2_level(x), dwt2_level(y)
    for band in ("ll", "lh", "hl", "hh"):
        np.testing.assert_allclose(
            getattr(combo, band),
            a * getattr(px, band) + b * getattr(py, band),
            atol=1e-12,
        )


def test_multichannel_matches_per_channel():
    rng = np.random.default_rng(5)
    img = rng.normal(size=(16, 16, 3))
    joint = dwt2(img, depth=2)
    for ch in range(3):
        solo = dwt2(img[:, :, ch], depth=2)
        for j, s in zip(joint.levels, solo.levels):
            np.testing.assert_allclose(j.ll[:, :, ch], s.ll, atol=1e-13)
            np.testing.assert_allclose(j.hh[:, :, ch], s.hh, atol=1e-13)


def test_pyramid_shapes_halve():
    pyr = dwt2(np.zeros((64, 32, 3)), depth=3)
    shapes = [lvl.ll.shape for lvl in pyr.levels]
    assert shapes == [(32, 16, 3), (16, 8, 3), (8, 4, 3)]
    assert pyr.coarsest_ll.shape == (8, 4, 3)


@pytest.mark.parametrize("shape", [(7, 8), (8, 7), (9, 9)])
def test_odd_sizes_rejected_with_padding_hint(shape):
    with pytest.raises(ValueError, match="pad"):
        dwt2_level(np.zeros(shape))


def test_depth_beyond_divisibility_rejected():
    with pytest.raises(ValueError, match="pad"):
        dwt2(np.zeros((8, 8)), depth=4)


def test_bad_depth_rejected():
    with pytest.raises(ValueError):
        dwt2(np.zeros((8, 8)), depth=0)


def test_mismatched_subband_shapes_rejected():
    lvl = WaveletLevel(
        ll=np.zeros((4, 4)), lh=np.zeros((4, 4)),
        hl=np.zeros((4, 4)), hh=np.zeros((2, 2)),
    )
    with pytest.raises(ValueError, match="hh"):
        idwt2_level(lvl)


def test_1d_input_rejected():
    with pytest.raises(ValueError):
        dwt2(np.zeros(16))
