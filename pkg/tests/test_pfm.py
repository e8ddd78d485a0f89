import numpy as np
import pytest

from epu import pfm
from epu.errors import DimensionError

# frozen from an independent scalar reference-formula computation (D65)
LAB_ORACLE = {
    (255, 0, 0): (53.240794, 80.092460, 67.203197),
    (0, 255, 0): (87.734722, -86.182716, 83.179321),
    (0, 0, 255): (32.297011, 79.187520, -107.860162),
    (255, 255, 0): (97.139267, -21.553748, 94.477975),
}


def solid(rgb, h=4, w=4):
    return pfm.RgbImage(np.tile(np.array(rgb, np.uint8), (h, w, 1)))


def test_lab_white_and_black():
    lab = pfm.srgb_to_lab(solid((255, 255, 255)))
    assert abs(lab.L[0, 0] - 100.0) < 0.01
    assert abs(lab.a[0, 0]) < 0.01 and abs(lab.b[0, 0]) < 0.01
    lab0 = pfm.srgb_to_lab(solid((0, 0, 0)))
    assert lab0.L[0, 0] == pytest.approx(0.0, abs=1e-9)
    assert lab0.a[0, 0] == pytest.approx(0.0, abs=1e-9)
    assert lab0.b[0, 0] == pytest.approx(0.0, abs=1e-9)


def test_lab_primaries_match_oracle():
    for rgb, (L, a, b) in LAB_ORACLE.items():
        lab = pfm.srgb_to_lab(solid(rgb))
        assert lab.L[0, 0] == pytest.approx(L, abs=1e-4)
        assert lab.a[0, 0] == pytest.approx(a, abs=1e-4)
        assert lab.b[0, 0] == pytest.approx(b, abs=1e-4)


def test_lab_achromatic_axis():
    for v in (17, 64, 128, 200, 240):
        lab = pfm.srgb_to_lab(solid((v, v, v)))
        assert np.all(np.abs(lab.a) < 0.01)
        assert np.all(np.abs(lab.b) < 0.01)


def test_dwt_constant_plane():
    ll, lh, hl, hh = pfm.dwt2_level(np.full((6, 6), 3.0))
    assert np.allclose(ll, 6.0)
    for band in (lh, hl, hh):
        assert np.allclose(band, 0.0)


def test_dwt_checkerboard_concentrates_in_hh():
    ll, lh, hl, hh = pfm.dwt2_level(np.array([[1.0, 0.0], [0.0, 1.0]]))
    assert ll[0, 0] == pytest.approx(1.0)
    assert lh[0, 0] == pytest.approx(0.0)
    assert hl[0, 0] == pytest.approx(0.0)
    assert abs(hh[0, 0]) == pytest.approx(1.0)


def test_dwt_preserves_energy_even_dims():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((8, 12))
    bands = pfm.dwt2_level(x)
    assert sum(float((b * b).sum()) for b in bands) == pytest.approx(float((x * x).sum()))


@pytest.mark.parametrize("shape", [(2, 2), (4, 6), (8, 8), (16, 10)])
def test_dwt_roundtrip_even_dims(shape):
    rng = np.random.default_rng(sum(shape))
    x = rng.standard_normal(shape)
    rec = pfm.idwt2_level(*pfm.dwt2_level(x))
    assert np.abs(rec - x).max() < 1e-6


def test_dwt_odd_dims_pad_shape():
    bands = pfm.dwt2_level(np.arange(35.0).reshape(5, 7))
    for b in bands:
        assert b.shape == (3, 4)


def test_dwt_rejects_tiny_plane():
    with pytest.raises(DimensionError):
        pfm.dwt2_level(np.ones((1, 5)))


def test_approximation_level3_constant_and_dims():
    out = pfm.approximation_level3(np.full((16, 24), 1.5))
    assert out.shape == (2, 3)
    assert np.allclose(out, 8 * 1.5)
    ragged = pfm.approximation_level3(np.zeros((9, 11)))
    assert ragged.shape == (2, 2)  # ceil-halving three times


def test_approximation_level3_is_lowpass():
    rng = np.random.default_rng(9)
    x = rng.standard_normal((32, 32))
    out = pfm.approximation_level3(x)
    assert out.var() < x.var()


def test_approximation_level3_rejects_small():
    with pytest.raises(DimensionError):
        pfm.approximation_level3(np.zeros((7, 20)))


def test_detail_level1_cases():
    assert np.allclose(pfm.detail_level1(np.full((4, 4), 2.0)), 0.0)
    edge = np.zeros((8, 8))
    edge[:, 5:] = 1.0  # vertical edge inside a column pair
    assert np.abs(pfm.detail_level1(edge)).max() < 1e-12
    checker = np.tile([[1.0, 0.0], [0.0, 1.0]], (4, 4))
    hh = pfm.detail_level1(checker)
    assert np.allclose(np.abs(hh), 1.0)
    bands = pfm.dwt2_level(checker)
    assert np.allclose(bands[1], 0.0) and np.allclose(bands[2], 0.0)


def test_upsample_identity_and_constant():
    x = np.arange(12.0).reshape(3, 4)
    assert np.array_equal(pfm.upsample(x, 3, 4), x)
    one = pfm.upsample(np.array([[7.5]]), 5, 6)
    assert one.shape == (5, 6)
    assert np.all(one == 7.5)


def test_upsample_corner_aligned_1d():
    out = pfm.upsample(np.array([[0.0, 1.0]]), 1, 4)
    assert np.allclose(out, [[0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0]])


def test_upsample_rejects_zero_target():
    with pytest.raises(DimensionError):
        pfm.upsample(np.ones((2, 2)), 0, 4)


def test_resize_rgb_linear_ramp():
    img = pfm.RgbImage(np.array([[[0, 0, 0], [255, 255, 255]]], np.uint8))
    out = pfm.resize_rgb(img, 1, 4)
    assert np.array_equal(out.pixels[0, :, 0], [0, 85, 170, 255])


def test_build_pfm_stack_shape_and_range():
    rng = np.random.default_rng(3)
    img = pfm.RgbImage(rng.integers(0, 256, size=(50, 70, 3), dtype=np.uint8))
    stack = pfm.build_pfm_stack(img, 32)
    assert stack.maps.shape == (4, 32, 32)
    assert stack.count == 4 and stack.height == 32 and stack.width == 32
    assert stack.maps.min() >= -1.0 and stack.maps.max() <= 1.0
    # wavelet maps are min-max scaled, so they span the full range
    assert stack.maps[0].min() == pytest.approx(-1.0, abs=1e-6)
    assert stack.maps[0].max() == pytest.approx(1.0, abs=1e-6)


def test_build_pfm_stack_achromatic_chroma_is_flat():
    rng = np.random.default_rng(4)
    gray = rng.integers(0, 256, size=(40, 40), dtype=np.uint8)
    img = pfm.RgbImage(np.stack([gray] * 3, axis=-1))
    stack = pfm.build_pfm_stack(img, 16)
    zero_level = (0.0 + 128.0) / 255.0 * 2.0 - 1.0
    assert np.allclose(stack.maps[2], zero_level, atol=1e-4)
    assert np.allclose(stack.maps[3], zero_level, atol=1e-4)


def test_build_pfm_stack_blue_yellow_sign():
    zero_level = (0.0 + 128.0) / 255.0 * 2.0 - 1.0
    yellow = pfm.build_pfm_stack(solid((255, 255, 0), 16, 16), 16)
    blue = pfm.build_pfm_stack(solid((0, 0, 255), 16, 16), 16)
    assert yellow.maps[2].mean() > zero_level
    assert blue.maps[2].mean() < zero_level


def test_chroma_maps_invariant_to_lightness_change():
    # two achromatic images differ only in L (up to color-transform float
    # noise); chroma maps must agree to that same noise floor
    a = pfm.build_pfm_stack(solid((90, 90, 90), 24, 24), 16)
    b = pfm.build_pfm_stack(solid((200, 200, 200), 24, 24), 16)
    assert np.allclose(a.maps[2], b.maps[2], atol=1e-6)
    assert np.allclose(a.maps[3], b.maps[3], atol=1e-6)


def test_build_pfm_stack_deterministic():
    rng = np.random.default_rng(8)
    img = pfm.RgbImage(rng.integers(0, 256, size=(33, 29, 3), dtype=np.uint8))
    s1 = pfm.build_pfm_stack(img, 16)
    s2 = pfm.build_pfm_stack(img, 16)
    assert np.array_equal(s1.maps, s2.maps)


def test_constant_image_gives_zero_wavelet_maps():
    stack = pfm.build_pfm_stack(solid((120, 120, 120), 16, 16), 16)
    assert np.all(stack.maps[0] == 0.0)
    assert np.all(stack.maps[1] == 0.0)
