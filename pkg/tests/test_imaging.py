import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from PIL import Image
from scipy import ndimage
from skimage import data, feature, filters, transform

from edgesr import imaging


def rand_img(rng, h, w, c=3):
    return rng.random((h, w, c))


def test_grayscale_weights():
    img = np.zeros((2, 2, 3))
    img[0, 0] = (1, 0, 0)
    img[0, 1] = (0, 1, 0)
    img[1, 0] = (0, 0, 1)
    img[1, 1] = (1, 1, 1)
    g = imaging.to_grayscale(img)
    assert g.shape == (2, 2, 1)
    np.testing.assert_allclose(g[..., 0], [[0.299, 0.587], [0.114, 1.0]])


def test_grayscale_rejects_wrong_channels():
    with pytest.raises(ValueError):
        imaging.to_grayscale(np.zeros((4, 4, 1)))


def test_gaussian_kernel():
    k = imaging.gaussian_kernel1d(1.0)
    assert len(k) == 7
    assert k.sum() == pytest.approx(1.0)
    np.testing.assert_allclose(k, k[::-1])
    with pytest.raises(ValueError):
        imaging.gaussian_kernel1d(0)


def test_blur_preserves_constant():
    img = np.full((9, 13, 3), 0.37)
    np.testing.assert_allclose(imaging.gaussian_blur(img, 1.0), img)


def test_degrade_sizes():
    hr = np.random.default_rng(0).random((512, 512, 3))
    assert imaging.degrade(hr, 4).shape == (128, 128, 3)
    assert imaging.degrade(hr, 8).shape == (64, 64, 3)


def test_degrade_rejects_indivisible():
    with pytest.raises(ValueError):
        imaging.degrade(np.zeros((10, 12, 3)), 4)


def test_degrade_matches_explicit_blur_then_subsample():
    rng = np.random.default_rng(1)
    hr = rand_img(rng, 32, 24)
    k = imaging.gaussian_kernel1d(1.0)
    expect = np.stack([
        ndimage.correlate(hr[..., c], np.outer(k, k), mode="reflect") for c in range(3)
    ], -1)[::2, ::2]
    np.testing.assert_allclose(imaging.degrade(hr, 2), np.clip(expect, 0, 1), atol=1e-12)


@pytest.mark.parametrize("s", [2, 4, 8])
def test_offset_kernel_pattern(s):
    k = imaging.offset_kernel(s)
    assert k.shape == (s, s)
    assert k[0, 0] == 1 and k.sum() == 1


def test_offset_upsample_places_pixels():
    lr = np.arange(6, dtype=float).reshape(2, 3) + 1
    up = imaging.offset_upsample(lr, 2)
    expect = np.array([
        [1, 0, 2, 0, 3, 0],
        [0, 0, 0, 0, 0, 0],
        [4, 0, 5, 0, 6, 0],
        [0, 0, 0, 0, 0, 0],
    ], dtype=float)
    np.testing.assert_array_equal(up, expect)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 9), st.integers(1, 9), st.sampled_from([2, 4, 8]), st.integers(0, 2**31 - 1))
def test_offset_roundtrip(h, w, s, seed):
    lr = np.random.default_rng(seed).random((h, w, 3))
    np.testing.assert_array_equal(imaging.degrade(imaging.offset_upsample(lr, s), s, sigma=0), lr)


def test_canny_constant_is_empty():
    assert not imaging.canny(np.full((32, 32), 0.5)).any()


def test_canny_step_edge():
    img = np.zeros((32, 32))
    img[:, 16:] = 1.0
    edges = imaging.canny(img)
    cols = np.unique(np.nonzero(edges)[1])
    assert list(cols) == [16]
    ref = feature.canny(img, sigma=2.0, low_threshold=0.1, high_threshold=0.2, use_quantiles=True, mode="reflect")
    assert list(np.unique(np.nonzero(ref)[1])) == [16]


def test_canny_scale_invariant():
    g = transform.resize(data.camera() / 255.0, (96, 96), anti_aliasing=True)
    np.testing.assert_array_equal(imaging.canny(g), imaging.canny(0.5 * g))


@pytest.mark.parametrize("name", ["camera", "astronaut", "coffee"])
def test_canny_agrees_with_skimage(name):
    im = getattr(data, name)() / 255.0
    if im.ndim == 3:
        im = im @ np.array(imaging.LUMA_WEIGHTS)
    g = transform.resize(im, (128, 128), anti_aliasing=True)
    ours = imaging.canny(g, 2.0).astype(bool)
    # skimage takes absolute thresholds and ignores the outer ring
    smooth = filters.gaussian(g, sigma=2, mode="reflect", truncate=3)
    peak = np.hypot(ndimage.sobel(smooth, 1), ndimage.sobel(smooth, 0))[1:-1, 1:-1].max()
    ref = feature.canny(g, sigma=2.0, low_threshold=0.1 * peak, high_threshold=0.2 * peak, mode="reflect")
    ours[[0, -1]] = False
    ours[:, [0, -1]] = False
    iou = (ours & ref).sum() / (ours | ref).sum()
    near_ref = (ndimage.binary_dilation(ref) & ours).sum() / ours.sum()
    near_ours = (ndimage.binary_dilation(ours) & ref).sum() / ref.sum()
    assert iou > 0.8
    assert near_ref > 0.95 and near_ours > 0.95


def test_canny_output_binary():
    g = np.random.default_rng(3).random((40, 40))
    e = imaging.canny(g)
    assert set(np.unique(e)) <= {0.0, 1.0}


@pytest.mark.parametrize("size", [(36, 40), (7, 5), (24, 20)])
def test_bicubic_matches_pil_float(size):
    rng = np.random.default_rng(4)
    x = rng.random((12, 10))
    # mode F keeps float precision and skips the intermediate uint8 clamp
    pil = np.asarray(Image.fromarray(x.astype(np.float32), mode="F").resize(size[::-1], Image.BICUBIC))
    ours = imaging.resample_matrix(12, size[0], "bicubic") @ x @ imaging.resample_matrix(10, size[1], "bicubic").T
    # PIL renormalizes truncated taps at the border instead of clamping, so compare the interior
    m = 3 * max(1, size[0] // 12)
    n = 3 * max(1, size[1] // 10)
    np.testing.assert_allclose(ours[m:-m, n:-n], pil[m:-m, n:-n], atol=1e-5)


def test_nearest_integer_factor_is_repeat():
    x = np.random.default_rng(5).random((5, 7, 3))
    up = imaging.interpolate(x, 20, 28, "nearest")
    np.testing.assert_array_equal(up, np.repeat(np.repeat(x, 4, 0), 4, 1))


@pytest.mark.parametrize("method", ["nearest", "bilinear", "bicubic"])
def test_interpolate_identity_and_constant(method):
    x = np.random.default_rng(6).random((9, 11, 3))
    np.testing.assert_allclose(imaging.interpolate(x, 9, 11, method), x, atol=1e-12)
    c = np.full((4, 5, 3), 0.25)
    np.testing.assert_allclose(imaging.interpolate(c, 16, 20, method), 0.25, atol=1e-12)


def test_interpolate_2d_map():
    x = np.random.default_rng(7).random((4, 4))
    assert imaging.interpolate(x, 8, 8, "nearest").shape == (8, 8)


def test_bicubic_rows_sum_to_one():
    m = imaging.resample_matrix(13, 40, "bicubic")
    np.testing.assert_allclose(m.sum(1), 1.0)


def test_png_roundtrip(tmp_path):
    x = np.random.default_rng(8).integers(0, 256, (6, 5, 3)) / 255.0
    p = tmp_path / "x.png"
    imaging.write_png(p, x)
    np.testing.assert_allclose(imaging.read_png(p), x)
    imaging.write_png(p, x[..., 0])
    assert imaging.read_png(p).shape == (6, 5, 1)


def test_unsupported_scale():
    with pytest.raises(ValueError):
        imaging.offset_upsample(np.zeros((2, 2, 3)), 3)
