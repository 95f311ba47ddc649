"""Image operations: color conversion, degradation, Canny edges, resampling
and the zero-insertion ("pixel offset") upsampling that turns SR into inpainting.

Images are float64 numpy arrays of shape (H, W, C) with values in [0, 1].
Edge maps are (H, W) arrays in [0, 1].
"""
import math

import numpy as np
from PIL import Image
from scipy import ndimage

LUMA_WEIGHTS = (0.299, 0.587, 0.114)
SUPPORTED_SCALES = (2, 4, 8)
CANNY_LOW = 0.1
CANNY_HIGH = 0.2
BICUBIC_A = -0.5


def _check_image(img):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError(f"expected an (H, W, C) image, got shape {img.shape}")
    return img


def _check_scale(scale):
    if scale not in SUPPORTED_SCALES:
        raise ValueError(f"unsupported scale {scale!r}; expected one of {SUPPORTED_SCALES}")


def to_grayscale(img):
    """BT.601 luminance of an RGB image, returned as (H, W, 1)."""
    img = _check_image(img)
    if img.shape[2] != 3:
        raise ValueError(f"to_grayscale needs 3 channels, got {img.shape[2]}")
    gray = img @ np.asarray(LUMA_WEIGHTS)
    return np.clip(gray, 0.0, 1.0)[..., None]


def gaussian_kernel1d(sigma):
    """Normalized discrete Gaussian truncated at radius ceil(3 * sigma)."""
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    radius = int(math.ceil(3 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return k / k.sum()


def _blur2d(plane, kernel):
    # 'reflect' in scipy is half-sample symmetric: (c b a | a b c)
    out = ndimage.correlate1d(plane, kernel, axis=0, mode="reflect")
    return ndimage.correlate1d(out, kernel, axis=1, mode="reflect")


def gaussian_blur(img, sigma):
    img = _check_image(img)
    kernel = gaussian_kernel1d(sigma)
    out = np.stack([_blur2d(img[..., c], kernel) for c in range(img.shape[2])], axis=-1)
    return np.clip(out, 0.0, 1.0)


def degrade(hr, scale, sigma=1.0):
    """Blur with a Gaussian of width ``sigma`` then keep every ``scale``-th pixel.

    ``sigma=0`` skips the blur. The kept phase is index 0 (mod scale), which
    lines up with where :func:`offset_upsample` places LR pixels.
    """
    hr = _check_image(hr)
    h, w = hr.shape[:2]
    if scale < 1 or h % scale or w % scale:
        raise ValueError(f"image size {h}x{w} is not divisible by scale {scale}; crop first")
    if sigma < 0:
        raise ValueError(f"sigma must be non-negative, got {sigma}")
    blurred = gaussian_blur(hr, sigma) if sigma > 0 else hr
    return blurred[::scale, ::scale].copy()


def _nonmax_suppress(mag, gx, gy):
    angle = np.rad2deg(np.arctan2(gy, gx)) % 180.0
    # (dy, dx) step along the gradient for each quantized direction
    bins = ((angle + 22.5) // 45).astype(int) % 4
    steps = {0: (0, 1), 1: (1, 1), 2: (1, 0), 3: (1, -1)}
    padded = np.pad(mag, 1)
    h, w = mag.shape
    keep = np.zeros(mag.shape, dtype=bool)
    for b, (dy, dx) in steps.items():
        ahead = padded[1 + dy:1 + dy + h, 1 + dx:1 + dx + w]
        behind = padded[1 - dy:1 - dy + h, 1 - dx:1 - dx + w]
        # ties broken toward the far side so a two-pixel plateau gives one edge
        # pixel, on the first sample past the step
        keep |= (bins == b) & (mag >= behind) & (mag > ahead)
    return keep


def canny(gray, sigma=2.0, low=CANNY_LOW, high=CANNY_HIGH):
    """Binary Canny edge map of a single-channel image.

    ``low``/``high`` are hysteresis thresholds as fractions of the maximum
    gradient magnitude, so the result does not depend on intensity scale.
    """
    gray = np.asarray(gray, dtype=np.float64)
    if gray.ndim == 3:
        if gray.shape[2] != 1:
            raise ValueError(f"canny needs a single-channel image, got {gray.shape[2]} channels")
        gray = gray[..., 0]
    if gray.ndim != 2:
        raise ValueError(f"canny needs a 2-D image, got shape {gray.shape}")
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")

    smooth = _blur2d(gray, gaussian_kernel1d(sigma))
    gx = ndimage.sobel(smooth, axis=1, mode="reflect")
    gy = ndimage.sobel(smooth, axis=0, mode="reflect")
    mag = np.hypot(gx, gy)
    peak = mag.max()
    if peak <= 0:
        return np.zeros_like(gray)

    thin = _nonmax_suppress(mag, gx, gy)
    strong = thin & (mag >= high * peak)
    weak = thin & (mag >= low * peak)
    labels, n = ndimage.label(weak, structure=np.ones((3, 3), dtype=bool))
    if n == 0:
        return np.zeros_like(gray)
    connected = np.zeros(n + 1, dtype=bool)
    connected[np.unique(labels[strong])] = True
    connected[0] = False
    return connected[labels].astype(np.float64)


def _cubic(x, a=BICUBIC_A):
    x = np.abs(x)
    return np.where(
        x <= 1,
        (a + 2) * x ** 3 - (a + 3) * x ** 2 + 1,
        np.where(x < 2, a * x ** 3 - 5 * a * x ** 2 + 8 * a * x - 4 * a, 0.0),
    )


def resample_matrix(n_in, n_out, method):
    """(n_out, n_in) matrix mapping samples along one axis.

    Pixel centers sit at half-integers; out-of-range taps are clamped to the
    border sample.
    """
    if n_in < 1 or n_out < 1:
        raise ValueError("sizes must be >= 1")
    ratio = n_in / n_out
    rows = np.arange(n_out)
    m = np.zeros((n_out, n_in))
    if method == "nearest":
        idx = np.minimum(np.floor((rows + 0.5) * ratio).astype(int), n_in - 1)
        m[rows, idx] = 1.0
        return m
    src = (rows + 0.5) * ratio - 0.5
    base = np.floor(src).astype(int)
    t = src - base
    if method == "bilinear":
        taps = [(0, 1 - t), (1, t)]
    elif method == "bicubic":
        taps = [(-1, _cubic(t + 1)), (0, _cubic(t)), (1, _cubic(1 - t)), (2, _cubic(2 - t))]
    else:
        raise ValueError(f"unknown interpolation method {method!r}")
    for offset, weight in taps:
        np.add.at(m, (rows, np.clip(base + offset, 0, n_in - 1)), weight)
    return m


def interpolate(img, target_h, target_w, method="bicubic"):
    """Resize to (target_h, target_w). Accepts (H, W, C) images or (H, W) maps."""
    arr = np.asarray(img, dtype=np.float64)
    flat = arr.ndim == 2
    if flat:
        arr = arr[..., None]
    arr = _check_image(arr)
    if target_h < 1 or target_w < 1:
        raise ValueError(f"target size must be >= 1, got {target_h}x{target_w}")
    my = resample_matrix(arr.shape[0], target_h, method)
    mx = resample_matrix(arr.shape[1], target_w, method)
    # rows first, then columns; each is a plain matmul
    out = np.einsum("ij,jkc->ikc", my, arr)
    out = np.einsum("ikc,lk->ilc", out, mx)
    if method == "bicubic":
        out = np.clip(out, 0.0, 1.0)
    return out[..., 0] if flat else out


def offset_kernel(scale):
    """s x s kernel with a single 1 at the origin."""
    _check_scale(scale)
    k = np.zeros((scale, scale))
    k[0, 0] = 1.0
    return k


def offset_upsample(lr, scale):
    """Zero-insertion upsampling: lr[i, j] lands at (s*i, s*j), everything else is 0.

    Equivalent to a transposed convolution of ``lr`` with stride ``scale`` and
    kernel :func:`offset_kernel`.
    """
    arr = np.asarray(lr, dtype=np.float64)
    flat = arr.ndim == 2
    if flat:
        arr = arr[..., None]
    arr = _check_image(arr)
    k = offset_kernel(scale)
    h, w, c = arr.shape
    out = np.zeros((h * scale, w * scale, c))
    for dy, dx in zip(*np.nonzero(k)):
        out[dy::scale, dx::scale] = arr * k[dy, dx]
    return out[..., 0] if flat else out


def read_png(path):
    """Load an 8-bit image as float64 (H, W, C) in [0, 1]; alpha is dropped."""
    with Image.open(path) as im:
        if im.mode in ("L", "I;16", "I", "1"):
            arr = np.asarray(im.convert("L"), dtype=np.float64)[..., None]
        else:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def to_uint8(img):
    return np.round(np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def write_png(path, img):
    arr = to_uint8(img)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[..., 0]
    Image.fromarray(arr).save(path, format="PNG")
