"""LR generation: bicubic (BI), blur-downscale (BD), downscale-noise (DN).

Images are float arrays in [0, 1], shaped (H, W) or (H, W, C). The resizer
follows the SR-literature reference convention: Keys cubic kernel with
a = -0.5, kernel stretched for antialiasing when downscaling, edge pixels
replicated, and per-pixel weight normalization.
"""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ConfigurationError, InputError

DEGRADATION_KINDS = ("BI", "BD", "DN")


@dataclass(frozen=True)
class DegradationSpec:
    kind: str = "BI"
    scale: int = 4
    blur_kernel_size: int = 7
    blur_sigma: float = 1.6
    noise_sigma: float = 30.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.kind not in DEGRADATION_KINDS:
            raise ConfigurationError(
                f"kind must be one of {DEGRADATION_KINDS}, got {self.kind!r}")
        if self.scale < 1:
            raise ConfigurationError("scale must be >= 1")
        if self.kind == "BD":
            if self.blur_kernel_size < 1 or self.blur_kernel_size % 2 == 0:
                raise ConfigurationError("blur_kernel_size must be odd")
            if self.blur_sigma <= 0:
                raise ConfigurationError("blur_sigma must be positive")
        if self.kind == "DN" and self.noise_sigma < 0:
            raise ConfigurationError("noise_sigma must be >= 0")


def _cubic(x):
    # Keys kernel, a = -0.5
    ax = np.abs(x)
    ax2, ax3 = ax * ax, ax * ax * ax
    inner = 1.5 * ax3 - 2.5 * ax2 + 1.0
    outer = -0.5 * ax3 + 2.5 * ax2 - 4.0 * ax + 2.0
    return np.where(ax <= 1, inner, np.where(ax <= 2, outer, 0.0))


def _resize_axis_weights(in_len, out_len, antialias):
    scale = out_len / in_len
    kscale = scale if (antialias and scale < 1) else 1.0
    support = 2.0 / kscale
    # Output pixel centers mapped back to input coordinates.
    u = (np.arange(out_len) + 0.5) / scale - 0.5
    left = np.floor(u - support).astype(int) + 1
    n_taps = int(np.ceil(2 * support)) + 2
    idx = left[:, None] + np.arange(n_taps)[None, :]
    weights = _cubic((u[:, None] - idx) * kscale) * kscale
    weights /= weights.sum(axis=1, keepdims=True)
    idx = np.clip(idx, 0, in_len - 1)  # replicate edges
    return weights, idx


def _resize_along(img, axis, out_len, antialias):
    in_len = img.shape[axis]
    weights, idx = _resize_axis_weights(in_len, out_len, antialias)
    moved = np.moveaxis(img, axis, 0)
    out = np.einsum("ot,ot...->o...", weights, moved[idx])
    return np.moveaxis(out, 0, axis)


def bicubic_resize(img, scale_factor):
    """Resize by the given factor (>1 enlarges); antialiased on downscale."""
    if scale_factor <= 0:
        raise ConfigurationError("scale_factor must be positive")
    img = np.asarray(img, dtype=np.float64)
    out_h = int(round(img.shape[0] * scale_factor))
    out_w = int(round(img.shape[1] * scale_factor))
    if out_h < 1 or out_w < 1:
        raise InputError(
            f"resize of {img.shape[:2]} by {scale_factor} collapses to zero size")
    antialias = scale_factor < 1
    out = _resize_along(img, 0, out_h, antialias)
    out = _resize_along(out, 1, out_w, antialias)
    return out


def gaussian_kernel(size, sigma):
    """Isotropic 2-D Gaussian, normalized to sum exactly 1."""
    if size < 1 or size % 2 == 0:
        raise ConfigurationError("kernel size must be a positive odd integer")
    if sigma <= 0:
        raise ConfigurationError("sigma must be positive")
    r = np.arange(size) - (size - 1) / 2
    g = np.exp(-(r * r) / (2.0 * sigma * sigma))
    kernel = np.outer(g, g)
    return kernel / kernel.sum()


def gaussian_blur(img, size, sigma):
    kernel = gaussian_kernel(size, sigma)
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return ndimage.convolve(img, kernel, mode="reflect")
    return np.stack(
        [ndimage.convolve(img[..., c], kernel, mode="reflect")
         for c in range(img.shape[-1])], axis=-1)


def crop_to_multiple(img, scale):
    h = img.shape[0] - img.shape[0] % scale
    w = img.shape[1] - img.shape[1] % scale
    return img[:h, :w]


def degrade(hr, spec: DegradationSpec):
    """Produce the LR counterpart of an HR image under the given protocol."""
    hr = crop_to_multiple(np.asarray(hr, dtype=np.float64), spec.scale)
    if hr.shape[0] < spec.scale or hr.shape[1] < spec.scale:
        raise InputError("image smaller than one LR pixel after cropping")
    if spec.kind == "BI":
        return bicubic_resize(hr, 1.0 / spec.scale)
    if spec.kind == "BD":
        blurred = gaussian_blur(hr, spec.blur_kernel_size, spec.blur_sigma)
        return bicubic_resize(blurred, 1.0 / spec.scale)
    # DN: downscale first, then add Gaussian read noise in 8-bit units.
    lr = bicubic_resize(hr, 1.0 / spec.scale)
    rng = np.random.default_rng(spec.rng_seed)
    lr = lr + rng.normal(0.0, spec.noise_sigma / 255.0, size=lr.shape)
    return np.clip(lr, 0.0, 1.0)


def image_seed(base_seed, image_index):
    """Stable per-image seed so batches can be degraded in parallel."""
    return int(np.random.SeedSequence([base_seed, image_index]).generate_state(1)[0])
