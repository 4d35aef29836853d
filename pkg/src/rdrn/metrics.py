"""PSNR and SSIM on RGB or the BT.601 luma channel, with border shaving.

All metrics assume float images in [0, 1] with shape (H, W) or (H, W, 3).
Identical inputs give the infinite-PSNR sentinel, serialized as "inf".
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import correlate2d

from .errors import ConfigurationError, InputError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


@dataclass
class MetricResult:
    psnr_db: float
    ssim: float
    channel_mode: str = "Y"
    shave: int = 0

    def psnr_repr(self) -> str:
        return "inf" if math.isinf(self.psnr_db) else f"{self.psnr_db:.4f}"


def rgb_to_y(img):
    """Studio-swing BT.601 luma of an RGB image in [0, 1]."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[-1] != 3:
        raise InputError(f"expected an (H, W, 3) image, got {img.shape}")
    r, g, b = img[..., 0], img[..., 1], img[..., 2]
    return (65.481 * r + 128.553 * g + 24.966 * b + 16.0) / 255.0


def _prepare(a, b, shave, channel_mode):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InputError(f"shape mismatch: {a.shape} vs {b.shape}")
    if channel_mode not in ("Y", "RGB"):
        raise ConfigurationError("channel_mode must be 'Y' or 'RGB'")
    if channel_mode == "Y" and a.ndim == 3:
        a, b = rgb_to_y(a), rgb_to_y(b)
    if shave < 0 or 2 * shave >= min(a.shape[0], a.shape[1]):
        raise InputError(f"shave {shave} leaves no pixels on {a.shape[:2]}")
    if shave:
        a = a[shave:-shave, shave:-shave]
        b = b[shave:-shave, shave:-shave]
    return a, b


def psnr(a, b, shave=0, channel_mode="Y"):
    """10*log10(1/MSE) in dB for images in [0, 1]; inf when identical."""
    a, b = _prepare(a, b, shave, channel_mode)
    mse = np.mean((a - b) ** 2)
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(1.0 / mse))


def _ssim_window():
    r = np.arange(SSIM_WINDOW) - (SSIM_WINDOW - 1) / 2
    g = np.exp(-(r * r) / (2.0 * SSIM_SIGMA ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def _ssim_single(a, b):
    if min(a.shape) < SSIM_WINDOW:
        raise InputError(
            f"region {a.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    w = _ssim_window()
    mu_a = correlate2d(a, w, mode="valid")
    mu_b = correlate2d(b, w, mode="valid")
    var_a = correlate2d(a * a, w, mode="valid") - mu_a * mu_a
    var_b = correlate2d(b * b, w, mode="valid") - mu_b * mu_b
    cov = correlate2d(a * b, w, mode="valid") - mu_a * mu_b
    num = (2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mu_a ** 2 + mu_b ** 2 + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return float(np.mean(num / den))


def ssim(a, b, shave=0, channel_mode="Y"):
    """Mean local SSIM with an 11x11 Gaussian window (sigma 1.5)."""
    a, b = _prepare(a, b, shave, channel_mode)
    if a.ndim == 2:
        return _ssim_single(a, b)
    return float(np.mean(
        [_ssim_single(a[..., c], b[..., c]) for c in range(a.shape[-1])]))


def evaluate_pair(sr, hr, shave, channel_mode="Y") -> MetricResult:
    return MetricResult(
        psnr_db=psnr(sr, hr, shave, channel_mode),
        ssim=ssim(sr, hr, shave, channel_mode),
        channel_mode=channel_mode,
        shave=shave,
    )
