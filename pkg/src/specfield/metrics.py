"""Image comparison metrics for rendered reflectance planes."""

from __future__ import annotations

import numpy as np
from scipy import ndimage

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def psnr(img: np.ndarray, ref: np.ndarray, peak: float | None = None) -> float:
    """Peak signal-to-noise ratio in dB; +inf for identical arrays.

    peak defaults to the reference maximum.  A zero peak with nonzero error
    gives -inf rather than a numpy warning.
    """
    img = np.asarray(img, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if img.shape != ref.shape:
        raise ValueError(f"shape mismatch {img.shape} vs {ref.shape}")
    if peak is None:
        peak = float(ref.max())
    mse = float(np.mean((img - ref) ** 2))
    if mse == 0.0:
        return float("inf")
    if peak <= 0.0:
        return float("-inf")
    return 10.0 * np.log10(peak * peak / mse)


def gaussian_kernel(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    half = (size - 1) / 2.0
    x = np.arange(size) - half
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    k = np.outer(g, g)
    return k / k.sum()


def ssim(img: np.ndarray, ref: np.ndarray, peak: float | None = None) -> float:
    """Mean structural similarity over fully-interior windows.

    Gaussian-weighted 11x11 windows (sigma 1.5), stability constants
    C1 = (K1 L)^2 and C2 = (K2 L)^2 with L the reference peak.  Windows that
    would read outside the image are excluded from the mean.
    """
    img = np.asarray(img, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if img.shape != ref.shape:
        raise ValueError(f"shape mismatch {img.shape} vs {ref.shape}")
    if img.ndim != 2:
        raise ValueError(f"ssim expects 2-D images, got {img.shape}")
    h, w = img.shape
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise ValueError(f"image {img.shape} smaller than the {SSIM_WINDOW}x"
                         f"{SSIM_WINDOW} window")
    if peak is None:
        peak = float(ref.max())
    if peak <= 0.0:
        peak = 1.0
    c1 = (SSIM_K1 * peak) ** 2
    c2 = (SSIM_K2 * peak) ** 2
    kern = gaussian_kernel()

    def smooth(x):
        full = ndimage.correlate(x, kern, mode="constant")
        half = SSIM_WINDOW // 2
        return full[half : h - half, half : w - half]

    mu_a = smooth(img)
    mu_b = smooth(ref)
    var_a = smooth(img * img) - mu_a * mu_a
    var_b = smooth(ref * ref) - mu_b * mu_b
    cov = smooth(img * ref) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))
