"""PSNR and single-scale SSIM."""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeMismatch

PSNR_CAP = 99.0


def psnr(a, b, peak: float = 1.0) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"{a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse < 1e-12:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(peak * peak / mse))


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def _ssim_channel(a: np.ndarray, b: np.ndarray, win: np.ndarray, c1: float, c2: float) -> float:
    k = win.shape[0]
    pa = sliding_window_view(a, (k, k))
    pb = sliding_window_view(b, (k, k))
    mu_a = np.einsum("ijkl,kl->ij", pa, win)
    mu_b = np.einsum("ijkl,kl->ij", pb, win)
    var_a = np.einsum("ijkl,kl->ij", pa * pa, win) - mu_a ** 2
    var_b = np.einsum("ijkl,kl->ij", pb * pb, win) - mu_b ** 2
    cov = np.einsum("ijkl,kl->ij", pa * pb, win) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def ssim(a, b, peak: float = 1.0, win_size: int = 11, sigma: float = 1.5,
         k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean SSIM over all fully contained Gaussian windows, averaged over channels."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"{a.shape} vs {b.shape}")
    if a.shape[0] < win_size or a.shape[1] < win_size:
        raise ShapeMismatch(f"image {a.shape[:2]} smaller than the {win_size}x{win_size} window")
    if np.array_equal(a, b):
        return 1.0
    win = gaussian_window(win_size, sigma)
    c1 = (k1 * peak) ** 2
    c2 = (k2 * peak) ** 2
    if a.ndim == 2:
        return _ssim_channel(a, b, win, c1, c2)
    return float(np.mean([_ssim_channel(a[..., c], b[..., c], win, c1, c2) for c in range(a.shape[-1])]))
