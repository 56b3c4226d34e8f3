"""Image similarity and resampling helpers shared by the filter and the scene."""

from __future__ import annotations

import cv2
import numpy as np

# Rec. 601 luma weights.
_LUMA = np.array([0.299, 0.587, 0.114])

SSIM_WINDOW = 8
SSIM_STRIDE = 4
_C1 = 0.01**2  # stabilization constants for unit dynamic range
_C2 = 0.03**2


class DimensionMismatchError(ValueError):
    """Images passed to a pixel metric have different shapes."""


def luma(img: np.ndarray) -> np.ndarray:
    """Collapse an (...,H,W,3) image to its luma channel; grayscale passes through."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim >= 3 and img.shape[-1] == 3:
        return img @ _LUMA
    return img


def downsample_area(img: np.ndarray, shape_hw: tuple[int, int]) -> np.ndarray:
    """Area-averaging resize to (height, width); identity if already there."""
    h, w = shape_hw
    if img.shape[:2] == (h, w):
        return img
    src = np.ascontiguousarray(img, dtype=np.float32)
    return cv2.resize(src, (w, h), interpolation=cv2.INTER_AREA)


def _window_sums(x: np.ndarray) -> np.ndarray:
    """Box sums over SSIM_WINDOW x SSIM_WINDOW patches at SSIM_STRIDE, via
    integral images.  x has shape (..., H, W); output (..., nh, nw)."""
    c = x.cumsum(-2).cumsum(-1)
    pad = [(0, 0)] * (x.ndim - 2) + [(1, 0), (1, 0)]
    c = np.pad(c, pad)
    k = SSIM_WINDOW
    s = c[..., k:, k:] - c[..., :-k, k:] - c[..., k:, :-k] + c[..., :-k, :-k]
    return s[..., ::SSIM_STRIDE, ::SSIM_STRIDE]


def ssim_batch(ref: np.ndarray, imgs: np.ndarray) -> np.ndarray:
    """Structural similarity of each image in a (P,H,W[,3]) stack against ref.

    Uniform 8x8 windows with stride 4 on the luma channel, mean over windows.
    Returns a (P,) array of values in [-1, 1].
    """
    a = luma(ref)
    if a.ndim != 2:
        raise DimensionMismatchError("reference must be a single image")
    b = luma(imgs)
    if b.ndim == 2:  # single image promoted to a batch of one
        b = b[None]
    if b.shape[-2:] != a.shape:
        raise DimensionMismatchError(f"shape {b.shape[-2:]} vs {a.shape}")
    if min(a.shape) < SSIM_WINDOW:
        raise DimensionMismatchError("image smaller than the SSIM window")
    n = SSIM_WINDOW * SSIM_WINDOW
    sa = _window_sums(a)
    saa = _window_sums(a * a)
    mu_a = sa / n
    var_a = saa / n - mu_a * mu_a
    sb = _window_sums(b)
    sbb = _window_sums(b * b)
    sab = _window_sums(a[None] * b)
    mu_b = sb / n
    var_b = sbb / n - mu_b * mu_b
    cov = sab / n - mu_a[None] * mu_b
    num = (2.0 * mu_a[None] * mu_b + _C1) * (2.0 * cov + _C2)
    den = (mu_a[None] ** 2 + mu_b**2 + _C1) * (var_a[None] + var_b + _C2)
    return (num / den).mean(axis=(-1, -2))


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Structural similarity between two equal-size images."""
    a_l = luma(a)
    b_l = luma(b)
    if a_l.shape != b_l.shape:
        raise DimensionMismatchError(f"shape {a_l.shape} vs {b_l.shape}")
    return float(ssim_batch(a_l, b_l[None])[0])
