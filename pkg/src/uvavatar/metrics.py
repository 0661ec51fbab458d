"""Image metrics on bounding-box crops: L1, PSNR and single-scale SSIM."""
from __future__ import annotations

import math

import numpy as np

from .core import ValidationError

PSNR_IDENTICAL = math.inf

SSIM_WIN = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _image(x) -> np.ndarray:
    rgb = getattr(x, "rgb", x)
    a = np.asarray(rgb, dtype=np.float64)
    return a[..., None] if a.ndim == 2 else a


def _same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValidationError(f"image shapes differ: {a.shape} vs {b.shape}")


def mask_bbox(mask: np.ndarray):
    """(r0, r1, c0, c1), half-open, of the true pixels."""
    mask = np.asarray(mask, dtype=bool)
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    if rows.size == 0:
        raise ValidationError("mask is empty")
    return int(rows[0]), int(rows[-1]) + 1, int(cols[0]), int(cols[-1]) + 1


def crop_to_mask_bbox(img, mask: np.ndarray) -> np.ndarray:
    arr = np.asarray(getattr(img, "rgb", img))
    if arr.shape[:2] != np.shape(mask):
        raise ValidationError(f"image {arr.shape[:2]} and mask {np.shape(mask)} differ")
    r0, r1, c0, c1 = mask_bbox(mask)
    return arr[r0:r1, c0:c1]


def l1(a, b) -> float:
    a, b = _image(a), _image(b)
    _same_shape(a, b)
    return float(np.mean(np.abs(a - b)))


def mse(a, b) -> float:
    a, b = _image(a), _image(b)
    _same_shape(a, b)
    return float(np.mean((a - b) ** 2))


def psnr(a, b) -> float:
    """10 log10(1 / MSE) for [0, 1] images; identical inputs give ``inf``."""
    m = mse(a, b)
    return PSNR_IDENTICAL if m == 0.0 else float(10.0 * np.log10(1.0 / m))


def gaussian_window(size: int = SSIM_WIN, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    # separable 'valid' correlation over the first two axes
    k = g.size
    h, w = img.shape[:2]
    rows = sum(g[i] * img[i : h - k + 1 + i] for i in range(k))
    return sum(g[j] * rows[:, j : w - k + 1 + j] for j in range(k))


def ssim_map(a, b, data_range: float = 1.0) -> np.ndarray:
    a, b = _image(a), _image(b)
    _same_shape(a, b)
    if min(a.shape[:2]) < SSIM_WIN:
        raise ValidationError(f"SSIM needs images of at least {SSIM_WIN}x{SSIM_WIN}, got {a.shape[:2]}")
    g = gaussian_window()
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a**2
    var_b = _filter_valid(b * b, g) - mu_b**2
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    return ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2))


def ssim(a, b, data_range: float = 1.0) -> float:
    """Mean local SSIM, averaged over channels."""
    return float(ssim_map(a, b, data_range).mean(axis=(0, 1)).mean())


def compare(a, b) -> dict:
    return {"l1": l1(a, b), "psnr": psnr(a, b), "ssim": ssim(a, b)}


def format_report(metrics: dict) -> str:
    lines = []
    for k, v in metrics.items():
        if isinstance(v, float) and math.isinf(v):
            lines.append(f"{k}=inf")
        elif isinstance(v, float):
            lines.append(f"{k}={v:.9g}")
        else:
            lines.append(f"{k}={v}")
    return "\n".join(lines) + "\n"


def background(height: int, width: int) -> np.ndarray:
    """Deterministic gradient backdrop the avatar is composited over before scoring."""
    y = np.linspace(0.0, 1.0, height)[:, None]
    x = np.linspace(0.0, 1.0, width)[None, :]
    return np.stack([0.25 + 0.3 * y + 0 * x, 0.3 + 0.2 * x + 0 * y, 0.45 - 0.2 * y + 0.1 * x], axis=-1)
