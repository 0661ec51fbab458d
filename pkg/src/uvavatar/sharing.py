"""Corrective sharing: UV mask gather, nearest upsampling and the lookup table."""
from __future__ import annotations

import numpy as np

from .core import ValidationError


def upsample_nearest(grid: np.ndarray, factor: int) -> np.ndarray:
    """out[r, c] = grid[r // factor, c // factor]."""
    if factor <= 0:
        raise ValidationError(f"upsample factor must be positive, got {factor}")
    return np.repeat(np.repeat(np.asarray(grid), factor, axis=0), factor, axis=1)


def apply_mask(grid: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Row-major gather of the mask-true cells: (H, W, ...) -> (n, ...)."""
    grid = np.asarray(grid)
    mask = np.asarray(mask, dtype=bool)
    if grid.shape[:2] != mask.shape:
        raise ValidationError(f"grid {grid.shape[:2]} and mask {mask.shape} differ")
    return grid[mask]


def build_lut(mask: np.ndarray, factor: int = 4) -> np.ndarray:
    """Shared-corrective index of every masked texel: M(Up(A)), A = arange."""
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    if factor <= 0 or h % factor or w % factor:
        raise ValidationError(f"mask {mask.shape} is not divisible by factor {factor}")
    coarse = np.arange((h // factor) * (w // factor), dtype=np.int64).reshape(h // factor, w // factor)
    return apply_mask(upsample_nearest(coarse, factor), mask)


def downsample_pick(grid: np.ndarray, factor: int) -> np.ndarray:
    """Top-left sample of every factor x factor block."""
    return np.asarray(grid)[::factor, ::factor]
