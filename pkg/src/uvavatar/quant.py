"""Integer simulation of the linear decoder: int8 weights, int16 activations.

Weights are quantized symmetrically per output column, the pose code
symmetrically per tensor. The matmul runs on integers with int64
accumulation and is dequantized once at the output; the SH expansion stays
in floating point.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import ValidationError
from .decoder import LinearDecoder, PoseLike, expand_intermediate, linear_flops, pose_code

log = logging.getLogger(__name__)

W_QMAX = 127
A_QMAX = 32767


@dataclass(frozen=True, eq=False)
class QuantizedLinearDecoder:
    p_mean: np.ndarray
    B_p: np.ndarray
    B_c_q: np.ndarray  # int8, (d+1, n_corr * width)
    w_scale: np.ndarray  # float32 per output column
    a_scale: np.float32
    sh_expand: np.ndarray
    sh_mean: np.ndarray
    n_corr: int
    lut: Optional[np.ndarray] = None
    zero_columns: int = 0

    @property
    def d(self) -> int:
        return self.B_p.shape[1]

    @property
    def sh_d(self) -> int:
        return self.sh_expand.shape[0]

    @property
    def width(self) -> int:
        return 10 + self.sh_d

    def dequantized(self) -> np.ndarray:
        return self.B_c_q.astype(np.float64) * self.w_scale.astype(np.float64)

    def as_float(self) -> LinearDecoder:
        """The float decoder these integers represent."""
        return LinearDecoder(self.p_mean, self.B_p, self.dequantized(), self.sh_expand, self.sh_mean,
                             self.n_corr, self.lut)

    def flops(self) -> int:
        return linear_flops(self.d, self.n_corr, self.sh_d, self.width)


@dataclass
class DecodeStats:
    saturated: int = 0


def weight_scales(B_c: np.ndarray):
    """Per-column max|w| / 127; all-zero columns get scale 1. Returns (scales, n_zero)."""
    amax = np.abs(B_c).max(axis=0)
    zero = amax == 0
    scale = np.where(zero, 1.0, amax / W_QMAX).astype(np.float32)
    return scale, int(zero.sum())


def quantize_weights(B_c: np.ndarray, scale: np.ndarray) -> np.ndarray:
    q = np.round(np.asarray(B_c, dtype=np.float64) / scale.astype(np.float64))
    return np.clip(q, -W_QMAX, W_QMAX).astype(np.int8)


def quantize(ld: LinearDecoder, calib_poses: np.ndarray) -> QuantizedLinearDecoder:
    calib = np.atleast_2d(np.asarray(calib_poses, dtype=np.float64))
    if calib.shape[0] == 0:
        raise ValidationError("calibration set is empty")
    w_scale, n_zero = weight_scales(ld.B_c)
    if n_zero:
        log.warning("%d all-zero weight columns given scale 1", n_zero)
    amax = float(np.abs(pose_code(ld, calib)).max())
    a_scale = np.float32(amax / A_QMAX)
    return QuantizedLinearDecoder(
        p_mean=ld.p_mean,
        B_p=ld.B_p,
        B_c_q=quantize_weights(ld.B_c, w_scale),
        w_scale=w_scale,
        a_scale=a_scale,
        sh_expand=ld.sh_expand,
        sh_mean=ld.sh_mean,
        n_corr=ld.n_corr,
        lut=ld.lut,
        zero_columns=n_zero,
    )


def quantize_code(code: np.ndarray, a_scale, stats: DecodeStats | None = None) -> np.ndarray:
    q = np.round(code / np.float64(a_scale))
    over = np.abs(q) > A_QMAX
    if np.any(over):
        if stats is not None:
            stats.saturated += int(over.sum())
        log.debug("%d activations saturated", int(over.sum()))
    return np.clip(q, -A_QMAX, A_QMAX).astype(np.int16)


def quantized_decode_raw(q: QuantizedLinearDecoder, pose: PoseLike, stats: DecodeStats | None = None) -> np.ndarray:
    code = pose_code(q, pose)
    code_q = quantize_code(code, q.a_scale, stats)
    acc = code_q.astype(np.int64) @ q.B_c_q.astype(np.int64)
    out = acc.astype(np.float64) * (np.float64(q.a_scale) * q.w_scale.astype(np.float64))
    return out.reshape(code.shape[:-1] + (q.n_corr, q.width))


def quantized_decode(q: QuantizedLinearDecoder, pose: PoseLike, stats: DecodeStats | None = None) -> np.ndarray:
    return expand_intermediate(q, quantized_decode_raw(q, pose, stats))


def error_bound(q: QuantizedLinearDecoder, code: np.ndarray) -> np.ndarray:
    """Worst-case |quantized - float| per intermediate output for one pose code.

    Expands sum_i (c_i + e_i)(w_i + f_i) - c_i w_i with |e_i| <= a/2 and
    |f_i| <= s/2.
    """
    a = np.float64(q.a_scale)
    s = q.w_scale.astype(np.float64)
    W = q.as_float().B_c
    k = code.shape[-1]
    return 0.5 * a * np.abs(W).sum(axis=0) + 0.5 * s * np.abs(code).sum() + 0.25 * k * a * s
