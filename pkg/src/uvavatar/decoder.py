"""Corrective decoders: a synthetic nonlinear teacher and the linear student."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .core import (
    N_CHANNELS,
    N_SH,
    SH,
    CorrectiveGrid,
    Pose,
    ValidationError,
    pose_dim,
)
from .poses import sample_poses

GEOM = slice(27, 37)
N_GEOM = 10
SH_LIMIT = 0.5
GEOM_LIMIT = 0.1
CALIB_POSES = 32

PoseLike = Union[Pose, np.ndarray]


def _as_vector(pose: PoseLike) -> np.ndarray:
    if isinstance(pose, Pose):
        return pose.vector()
    return np.asarray(pose, dtype=np.float64)


def channel_limits() -> np.ndarray:
    limit = np.full(N_CHANNELS, GEOM_LIMIT)
    limit[SH] = SH_LIMIT
    return limit


def hardswish(x: np.ndarray) -> np.ndarray:
    return x * np.clip(x + 3.0, 0.0, 6.0) / 6.0


def upsample_bilinear(grid: np.ndarray, h: int, w: int) -> np.ndarray:
    """Half-pixel-centered bilinear resize of an (r, c, k) grid to (h, w, k)."""
    r, c = grid.shape[:2]

    def coords(n_out, n_in):
        x = (np.arange(n_out) + 0.5) * n_in / n_out - 0.5
        x = np.clip(x, 0.0, n_in - 1)
        i0 = np.floor(x).astype(int)
        i1 = np.minimum(i0 + 1, n_in - 1)
        return i0, i1, x - i0

    y0, y1, fy = coords(h, r)
    x0, x1, fx = coords(w, c)
    top = grid[y0][:, x0] * (1 - fx)[None, :, None] + grid[y0][:, x1] * fx[None, :, None]
    bot = grid[y1][:, x0] * (1 - fx)[None, :, None] + grid[y1][:, x1] * fx[None, :, None]
    return top * (1 - fy)[:, None, None] + bot * fy[:, None, None]


@dataclass(frozen=True, eq=False)
class TeacherDecoder:
    """Seeded stand-in for a trained corrective decoder.

    pose (4J+35) -> two 256-wide affine+hardswish layers -> coarse latent grid
    -> bilinear upsample -> per-texel 1x1 mix to 37 channels, modulated by a
    fixed per-texel gain and offset. Everything after the hidden layers is
    affine, so the full map is affine when ``linear`` bypasses the activations.
    The mix is scaled on seeded calibration poses so outputs stay within
    +-0.5 (SH) and +-0.1 (geometry); the nonlinear teacher also clips to
    those limits, the linear one stays purely affine.
    """

    n_joints: int
    grid_h: int = 256
    grid_w: int = 256
    seed: int = 0
    hidden: int = 256
    latent_res: int = 16
    latent_ch: int = 8
    linear: bool = False
    params: dict = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "params", self._build())

    @property
    def input_dim(self) -> int:
        return pose_dim(self.n_joints)

    def _build(self) -> dict:
        rng = np.random.default_rng(self.seed)
        n_in, hid = self.input_dim, self.hidden
        lr, lc = min(self.latent_res, self.grid_h), self.latent_ch
        lr_w = min(self.latent_res, self.grid_w)
        p = {
            "W1": rng.normal(0.0, 2.0 / np.sqrt(n_in), (n_in, hid)),
            "b1": rng.normal(0.0, 0.5, hid),
            "W2": rng.normal(0.0, 2.0 / np.sqrt(hid), (hid, hid)),
            "b2": rng.normal(0.0, 0.5, hid),
            "W3": rng.normal(0.0, 1.0 / np.sqrt(hid), (hid, lr * lr_w * lc)),
            "b3": rng.normal(0.0, 0.1, lr * lr_w * lc),
            "U": rng.normal(0.0, 1.0 / np.sqrt(lc), (lc, N_CHANNELS)),
            "gain": rng.uniform(0.25, 1.0, (self.grid_h, self.grid_w, N_CHANNELS)),
            "offset": rng.uniform(-0.3, 0.3, (self.grid_h, self.grid_w, N_CHANNELS)),
            "latent_shape": (lr, lr_w, lc),
        }
        object.__setattr__(self, "params", p)
        limit = channel_limits()
        # scale the mix so calibration poses reach 60% of each channel's
        # budget; the offsets take another 30%
        calib = sample_poses(self.n_joints, CALIB_POSES, seed=self.seed)
        peak = np.zeros(N_CHANNELS)
        for pose in calib:
            peak = np.maximum(peak, np.abs(self.latent(pose) @ p["U"]).max(axis=(0, 1)))
        p["U"] = p["U"] * (0.6 * limit / peak)
        p["offset"] = p["offset"] * limit
        return p

    def latent(self, pose: PoseLike) -> np.ndarray:
        x = _as_vector(pose)
        if x.shape != (self.input_dim,):
            raise ValidationError(f"teacher expects pose of size {self.input_dim}, got {x.shape}")
        p = self.params
        act = (lambda v: v) if self.linear else hardswish
        h1 = act(x @ p["W1"] + p["b1"])
        h2 = act(h1 @ p["W2"] + p["b2"])
        return (h2 @ p["W3"] + p["b3"]).reshape(p["latent_shape"])

    def decode(self, pose: PoseLike) -> np.ndarray:
        """(grid_h, grid_w, 37) correctives."""
        p = self.params
        up = upsample_bilinear(self.latent(pose), self.grid_h, self.grid_w)
        out = (up @ p["U"]) * p["gain"] + p["offset"]
        if self.linear:
            return out
        return np.clip(out, -channel_limits(), channel_limits())


def teacher_decode(t: TeacherDecoder, pose: PoseLike) -> CorrectiveGrid:
    return CorrectiveGrid(t.decode(pose))


@dataclass(frozen=True, eq=False)
class LinearDecoder:
    """Single affine layer on a PCA pose code, plus a shared SH expansion.

    ``B_c`` is (d+1, n_corr * (10 + sh_d)); each corrective's intermediate
    row is [rotation 4, translation 3, log-scale 3, SH codes sh_d].
    """

    p_mean: np.ndarray
    B_p: np.ndarray
    B_c: np.ndarray
    sh_expand: np.ndarray
    sh_mean: np.ndarray
    n_corr: int
    lut: Optional[np.ndarray] = None

    @property
    def d(self) -> int:
        return self.B_p.shape[1]

    @property
    def sh_d(self) -> int:
        return self.sh_expand.shape[0]

    @property
    def width(self) -> int:
        return N_GEOM + self.sh_d

    def validate(self) -> list[str]:
        problems = []
        if self.B_c.shape != (self.d + 1, self.n_corr * self.width):
            problems.append(f"B_c shape {self.B_c.shape} != {(self.d + 1, self.n_corr * self.width)}")
        g = self.B_p.T @ self.B_p
        if np.abs(g - np.eye(self.d)).max() > 1e-5:
            problems.append("pose basis columns are not orthonormal")
        e = self.sh_expand @ self.sh_expand.T
        if np.abs(e - np.eye(self.sh_d)).max() > 1e-5:
            problems.append("sh_expand rows are not orthonormal")
        if self.lut is not None and np.any((self.lut < 0) | (self.lut >= self.n_corr)):
            problems.append("lut index out of range")
        return problems

    def param_count(self) -> int:
        return linear_param_count(self.d, self.n_corr, self.sh_d, self.width)


def linear_param_count(d: int, n_corr: int, sh_d: int = 6, width: int = 16) -> int:
    """(d+1) * n_corr * width + sh_d * 27."""
    return (d + 1) * n_corr * width + sh_d * N_SH


def linear_flops(d: int, n_corr: int, sh_d: int = 6, width: int = 16) -> int:
    """Multiply-add FLOPs (2 per MAC) of one linear decode, excluding the gather."""
    return 2 * (d + 1) * n_corr * width + 2 * n_corr * sh_d * N_SH


def pose_code(ld: LinearDecoder, pose: PoseLike) -> np.ndarray:
    p = _as_vector(pose)
    if p.shape[-1] != ld.p_mean.shape[0]:
        raise ValidationError(f"pose has {p.shape[-1]} entries, decoder expects {ld.p_mean.shape[0]}")
    proj = (p - ld.p_mean) @ ld.B_p
    ones = np.ones(proj.shape[:-1] + (1,))
    return np.concatenate([ones, proj], axis=-1)


def expand_intermediate(ld, raw: np.ndarray) -> np.ndarray:
    """(…, n_corr, 10 + sh_d) intermediate rows -> (…, n_corr, 37) correctives."""
    out = np.empty(raw.shape[:-1] + (N_CHANNELS,), dtype=raw.dtype)
    out[..., GEOM] = raw[..., :N_GEOM]
    out[..., SH] = raw[..., N_GEOM:] @ ld.sh_expand + ld.sh_mean
    return out


def linear_decode_raw(ld: LinearDecoder, pose: PoseLike) -> np.ndarray:
    code = pose_code(ld, pose).astype(ld.B_c.dtype, copy=False)
    return (code @ ld.B_c).reshape(code.shape[:-1] + (ld.n_corr, ld.width))


def linear_decode(ld: LinearDecoder, pose: PoseLike) -> np.ndarray:
    """(n_corr, 37) correctives; a (F, pose_dim) batch gives (F, n_corr, 37)."""
    return expand_intermediate(ld, linear_decode_raw(ld, pose))


def gather_correctives(corr: np.ndarray, lut: np.ndarray) -> np.ndarray:
    lut = np.asarray(lut)
    n = corr.shape[-2]
    if lut.size and (lut.min() < 0 or lut.max() >= n):
        bad = int(np.flatnonzero((lut < 0) | (lut >= n))[0])
        raise ValidationError(f"lut[{bad}] = {lut[bad]} outside [0, {n})")
    return np.take(corr, lut, axis=-2)


def decode_for_gaussians(ld: LinearDecoder, pose: PoseLike) -> np.ndarray:
    """Per-Gaussian correctives, routed through the LUT when the decoder has one."""
    corr = linear_decode(ld, pose)
    return corr if ld.lut is None else gather_correctives(corr, ld.lut)
