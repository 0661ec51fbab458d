"""Domain types shared across the pipeline.

Per-Gaussian data lives in structure-of-arrays form on :class:`SplatSet`;
:class:`Gaussian` is the single-splat view used by the scalar operations.
Everything here is immutable value data once constructed.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

N_SH = 27
N_CHANNELS = 37
SH = slice(0, 27)
ROT = slice(27, 31)
TRANS = slice(31, 34)
LOG_SCALE = slice(34, 37)
AUX_DIM = 32

QUAT_TOL = 1e-6
WEIGHT_TOL = 1e-6
# below this norm a rotated quaternion has no usable direction
QUAT_ZERO = 1e-12


class ValidationError(ValueError):
    """Raised when an input violates a documented invariant."""


# ---------------------------------------------------------------------------
# quaternion helpers, (w, x, y, z) order, batched over leading axes


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = np.moveaxis(np.asarray(a, dtype=np.float64), -1, 0)
    bw, bx, by, bz = np.moveaxis(np.asarray(b, dtype=np.float64), -1, 0)
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """Rotation matrices for (possibly unnormalized) quaternions."""
    w, x, y, z = np.moveaxis(quat_normalize(q), -1, 0)
    m = np.stack(
        [
            1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
            2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
            2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
        ],
        axis=-1,
    )
    return m.reshape(m.shape[:-1] + (3, 3))


def matrix_to_quat(m: np.ndarray) -> np.ndarray:
    """Quaternion (w >= 0) from rotation matrices, Shepperd's method."""
    m = np.asarray(m, dtype=np.float64)
    flat = m.reshape(-1, 3, 3)
    out = np.empty((flat.shape[0], 4))
    tr = flat[:, 0, 0] + flat[:, 1, 1] + flat[:, 2, 2]
    diag = np.stack([tr, flat[:, 0, 0], flat[:, 1, 1], flat[:, 2, 2]], axis=1)
    pick = np.argmax(diag, axis=1)
    for k in range(4):
        sel = pick == k
        if not np.any(sel):
            continue
        r = flat[sel]
        if k == 0:
            s = 2.0 * np.sqrt(1.0 + tr[sel])
            q = [0.25 * s, (r[:, 2, 1] - r[:, 1, 2]) / s, (r[:, 0, 2] - r[:, 2, 0]) / s, (r[:, 1, 0] - r[:, 0, 1]) / s]
        elif k == 1:
            s = 2.0 * np.sqrt(1.0 + r[:, 0, 0] - r[:, 1, 1] - r[:, 2, 2])
            q = [(r[:, 2, 1] - r[:, 1, 2]) / s, 0.25 * s, (r[:, 0, 1] + r[:, 1, 0]) / s, (r[:, 0, 2] + r[:, 2, 0]) / s]
        elif k == 2:
            s = 2.0 * np.sqrt(1.0 - r[:, 0, 0] + r[:, 1, 1] - r[:, 2, 2])
            q = [(r[:, 0, 2] - r[:, 2, 0]) / s, (r[:, 0, 1] + r[:, 1, 0]) / s, 0.25 * s, (r[:, 1, 2] + r[:, 2, 1]) / s]
        else:
            s = 2.0 * np.sqrt(1.0 - r[:, 0, 0] - r[:, 1, 1] + r[:, 2, 2])
            q = [(r[:, 1, 0] - r[:, 0, 1]) / s, (r[:, 0, 2] + r[:, 2, 0]) / s, (r[:, 1, 2] + r[:, 2, 1]) / s, 0.25 * s]
        out[sel] = np.stack(q, axis=1)
    out *= np.where(out[:, :1] < 0, -1.0, 1.0)
    return quat_normalize(out).reshape(m.shape[:-2] + (4,))


def axis_angle_to_quat(axis_angle: np.ndarray) -> np.ndarray:
    v = np.asarray(axis_angle, dtype=np.float64)
    angle = np.linalg.norm(v, axis=-1, keepdims=True)
    half = 0.5 * angle
    # sin(x/2)/x -> 1/2 as x -> 0
    k = np.where(angle > 1e-12, np.sin(half) / np.where(angle > 1e-12, angle, 1.0), 0.5)
    return np.concatenate([np.cos(half), v * k], axis=-1)


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Gaussian:
    """One splat. Scale is stored as log-sigma; ``scale`` exposes sigma."""

    mu: np.ndarray
    rot: np.ndarray
    log_scale: np.ndarray
    delta: float
    sh: np.ndarray

    @classmethod
    def create(cls, mu, rot, scale, delta, sh=None) -> "Gaussian":
        scale = np.asarray(scale, dtype=np.float64)
        if np.any(scale <= 0):
            raise ValidationError(f"scale must be positive, got {scale}")
        sh = np.zeros(N_SH) if sh is None else np.asarray(sh, dtype=np.float64)
        return cls(
            mu=np.asarray(mu, dtype=np.float64),
            rot=np.asarray(rot, dtype=np.float64),
            log_scale=np.log(scale),
            delta=float(delta),
            sh=sh,
        )

    @property
    def scale(self) -> np.ndarray:
        return np.exp(self.log_scale)

    def covariance(self) -> np.ndarray:
        r = quat_to_matrix(self.rot)
        return (r * self.scale**2) @ r.T

    def validate(self) -> list[str]:
        problems = []
        if abs(np.linalg.norm(self.rot) - 1.0) > QUAT_TOL:
            problems.append(f"quaternion norm {np.linalg.norm(self.rot):.3g} != 1")
        if not np.all(np.isfinite(self.log_scale)):
            problems.append("non-finite scale")
        if not 0.0 <= self.delta <= 1.0:
            problems.append(f"opacity {self.delta} outside [0, 1]")
        if self.sh.shape != (N_SH,) or not np.all(np.isfinite(self.sh)):
            problems.append("sh must be 27 finite values")
        if not np.all(np.isfinite(self.mu)):
            problems.append("non-finite position")
        return problems


@dataclass(frozen=True, eq=False)
class SplatSet:
    """Gaussians laid out over a UV grid.

    ``uv_index[i]`` is the (row, col) texel of Gaussian ``i``; entries are
    row-major ascending and cover exactly the true cells of ``mask``.
    """

    mask: np.ndarray
    mu: np.ndarray
    rot: np.ndarray
    log_scale: np.ndarray
    delta: np.ndarray
    sh: np.ndarray
    uv_index: np.ndarray

    @property
    def grid_h(self) -> int:
        return self.mask.shape[0]

    @property
    def grid_w(self) -> int:
        return self.mask.shape[1]

    def __len__(self) -> int:
        return self.mu.shape[0]

    @property
    def scale(self) -> np.ndarray:
        return np.exp(self.log_scale)

    @classmethod
    def from_gaussians(cls, mask: np.ndarray, gaussians: list[Gaussian]) -> "SplatSet":
        mask = np.asarray(mask, dtype=bool)
        return cls(
            mask=mask,
            mu=np.array([g.mu for g in gaussians], dtype=np.float64).reshape(-1, 3),
            rot=np.array([g.rot for g in gaussians], dtype=np.float64).reshape(-1, 4),
            log_scale=np.array([g.log_scale for g in gaussians], dtype=np.float64).reshape(-1, 3),
            delta=np.array([g.delta for g in gaussians], dtype=np.float64),
            sh=np.array([g.sh for g in gaussians], dtype=np.float64).reshape(-1, N_SH),
            uv_index=np.argwhere(mask),
        )

    def gaussian(self, i: int) -> Gaussian:
        return Gaussian(self.mu[i], self.rot[i], self.log_scale[i], float(self.delta[i]), self.sh[i])

    def replace(self, **changes) -> "SplatSet":
        return replace(self, **changes)

    def covariances(self) -> np.ndarray:
        r = quat_to_matrix(self.rot)
        s2 = np.exp(2.0 * np.asarray(self.log_scale, dtype=np.float64))
        return np.einsum("nij,nj,nkj->nik", r, s2, r)

    def equals(self, other: "SplatSet") -> bool:
        """Exact (bitwise value) equality of every array."""
        names = ("mask", "mu", "rot", "log_scale", "delta", "sh", "uv_index")
        return all(np.array_equal(getattr(self, n), getattr(other, n)) for n in names)


def validate_splatset(s: SplatSet) -> list[str]:
    """Every invariant violation in ``s``; an empty list means valid."""
    report = []
    n = len(s)
    count = int(np.count_nonzero(s.mask))
    if count != n:
        report.append(f"mask popcount {count} != gaussian count {n}")
    for name, width in (("rot", 4), ("log_scale", 3), ("sh", N_SH), ("uv_index", 2)):
        arr = getattr(s, name)
        if arr.shape != (n, width):
            report.append(f"{name} has shape {arr.shape}, expected {(n, width)}")
    if s.delta.shape != (n,):
        report.append(f"delta has shape {s.delta.shape}, expected {(n,)}")
    if report:
        return report

    norms = np.linalg.norm(s.rot, axis=1)
    for i in np.flatnonzero(~(np.abs(norms - 1.0) <= QUAT_TOL)):
        report.append(f"gaussian {i}: quaternion norm {norms[i]:.6g}")
    for i in np.flatnonzero(~np.all(np.isfinite(s.log_scale), axis=1)):
        report.append(f"gaussian {i}: non-finite scale")
    for i in np.flatnonzero(~((s.delta >= 0) & (s.delta <= 1))):
        report.append(f"gaussian {i}: opacity {s.delta[i]} outside [0, 1]")
    for i in np.flatnonzero(~np.all(np.isfinite(s.sh), axis=1)):
        report.append(f"gaussian {i}: non-finite sh")
    for i in np.flatnonzero(~np.all(np.isfinite(s.mu), axis=1)):
        report.append(f"gaussian {i}: non-finite position")

    uv = np.asarray(s.uv_index)
    inside = (uv[:, 0] >= 0) & (uv[:, 0] < s.grid_h) & (uv[:, 1] >= 0) & (uv[:, 1] < s.grid_w)
    for i in np.flatnonzero(~inside):
        report.append(f"gaussian {i}: uv_index {tuple(uv[i])} outside grid")
    if np.all(inside):
        for i in np.flatnonzero(~s.mask[uv[:, 0], uv[:, 1]]):
            report.append(f"gaussian {i}: uv_index {tuple(uv[i])} not in mask")
        flat = uv[:, 0] * s.grid_w + uv[:, 1]
        for i in np.flatnonzero(np.diff(flat) <= 0):
            report.append(f"gaussian {i + 1}: uv_index not strictly row-major ascending")
    return report


def apply_corrective(base: Gaussian, corr: np.ndarray) -> Gaussian:
    corr = np.asarray(corr, dtype=np.float64)
    if corr.shape != (N_CHANNELS,):
        raise ValidationError(f"corrective must have {N_CHANNELS} values, got shape {corr.shape}")
    if not np.all(np.isfinite(corr)):
        raise ValidationError("non-finite corrective")
    drot = corr[ROT]
    if np.any(drot) and np.linalg.norm(base.rot + drot) < QUAT_ZERO:
        raise ValidationError("rotation corrective cancels the base quaternion")
    rot = base.rot if not np.any(drot) else quat_normalize(base.rot + drot)
    return Gaussian(
        mu=base.mu + corr[TRANS],
        rot=rot,
        log_scale=base.log_scale + corr[LOG_SCALE],
        delta=base.delta,
        sh=base.sh + corr[SH],
    )


def apply_correctives(s: SplatSet, corr: np.ndarray) -> SplatSet:
    """Batched :func:`apply_corrective`; ``corr`` is (N, 37)."""
    corr = np.asarray(corr)
    if corr.shape != (len(s), N_CHANNELS):
        raise ValidationError(f"expected correctives of shape {(len(s), N_CHANNELS)}, got {corr.shape}")
    if not np.all(np.isfinite(corr)):
        raise ValidationError("non-finite corrective")
    drot = corr[:, ROT]
    moved = np.any(drot != 0, axis=1)
    rot = np.array(s.rot, dtype=np.float64, copy=True)
    summed = rot[moved] + drot[moved]
    if np.any(np.linalg.norm(summed, axis=1) < QUAT_ZERO):
        raise ValidationError("rotation corrective cancels the base quaternion")
    # rows with a zero rotation delta keep their quaternion bit-for-bit
    rot[moved] = quat_normalize(summed)
    return s.replace(
        mu=s.mu + corr[:, TRANS],
        rot=rot,
        log_scale=s.log_scale + corr[:, LOG_SCALE],
        sh=s.sh + corr[:, SH],
    )


@dataclass(frozen=True, eq=False)
class Pose:
    """Per-joint local rotations, root translation and auxiliary embedding."""

    joints: np.ndarray
    root_t: np.ndarray = field(default_factory=lambda: np.zeros(3))
    aux: np.ndarray = field(default_factory=lambda: np.zeros(AUX_DIM))

    @property
    def n_joints(self) -> int:
        return self.joints.shape[0]

    @classmethod
    def identity(cls, n_joints: int) -> "Pose":
        joints = np.zeros((n_joints, 4))
        joints[:, 0] = 1.0
        return cls(joints=joints)

    def vector(self) -> np.ndarray:
        return np.concatenate([np.ravel(self.joints), self.root_t, self.aux]).astype(np.float64)

    @classmethod
    def from_vector(cls, v: np.ndarray, n_joints: int) -> "Pose":
        v = np.asarray(v, dtype=np.float64)
        expected = pose_dim(n_joints)
        if v.shape != (expected,):
            raise ValidationError(f"pose vector must have {expected} entries, got {v.shape}")
        return cls(
            joints=v[: 4 * n_joints].reshape(n_joints, 4),
            root_t=v[4 * n_joints : 4 * n_joints + 3],
            aux=v[4 * n_joints + 3 :],
        )

    def validate(self) -> list[str]:
        problems = []
        norms = np.linalg.norm(self.joints, axis=1)
        for j in np.flatnonzero(np.abs(norms - 1.0) > QUAT_TOL):
            problems.append(f"joint {j}: quaternion norm {norms[j]:.6g}")
        if not np.all(np.isfinite(self.aux)):
            problems.append("non-finite aux embedding")
        if not np.all(np.isfinite(self.root_t)):
            problems.append("non-finite root translation")
        return problems


def pose_dim(n_joints: int) -> int:
    return 4 * n_joints + 3 + AUX_DIM


@dataclass(frozen=True, eq=False)
class Skeleton:
    """Kinematic tree with axis-aligned rest frames.

    Rest transforms are pure translations to ``joint_pos``; each Gaussian
    carries up to four (joint, weight) skinning pairs.
    """

    parent: np.ndarray
    joint_pos: np.ndarray
    skin_joints: np.ndarray
    skin_weights: np.ndarray

    def __post_init__(self):
        parent = np.asarray(self.parent)
        n = parent.shape[0]
        if np.count_nonzero(parent == -1) != 1:
            raise ValidationError("skeleton needs exactly one root (parent == -1)")
        if np.any((parent < -1) | (parent >= n)):
            raise ValidationError("parent index out of range")
        for j in range(n):
            seen = set()
            k = j
            while k != -1:
                if k in seen:
                    raise ValidationError(f"cyclic parent chain through joint {j}")
                seen.add(k)
                k = int(parent[k])

    @property
    def n_joints(self) -> int:
        return int(self.parent.shape[0])

    @property
    def root(self) -> int:
        return int(np.flatnonzero(np.asarray(self.parent) == -1)[0])

    def order(self) -> list[int]:
        """Joints sorted so that every parent precedes its children."""
        depth = np.zeros(self.n_joints, dtype=int)
        for j in range(self.n_joints):
            k = j
            while self.parent[k] != -1:
                depth[j] += 1
                k = int(self.parent[k])
        return [int(j) for j in np.argsort(depth, kind="stable")]

    def validate(self) -> list[str]:
        problems = []
        w = np.asarray(self.skin_weights, dtype=np.float64)
        if np.any(w < 0):
            problems.append("negative skin weight")
        sums = w.sum(axis=1)
        for i in np.flatnonzero(np.abs(sums - 1.0) > WEIGHT_TOL):
            problems.append(f"gaussian {i}: skin weights sum to {sums[i]:.8g}")
        if np.any((self.skin_joints < 0) | (self.skin_joints >= self.n_joints)):
            problems.append("skin joint index out of range")
        return problems


@dataclass(frozen=True, eq=False)
class CorrectiveGrid:
    data: np.ndarray

    def __post_init__(self):
        if self.data.ndim != 3 or self.data.shape[2] != N_CHANNELS:
            raise ValidationError(f"corrective grid must be h x w x {N_CHANNELS}, got {self.data.shape}")

    @property
    def h(self) -> int:
        return self.data.shape[0]

    @property
    def w(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return N_CHANNELS


def _rot_y(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _rot_x(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


@dataclass(frozen=True, eq=False)
class Camera:
    """Pinhole camera; camera-space point is ``R @ p_world + t``.

    Camera space looks down +z with +y pointing down the image. Pixel
    (row, col) has its center at (col + 0.5, row + 0.5).
    """

    fx: float
    fy: float
    cx: float
    cy: float
    R: np.ndarray
    t: np.ndarray
    width: int
    height: int
    near: float = 0.01

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValidationError("focal lengths must be positive")
        R = np.asarray(self.R, dtype=np.float64)
        if R.shape != (3, 3) or np.abs(R @ R.T - np.eye(3)).max() > 1e-6:
            raise ValidationError("camera rotation must be orthonormal")
        if self.width <= 0 or self.height <= 0:
            raise ValidationError("image size must be positive")

    @classmethod
    def from_spec(cls, fx, fy, cx, cy, yaw, pitch, tx, ty, tz, width, height) -> "Camera":
        """Build from the 9-float inline form used by the CLI.

        Rotation is yaw about world +y, then pitch about x, then the flip
        that maps world y-up / looking-down-(-z) onto camera conventions.
        """
        flip = np.diag([1.0, -1.0, -1.0])
        R = flip @ _rot_x(pitch) @ _rot_y(yaw)
        return cls(float(fx), float(fy), float(cx), float(cy), R, np.array([tx, ty, tz], dtype=np.float64),
                   int(width), int(height))

    @property
    def center(self) -> np.ndarray:
        return -np.asarray(self.R).T @ np.asarray(self.t)

    def to_camera(self, p_world: np.ndarray) -> np.ndarray:
        return np.asarray(p_world, dtype=np.float64) @ np.asarray(self.R).T + self.t

    def compose(self, X: np.ndarray) -> "Camera":
        """Camera viewing the world after the rigid map ``X`` (3x4) is undone."""
        A, b = X[:, :3], X[:, 3]
        return replace(self, R=np.asarray(self.R) @ A, t=np.asarray(self.R) @ b + self.t)
