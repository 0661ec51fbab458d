"""Deterministic synthetic avatars, poses and cameras.

The avatar is a tube-limbed humanoid: each joint owns a rectangular chart
of the UV grid, and every texel of a chart becomes one Gaussian on the
cylinder around that joint's bone.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .core import (
    AUX_DIM,
    Camera,
    Pose,
    Skeleton,
    SplatSet,
    axis_angle_to_quat,
    matrix_to_quat,
    pose_dim,
)
from .decoder import TeacherDecoder
from .poses import sample_poses  # noqa: F401  re-exported

# fraction of a 256 x 256 UV grid occupied by the reference body layout
OCCUPANCY = 60381 / 65536

# name, parent, rest position, radius, color
HUMANOID = [
    ("pelvis", -1, (0.0, 0.95, 0.0), 0.13, (0.25, 0.30, 0.55)),
    ("l_hip", 0, (0.1, 0.9, 0.0), 0.08, (0.25, 0.30, 0.55)),
    ("r_hip", 0, (-0.1, 0.9, 0.0), 0.08, (0.25, 0.30, 0.55)),
    ("spine1", 0, (0.0, 1.05, 0.0), 0.13, (0.75, 0.25, 0.20)),
    ("l_knee", 1, (0.1, 0.5, 0.0), 0.06, (0.25, 0.30, 0.55)),
    ("r_knee", 2, (-0.1, 0.5, 0.0), 0.06, (0.25, 0.30, 0.55)),
    ("spine2", 3, (0.0, 1.2, 0.0), 0.14, (0.75, 0.25, 0.20)),
    ("l_ankle", 4, (0.1, 0.1, 0.0), 0.045, (0.85, 0.66, 0.55)),
    ("r_ankle", 5, (-0.1, 0.1, 0.0), 0.045, (0.85, 0.66, 0.55)),
    ("spine3", 6, (0.0, 1.35, 0.0), 0.14, (0.75, 0.25, 0.20)),
    ("l_foot", 7, (0.1, 0.03, 0.12), 0.04, (0.15, 0.12, 0.10)),
    ("r_foot", 8, (-0.1, 0.03, 0.12), 0.04, (0.15, 0.12, 0.10)),
    ("neck", 9, (0.0, 1.5, 0.0), 0.05, (0.85, 0.66, 0.55)),
    ("l_collar", 9, (0.08, 1.45, 0.0), 0.06, (0.75, 0.25, 0.20)),
    ("r_collar", 9, (-0.08, 1.45, 0.0), 0.06, (0.75, 0.25, 0.20)),
    ("head", 12, (0.0, 1.62, 0.0), 0.1, (0.85, 0.66, 0.55)),
    ("l_shoulder", 13, (0.2, 1.45, 0.0), 0.055, (0.75, 0.25, 0.20)),
    ("r_shoulder", 14, (-0.2, 1.45, 0.0), 0.055, (0.75, 0.25, 0.20)),
    ("l_elbow", 16, (0.48, 1.45, 0.0), 0.045, (0.85, 0.66, 0.55)),
    ("r_elbow", 17, (-0.48, 1.45, 0.0), 0.045, (0.85, 0.66, 0.55)),
    ("l_wrist", 18, (0.74, 1.45, 0.0), 0.035, (0.85, 0.66, 0.55)),
    ("r_wrist", 19, (-0.74, 1.45, 0.0), 0.035, (0.85, 0.66, 0.55)),
    ("l_hand", 20, (0.84, 1.45, 0.0), 0.035, (0.85, 0.66, 0.55)),
    ("r_hand", 21, (-0.84, 1.45, 0.0), 0.035, (0.85, 0.66, 0.55)),
]

LEAF_EXTENT = {"head": 0.14, "l_foot": 0.06, "r_foot": 0.06, "l_hand": 0.1, "r_hand": 0.1}


@dataclass
class SynthConfig:
    n_joints: int = 24
    grid: int = 256
    seed: int = 0
    share_factor: int = 4


@dataclass
class Avatar:
    splats: SplatSet
    skeleton: Skeleton
    teacher: TeacherDecoder

    def shared_teacher(self, factor: int = 4, linear: bool = False) -> TeacherDecoder:
        return coarse_teacher(self.teacher, factor, linear)


def coarse_teacher(t: TeacherDecoder, factor: int, linear: bool | None = None) -> TeacherDecoder:
    """Teacher emitting the coarse (grid / factor) corrective grid."""
    return TeacherDecoder(t.n_joints, t.grid_h // factor, t.grid_w // factor, seed=t.seed + 1,
                          hidden=t.hidden, latent_res=min(t.latent_res, t.grid_h // factor),
                          latent_ch=t.latent_ch, linear=t.linear if linear is None else linear)


def _rig(n_joints: int):
    if n_joints == len(HUMANOID):
        parent = np.array([j[1] for j in HUMANOID])
        pos = np.array([j[2] for j in HUMANOID], dtype=np.float64)
        radius = np.array([j[3] for j in HUMANOID])
        color = np.array([j[4] for j in HUMANOID])
        names = [j[0] for j in HUMANOID]
        return parent, pos, radius, color, names
    # generic rig: binary tree hanging off a root at hip height
    parent = np.array([-1] + [(j - 1) // 2 for j in range(1, n_joints)])
    pos = np.zeros((n_joints, 3))
    pos[0] = (0.0, 1.0, 0.0)
    for j in range(1, n_joints):
        side = 1.0 if j % 2 else -1.0
        depth = int(np.floor(np.log2(j + 1)))
        pos[j] = pos[parent[j]] + (0.25 * side / depth, -0.3 / depth, 0.0)
    radius = np.full(n_joints, 0.06)
    color = np.tile([0.7, 0.5, 0.4], (n_joints, 1))
    return parent, pos, radius, color, [f"j{j}" for j in range(n_joints)]


def _segments(parent, pos, names):
    """Start/end of the bone tube owned by each joint."""
    n = len(parent)
    ends = np.empty_like(pos)
    for j in range(n):
        kids = np.flatnonzero(parent == j)
        if kids.size:
            ends[j] = pos[kids].mean(axis=0)
        else:
            p = parent[j]
            direction = pos[j] - pos[p] if p >= 0 else np.array([0.0, 1.0, 0.0])
            direction = direction / np.linalg.norm(direction)
            ends[j] = pos[j] + LEAF_EXTENT.get(names[j], 0.08) * direction
        if np.linalg.norm(ends[j] - pos[j]) < 1e-3:
            ends[j] = pos[j] + np.array([0.0, 0.05, 0.0])
    return pos.copy(), ends


def _chart_bounds(n: int, parts: int):
    edges = np.linspace(0, n, parts + 1).round().astype(int)
    return list(zip(edges[:-1], edges[1:]))


def _frame(axis: np.ndarray):
    a = axis / np.linalg.norm(axis)
    helper = np.array([0.0, 0.0, 1.0]) if abs(a[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    n1 = np.cross(a, helper)
    n1 /= np.linalg.norm(n1)
    return a, n1, np.cross(a, n1)


def _layout(n_joints: int):
    cols = int(np.ceil(np.sqrt(n_joints * 1.5)))
    rows = int(np.ceil(n_joints / cols))
    return rows, cols


def _build_mask(grid: int, n_joints: int, rng: np.random.Generator) -> np.ndarray:
    target = int(round(grid * grid * OCCUPANCY))
    rows, cols = _layout(n_joints)
    eligible = np.zeros((grid, grid), dtype=bool)
    gutter = 1 if grid >= 128 else 0
    charts = 0
    for r0, r1 in _chart_bounds(grid, rows):
        for c0, c1 in _chart_bounds(grid, cols):
            if charts < n_joints:
                eligible[r0 : r1 - gutter, c0 : c1 - gutter] = True
            charts += 1
    noise = ndimage.gaussian_filter(rng.standard_normal((grid, grid)), sigma=max(1.0, grid / 48), mode="wrap")
    score = np.where(eligible, noise, -np.inf).ravel()
    # highest-scoring eligible texels survive; ties resolve by index
    keep = np.lexsort((np.arange(score.size), -score))[: min(target, int(eligible.sum()))]
    mask = np.zeros(grid * grid, dtype=bool)
    mask[keep] = True
    return mask.reshape(grid, grid)


def synth_avatar(cfg: SynthConfig | None = None) -> Avatar:
    cfg = cfg or SynthConfig()
    rng = np.random.default_rng(cfg.seed)
    parent, joint_pos, radius, base_color, names = _rig(cfg.n_joints)
    starts, ends = _segments(parent, joint_pos, names)
    grid = cfg.grid
    mask = _build_mask(grid, cfg.n_joints, rng)
    rows, cols = _layout(cfg.n_joints)

    # per-texel geometry, filled chart by chart, then gathered through the mask
    owner = np.full((grid, grid), -1)
    mu = np.zeros((grid, grid, 3))
    rot = np.zeros((grid, grid, 4))
    log_scale = np.zeros((grid, grid, 3))
    color = np.zeros((grid, grid, 3))
    j = 0
    for r0, r1 in _chart_bounds(grid, rows):
        for c0, c1 in _chart_bounds(grid, cols):
            if j >= cfg.n_joints:
                break
            h, w = r1 - r0, c1 - c0
            a, b = starts[j], ends[j]
            length = np.linalg.norm(b - a)
            along, n1, n2 = _frame(b - a)
            t = (np.arange(h) + 0.5) / h
            phi = 2 * np.pi * (np.arange(w) + 0.5) / w
            T, P = np.meshgrid(t, phi, indexing="ij")
            rad = radius[j] * (0.75 + 0.25 * np.sin(np.pi * T))
            normal = np.cos(P)[..., None] * n1 + np.sin(P)[..., None] * n2
            mu[r0:r1, c0:c1] = a + T[..., None] * (b - a) + rad[..., None] * normal
            around = np.cross(normal, along)
            R = np.stack([np.broadcast_to(along, normal.shape), around, normal], axis=-1)
            rot[r0:r1, c0:c1] = matrix_to_quat(R)
            s_along = 0.7 * length / h
            s_around = 0.7 * 2 * np.pi * rad / w
            s_normal = 0.3 * np.minimum(s_along, s_around)
            log_scale[r0:r1, c0:c1] = np.log(np.stack([np.full_like(rad, s_along), s_around, s_normal], axis=-1))
            stripes = 0.08 * np.sin(2 * np.pi * 3 * T) * np.cos(P)
            color[r0:r1, c0:c1] = np.clip(base_color[j] + stripes[..., None], 0.02, 0.98)
            owner[r0:r1, c0:c1] = j
            j += 1

    texel = mask & (owner >= 0)
    mask = texel
    n = int(mask.sum())
    sh = np.zeros((n, 27))
    col = color[mask] + rng.normal(0.0, 0.02, (n, 3))
    sh[:, :3] = (np.clip(col, 0.0, 1.0) - 0.5) / 0.28209479177387814
    splats = SplatSet(
        mask=mask,
        mu=mu[mask].astype(np.float32),
        rot=rot[mask].astype(np.float32),
        log_scale=log_scale[mask].astype(np.float32),
        delta=rng.uniform(0.85, 0.97, n).astype(np.float32),
        sh=sh.astype(np.float32),
        uv_index=np.argwhere(mask),
    )
    # float32 storage perturbs the unit norm slightly; renormalize in float32
    rot32 = splats.rot / np.linalg.norm(splats.rot.astype(np.float64), axis=1, keepdims=True).astype(np.float32)
    splats = splats.replace(rot=rot32.astype(np.float32))

    skin_joints, skin_weights = _skin(splats.mu.astype(np.float64), starts, ends, owner[mask])
    skel = Skeleton(parent=parent, joint_pos=joint_pos.astype(np.float32), skin_joints=skin_joints,
                    skin_weights=skin_weights)
    teacher = TeacherDecoder(cfg.n_joints, grid, grid, seed=cfg.seed + 1000)
    return Avatar(splats, skel, teacher)


def _skin(points, starts, ends, owner, k: int = 4, falloff: float = 0.05):
    """Nearest-bone falloff weights, up to ``k`` joints per point."""
    ab = ends - starts
    rel = points[:, None, :] - starts[None]
    t = np.clip(np.einsum("njc,jc->nj", rel, ab) / np.einsum("jc,jc->j", ab, ab), 0.0, 1.0)
    closest = starts[None] + t[..., None] * ab[None]
    dist = np.linalg.norm(points[:, None, :] - closest, axis=2)
    dist[np.arange(len(points)), owner] = 0.0
    k = min(k, starts.shape[0])
    idx = np.argsort(dist, axis=1, kind="stable")[:, :k]
    w = np.exp(-((np.take_along_axis(dist, idx, axis=1) / falloff) ** 2))
    w = w / w.sum(axis=1, keepdims=True)
    w32 = w.astype(np.float32)
    # push the float32 rounding residue into the dominant weight
    w32[:, 0] += np.float32(1.0) - w32.sum(axis=1, dtype=np.float32)
    return idx.astype(np.int32), w32


def default_camera(width: int = 96, height: int = 96, yaw: float = 0.0, pitch: float = 0.0,
                   distance: float = 3.0) -> Camera:
    # 1 m of half-height fills 45% of the frame height
    f = 0.45 * height * distance
    return Camera.from_spec(f, f, width / 2.0, height / 2.0, yaw, pitch, 0.0, 0.9, distance, width, height)


def random_rigid_pose(n_joints: int, rng: np.random.Generator, max_angle: float = np.pi / 3,
                      max_shift: float = 0.2) -> Pose:
    """Root-only rotation and translation; every other joint at identity."""
    pose = Pose.identity(n_joints)
    joints = pose.joints.copy()
    joints[0] = axis_angle_to_quat(rng.uniform(-1, 1, 3) * max_angle / np.sqrt(3))
    return Pose(joints=joints, root_t=rng.uniform(-max_shift, max_shift, 3), aux=np.zeros(AUX_DIM))
