"""Seeded pose sampling."""
from __future__ import annotations

import numpy as np
from scipy.stats import qmc

from .core import AUX_DIM, axis_angle_to_quat, pose_dim


def sample_poses(n_joints: int, n: int, seed: int = 0, max_angle: float = np.pi / 4,
                 root_range: float = 0.1, aux_range: float = 1.0) -> np.ndarray:
    """Scrambled-Halton pose vectors: per-joint rotations within +-max_angle per axis."""
    dim = 3 * n_joints + 3 + AUX_DIM
    u = qmc.Halton(d=dim, scramble=True, seed=seed).random(n)
    u = 2.0 * u - 1.0
    aa = u[:, : 3 * n_joints].reshape(n, n_joints, 3) * max_angle
    quats = axis_angle_to_quat(aa)
    root_t = u[:, 3 * n_joints : 3 * n_joints + 3] * root_range
    aux = u[:, 3 * n_joints + 3 :] * aux_range
    out = np.concatenate([quats.reshape(n, -1), root_t, aux], axis=1)
    assert out.shape[1] == pose_dim(n_joints)
    return out
