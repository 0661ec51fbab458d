"""Linear blend skinning of corrected Gaussians.

Skinning matrices are built directly in "offset" form, X_j = X_parent * (rotate
about the joint pivot), so that the identity pose produces exact identity
matrices with no rest/inverse-rest round trip.
"""
from __future__ import annotations

import numpy as np

from .core import (
    Gaussian,
    Pose,
    Skeleton,
    SplatSet,
    ValidationError,
    apply_correctives,
    matrix_to_quat,
    quat_multiply,
    quat_to_matrix,
)


def _rotation(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    if q[0] == 1.0 and not np.any(q[1:]):
        return np.eye(3)
    return quat_to_matrix(q)


def lbs_transforms(skel: Skeleton, pose: Pose) -> np.ndarray:
    """Per-joint skinning matrices (J, 3, 4) mapping rest space to posed space."""
    if pose.n_joints != skel.n_joints:
        raise ValidationError(f"pose has {pose.n_joints} joints, skeleton has {skel.n_joints}")
    X = np.zeros((skel.n_joints, 3, 4))
    pivots = np.asarray(skel.joint_pos, dtype=np.float64)
    for j in skel.order():
        R = _rotation(pose.joints[j])
        o = pivots[j]
        # rotate about the joint pivot: x -> R x + (o - R o)
        local_t = o - R @ o
        p = skel.parent[j]
        if p == -1:
            X[j, :, :3] = R
            X[j, :, 3] = local_t + pose.root_t
        else:
            A, b = X[p, :, :3], X[p, :, 3]
            X[j, :, :3] = A @ R
            X[j, :, 3] = A @ local_t + b
    return X


def blend_matrices(joints: np.ndarray, weights: np.ndarray, xforms: np.ndarray) -> np.ndarray:
    """Per-Gaussian blended 3x4 matrices I + sum_k w_k (X_k - I)."""
    eye = np.zeros((3, 4))
    eye[:, :3] = np.eye(3)
    diff = xforms - eye
    w = np.asarray(weights, dtype=np.float64)
    # float32 weights sum to 1 only within ~6e-8; renormalize so equal bone
    # transforms blend back to that transform at float64 precision
    w = w / w.sum(axis=1, keepdims=True)
    return eye + np.einsum("nk,nkij->nij", w, diff[np.asarray(joints)])


def _polar(A: np.ndarray):
    """Polar decomposition A = R S for a batch of 3x3 matrices (det R = +1)."""
    U, sig, Vt = np.linalg.svd(A)
    d = np.sign(np.linalg.det(U @ Vt))
    U[:, :, 2] *= d[:, None]
    sig[:, 2] *= d
    R = U @ Vt
    S = np.einsum("nji,nj,njk->nik", Vt, sig, Vt)
    return R, S


def skin_splats(s: SplatSet, joints: np.ndarray, weights: np.ndarray, xforms: np.ndarray) -> SplatSet:
    """Skin every Gaussian; rows whose blended matrix is exactly I are untouched."""
    M = blend_matrices(joints, weights, xforms)
    A, b = M[:, :, :3], M[:, :, 3]
    mu = np.asarray(s.mu, dtype=np.float64)
    new_mu = mu + (np.einsum("nij,nj->ni", A, mu) - mu) + b

    ident = np.all(A == np.eye(3), axis=(1, 2))
    rot = np.array(s.rot, dtype=np.float64, copy=True)
    log_scale = np.array(s.log_scale, dtype=np.float64, copy=True)
    move = ~ident
    if np.any(move):
        R, S = _polar(A[move])
        rot[move] = quat_multiply(matrix_to_quat(R), rot[move])
        # stretch of the symmetric factor along each of the Gaussian's own axes
        axes = quat_to_matrix(s.rot[move])
        stretch = np.linalg.norm(np.einsum("nij,njk->nik", S, axes), axis=1)
        log_scale[move] = log_scale[move] + np.log(stretch)
    return s.replace(mu=new_mu, rot=rot, log_scale=log_scale)


def skin_gaussian(g: Gaussian, joints, weights, xforms: np.ndarray) -> Gaussian:
    w = np.asarray(weights, dtype=np.float64)
    if abs(w.sum() - 1.0) > 1e-6:
        raise ValidationError(f"skin weights sum to {w.sum()}")
    single = SplatSet(
        mask=np.ones((1, 1), dtype=bool),
        mu=g.mu[None],
        rot=g.rot[None],
        log_scale=g.log_scale[None],
        delta=np.array([g.delta]),
        sh=g.sh[None],
        uv_index=np.zeros((1, 2), dtype=np.int64),
    )
    out = skin_splats(single, np.asarray(joints)[None], w[None], xforms)
    return out.gaussian(0)


def animate(s: SplatSet, corr: np.ndarray, skel: Skeleton, pose: Pose) -> SplatSet:
    """Corrective in canonical space, then LBS."""
    corr = np.asarray(corr)
    if corr.shape[0] != len(s):
        raise ValidationError(f"{corr.shape[0]} correctives for {len(s)} gaussians")
    corrected = apply_correctives(s, corr)
    return skin_splats(corrected, skel.skin_joints, skel.skin_weights, lbs_transforms(skel, pose))


def shear_error(s: SplatSet, skel: Skeleton, pose: Pose) -> np.ndarray:
    """Relative Frobenius error of the skinned covariance vs the exact A Sigma A^T.

    Non-rigid LBS blends carry shear the rotation/scale parameterization
    cannot hold; this measures what the polar approximation drops.
    """
    X = lbs_transforms(skel, pose)
    A = blend_matrices(skel.skin_joints, skel.skin_weights, X)[:, :, :3]
    exact = np.einsum("nij,njk,nlk->nil", A, s.covariances(), A)
    approx = skin_splats(s, skel.skin_joints, skel.skin_weights, X).covariances()
    return np.linalg.norm(approx - exact, axis=(1, 2)) / np.linalg.norm(exact, axis=(1, 2))
