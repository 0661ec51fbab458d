"""Linear distillation of a corrective decoder.

Pose PCA -> bias-augmented pose code -> least-squares corrective basis,
with a second PCA that compresses the 27 SH coefficients to ``sh_d`` codes.
"""
from __future__ import annotations

import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg

from .core import N_CHANNELS, SH, ValidationError
from .decoder import GEOM, N_GEOM, LinearDecoder, TeacherDecoder, linear_decode
from .sharing import apply_mask, build_lut

log = logging.getLogger(__name__)

RIDGE_SCALE = 1e-8
RANK_TOL = 1e-10


def _fix_signs(basis: np.ndarray) -> np.ndarray:
    """Flip columns so each one's largest-magnitude entry is positive."""
    idx = np.argmax(np.abs(basis), axis=0)
    signs = np.sign(basis[idx, np.arange(basis.shape[1])])
    signs[signs == 0] = 1.0
    return basis * signs


def pca_fit(X: np.ndarray, d: int):
    """Mean and the top-``d`` orthonormal principal directions (n x d)."""
    X = np.asarray(X, dtype=np.float64)
    F, n = X.shape
    mean = X.mean(axis=0)
    if d < 0 or d > min(F - 1, n):
        raise ValidationError(f"cannot keep {d} components from {F} samples of dimension {n}")
    if d == 0:
        return mean, np.zeros((n, 0))
    _, sv, Vt = np.linalg.svd(X - mean, full_matrices=False)
    if sv[0] == 0.0:
        warnings.warn("zero-variance data; principal directions are arbitrary", RuntimeWarning, stacklevel=2)
    return mean, _fix_signs(Vt[:d].T)


def explained_variance(X: np.ndarray) -> np.ndarray:
    """Cumulative explained-variance fraction for 1..rank components."""
    X = np.asarray(X, dtype=np.float64)
    sv = np.linalg.svd(X - X.mean(axis=0), compute_uv=False)
    var = sv**2
    total = var.sum()
    return np.cumsum(var) / total if total > 0 else np.ones_like(var)


@dataclass
class SolveInfo:
    cond: float
    ridge: bool
    ridge_lambda: float = 0.0


def solve_basis_info(C: np.ndarray, Y: np.ndarray):
    """Least-squares B minimizing ||C B - Y||_F, plus conditioning info.

    Solved by QR rather than by forming C^T C; rank-deficient systems fall
    back to ridge with lambda = 1e-8 * trace(C^T C) / (d + 1).
    """
    C = np.asarray(C, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    k = C.shape[1]
    sv = np.linalg.svd(C, compute_uv=False)
    cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else float("inf")
    if C.shape[0] >= k and sv[-1] > RANK_TOL * sv[0]:
        Q, R = np.linalg.qr(C)
        B = scipy.linalg.solve_triangular(R, Q.T @ Y)
        return B, SolveInfo(cond=cond, ridge=False)
    G = C.T @ C
    lam = RIDGE_SCALE * np.trace(G) / k
    log.warning("rank-deficient pose code matrix (cond=%.3g); ridge lambda=%.3g", cond, lam)
    B = scipy.linalg.solve(G + lam * np.eye(k), C.T @ Y, assume_a="pos")
    return B, SolveInfo(cond=cond, ridge=True, ridge_lambda=float(lam))


def solve_basis(C: np.ndarray, Y: np.ndarray) -> np.ndarray:
    return solve_basis_info(C, Y)[0]


@dataclass
class DistillConfig:
    d: int = 32
    sh_d: int = 6
    share_factor: Optional[int] = None
    holdout: float = 0.2
    seed: int = 0
    workers: int = 1


@dataclass
class DistillReport:
    n_frames: int
    n_train: int
    n_test: int
    d: int
    sh_d: int
    n_corr: int
    cond: float
    ridge: bool
    train_rms: np.ndarray
    test_rms: np.ndarray
    sh_truncation_rms_train: float
    sh_truncation_rms_test: float
    pose_explained: np.ndarray
    sh_explained: np.ndarray
    extras: dict = field(default_factory=dict)

    @staticmethod
    def _group(rms: np.ndarray, sl: slice) -> float:
        return float(np.sqrt(np.mean(rms[sl] ** 2)))

    def summary(self) -> dict:
        out = {
            "frames": self.n_frames,
            "train_frames": self.n_train,
            "test_frames": self.n_test,
            "d": self.d,
            "sh_d": self.sh_d,
            "n_corr": self.n_corr,
            "cond": self.cond,
            "ridge": int(self.ridge),
            "train_rms_geom": self._group(self.train_rms, GEOM),
            "train_rms_sh": self._group(self.train_rms, SH),
            "test_rms_geom": self._group(self.test_rms, GEOM),
            "test_rms_sh": self._group(self.test_rms, SH),
            "sh_truncation_rms_train": self.sh_truncation_rms_train,
            "sh_truncation_rms_test": self.sh_truncation_rms_test,
            "pose_explained_at_d": float(self.pose_explained[min(self.d, len(self.pose_explained)) - 1]),
            "sh_explained_at_sh_d": float(self.sh_explained[self.sh_d - 1]),
        }
        out.update(self.extras)
        return out

    def to_kv(self) -> str:
        lines = [f"{k}={v:.9g}" if isinstance(v, float) else f"{k}={v}" for k, v in self.summary().items()]
        lines += [f"train_rms_ch{c}={v:.9g}" for c, v in enumerate(self.train_rms)]
        lines += [f"test_rms_ch{c}={v:.9g}" for c, v in enumerate(self.test_rms)]
        lines += [f"pose_explained_{i + 1}={v:.9g}" for i, v in enumerate(self.pose_explained)]
        lines += [f"sh_explained_{i + 1}={v:.9g}" for i, v in enumerate(self.sh_explained)]
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        s = self.summary()

        def held(key):
            return f"{s[key]:.4g}" if self.n_test else "n/a"

        return (
            f"distilled {s['n_corr']} correctives from {s['frames']} frames "
            f"({s['train_frames']} train / {s['test_frames']} held out), d={s['d']}, sh_d={s['sh_d']}\n"
            f"  pose code condition number {s['cond']:.4g}{' (ridge fallback)' if self.ridge else ''}\n"
            f"  geometry RMS  train {s['train_rms_geom']:.4g}  held-out {held('test_rms_geom')}\n"
            f"  SH RMS        train {s['train_rms_sh']:.4g}  held-out {held('test_rms_sh')}\n"
            f"  SH truncation train {s['sh_truncation_rms_train']:.4g}  held-out {held('sh_truncation_rms_test')}\n"
            f"  explained variance: pose {s['pose_explained_at_d']:.6f} at d, SH {s['sh_explained_at_sh_d']:.6f} at sh_d\n"
        )


def teacher_rows(teacher: TeacherDecoder, poses: np.ndarray, mask: np.ndarray,
                 share_factor: Optional[int] = None, workers: int = 1) -> np.ndarray:
    """Decode every pose and reduce each grid to corrective rows: (F, n_corr, 37).

    Without sharing, rows are the masked texels; with sharing the teacher
    emits the coarse grid and every coarse cell is a row.
    """
    mask = np.asarray(mask, dtype=bool)
    if share_factor:
        want = (mask.shape[0] // share_factor, mask.shape[1] // share_factor)
    else:
        want = mask.shape
    if (teacher.grid_h, teacher.grid_w) != want:
        raise ValidationError(f"teacher grid {(teacher.grid_h, teacher.grid_w)} != expected {want}")

    def one(p):
        g = teacher.decode(p)
        return g.reshape(-1, N_CHANNELS) if share_factor else apply_mask(g, mask)

    poses = np.asarray(poses, dtype=np.float64)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(one, poses))
    else:
        rows = [one(p) for p in poses]
    return np.stack(rows)


def split_frames(n: int, holdout: float, seed: int):
    perm = np.random.default_rng(seed).permutation(n)
    n_test = max(1, int(round(holdout * n))) if holdout > 0 else 0
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


def fit_sh_pca(sh: np.ndarray, sh_d: int):
    """Shared SH basis over every (frame, corrective) sample: (sh_d x 27 rows, mean)."""
    S = np.asarray(sh, dtype=np.float64).reshape(-1, sh.shape[-1])
    mean = S.mean(axis=0)
    Z = S - mean
    evals, evecs = np.linalg.eigh(Z.T @ Z)
    order = np.argsort(evals)[::-1]
    E = _fix_signs(evecs[:, order[:sh_d]]).T
    explained = np.cumsum(np.maximum(evals[order], 0.0))
    explained = explained / explained[-1] if explained[-1] > 0 else np.ones_like(explained)
    return E, mean, explained


def _rms(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = (a - b).reshape(-1, a.shape[-1])
    return np.sqrt(np.mean(diff**2, axis=0)) if diff.size else np.zeros(a.shape[-1])


def fit_linear(poses: np.ndarray, rows: np.ndarray, d: int, sh_d: int, lut=None):
    """Fit a LinearDecoder to (F, pose_dim) poses and (F, n_corr, 37) targets."""
    F, n_corr, _ = rows.shape
    E, sh_mean, sh_explained = fit_sh_pca(rows[..., SH], sh_d)
    codes = (rows[..., SH] - sh_mean) @ E.T
    targets = np.concatenate([rows[..., GEOM], codes], axis=-1).reshape(F, -1)
    p_mean, B_p = pca_fit(poses, d)
    C = np.hstack([np.ones((F, 1)), (poses - p_mean) @ B_p])
    B_c, info = solve_basis_info(C, targets)
    ld = LinearDecoder(p_mean=p_mean, B_p=B_p, B_c=B_c, sh_expand=E, sh_mean=sh_mean, n_corr=n_corr,
                       lut=None if lut is None else np.asarray(lut, dtype=np.int64))
    return ld, info, sh_explained


def sh_truncation_rms(ld: LinearDecoder, rows: np.ndarray) -> float:
    """RMS change of the teacher's SH samples when projected through the SH basis."""
    sh = rows[..., SH]
    recon = ((sh - ld.sh_mean) @ ld.sh_expand.T) @ ld.sh_expand + ld.sh_mean
    return float(np.sqrt(np.mean((sh - recon) ** 2))) if sh.size else 0.0


def distill(teacher: TeacherDecoder, poses: np.ndarray, mask: np.ndarray, cfg: DistillConfig | None = None):
    """Build a LinearDecoder from teacher outputs on ``poses``; returns (decoder, report)."""
    cfg = cfg or DistillConfig()
    poses = np.asarray(poses, dtype=np.float64)
    rows = teacher_rows(teacher, poses, mask, cfg.share_factor, cfg.workers)
    train, test = split_frames(len(poses), cfg.holdout, cfg.seed)
    if len(train) < cfg.d + 1:
        raise ValidationError(f"{len(train)} training frames cannot support d={cfg.d}")
    lut = build_lut(mask, cfg.share_factor) if cfg.share_factor else None
    ld, info, sh_explained = fit_linear(poses[train], rows[train], cfg.d, cfg.sh_d, lut)

    train_rms = _rms(linear_decode(ld, poses[train]), rows[train])
    test_rms = _rms(linear_decode(ld, poses[test]), rows[test]) if len(test) else np.zeros(N_CHANNELS)
    report = DistillReport(
        n_frames=len(poses),
        n_train=len(train),
        n_test=len(test),
        d=cfg.d,
        sh_d=cfg.sh_d,
        n_corr=ld.n_corr,
        cond=info.cond,
        ridge=info.ridge,
        train_rms=train_rms,
        test_rms=test_rms,
        sh_truncation_rms_train=sh_truncation_rms(ld, rows[train]),
        sh_truncation_rms_test=sh_truncation_rms(ld, rows[test]) if len(test) else 0.0,
        pose_explained=explained_variance(poses[train]),
        sh_explained=sh_explained,
    )
    return ld, report
