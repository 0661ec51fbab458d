"""Software Gaussian-splat renderer.

Two passes, mirroring a compute/graphics split: :func:`project_splats`
turns every visible Gaussian into a screen-space :class:`ProjectedQuad`
record, then :func:`composite` blends the depth-sorted quads tile by tile.
:func:`render_oracle` is the slow reference: every splat at every pixel,
no tiling, no quad bounds, no early termination.
"""
from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import Camera, Gaussian, SplatSet, ValidationError, quat_to_matrix

COV_FLOOR = 0.3
ALPHA_MAX = 0.999
# early-out transmittance; below 1e-5 the skipped tail cannot move any
# channel by more than 1e-5, which keeps render within 1e-5 of the oracle
T_MIN = 1e-5
# kernel support: Mahalanobis radius 3, the same radius that sizes the quads
CUTOFF_Q = 9.0
TILE = 16
# splats blended per step before checking whether a tile has saturated
BLEND_CHUNK = 128

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)


class Culled(Exception):
    """A splat sits on or behind the near plane."""


@dataclass(frozen=True, eq=False)
class ProjectedQuad:
    """Screen-space records for a batch of splats (one row per splat).

    ``conic`` holds (a, b, c) of the inverse 2D covariance
    [[a, b], [b, c]]; ``index`` is the splat's position in the source set.
    """

    center_px: np.ndarray
    conic: np.ndarray
    extent_px: np.ndarray
    depth: np.ndarray
    color: np.ndarray
    delta: np.ndarray
    index: np.ndarray

    def __len__(self) -> int:
        return self.depth.shape[0]

    def take(self, order: np.ndarray) -> "ProjectedQuad":
        return ProjectedQuad(*(getattr(self, f)[order] for f in _QUAD_FIELDS))


_QUAD_FIELDS = ("center_px", "conic", "extent_px", "depth", "color", "delta", "index")


@dataclass(frozen=True, eq=False)
class FrameBuffer:
    rgb: np.ndarray
    alpha: np.ndarray
    # per-pixel sum of compositing weights alpha_i * T_i; 1 - alpha up to rounding
    weight: Optional[np.ndarray] = None

    @property
    def height(self) -> int:
        return self.rgb.shape[0]

    @property
    def width(self) -> int:
        return self.rgb.shape[1]

    def over(self, background: np.ndarray) -> np.ndarray:
        """Composite the (premultiplied) frame over an RGB background."""
        return self.rgb + (1.0 - self.alpha)[..., None] * background


# ---------------------------------------------------------------------------
# per-splat math


def camera_jacobian(p_cam: np.ndarray, cam: Camera) -> np.ndarray:
    x, y, z = np.asarray(p_cam, dtype=np.float64)
    if z <= cam.near:
        raise Culled(f"depth {z} is not beyond the near plane {cam.near}")
    return np.array(
        [
            [cam.fx / z, 0.0, -cam.fx * x / (z * z)],
            [0.0, cam.fy / z, -cam.fy * y / (z * z)],
        ]
    )


def _jacobians(p_cam: np.ndarray, cam: Camera) -> np.ndarray:
    x, y, z = p_cam[:, 0], p_cam[:, 1], p_cam[:, 2]
    J = np.zeros((p_cam.shape[0], 2, 3))
    J[:, 0, 0] = cam.fx / z
    J[:, 0, 2] = -cam.fx * x / (z * z)
    J[:, 1, 1] = cam.fy / z
    J[:, 1, 2] = -cam.fy * y / (z * z)
    return J


def _symmetrize(m: np.ndarray) -> np.ndarray:
    off = 0.5 * (m[..., 0, 1] + m[..., 1, 0])
    m = m.copy()
    m[..., 0, 1] = off
    m[..., 1, 0] = off
    return m


def _project_cov(J: np.ndarray, R_c: np.ndarray, cov3: np.ndarray) -> np.ndarray:
    T = J @ R_c
    proj = _symmetrize(T @ cov3 @ np.swapaxes(T, -1, -2))
    proj[..., 0, 0] += COV_FLOOR
    proj[..., 1, 1] += COV_FLOOR
    return proj


def project_covariance(g: Gaussian, cam: Camera) -> np.ndarray:
    """2D splat covariance J R Sigma R^T J^T plus the anti-aliasing floor."""
    cov3 = g.covariance()
    if not np.all(np.isfinite(cov3)):
        raise ValidationError("degenerate covariance")
    J = camera_jacobian(cam.to_camera(g.mu), cam)
    return _project_cov(J, np.asarray(cam.R, dtype=np.float64), cov3)


def _conic(cov2: np.ndarray) -> np.ndarray:
    a, b, c = cov2[..., 0, 0], cov2[..., 0, 1], cov2[..., 1, 1]
    det = a * c - b * b
    return np.stack([c / det, -b / det, a / det], axis=-1)


def _alpha(conic: np.ndarray, delta: np.ndarray, dx: np.ndarray, dy: np.ndarray) -> np.ndarray:
    # shared by the tiled path and the oracle so both see identical bits
    q = conic[..., 0] * dx * dx + 2.0 * conic[..., 1] * dx * dy + conic[..., 2] * dy * dy
    a = np.minimum(delta * np.exp(-0.5 * q), ALPHA_MAX)
    return np.where(q <= CUTOFF_Q, a, 0.0)


def splat_alpha(quad: ProjectedQuad, p: np.ndarray, i: int = 0) -> float:
    """Opacity of splat ``i`` of ``quad`` at pixel position ``p``."""
    dx = np.float64(p[0]) - quad.center_px[i, 0]
    dy = np.float64(p[1]) - quad.center_px[i, 1]
    return float(_alpha(quad.conic[i], quad.delta[i], dx, dy))


def make_quad(center_px, cov2, delta, color=(1.0, 1.0, 1.0), depth=1.0) -> ProjectedQuad:
    """Single-splat quad from an explicit 2D covariance (no floor added)."""
    cov2 = np.asarray(cov2, dtype=np.float64)
    return ProjectedQuad(
        center_px=np.asarray(center_px, dtype=np.float64).reshape(1, 2),
        conic=_conic(cov2).reshape(1, 3),
        extent_px=np.array([3.0 * np.sqrt(np.linalg.eigvalsh(cov2).max())]),
        depth=np.array([float(depth)]),
        color=np.asarray(color, dtype=np.float64).reshape(1, 3),
        delta=np.array([float(delta)]),
        index=np.array([0]),
    )


def sh_basis(dirs: np.ndarray) -> np.ndarray:
    """Nine real SH basis values (degree <= 2) per direction, shape (N, 9)."""
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    xx, yy, zz = x * x, y * y, z * z
    return np.stack(
        [
            np.full_like(x, SH_C0),
            -SH_C1 * y,
            SH_C1 * z,
            -SH_C1 * x,
            SH_C2[0] * x * y,
            SH_C2[1] * y * z,
            SH_C2[2] * (2.0 * zz - xx - yy),
            SH_C2[3] * x * z,
            SH_C2[4] * (xx - yy),
        ],
        axis=1,
    )


def eval_sh_batch(sh: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    basis = sh_basis(dirs)
    coeffs = np.asarray(sh, dtype=np.float64).reshape(-1, 9, 3)
    return np.clip(np.einsum("nk,nkc->nc", basis, coeffs) + 0.5, 0.0, 1.0)


def eval_sh(sh: np.ndarray, view_dir: np.ndarray, strict: bool = False) -> np.ndarray:
    """RGB from 27 SH coefficients (9 basis functions x 3 channels)."""
    d = np.asarray(view_dir, dtype=np.float64)
    n = np.linalg.norm(d)
    if abs(n - 1.0) > 1e-6:
        if strict:
            warnings.warn(f"view direction has norm {n:.6g}; normalizing", stacklevel=2)
        d = d / n
    return eval_sh_batch(np.asarray(sh).reshape(1, 27), d.reshape(1, 3))[0]


# ---------------------------------------------------------------------------
# pass 1: projection


def _project_chunk(s: SplatSet, idx: np.ndarray, cam: Camera) -> ProjectedQuad:
    R_c = np.asarray(cam.R, dtype=np.float64)
    mu = np.asarray(s.mu[idx], dtype=np.float64)
    p_cam = mu @ R_c.T + cam.t
    keep = p_cam[:, 2] > cam.near
    idx, mu, p_cam = idx[keep], mu[keep], p_cam[keep]
    z = p_cam[:, 2]
    center = np.stack([cam.fx * p_cam[:, 0] / z + cam.cx, cam.fy * p_cam[:, 1] / z + cam.cy], axis=1)

    rot = quat_to_matrix(s.rot[idx])
    s2 = np.exp(2.0 * np.asarray(s.log_scale[idx], dtype=np.float64))
    cov3 = (rot * s2[:, None, :]) @ np.swapaxes(rot, 1, 2)
    cov2 = _project_cov(_jacobians(p_cam, cam), R_c, cov3)
    lam_max = 0.5 * (cov2[:, 0, 0] + cov2[:, 1, 1]) + np.sqrt(
        0.25 * (cov2[:, 0, 0] - cov2[:, 1, 1]) ** 2 + cov2[:, 0, 1] ** 2
    )
    dirs = mu - cam.center
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return ProjectedQuad(
        center_px=center,
        conic=_conic(cov2),
        extent_px=3.0 * np.sqrt(lam_max),
        depth=z,
        color=eval_sh_batch(s.sh[idx], dirs),
        delta=np.asarray(s.delta[idx], dtype=np.float64),
        index=idx,
    )


def _map(fn, items, workers: int):
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def project_splats(s: SplatSet, cam: Camera, workers: int = 1, chunk: int = 8192) -> ProjectedQuad:
    """Project and cull every splat; output keeps source order."""
    n = len(s)
    chunks = [np.arange(a, min(a + chunk, n)) for a in range(0, n, chunk)] or [np.arange(0)]
    parts = _map(lambda idx: _project_chunk(s, idx, cam), chunks, workers)
    return ProjectedQuad(*(np.concatenate([getattr(p, f) for p in parts]) for f in _QUAD_FIELDS))


def depth_sort(quads: ProjectedQuad) -> ProjectedQuad:
    """Front-to-back order; ties keep source index order."""
    order = np.lexsort((quads.index, quads.depth))
    return quads.take(order)


# ---------------------------------------------------------------------------
# pass 2: compositing


class _Blender:
    """Front-to-back accumulator fed in depth-ordered chunks of splats.

    Each chunk is prefixed with the carried state, so cumprod/cumsum apply
    the products and sums in the same order as a scalar loop and chunking
    does not change a single bit.
    """

    def __init__(self, n_px: int, t_min: Optional[float]):
        self.t_min = t_min
        self.T = np.ones(n_px)
        self.T_out = np.ones(n_px)
        self.rgb = np.zeros((n_px, 3))
        self.weight = np.zeros(n_px)

    def done(self) -> bool:
        return self.t_min is not None and bool(np.all(self.T < self.t_min))

    def add(self, alpha: np.ndarray, color: np.ndarray) -> None:
        if alpha.shape[0] == 0:
            return
        T_incl = np.cumprod(np.vstack([self.T[None], 1.0 - alpha]), axis=0)
        T_excl, T_incl = T_incl[:-1], T_incl[1:]
        w = T_excl * alpha
        if self.t_min is not None:
            # T is non-increasing, so once a pixel drops below t_min it stays out
            active = T_excl >= self.t_min
            w = np.where(active, w, 0.0)
            self.T_out = np.minimum(self.T_out, np.where(active, T_incl, np.inf).min(axis=0))
        else:
            self.T_out = T_incl[-1]
        self.T = T_incl[-1]
        for c in range(3):
            self.rgb[:, c] = np.cumsum(np.vstack([self.rgb[None, :, c], w * color[:, c, None]]), axis=0)[-1]
        self.weight = np.cumsum(np.vstack([self.weight[None], w]), axis=0)[-1]


def _blend(alpha: np.ndarray, color: np.ndarray, t_min: Optional[float]):
    """Blend (K, P) alphas front to back; returns rgb (P,3), T (P,), weight (P,)."""
    acc = _Blender(alpha.shape[1], t_min)
    acc.add(alpha, color)
    return acc.rgb, acc.T_out, acc.weight


def _pixel_boxes(quads: ProjectedQuad, width: int, height: int) -> np.ndarray:
    """Inclusive pixel box (r0, r1, c0, c1) of each quad, clamped to the image."""
    cx, cy = quads.center_px[:, 0] - 0.5, quads.center_px[:, 1] - 0.5
    e = quads.extent_px
    c0 = np.clip(np.floor(cx - e), 0, width - 1)
    c1 = np.clip(np.ceil(cx + e), -1, width - 1)
    r0 = np.clip(np.floor(cy - e), 0, height - 1)
    r1 = np.clip(np.ceil(cy + e), -1, height - 1)
    # boxes entirely off-image become empty
    off = (cx + e < 0) | (cx - e > width - 1) | (cy + e < 0) | (cy - e > height - 1)
    r1 = np.where(off, -1, r1)
    return np.stack([r0, r1, c0, c1], axis=1).astype(np.int64)


def _check_sorted(quads: ProjectedQuad) -> None:
    d, i = quads.depth, quads.index
    bad = (d[1:] < d[:-1]) | ((d[1:] == d[:-1]) & (i[1:] < i[:-1]))
    if np.any(bad):
        raise ValidationError(f"quads not depth-sorted at position {int(np.argmax(bad)) + 1}")


def composite(quads: ProjectedQuad, width: int, height: int, workers: int = 1,
              tile: int = TILE, check: bool = True, t_min: Optional[float] = T_MIN) -> FrameBuffer:
    """Front-to-back blend of depth-sorted quads, tile-parallel."""
    if check:
        _check_sorted(quads)
    boxes = _pixel_boxes(quads, width, height)
    nonempty = (boxes[:, 1] >= boxes[:, 0]) & (boxes[:, 3] >= boxes[:, 2])
    tiles = [(r, c) for r in range(0, height, tile) for c in range(0, width, tile)]

    def run(rc):
        r, c = rc
        r_end, c_end = min(r + tile, height), min(c + tile, width)
        hit = nonempty & (boxes[:, 0] < r_end) & (boxes[:, 1] >= r) & (boxes[:, 2] < c_end) & (boxes[:, 3] >= c)
        k = np.flatnonzero(hit)
        rows, cols = np.mgrid[r:r_end, c:c_end]
        px = cols.ravel() + 0.5
        py = rows.ravel() + 0.5
        acc = _Blender(px.size, t_min)
        for s0 in range(0, k.size, BLEND_CHUNK):
            kk = k[s0 : s0 + BLEND_CHUNK]
            dx = px[None, :] - quads.center_px[kk, 0:1]
            dy = py[None, :] - quads.center_px[kk, 1:2]
            a = _alpha(quads.conic[kk, None, :], quads.delta[kk, None], dx, dy)
            # all-zero rows multiply T by 1 and add 0: dropping them is exact
            hit = a.any(axis=1)
            acc.add(a[hit], quads.color[kk[hit]])
            if acc.done():
                break
        return acc.rgb, acc.T_out, acc.weight

    results = _map(run, tiles, workers)
    rgb = np.zeros((height, width, 3))
    T = np.ones((height, width))
    weight = np.zeros((height, width))
    for (r, c), (t_rgb, t_T, t_w) in zip(tiles, results):
        h, w = min(tile, height - r), min(tile, width - c)
        rgb[r : r + h, c : c + w] = t_rgb.reshape(h, w, 3)
        T[r : r + h, c : c + w] = t_T.reshape(h, w)
        weight[r : r + h, c : c + w] = t_w.reshape(h, w)
    return FrameBuffer(rgb=rgb, alpha=1.0 - T, weight=weight)


def render(s: SplatSet, cam: Camera, workers: int = 1) -> FrameBuffer:
    quads = depth_sort(project_splats(s, cam, workers=workers))
    return composite(quads, cam.width, cam.height, workers=workers, check=False)


def render_oracle(s: SplatSet, cam: Camera) -> FrameBuffer:
    """Reference renderer: per-pixel loop over all depth-sorted splats."""
    quads = depth_sort(_project_chunk(s, np.arange(len(s)), cam))
    rows, cols = np.mgrid[0 : cam.height, 0 : cam.width]
    px = cols.ravel() + 0.5
    py = rows.ravel() + 0.5
    n_px = px.size
    rgb = np.zeros((n_px, 3))
    T = np.ones(n_px)
    weight = np.zeros(n_px)
    for i in range(len(quads)):
        a = _alpha(quads.conic[i], quads.delta[i], px - quads.center_px[i, 0], py - quads.center_px[i, 1])
        w = T * a
        rgb += w[:, None] * quads.color[i]
        weight += w
        T = T * (1.0 - a)
    return FrameBuffer(
        rgb=rgb.reshape(cam.height, cam.width, 3),
        alpha=1.0 - T.reshape(cam.height, cam.width),
        weight=weight.reshape(cam.height, cam.width),
    )


# ---------------------------------------------------------------------------
# image output


def to_uint8(v: np.ndarray) -> np.ndarray:
    return np.round(np.clip(v, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_ppm(path, rgb: np.ndarray) -> None:
    img = to_uint8(rgb)
    h, w = img.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(img.tobytes())


def write_pgm(path, gray: np.ndarray) -> None:
    img = to_uint8(gray)
    h, w = img.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(img.tobytes())


def read_pnm(path) -> np.ndarray:
    """Read a binary P5/P6 file written by :func:`write_ppm`/:func:`write_pgm` as floats in [0, 1]."""
    with open(path, "rb") as f:
        data = f.read()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end : end + 1].isspace():
            end += 1
        tokens.append(data[pos:end])
        pos = end
    pos += 1
    magic, w, h, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if magic not in (b"P5", b"P6") or maxval != 255:
        raise ValueError(f"{path}: unsupported image format {magic!r} maxval {maxval}")
    ch = 3 if magic == b"P6" else 1
    need = w * h * ch
    pix = np.frombuffer(data, dtype=np.uint8, count=need, offset=pos) if len(data) - pos >= need else None
    if pix is None:
        raise ValueError(f"{path}: truncated pixel data")
    shape = (h, w, 3) if ch == 3 else (h, w)
    return pix.reshape(shape).astype(np.float64) / 255.0
