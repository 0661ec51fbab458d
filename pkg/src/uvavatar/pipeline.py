"""Pose -> correctives -> animated splats -> image, shared by the CLI and evaluations."""
from __future__ import annotations

from typing import Optional, Union

import numpy as np

from .core import N_CHANNELS, Pose, Skeleton, SplatSet, ValidationError
from .decoder import LinearDecoder, TeacherDecoder, decode_for_gaussians, gather_correctives
from .metrics import background, compare, crop_to_mask_bbox
from .quant import QuantizedLinearDecoder, quantized_decode
from .raster import FrameBuffer, render
from .sharing import apply_mask, build_lut
from .skinning import animate

Decoder = Union[None, TeacherDecoder, LinearDecoder, QuantizedLinearDecoder]


def correctives(dec: Decoder, s: SplatSet, pose: np.ndarray, share_factor: Optional[int] = None) -> np.ndarray:
    """Per-Gaussian (N, 37) correctives from any decoder kind; ``None`` gives zeros."""
    pose = np.asarray(pose, dtype=np.float64)
    if dec is None:
        return np.zeros((len(s), N_CHANNELS))
    if isinstance(dec, TeacherDecoder):
        grid = dec.decode(pose)
        if grid.shape[:2] == s.mask.shape:
            return apply_mask(grid, s.mask)
        factor = s.grid_h // grid.shape[0]
        if share_factor is not None and factor != share_factor:
            raise ValidationError(f"teacher grid {grid.shape[:2]} does not match share factor {share_factor}")
        return gather_correctives(grid.reshape(-1, N_CHANNELS), build_lut(s.mask, factor))
    if isinstance(dec, QuantizedLinearDecoder):
        corr = quantized_decode(dec, pose)
        return corr if dec.lut is None else gather_correctives(corr, dec.lut)
    corr = decode_for_gaussians(dec, pose)
    if corr.shape[0] != len(s):
        raise ValidationError(f"decoder emits {corr.shape[0]} correctives for {len(s)} gaussians")
    return corr


def render_pose(s: SplatSet, skel: Skeleton, corr: np.ndarray, pose: np.ndarray, cam,
                workers: int = 1) -> FrameBuffer:
    posed = animate(s, corr, skel, Pose.from_vector(pose, skel.n_joints))
    return render(posed, cam, workers=workers)


def scored_pair(reference: FrameBuffer, test: FrameBuffer, crop_mask: Optional[np.ndarray] = None) -> dict:
    """Metrics of ``test`` against ``reference`` over the shared backdrop, cropped to the reference silhouette."""
    h, w = reference.alpha.shape
    bg = background(h, w)
    ref, img = reference.over(bg), test.over(bg)
    mask = reference.alpha > 0.5 if crop_mask is None else crop_mask
    if mask.any():
        ref, img = crop_to_mask_bbox(ref, mask), crop_to_mask_bbox(img, mask)
    return compare(ref, img)
