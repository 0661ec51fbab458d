"""UV-space Gaussian avatars with linear, shared and quantized corrective decoders."""
from .core import (
    Camera,
    CorrectiveGrid,
    Gaussian,
    Pose,
    Skeleton,
    SplatSet,
    ValidationError,
    apply_corrective,
    apply_correctives,
    pose_dim,
    validate_splatset,
)
from .decoder import LinearDecoder, TeacherDecoder, decode_for_gaussians, gather_correctives, linear_decode
from .distill import DistillConfig, distill, solve_basis
from .io import FormatError, load_avatar, load_decoder, save_avatar, save_decoder
from .metrics import compare, l1, psnr, ssim
from .pipeline import correctives, render_pose, scored_pair
from .poses import sample_poses
from .quant import QuantizedLinearDecoder, quantize, quantized_decode
from .raster import render, render_oracle
from .sharing import apply_mask, build_lut, upsample_nearest
from .skinning import animate, lbs_transforms, skin_splats
from .synth import SynthConfig, default_camera, synth_avatar

__version__ = "0.1.0"

__all__ = [
    "Camera", "CorrectiveGrid", "DistillConfig", "FormatError", "Gaussian", "LinearDecoder", "Pose",
    "QuantizedLinearDecoder", "Skeleton", "SplatSet", "SynthConfig", "TeacherDecoder", "ValidationError",
    "animate", "compare", "correctives", "default_camera", "apply_corrective", "apply_correctives", "apply_mask", "build_lut", "decode_for_gaussians",
    "distill", "gather_correctives", "l1", "lbs_transforms", "linear_decode", "load_avatar", "load_decoder",
    "pose_dim", "psnr", "quantize", "quantized_decode", "render", "render_oracle", "render_pose", "sample_poses", "scored_pair", "save_avatar", "save_decoder",
    "skin_splats", "solve_basis", "ssim", "synth_avatar", "upsample_nearest", "validate_splatset",
]
