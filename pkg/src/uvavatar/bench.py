"""Wall-clock and analytic FLOP benchmarks for the decode and render paths."""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .decoder import LinearDecoder, decode_for_gaussians, linear_flops, linear_param_count
from .quant import quantize, quantized_decode
from .decoder import gather_correctives
from .sharing import build_lut

# corrective counts of the reference body layout, unshared and 4x4-shared
REF_GAUSSIANS = 60381
REF_SHARED = 4096


@dataclass
class Timing:
    name: str
    median_ms: float
    p95_ms: float
    reps: int
    flops: Optional[int] = None


def time_fn(fn: Callable[[], object], reps: int = 100, warmup: int = 10, name: str = "") -> Timing:
    for _ in range(warmup):
        fn()
    samples = np.empty(reps)
    for i in range(reps):
        t0 = time.perf_counter()
        fn()
        samples[i] = time.perf_counter() - t0
    return Timing(name, float(np.median(samples) * 1e3), float(np.percentile(samples, 95) * 1e3), reps)


def flop_ratio(n_full: int = REF_GAUSSIANS, n_shared: int = REF_SHARED, d: int = 32, sh_d: int = 6) -> float:
    return linear_flops(d, n_full, sh_d) / linear_flops(d, n_shared, sh_d)


def random_decoder(n_corr: int, pose_dim: int, d: int = 32, sh_d: int = 6, seed: int = 0,
                   dtype=np.float32, lut: Optional[np.ndarray] = None) -> LinearDecoder:
    """Random decoder with the right shapes, for timing only."""
    rng = np.random.default_rng(seed)
    B_p, _ = np.linalg.qr(rng.standard_normal((pose_dim, d)))
    E, _ = np.linalg.qr(rng.standard_normal((27, sh_d)))
    return LinearDecoder(
        p_mean=rng.standard_normal(pose_dim).astype(dtype),
        B_p=B_p.astype(dtype),
        B_c=(0.01 * rng.standard_normal((d + 1, n_corr * (10 + sh_d)))).astype(dtype),
        sh_expand=E.T.astype(dtype),
        sh_mean=np.zeros(27, dtype=dtype),
        n_corr=n_corr,
        lut=lut,
    )


def decoder_benchmarks(mask: np.ndarray, poses: np.ndarray, teacher=None, factor: int = 4, d: int = 32,
                       sh_d: int = 6, reps: int = 100, warmup: int = 10, quantized: bool = True,
                       seed: int = 0) -> list[Timing]:
    """Time teacher decode, the two linear decoders and their quantized twins."""
    n_gauss = int(np.count_nonzero(mask))
    lut = build_lut(mask, factor)
    n_shared = (mask.shape[0] // factor) * (mask.shape[1] // factor)
    pose = np.asarray(poses[0], dtype=np.float32)
    full = random_decoder(n_gauss, pose.shape[0], d, sh_d, seed)
    shared = random_decoder(n_shared, pose.shape[0], d, sh_d, seed + 1, lut=lut)

    out = []
    if teacher is not None:
        out.append(time_fn(lambda: teacher.decode(pose), reps, warmup, "teacher_decode"))
    t = time_fn(lambda: decode_for_gaussians(full, pose), reps, warmup, f"linear_decode_{n_gauss}")
    t.flops = linear_flops(d, n_gauss, sh_d)
    out.append(t)
    t = time_fn(lambda: decode_for_gaussians(shared, pose), reps, warmup, f"linear_decode_{n_shared}_gather")
    t.flops = linear_flops(d, n_shared, sh_d)
    out.append(t)
    if quantized:
        calib = np.asarray(poses, dtype=np.float64)
        for ld, label in ((full, f"quantized_decode_{n_gauss}"), (shared, f"quantized_decode_{n_shared}_gather")):
            q = quantize(ld, calib)
            if q.lut is None:
                fn = lambda q=q: quantized_decode(q, pose)  # noqa: E731
            else:
                fn = lambda q=q: gather_correctives(quantized_decode(q, pose), q.lut)  # noqa: E731
            t = time_fn(fn, reps, warmup, label)
            t.flops = q.flops()
            out.append(t)
    return out


def format_timings(timings: list[Timing]) -> str:
    lines = []
    for t in timings:
        lines.append(f"{t.name}.median_ms={t.median_ms:.6g}")
        lines.append(f"{t.name}.p95_ms={t.p95_ms:.6g}")
        lines.append(f"{t.name}.reps={t.reps}")
        if t.flops is not None:
            lines.append(f"{t.name}.flops={t.flops}")
    return "\n".join(lines) + "\n"


def analytic_report(d: int = 32, sh_d: int = 6) -> str:
    lines = [
        f"flops_linear_{REF_GAUSSIANS}={linear_flops(d, REF_GAUSSIANS, sh_d)}",
        f"flops_linear_{REF_SHARED}={linear_flops(d, REF_SHARED, sh_d)}",
        f"params_linear_{REF_GAUSSIANS}={linear_param_count(d, REF_GAUSSIANS, sh_d)}",
        f"params_linear_{REF_SHARED}={linear_param_count(d, REF_SHARED, sh_d)}",
        f"flop_ratio={flop_ratio(REF_GAUSSIANS, REF_SHARED, d, sh_d):.2f}",
    ]
    return "\n".join(lines) + "\n"
