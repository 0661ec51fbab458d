"""``uvavatar`` command line.

Exit codes: 0 success, 1 usage, 2 validation, 3 I/O. Reports go to stdout
as key=value lines; diagnostics go to stderr.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import bench as benchmod
from .core import Camera, ValidationError, pose_dim, validate_splatset
from .decoder import TeacherDecoder
from .distill import DistillConfig, distill
from .io import FormatError, load_avatar, load_decoder, load_poses, save_avatar, save_decoder, save_poses
from .metrics import compare, crop_to_mask_bbox, format_report
from .pipeline import correctives, render_pose, scored_pair
from .poses import sample_poses
from .quant import QuantizedLinearDecoder, quantize
from .raster import read_pnm, render, write_pgm, write_ppm
from .sharing import build_lut
from .synth import SynthConfig, coarse_teacher, default_camera, synth_avatar

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_IO = 0, 1, 2, 3

log = logging.getLogger("uvavatar")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _emit(kv: dict) -> None:
    sys.stdout.write(format_report(kv))


def _camera(args):
    w, h = args.size
    if args.camera is None:
        return default_camera(w, h)
    return Camera.from_spec(*args.camera, w, h)


def _poses_from(args, n_joints: int) -> np.ndarray:
    if args.poses:
        P = load_poses(args.poses).astype(np.float64)
    else:
        P = sample_poses(n_joints, args.n_poses, seed=args.seed)
    if P.shape[1] != pose_dim(n_joints):
        raise ValidationError(f"poses have dimension {P.shape[1]}, avatar needs {pose_dim(n_joints)}")
    return P


def _teacher(av, factor=None) -> TeacherDecoder:
    if av.teacher is None:
        raise ValidationError("avatar file carries no teacher configuration")
    return coarse_teacher(av.teacher, factor) if factor else av.teacher


def _save_frame(fb, out, alpha_out) -> None:
    if out:
        write_ppm(out, fb.rgb)
    if alpha_out:
        write_pgm(alpha_out, fb.alpha)


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    av = synth_avatar(SynthConfig(n_joints=args.joints, grid=args.grid, seed=args.seed))
    problems = validate_splatset(av.splats) + av.skeleton.validate()
    if problems:
        for p in problems:
            log.error(p)
        return EXIT_VALIDATION
    save_avatar(args.out, av.splats, av.skeleton, teacher=av.teacher)
    kv = {"gaussians": len(av.splats), "grid": args.grid, "joints": args.joints,
          "occupancy": len(av.splats) / args.grid**2}
    if args.poses_out:
        P = sample_poses(args.joints, args.n_poses, seed=args.seed + 1)
        save_poses(args.poses_out, P)
        kv["poses"] = len(P)
    _emit(kv)
    return EXIT_OK


def cmd_render(args) -> int:
    av = load_avatar(args.avatar)
    cam = _camera(args)
    t0 = time.perf_counter()
    fb = render(av.splats, cam, workers=args.workers)
    _save_frame(fb, args.out, args.alpha_out)
    _emit({"width": cam.width, "height": cam.height, "coverage": float((fb.alpha > 0.5).mean()),
           "render_ms": (time.perf_counter() - t0) * 1e3})
    return EXIT_OK


def cmd_animate(args) -> int:
    av = load_avatar(args.avatar)
    P = _poses_from(args, av.skeleton.n_joints)
    if not 0 <= args.frame < len(P):
        raise ValidationError(f"frame {args.frame} outside [0, {len(P)})")
    pose = P[args.frame]
    cam = _camera(args)
    if args.decoder:
        dec = load_decoder(args.decoder)
        label = "quantized" if isinstance(dec, QuantizedLinearDecoder) else "linear"
    elif args.teacher:
        dec, label = _teacher(av, args.share), "teacher"
    else:
        dec, label = None, "none"
    fb = render_pose(av.splats, av.skeleton, correctives(dec, av.splats, pose), pose, cam, args.workers)
    _save_frame(fb, args.out, args.alpha_out)
    kv = {"frame": args.frame, "decoder": label, "coverage": float((fb.alpha > 0.5).mean())}
    if args.compare_teacher:
        ref = render_pose(av.splats, av.skeleton, correctives(_teacher(av), av.splats, pose), pose, cam,
                          args.workers)
        kv.update({f"vs_teacher_{k}": v for k, v in scored_pair(ref, fb).items()})
    _emit(kv)
    return EXIT_OK


def cmd_distill(args) -> int:
    av = load_avatar(args.avatar)
    P = _poses_from(args, av.skeleton.n_joints)
    cfg = DistillConfig(d=args.d, sh_d=args.sh_d, share_factor=args.share, holdout=args.holdout, seed=args.seed,
                        workers=args.workers)
    ld, report = distill(_teacher(av, args.share), P, av.splats.mask, cfg)
    save_decoder(args.out, ld)
    if args.report:
        Path(args.report).write_text(report.to_text())
    sys.stdout.write(report.to_kv())
    return EXIT_OK


def cmd_lut(args) -> int:
    av = load_avatar(args.avatar)
    lut = build_lut(av.splats.mask, args.factor)
    save_avatar(args.out, av.splats, av.skeleton, lut=lut, teacher=av.teacher)
    h, w = av.splats.mask.shape
    _emit({"gaussians": len(lut), "shared_correctives": (h // args.factor) * (w // args.factor),
           "distinct_used": int(np.unique(lut).size)})
    return EXIT_OK


def cmd_quantize(args) -> int:
    ld = load_decoder(args.decoder)
    if isinstance(ld, QuantizedLinearDecoder):
        raise ValidationError("decoder is already quantized")
    J = (ld.p_mean.shape[0] - pose_dim(0)) // 4
    calib = _poses_from(args, J)
    q = quantize(ld, calib)
    save_decoder(args.out, q)
    _emit({"columns": q.B_c_q.shape[1], "zero_columns": q.zero_columns, "a_scale": float(q.a_scale),
           "w_scale_max": float(q.w_scale.max()), "calib_poses": len(calib)})
    return EXIT_OK


def cmd_compare(args) -> int:
    a, b = read_pnm(args.a), read_pnm(args.b)
    if args.mask:
        m = read_pnm(args.mask)
        m = (m[..., 0] if m.ndim == 3 else m) > 0.5
        a, b = crop_to_mask_bbox(a, m), crop_to_mask_bbox(b, m)
    _emit(compare(a, b))
    return EXIT_OK


def cmd_bench(args) -> int:
    av = synth_avatar(SynthConfig(grid=args.grid, seed=args.seed))
    P = sample_poses(av.skeleton.n_joints, max(args.calib, 1), seed=args.seed + 1)
    sys.stdout.write(benchmod.analytic_report(args.d, args.sh_d))
    timings = benchmod.decoder_benchmarks(av.splats.mask, P, teacher=av.teacher, factor=args.share, d=args.d,
                                          sh_d=args.sh_d, reps=args.reps, warmup=args.warmup,
                                          quantized=not args.no_quantized, seed=args.seed)
    w, h = args.size
    cam = default_camera(w, h)
    timings.append(benchmod.time_fn(lambda: render(av.splats, cam, workers=args.workers), args.render_reps,
                                    min(args.warmup, args.render_reps), "full_render"))
    sys.stdout.write(benchmod.format_timings(timings))
    by = {t.name: t for t in timings}
    full = [t for n, t in by.items() if n.startswith("linear_decode_") and not n.endswith("gather")]
    shared = [t for n, t in by.items() if n.startswith("linear_decode_") and n.endswith("gather")]
    if full and shared:
        _emit({"measured_ratio_linear": full[0].median_ms / shared[0].median_ms})
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def _add_camera(p):
    p.add_argument("--camera", type=float, nargs=9, metavar=("FX", "FY", "CX", "CY", "YAW", "PITCH", "TX", "TY", "TZ"),
                   help="inline pinhole camera; default frames the synthetic avatar")
    p.add_argument("--size", type=int, nargs=2, metavar=("W", "H"), default=(96, 96))


def _add_poses(p):
    p.add_argument("--poses", help="pose file (header 'frames dim', one pose per line)")
    p.add_argument("--n-poses", type=int, default=100, help="poses to sample when --poses is absent")


def _workers(p):
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="uvavatar", description="UV-space Gaussian avatar toolkit")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic avatar")
    p.add_argument("--out", required=True)
    p.add_argument("--grid", type=int, default=256)
    p.add_argument("--joints", type=int, default=24)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--poses-out", help="also write a sampled pose sequence here")
    p.add_argument("--n-poses", type=int, default=100)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("render", help="render the avatar in its rest pose")
    p.add_argument("--avatar", required=True)
    p.add_argument("--out", help="PPM output")
    p.add_argument("--alpha-out", help="PGM alpha output")
    _add_camera(p)
    _workers(p)
    p.set_defaults(fn=cmd_render)

    p = sub.add_parser("animate", help="pose the avatar with a decoder and render one frame")
    p.add_argument("--avatar", required=True)
    _add_poses(p)
    p.add_argument("--frame", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--decoder", help="linear or quantized decoder file")
    g.add_argument("--teacher", action="store_true", help="use the avatar's teacher decoder")
    p.add_argument("--share", type=int, help="with --teacher, use the coarse teacher at this share factor")
    p.add_argument("--compare-teacher", action="store_true", help="also score against the teacher render")
    p.add_argument("--out")
    p.add_argument("--alpha-out")
    _add_camera(p)
    _workers(p)
    p.set_defaults(fn=cmd_animate)

    p = sub.add_parser("distill", help="fit a linear decoder to the teacher")
    p.add_argument("--avatar", required=True)
    _add_poses(p)
    p.add_argument("--out", required=True)
    p.add_argument("--report", help="human-readable report path")
    p.add_argument("--d", type=int, default=32)
    p.add_argument("--sh-d", type=int, default=6)
    p.add_argument("--share", type=int, help="corrective share factor (teacher emits grid/share)")
    p.add_argument("--holdout", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    _workers(p)
    p.set_defaults(fn=cmd_distill)

    p = sub.add_parser("lut", help="attach a corrective-sharing LUT to an avatar")
    p.add_argument("--avatar", required=True)
    p.add_argument("--factor", type=int, default=4)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_lut)

    p = sub.add_parser("quantize", help="int8/int16 quantize a linear decoder")
    p.add_argument("--decoder", required=True)
    _add_poses(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_quantize)

    p = sub.add_parser("compare", help="L1 / PSNR / SSIM between two PPM/PGM images")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--mask", help="PGM whose bright pixels define the crop box")
    p.set_defaults(fn=cmd_compare)

    p = sub.add_parser("bench", help="decode and render timings plus analytic FLOPs")
    p.add_argument("--grid", type=int, default=256)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--d", type=int, default=32)
    p.add_argument("--sh-d", type=int, default=6)
    p.add_argument("--share", type=int, default=4)
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--warmup", type=int, default=10)
    p.add_argument("--render-reps", type=int, default=100)
    p.add_argument("--calib", type=int, default=32, help="calibration poses for the quantized variants")
    p.add_argument("--no-quantized", action="store_true")
    p.add_argument("--size", type=int, nargs=2, metavar=("W", "H"), default=(96, 96))
    _workers(p)
    p.set_defaults(fn=cmd_bench)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "workers", 1) < 1:
        print("uvavatar: error: --workers must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.fn(args)
    except (FormatError, OSError) as e:
        print(f"uvavatar: I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except (ValidationError, ValueError) as e:
        print(f"uvavatar: validation error: {e}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
