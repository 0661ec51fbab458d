"""Score none / linear / quantized decoders against the nonlinear teacher on held-out poses.

    python3 scripts/eval_quality.py --grid 256 --train 160 --test 20
"""
import argparse

import numpy as np

from uvavatar.distill import DistillConfig, distill
from uvavatar.pipeline import correctives, render_pose, scored_pair
from uvavatar.poses import sample_poses
from uvavatar.quant import quantize
from uvavatar.synth import SynthConfig, default_camera, synth_avatar


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--grid", type=int, default=256)
    ap.add_argument("--share", type=int, default=4)
    ap.add_argument("--train", type=int, default=160)
    ap.add_argument("--test", type=int, default=20)
    ap.add_argument("--d", type=int, default=32)
    ap.add_argument("--sh-d", type=int, default=6)
    ap.add_argument("--size", type=int, default=96)
    args = ap.parse_args()

    av = synth_avatar(SynthConfig(grid=args.grid, seed=0))
    teacher = av.shared_teacher(args.share)
    train = sample_poses(24, args.train, seed=11)
    ld, rep = distill(teacher, train, av.splats.mask,
                      DistillConfig(d=args.d, sh_d=args.sh_d, share_factor=args.share, holdout=0.0))
    print(rep.to_text(), end="")
    decoders = {"none": None, "linear": ld, "quantized": quantize(ld, train)}
    cam = default_camera(args.size, args.size)
    scores = {k: [] for k in decoders}
    for p in sample_poses(24, args.test, seed=99):
        ref = render_pose(av.splats, av.skeleton, correctives(teacher, av.splats, p), p, cam)
        for name, dec in decoders.items():
            fb = render_pose(av.splats, av.skeleton, correctives(dec, av.splats, p), p, cam)
            scores[name].append(scored_pair(ref, fb))
    print(f"{'decoder':<10} {'L1':>9} {'PSNR':>8} {'SSIM':>8}")
    for name, rows in scores.items():
        m = {k: float(np.mean([r[k] for r in rows])) for k in ("l1", "psnr", "ssim")}
        print(f"{name:<10} {m['l1']:9.5f} {m['psnr']:8.2f} {m['ssim']:8.4f}")


if __name__ == "__main__":
    main()
