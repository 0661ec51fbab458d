"""Decoder timing table: full vs shared linear decode, float vs quantized, teacher.

    python3 scripts/bench_decoders.py --reps 100
"""
import argparse

from uvavatar.bench import analytic_report, decoder_benchmarks
from uvavatar.poses import sample_poses
from uvavatar.synth import SynthConfig, synth_avatar


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--grid", type=int, default=256)
    ap.add_argument("--reps", type=int, default=100)
    ap.add_argument("--warmup", type=int, default=10)
    args = ap.parse_args()

    av = synth_avatar(SynthConfig(grid=args.grid, seed=0))
    print(analytic_report(), end="")
    timings = decoder_benchmarks(av.splats.mask, sample_poses(24, 32, seed=1), teacher=av.teacher,
                                 reps=args.reps, warmup=args.warmup)
    print(f"{'variant':<36} {'median ms':>10} {'p95 ms':>10} {'MFLOP':>8}")
    for t in timings:
        flops = f"{t.flops / 1e6:8.2f}" if t.flops else f"{'-':>8}"
        print(f"{t.name:<36} {t.median_ms:10.3f} {t.p95_ms:10.3f} {flops}")
    by = {t.name: t.median_ms for t in timings}
    full = next(v for k, v in by.items() if k.startswith("linear_decode_") and not k.endswith("gather"))
    shared = next(v for k, v in by.items() if k.startswith("linear_decode_") and k.endswith("gather"))
    print(f"measured full/shared ratio: {full / shared:.2f}x")


if __name__ == "__main__":
    main()
