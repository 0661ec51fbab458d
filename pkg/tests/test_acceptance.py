"""Acceptance criteria 1-11, one PASS/FAIL line each.

Run standalone with ``python3 tests/test_acceptance.py``; under pytest the
lines appear in the terminal summary.
"""
import time

import numpy as np
import pytest
from conftest import random_scene

from uvavatar.core import N_CHANNELS, Pose, pose_dim
from uvavatar.decoder import TeacherDecoder, gather_correctives
from uvavatar.distill import DistillConfig, distill, solve_basis
from uvavatar.io import FormatError, parse_avatar, parse_decoder, save_avatar, save_decoder
from uvavatar.bench import decoder_benchmarks, flop_ratio
from uvavatar.metrics import l1, ssim
from uvavatar.pipeline import correctives, render_pose, scored_pair
from uvavatar.poses import sample_poses
from uvavatar.quant import quantize
from uvavatar.raster import render, render_oracle
from uvavatar.sharing import apply_mask, build_lut, upsample_nearest
from uvavatar.skinning import animate, lbs_transforms
from uvavatar.synth import SynthConfig, default_camera, random_rigid_pose, synth_avatar


def _record(log, n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    log.append(line)
    print(line)
    return ok


# ---------------------------------------------------------------------------
# shared fixtures


@pytest.fixture(scope="module")
def scenes():
    rng = np.random.default_rng(2024)
    return [random_scene(rng) for _ in range(100)]


@pytest.fixture(scope="module")
def reference():
    """The 256x256 avatar, its coarse nonlinear teacher and a distilled shared linear decoder."""
    av = synth_avatar(SynthConfig(grid=256, seed=0))
    teacher = av.shared_teacher(4)
    train = sample_poses(24, 160, seed=11)
    ld, _ = distill(teacher, train, av.splats.mask, DistillConfig(d=32, sh_d=6, share_factor=4, holdout=0.0))
    q = quantize(ld, train)
    held_out = sample_poses(24, 20, seed=99)
    return av, teacher, ld, q, held_out


@pytest.fixture(scope="module")
def frames(reference):
    """Renders of the 20 held-out poses for every decoder kind."""
    av, teacher, ld, q, held_out = reference
    cam = default_camera(96, 96)
    out = {"teacher": [], "linear": [], "quantized": [], "none": []}
    for p in held_out:
        for name, dec in (("teacher", teacher), ("linear", ld), ("quantized", q), ("none", None)):
            out[name].append(render_pose(av.splats, av.skeleton, correctives(dec, av.splats, p), p, cam))
    return out


# ---------------------------------------------------------------------------


def test_c1_rasterizer_oracle(scenes, acceptance_log):
    t0 = time.perf_counter()
    worst, bitwise = 0.0, True
    for s, cam in scenes:
        ref = render_oracle(s, cam).rgb
        outs = [render(s, cam, workers=w).rgb for w in (1, 2, 8)]
        worst = max(worst, float(np.abs(outs[0] - ref).max()))
        bitwise &= all(np.array_equal(outs[0], o) for o in outs[1:])
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-5 and bitwise and elapsed < 30.0
    _record(acceptance_log, 1, ok, f"max|render-oracle|={worst:.3g} bitwise_1_2_8={bitwise} time={elapsed:.1f}s")
    assert ok


def test_c2_conservation(scenes, small_avatar, acceptance_log):
    worst = 0.0
    for s, cam in scenes:
        fb = render(s, cam)
        worst = max(worst, float(fb.weight.max()), float(render_oracle(s, cam).weight.max()))
    worst = max(worst, float(render(small_avatar.splats, default_camera(64, 64)).weight.max()))
    ok = worst <= 1 + 1e-9
    _record(acceptance_log, 2, ok, f"max accumulated weight={worst!r}")
    assert ok


def _masks(rng):
    masks = [np.ones((256, 256), bool)]
    rows = rng.uniform(size=(64, 64)) < 0.8
    rows[rng.choice(64, 10, replace=False)] = False
    masks.append(rows)
    masks.append((np.add.outer(np.arange(32), np.arange(32)) % 2) == 0)
    masks.append(np.zeros((16, 16), bool))
    while len(masks) < 50:
        k = int(rng.integers(1, 17))
        masks.append(rng.uniform(size=(4 * k, 4 * k)) < rng.uniform(0.05, 0.99))
    return masks


def test_c3_lut_equivalence(acceptance_log):
    rng = np.random.default_rng(3)
    ok_count = 0
    masks = _masks(rng)
    for m in masks:
        k = m.shape[0] // 4
        corr = rng.normal(size=(k * k, N_CHANNELS))
        a = gather_correctives(corr, build_lut(m, 4))
        b = apply_mask(upsample_nearest(corr.reshape(k, k, N_CHANNELS), 4), m)
        ok_count += a.shape == b.shape and np.array_equal(a, b)
    ok = ok_count == len(masks)
    _record(acceptance_log, 3, ok, f"{ok_count}/{len(masks)} masks exact")
    assert ok


def test_c4_linear_teacher_recovery(acceptance_log):
    J = 4
    teacher = TeacherDecoder(J, 16, 16, seed=7, hidden=64, linear=True)
    mask = np.random.default_rng(1).uniform(size=(16, 16)) < 0.9
    poses = sample_poses(J, 200, seed=5)
    rank = int(np.linalg.matrix_rank(poses - poses.mean(axis=0)))
    _, full = distill(teacher, poses, mask, DistillConfig(d=rank, sh_d=27, seed=0))
    _, trunc = distill(teacher, poses, mask, DistillConfig(d=rank, sh_d=6, seed=0))
    s = trunc.summary()
    all_ch = float(full.test_rms.max())
    geom = float(trunc.test_rms[27:].max())
    sh_gap = abs(s["test_rms_sh"] - s["sh_truncation_rms_test"])
    ok = all_ch <= 1e-5 and geom <= 1e-5 and sh_gap <= 1e-6
    _record(acceptance_log, 4, ok, f"d={rank} sh_d=27 max held-out rms={all_ch:.3g}; sh_d=6 geometry={geom:.3g} "
                                   f"|sh rms - truncation|={sh_gap:.3g}")
    assert ok


def _gauss_jordan_inverse(A):
    n = A.shape[0]
    M = np.hstack([A.astype(float), np.eye(n)])
    for c in range(n):
        p = c + int(np.argmax(np.abs(M[c:, c])))
        M[[c, p]] = M[[p, c]]
        M[c] /= M[c, c]
        for r in range(n):
            if r != c:
                M[r] -= M[r, c] * M[c]
    return M[:, n:]


def test_c5_normal_equations(acceptance_log):
    rng = np.random.default_rng(5)
    worst, tried = 0.0, 0
    while tried < 50:
        F, d, k = int(rng.integers(20, 80)), int(rng.integers(1, 12)), int(rng.integers(1, 20))
        C = np.hstack([np.ones((F, 1)), rng.normal(size=(F, d)) * rng.uniform(0.1, 3.0, d)])
        if np.linalg.cond(C) >= 1e4:
            continue
        tried += 1
        Y = rng.normal(size=(F, k))
        brute = _gauss_jordan_inverse(C.T @ C) @ (C.T @ Y)
        worst = max(worst, float(np.linalg.norm(solve_basis(C, Y) - brute) / np.linalg.norm(brute)))
    ok = worst <= 1e-6
    _record(acceptance_log, 5, ok, f"max relative Frobenius={worst:.3g} over {tried} systems")
    assert ok


@pytest.mark.slow
def test_c6_quantization_parity(frames, acceptance_log):
    d_l1 = d_ssim = d_psnr = 0.0
    for ref, f, q in zip(frames["teacher"], frames["linear"], frames["quantized"]):
        a, b = scored_pair(ref, f), scored_pair(ref, q)
        d_l1 = max(d_l1, abs(a["l1"] - b["l1"]))
        d_ssim = max(d_ssim, abs(a["ssim"] - b["ssim"]))
        d_psnr = max(d_psnr, abs(a["psnr"] - b["psnr"]))
    ok = d_l1 <= 0.002 and d_ssim <= 0.002 and d_psnr <= 0.1
    _record(acceptance_log, 6, ok, f"max dL1={d_l1:.3g} dSSIM={d_ssim:.3g} dPSNR={d_psnr:.3g} dB over 20 poses")
    assert ok


@pytest.mark.slow
def test_c7_sharing_speedup(reference, acceptance_log):
    av, *_ = reference
    ratio = round(flop_ratio(), 2)
    t = decoder_benchmarks(av.splats.mask, sample_poses(24, 1, seed=0), reps=100, warmup=10, quantized=False)
    full = next(x for x in t if not x.name.endswith("gather"))
    shared = next(x for x in t if x.name.endswith("gather"))
    measured = full.median_ms / shared.median_ms
    ok = ratio == 14.74 and measured >= 5.0
    _record(acceptance_log, 7, ok, f"flop ratio={ratio:.2f} measured={measured:.2f}x "
                                   f"({full.median_ms:.2f} ms vs {shared.median_ms:.2f} ms median of 100)")
    assert ok


@pytest.mark.slow
def test_c8_quality_ordering(frames, acceptance_log):
    wins = 0
    for ref, lin, none in zip(frames["teacher"], frames["linear"], frames["none"]):
        wins += scored_pair(ref, lin)["l1"] <= scored_pair(ref, none)["l1"]
    ok = wins >= 15
    _record(acceptance_log, 8, ok, f"linear <= no-corrective L1 on {wins}/20 poses")
    assert ok


def test_c9_skinning_identities(small_avatar, acceptance_log):
    s, sk = small_avatar.splats, small_avatar.skeleton
    zero = np.zeros((len(s), N_CHANNELS))
    identity = animate(s, zero, sk, Pose.identity(24)).equals(s)
    cam = default_camera(64, 64)
    rng = np.random.default_rng(9)
    worst = 0.0
    for _ in range(10):
        pose = random_rigid_pose(24, rng)
        posed = render(animate(s, zero, sk, pose), cam).rgb
        moved_cam = render(s, cam.compose(lbs_transforms(sk, pose)[0])).rgb
        worst = max(worst, float(np.abs(posed - moved_cam).max()))
    ok = identity and worst <= 1e-5
    _record(acceptance_log, 9, ok, f"identity exact={identity} rigid root vs camera max diff={worst:.3g}")
    assert ok


def test_c10_metric_self_checks(acceptance_log):
    rng = np.random.default_rng(10)
    self_ok = True
    for _ in range(20):
        a = rng.uniform(size=(int(rng.integers(11, 40)), int(rng.integers(11, 40)), 3))
        self_ok &= ssim(a, a) == 1.0 and l1(a, a) == 0.0
    ma, mb, c1 = 0.25, 0.6, 0.01**2
    closed = (2 * ma * mb + c1) / (ma**2 + mb**2 + c1)
    err = abs(ssim(np.full((16, 16, 3), ma), np.full((16, 16, 3), mb)) - closed)
    ok = self_ok and err <= 1e-10
    _record(acceptance_log, 10, ok, f"self checks={self_ok} constant-image |ssim-closed form|={err:.3g}")
    assert ok


def test_c11_io(small_avatar, tmp_path, acceptance_log):
    av = small_avatar
    pa, pd = tmp_path / "a.sqz", tmp_path / "d.sqz"
    save_avatar(pa, av.splats, av.skeleton, build_lut(av.splats.mask, 4), av.teacher)
    poses = sample_poses(24, 30, seed=2)
    ld, _ = distill(av.shared_teacher(4), poses, av.splats.mask, DistillConfig(d=8, share_factor=4))
    save_decoder(pd, ld)
    rng = np.random.default_rng(11)
    crashes = []
    for path, parse in ((pa, parse_avatar), (pd, parse_decoder)):
        data = path.read_bytes()
        for cut in rng.integers(0, len(data), 100):
            try:
                parse(data[:cut])
                crashes.append(f"{path.name}[:{cut}] parsed")
            except FormatError:
                pass
            except Exception as e:  # noqa: BLE001
                crashes.append(f"{path.name}[:{cut}] {type(e).__name__}")
    back = parse_avatar(pa.read_bytes())
    exact = all(getattr(back.splats, f).tobytes() == getattr(av.splats, f).tobytes()
                and getattr(back.splats, f).dtype == getattr(av.splats, f).dtype
                for f in ("mask", "mu", "rot", "log_scale", "delta", "sh"))
    dback = parse_decoder(pd.read_bytes())
    exact &= all(getattr(dback, f).tobytes() == getattr(ld, f).tobytes() for f in ("p_mean", "B_p", "B_c",
                                                                                    "sh_expand", "sh_mean"))
    exact &= np.array_equal(dback.lut, ld.lut)
    ok = not crashes and exact
    _record(acceptance_log, 11, ok, f"200 truncations, {len(crashes)} crashes; roundtrips bit-exact={exact}")
    assert ok, crashes[:5]


def test_pose_dim_reference():
    assert sample_poses(24, 1).shape == (1, pose_dim(24))


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
