import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import array_shapes, arrays

from uvavatar.core import pose_dim
from uvavatar.decoder import LinearDecoder, linear_decode
from uvavatar.io import (
    DTYPES,
    MAGIC,
    FormatError,
    decode_array,
    decode_bits,
    encode_array,
    encode_bits,
    load_avatar,
    load_decoder,
    load_poses,
    parse_avatar,
    parse_decoder,
    save_avatar,
    save_decoder,
    save_poses,
)
from uvavatar.quant import quantize, quantized_decode
from uvavatar.sharing import build_lut

J = 24


def _bitwise(a, b):
    return a.dtype == b.dtype and a.shape == b.shape and a.tobytes() == b.tobytes()


def _decoder(n_corr=12, d=4, lut=None, seed=0):
    rng = np.random.default_rng(seed)
    B_p, _ = np.linalg.qr(rng.normal(size=(pose_dim(J), d)))
    E, _ = np.linalg.qr(rng.normal(size=(27, 6)))
    return LinearDecoder(rng.normal(size=pose_dim(J)), B_p, rng.normal(size=(d + 1, n_corr * 16)).astype(np.float32),
                         E.T, rng.normal(size=27), n_corr, lut)


@given(st.sampled_from(sorted(DTYPES)).flatmap(
    lambda c: arrays(DTYPES[c], array_shapes(min_dims=0, max_dims=3, min_side=0, max_side=5))))
def test_array_roundtrip_bitwise(a):
    assert _bitwise(decode_array(encode_array(a), "X"), a)


@given(arrays(bool, array_shapes(min_dims=2, max_dims=2, min_side=0, max_side=19)))
def test_bits_roundtrip(m):
    assert np.array_equal(decode_bits(encode_bits(m), "M"), m)


class TestAvatar:
    @pytest.mark.parametrize("with_lut,with_teacher", [(False, False), (True, True)])
    def test_roundtrip(self, small_avatar, tmp_path, with_lut, with_teacher):
        av = small_avatar
        lut = build_lut(av.splats.mask, 4) if with_lut else None
        p = tmp_path / "a.sqz"
        save_avatar(p, av.splats, av.skeleton, lut, av.teacher if with_teacher else None)
        back = load_avatar(p)
        for f in ("mu", "rot", "log_scale", "delta", "sh", "mask", "uv_index"):
            assert _bitwise(getattr(back.splats, f), getattr(av.splats, f)), f
        for f in ("parent", "joint_pos", "skin_joints", "skin_weights"):
            assert np.array_equal(getattr(back.skeleton, f), getattr(av.skeleton, f)), f
        if with_lut:
            assert np.array_equal(back.lut, lut)
            pose = np.random.default_rng(0).normal(0, 0.2, pose_dim(J))
            assert np.array_equal(back.teacher.decode(pose), av.teacher.decode(pose))
        else:
            assert back.lut is None and back.teacher is None

    def test_fuzzed_truncations(self, small_avatar, tmp_path):
        p = tmp_path / "a.sqz"
        save_avatar(p, small_avatar.splats, small_avatar.skeleton)
        data = p.read_bytes()
        for cut in np.random.default_rng(0).integers(0, len(data), 100):
            with pytest.raises(FormatError):
                parse_avatar(data[:cut])

    def test_truncation_names_section_and_sizes(self, small_avatar, tmp_path):
        p = tmp_path / "a.sqz"
        save_avatar(p, small_avatar.splats, small_avatar.skeleton)
        data = p.read_bytes()
        with pytest.raises(FormatError, match=r"section 'SKW' truncated: expected \d+ bytes, got \d+"):
            parse_avatar(data[:-5])

    def test_unknown_version(self, small_avatar, tmp_path):
        p = tmp_path / "a.sqz"
        save_avatar(p, small_avatar.splats, small_avatar.skeleton)
        data = bytearray(p.read_bytes())
        data[4:8] = struct.pack("<I", 2)
        with pytest.raises(FormatError, match="unsupported version 2"):
            parse_avatar(bytes(data))

    def test_bad_magic_and_wrong_kind(self, tmp_path):
        with pytest.raises(FormatError, match="bad magic"):
            parse_avatar(b"NOPE" + bytes(20))
        p = tmp_path / "d.sqz"
        save_decoder(p, _decoder())
        with pytest.raises(FormatError, match="expected a avatar file"):
            parse_avatar(p.read_bytes())

    def test_trailing_bytes(self, small_avatar, tmp_path):
        p = tmp_path / "a.sqz"
        save_avatar(p, small_avatar.splats, small_avatar.skeleton)
        with pytest.raises(FormatError, match="trailing"):
            parse_avatar(p.read_bytes() + b"\0")

    @settings(max_examples=60)
    @given(st.binary(max_size=64))
    def test_garbage_never_crashes(self, tail):
        for data in (tail, MAGIC + struct.pack("<III", 1, 1, 3) + tail):
            with pytest.raises(FormatError):
                parse_avatar(data)


class TestDecoder:
    def test_float_roundtrip_and_decode(self, tmp_path):
        ld = _decoder(lut=np.array([0, 3, 3, 11]))
        p = tmp_path / "d.sqz"
        save_decoder(p, ld)
        back = load_decoder(p)
        for f in ("p_mean", "B_p", "B_c", "sh_expand", "sh_mean"):
            assert _bitwise(getattr(back, f), getattr(ld, f)), f
        assert back.n_corr == ld.n_corr and np.array_equal(back.lut, ld.lut)
        pose = np.random.default_rng(1).normal(size=pose_dim(J))
        assert np.array_equal(linear_decode(back, pose), linear_decode(ld, pose))

    def test_quantized_roundtrip(self, tmp_path):
        ld = _decoder()
        calib = ld.p_mean + np.random.default_rng(2).normal(size=(8, pose_dim(J)))
        q = quantize(ld, calib)
        p = tmp_path / "q.sqz"
        save_decoder(p, q)
        back = load_decoder(p)
        assert _bitwise(back.B_c_q, q.B_c_q) and _bitwise(back.w_scale, q.w_scale)
        assert np.float32(back.a_scale) == np.float32(q.a_scale)
        assert np.array_equal(quantized_decode(back, calib[0]), quantized_decode(q, calib[0]))

    def test_fuzzed_truncations(self, tmp_path):
        p = tmp_path / "d.sqz"
        save_decoder(p, _decoder())
        data = p.read_bytes()
        for cut in range(0, len(data), max(1, len(data) // 100)):
            with pytest.raises(FormatError):
                parse_decoder(data[:cut])

    def test_lut_out_of_range(self, tmp_path):
        p = tmp_path / "d.sqz"
        save_decoder(p, _decoder(n_corr=4, lut=np.array([0, 7])))
        with pytest.raises(FormatError, match="LUT"):
            load_decoder(p)


class TestPoses:
    def test_roundtrip_exact_float32(self, tmp_path):
        P = np.random.default_rng(0).normal(size=(5, pose_dim(J))).astype(np.float32)
        save_poses(tmp_path / "p.txt", P)
        assert _bitwise(load_poses(tmp_path / "p.txt"), P)

    def test_frame_count_mismatch(self, tmp_path):
        (tmp_path / "p.txt").write_text("3 2\n1 2\n3 4\n")
        with pytest.raises(FormatError, match="3 frames, found 2"):
            load_poses(tmp_path / "p.txt")

    def test_bad_header(self, tmp_path):
        (tmp_path / "p.txt").write_text("x\n")
        with pytest.raises(FormatError):
            load_poses(tmp_path / "p.txt")

    @pytest.mark.parametrize("body", ["1 2\n1 2 3\n", "1 2\n1 zz\n"])
    def test_bad_rows(self, tmp_path, body):
        (tmp_path / "p.txt").write_text(body)
        with pytest.raises(FormatError, match="frame 0"):
            load_poses(tmp_path / "p.txt")
