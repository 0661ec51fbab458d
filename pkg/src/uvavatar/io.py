"""Binary containers for avatars and decoders, plus the text pose format.

Layout (all little-endian)::

    b"SQZM" | u32 version | u32 kind | u32 n_sections
    per section: 4-byte tag | u64 payload length | payload
    array payload: u8 dtype code | u8 ndim | u64 dims[ndim] | raw data

Arrays are written in their in-memory dtype so a load returns the exact bits
that were saved.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .core import Skeleton, SplatSet
from .decoder import LinearDecoder, TeacherDecoder
from .quant import QuantizedLinearDecoder

MAGIC = b"SQZM"
VERSION = 1
KIND_AVATAR = 1
KIND_DECODER = 2
KIND_QDECODER = 3
KIND_NAMES = {KIND_AVATAR: "avatar", KIND_DECODER: "decoder", KIND_QDECODER: "quantized decoder"}

DTYPES = {
    1: np.dtype("<f4"),
    2: np.dtype("<f8"),
    3: np.dtype("<i1"),
    4: np.dtype("<i2"),
    5: np.dtype("<i4"),
    6: np.dtype("<i8"),
    7: np.dtype("<u1"),
    8: np.dtype("<u4"),
    9: np.dtype("<u8"),
}
DTYPE_CODES = {dt: code for code, dt in DTYPES.items()}

PathLike = Union[str, Path]


class FormatError(ValueError):
    """Malformed, truncated or unsupported container."""


# ---------------------------------------------------------------------------
# low level


def encode_array(a: np.ndarray) -> bytes:
    a = np.asarray(a)
    if a.dtype == np.bool_:
        raise TypeError("pack boolean arrays with encode_bits")
    dt = a.dtype.newbyteorder("<")
    code = DTYPE_CODES.get(dt)
    if code is None:
        raise TypeError(f"unsupported dtype {a.dtype}")
    head = struct.pack("<BB", code, a.ndim) + struct.pack(f"<{a.ndim}Q", *a.shape)
    return head + np.ascontiguousarray(a, dtype=dt).tobytes()


def decode_array(buf: bytes, tag: str) -> np.ndarray:
    if len(buf) < 2:
        raise FormatError(f"section {tag!r}: array header truncated")
    code, ndim = struct.unpack_from("<BB", buf)
    if code not in DTYPES:
        raise FormatError(f"section {tag!r}: unknown dtype code {code}")
    need = 2 + 8 * ndim
    if len(buf) < need:
        raise FormatError(f"section {tag!r}: array shape truncated")
    shape = struct.unpack_from(f"<{ndim}Q", buf, 2)
    dt = DTYPES[code]
    size = math.prod(shape) * dt.itemsize
    if len(buf) - need != size:
        raise FormatError(f"section {tag!r}: expected {size} data bytes, found {len(buf) - need}")
    return np.frombuffer(buf, dtype=dt, offset=need).reshape(shape).copy()


def encode_bits(mask: np.ndarray) -> bytes:
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    return struct.pack("<II", h, w) + np.packbits(mask.ravel(), bitorder="little").tobytes()


def decode_bits(buf: bytes, tag: str) -> np.ndarray:
    if len(buf) < 8:
        raise FormatError(f"section {tag!r}: bitset header truncated")
    h, w = struct.unpack_from("<II", buf)
    need = (h * w + 7) // 8
    if len(buf) - 8 != need:
        raise FormatError(f"section {tag!r}: expected {need} bitset bytes, found {len(buf) - 8}")
    bits = np.unpackbits(np.frombuffer(buf, dtype=np.uint8, offset=8), bitorder="little", count=h * w)
    return bits.astype(bool).reshape(h, w)


def write_container(path: PathLike, kind: int, sections: list[tuple[str, bytes]]) -> None:
    out = [MAGIC, struct.pack("<III", VERSION, kind, len(sections))]
    for tag, payload in sections:
        t = tag.encode("ascii").ljust(4, b"_")
        if len(t) != 4:
            raise ValueError(f"section tag {tag!r} longer than 4 bytes")
        out.append(t + struct.pack("<Q", len(payload)))
        out.append(payload)
    Path(path).write_bytes(b"".join(out))


def parse_container(data: bytes, expect_kind: Optional[int] = None) -> tuple[int, dict[str, bytes]]:
    if len(data) < 4 or data[:4] != MAGIC:
        raise FormatError(f"bad magic {data[:4]!r}, expected {MAGIC!r}")
    if len(data) < 16:
        raise FormatError(f"header truncated: expected 16 bytes, got {len(data)}")
    version, kind, n = struct.unpack_from("<III", data, 4)
    if version != VERSION:
        raise FormatError(f"unsupported version {version} (this reader handles {VERSION})")
    if kind not in KIND_NAMES:
        raise FormatError(f"unknown container kind {kind}")
    if expect_kind is not None and kind != expect_kind:
        raise FormatError(f"expected a {KIND_NAMES[expect_kind]} file, got a {KIND_NAMES[kind]} file")
    pos = 16
    sections = {}
    for i in range(n):
        if len(data) - pos < 12:
            raise FormatError(f"section {i} header truncated at byte {pos}: expected 12 bytes, got {len(data) - pos}")
        tag = data[pos : pos + 4].decode("ascii", errors="replace").rstrip("_")
        (length,) = struct.unpack_from("<Q", data, pos + 4)
        pos += 12
        if len(data) - pos < length:
            raise FormatError(f"section {tag!r} truncated: expected {length} bytes, got {len(data) - pos}")
        sections[tag] = data[pos : pos + length]
        pos += length
    if pos != len(data):
        raise FormatError(f"{len(data) - pos} trailing bytes after last section")
    return kind, sections


def _need(sections: dict, tag: str) -> bytes:
    if tag not in sections:
        raise FormatError(f"missing section {tag!r}")
    return sections[tag]


def _array(sections: dict, tag: str) -> np.ndarray:
    return decode_array(_need(sections, tag), tag)


# ---------------------------------------------------------------------------
# avatars


@dataclass
class AvatarFile:
    splats: SplatSet
    skeleton: Skeleton
    lut: Optional[np.ndarray] = None
    teacher: Optional[TeacherDecoder] = None


TEACHER_FIELDS = ("n_joints", "grid_h", "grid_w", "seed", "hidden", "latent_res", "latent_ch", "linear")


def save_avatar(path: PathLike, s: SplatSet, skel: Skeleton, lut: Optional[np.ndarray] = None,
                teacher: Optional[TeacherDecoder] = None) -> None:
    sections = [
        ("MASK", encode_bits(s.mask)),
        ("MU", encode_array(s.mu)),
        ("ROT", encode_array(s.rot)),
        ("LSCL", encode_array(s.log_scale)),
        ("DELT", encode_array(s.delta)),
        ("SH", encode_array(s.sh)),
        ("PRNT", encode_array(np.asarray(skel.parent, dtype=np.int32))),
        ("JPOS", encode_array(skel.joint_pos)),
        ("SKJ", encode_array(skel.skin_joints)),
        ("SKW", encode_array(skel.skin_weights)),
    ]
    if lut is not None:
        sections.append(("LUT", encode_array(np.asarray(lut, dtype=np.uint32))))
    if teacher is not None:
        sections.append(("TCHR", encode_array(np.array([int(getattr(teacher, f)) for f in TEACHER_FIELDS], dtype=np.int64))))
    write_container(path, KIND_AVATAR, sections)


def load_avatar(path: PathLike) -> AvatarFile:
    return parse_avatar(Path(path).read_bytes())


def parse_avatar(data: bytes) -> AvatarFile:
    _, sec = parse_container(data, KIND_AVATAR)
    mask = decode_bits(_need(sec, "MASK"), "MASK")
    n = int(mask.sum())
    arrays = {}
    for tag, width in (("MU", 3), ("ROT", 4), ("LSCL", 3), ("SH", 27)):
        a = _array(sec, tag)
        if a.shape != (n, width):
            raise FormatError(f"section {tag!r}: shape {a.shape} does not match {n} masked texels")
        arrays[tag] = a
    delta = _array(sec, "DELT")
    if delta.shape != (n,):
        raise FormatError(f"section 'DELT': shape {delta.shape} does not match {n} masked texels")
    splats = SplatSet(mask=mask, mu=arrays["MU"], rot=arrays["ROT"], log_scale=arrays["LSCL"], delta=delta,
                      sh=arrays["SH"], uv_index=np.argwhere(mask))
    parent = _array(sec, "PRNT")
    jpos = _array(sec, "JPOS")
    skj, skw = _array(sec, "SKJ"), _array(sec, "SKW")
    if jpos.shape != (parent.shape[0], 3):
        raise FormatError(f"section 'JPOS': shape {jpos.shape} does not match {parent.shape[0]} joints")
    if skj.shape != skw.shape or skj.ndim != 2 or skj.shape[0] != n:
        raise FormatError(f"sections 'SKJ'/'SKW': shapes {skj.shape}/{skw.shape} do not match {n} gaussians")
    try:
        skel = Skeleton(parent=parent, joint_pos=jpos, skin_joints=skj, skin_weights=skw)
    except ValueError as e:
        raise FormatError(f"section 'PRNT': {e}") from e
    lut = _array(sec, "LUT") if "LUT" in sec else None
    if lut is not None and lut.shape != (n,):
        raise FormatError(f"section 'LUT': length {lut.shape} does not match {n} gaussians")
    teacher = None
    if "TCHR" in sec:
        cfg = _array(sec, "TCHR")
        if cfg.shape != (len(TEACHER_FIELDS),):
            raise FormatError("section 'TCHR': wrong field count")
        kw = dict(zip(TEACHER_FIELDS, (int(v) for v in cfg)))
        kw["linear"] = bool(kw["linear"])
        teacher = TeacherDecoder(**kw)
    return AvatarFile(splats, skel, lut, teacher)


# ---------------------------------------------------------------------------
# decoders


def save_decoder(path: PathLike, ld: Union[LinearDecoder, QuantizedLinearDecoder]) -> None:
    sections = [
        ("PMEA", encode_array(ld.p_mean)),
        ("BP", encode_array(ld.B_p)),
        ("SHEX", encode_array(ld.sh_expand)),
        ("SHMU", encode_array(ld.sh_mean)),
        ("NCOR", encode_array(np.array([ld.n_corr], dtype=np.uint32))),
    ]
    if isinstance(ld, QuantizedLinearDecoder):
        kind = KIND_QDECODER
        sections += [
            ("BCQ", encode_array(ld.B_c_q.astype(np.int8))),
            ("WSCL", encode_array(ld.w_scale.astype(np.float32))),
            ("ASCL", encode_array(np.array([ld.a_scale], dtype=np.float32))),
        ]
    else:
        kind = KIND_DECODER
        sections.append(("BC", encode_array(ld.B_c)))
    if ld.lut is not None:
        sections.append(("LUT", encode_array(np.asarray(ld.lut, dtype=np.uint32))))
    write_container(path, kind, sections)


def load_decoder(path: PathLike) -> Union[LinearDecoder, QuantizedLinearDecoder]:
    return parse_decoder(Path(path).read_bytes())


def parse_decoder(data: bytes) -> Union[LinearDecoder, QuantizedLinearDecoder]:
    kind, sec = parse_container(data)
    if kind not in (KIND_DECODER, KIND_QDECODER):
        raise FormatError(f"expected a decoder file, got a {KIND_NAMES[kind]} file")
    p_mean, B_p = _array(sec, "PMEA"), _array(sec, "BP")
    sh_expand, sh_mean = _array(sec, "SHEX"), _array(sec, "SHMU")
    ncor = _array(sec, "NCOR")
    if ncor.shape != (1,):
        raise FormatError("section 'NCOR': expected one value")
    n_corr = int(ncor[0])
    if B_p.ndim != 2 or B_p.shape[0] != p_mean.shape[0]:
        raise FormatError(f"section 'BP': shape {B_p.shape} does not match pose mean {p_mean.shape}")
    if sh_expand.ndim != 2 or sh_expand.shape[1] != 27 or sh_mean.shape != (27,):
        raise FormatError("sections 'SHEX'/'SHMU': bad SH expansion shape")
    width = 10 + sh_expand.shape[0]
    want = (B_p.shape[1] + 1, n_corr * width)
    lut = _array(sec, "LUT").astype(np.int64) if "LUT" in sec else None
    if lut is not None and lut.size and lut.max() >= n_corr:
        raise FormatError(f"section 'LUT': index {int(lut.max())} >= {n_corr} correctives")
    if kind == KIND_DECODER:
        B_c = _array(sec, "BC")
        if B_c.shape != want:
            raise FormatError(f"section 'BC': shape {B_c.shape}, expected {want}")
        return LinearDecoder(p_mean, B_p, B_c, sh_expand, sh_mean, n_corr, lut)
    B_c_q, w_scale, a_scale = _array(sec, "BCQ"), _array(sec, "WSCL"), _array(sec, "ASCL")
    if B_c_q.shape != want:
        raise FormatError(f"section 'BCQ': shape {B_c_q.shape}, expected {want}")
    if w_scale.shape != (want[1],) or a_scale.shape != (1,):
        raise FormatError("sections 'WSCL'/'ASCL': bad scale shapes")
    return QuantizedLinearDecoder(p_mean, B_p, B_c_q, w_scale, a_scale[0], sh_expand, sh_mean, n_corr, lut)


# ---------------------------------------------------------------------------
# pose sequences: "frames dim" header, then one line of float32 values per frame


def save_poses(path: PathLike, poses: np.ndarray) -> None:
    P = np.atleast_2d(np.asarray(poses, dtype=np.float32))
    lines = [f"{P.shape[0]} {P.shape[1]}"]
    lines += [" ".join(repr(float(v)) for v in row) for row in P]
    Path(path).write_text("\n".join(lines) + "\n")


def load_poses(path: PathLike) -> np.ndarray:
    text = Path(path).read_text().splitlines()
    if not text:
        raise FormatError(f"{path}: empty pose file")
    try:
        frames, dim = (int(v) for v in text[0].split())
    except ValueError as e:
        raise FormatError(f"{path}: bad header {text[0]!r}") from e
    rows = [line for line in text[1:] if line.strip()]
    if len(rows) != frames:
        raise FormatError(f"{path}: header promises {frames} frames, found {len(rows)}")
    P = np.zeros((frames, dim), dtype=np.float32)
    for i, r in enumerate(rows):
        vals = r.split()
        if len(vals) != dim:
            raise FormatError(f"{path}: frame {i}: header promises dimension {dim}, found {len(vals)}")
        try:
            P[i] = [np.float32(v) for v in vals]
        except ValueError as e:
            raise FormatError(f"{path}: frame {i}: {e}") from e
    return P
