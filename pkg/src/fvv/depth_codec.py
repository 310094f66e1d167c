"""Bit-exact packing of 12-bit depth maps into planar 4:2:0 frames.

Each 2x2 cell of depth codes (d00 d01 / d10 d11) occupies four luma bytes
and one byte in each chroma plane:

    Y(i,j)  = 8 MSBs of the code at (i,j)
    U(cell) = (low nibble of d00) << 4 | low nibble of d01
    V(cell) = (low nibble of d10) << 4 | low nibble of d11

Capacity is exact: 4 codes x 12 bits = 4 Y bytes + 1 U byte + 1 V byte.
The same I420 plane layout (full Y, then U, then V) is used for 8-bit color
frames, so every frame in the system is byte-planar.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

FVVD_MAGIC = b"FVVD"
_FVVD_HEADER = struct.Struct("<4sHHII")  # magic, width, height, frame index, reserved


class DepthCodecError(ValueError):
    pass


def _check_even(width: int, height: int) -> None:
    if width % 2 != 0 or height % 2 != 0 or width < 2 or height < 2:
        raise DepthCodecError(f"dimensions must be even and >= 2, got {width}x{height}")


@dataclass(frozen=True)
class DepthMap:
    """Per-pixel 12-bit depth codes; 0 is the hole sentinel."""

    codes: np.ndarray  # (height, width) uint16

    def __post_init__(self):
        c = np.asarray(self.codes)
        if c.ndim != 2:
            raise DepthCodecError(f"codes must be 2-D, got shape {c.shape}")
        _check_even(c.shape[1], c.shape[0])
        if c.dtype != np.uint16:
            if np.any(c < 0) or np.any(c > 4095):
                raise DepthCodecError("depth codes must lie in [0, 4095]")
            c = c.astype(np.uint16)
        elif np.any(c > 4095):
            raise DepthCodecError("depth codes must lie in [0, 4095]")
        c = np.ascontiguousarray(c)
        c.flags.writeable = False
        object.__setattr__(self, "codes", c)

    @property
    def width(self) -> int:
        return self.codes.shape[1]

    @property
    def height(self) -> int:
        return self.codes.shape[0]

    def __eq__(self, other):
        if not isinstance(other, DepthMap):
            return NotImplemented
        return np.array_equal(self.codes, other.codes)


def _check_planes(y: np.ndarray, u: np.ndarray, v: np.ndarray) -> None:
    if y.ndim != 2 or u.ndim != 2 or v.ndim != 2:
        raise DepthCodecError("planes must be 2-D")
    h, w = y.shape
    _check_even(w, h)
    expected = (h // 2, w // 2)
    if u.shape != expected or v.shape != expected:
        raise DepthCodecError(
            f"chroma planes must be {expected} for a {w}x{h} frame, got U{u.shape} V{v.shape}"
        )


def _freeze_plane(p) -> np.ndarray:
    a = np.ascontiguousarray(np.asarray(p, dtype=np.uint8))
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class PackedDepthFrame:
    """4:2:0 planar frame carrying 12 bpp of depth losslessly."""

    y_plane: np.ndarray
    u_plane: np.ndarray
    v_plane: np.ndarray

    def __post_init__(self):
        y = _freeze_plane(self.y_plane)
        u = _freeze_plane(self.u_plane)
        v = _freeze_plane(self.v_plane)
        _check_planes(y, u, v)
        object.__setattr__(self, "y_plane", y)
        object.__setattr__(self, "u_plane", u)
        object.__setattr__(self, "v_plane", v)

    @property
    def width(self) -> int:
        return self.y_plane.shape[1]

    @property
    def height(self) -> int:
        return self.y_plane.shape[0]

    def to_bytes(self) -> bytes:
        return self.y_plane.tobytes() + self.u_plane.tobytes() + self.v_plane.tobytes()

    @classmethod
    def from_bytes(cls, data: bytes, width: int, height: int) -> "PackedDepthFrame":
        return cls(*planes_from_bytes(data, width, height))

    def __eq__(self, other):
        if not isinstance(other, PackedDepthFrame):
            return NotImplemented
        return (
            np.array_equal(self.y_plane, other.y_plane)
            and np.array_equal(self.u_plane, other.u_plane)
            and np.array_equal(self.v_plane, other.v_plane)
        )


@dataclass(frozen=True)
class I420Frame:
    """8-bit color frame in the same planar 4:2:0 layout."""

    y: np.ndarray
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        y = _freeze_plane(self.y)
        u = _freeze_plane(self.u)
        v = _freeze_plane(self.v)
        _check_planes(y, u, v)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    @property
    def width(self) -> int:
        return self.y.shape[1]

    @property
    def height(self) -> int:
        return self.y.shape[0]

    def to_bytes(self) -> bytes:
        return self.y.tobytes() + self.u.tobytes() + self.v.tobytes()

    @classmethod
    def from_bytes(cls, data: bytes, width: int, height: int) -> "I420Frame":
        return cls(*planes_from_bytes(data, width, height))

    def __eq__(self, other):
        if not isinstance(other, I420Frame):
            return NotImplemented
        return (
            np.array_equal(self.y, other.y)
            and np.array_equal(self.u, other.u)
            and np.array_equal(self.v, other.v)
        )


def planes_from_bytes(data: bytes, width: int, height: int):
    """Split a raw I420 byte string into (Y, U, V) arrays."""
    _check_even(width, height)
    expected = width * height * 3 // 2
    if len(data) != expected:
        raise DepthCodecError(f"payload is {len(data)} bytes, expected {expected} for {width}x{height}")
    buf = np.frombuffer(data, dtype=np.uint8)
    ys = width * height
    cs = ys // 4
    y = buf[:ys].reshape(height, width)
    u = buf[ys : ys + cs].reshape(height // 2, width // 2)
    v = buf[ys + cs :].reshape(height // 2, width // 2)
    return y, u, v


def pack_depth(d: DepthMap) -> PackedDepthFrame:
    """Pack 12-bit depth codes into the 4:2:0 cell layout, losslessly."""
    codes = d.codes
    y = (codes >> 4).astype(np.uint8)
    lsb = (codes & 0xF).astype(np.uint8)
    u = (lsb[0::2, 0::2] << 4) | lsb[0::2, 1::2]
    v = (lsb[1::2, 0::2] << 4) | lsb[1::2, 1::2]
    return PackedDepthFrame(y, u, v)


def unpack_depth(f: PackedDepthFrame) -> DepthMap:
    """Exact inverse of `pack_depth`."""
    h, w = f.y_plane.shape
    codes = f.y_plane.astype(np.uint16) << 4
    codes[0::2, 0::2] |= f.u_plane >> 4
    codes[0::2, 1::2] |= f.u_plane & 0xF
    codes[1::2, 0::2] |= f.v_plane >> 4
    codes[1::2, 1::2] |= f.v_plane & 0xF
    return DepthMap(codes)


def write_packed_frame(path, frame: PackedDepthFrame, frame_index: int = 0) -> None:
    """Dump a packed frame: 16-byte little-endian header, then Y, U, V planes."""
    header = _FVVD_HEADER.pack(FVVD_MAGIC, frame.width, frame.height, frame_index, 0)
    Path(path).write_bytes(header + frame.to_bytes())


def read_packed_frame(path) -> tuple[PackedDepthFrame, int]:
    """Read a packed-frame dump; returns (frame, frame_index)."""
    data = Path(path).read_bytes()
    if len(data) < _FVVD_HEADER.size:
        raise DepthCodecError(f"{path}: truncated header ({len(data)} bytes)")
    magic, width, height, frame_index, _ = _FVVD_HEADER.unpack_from(data)
    if magic != FVVD_MAGIC:
        raise DepthCodecError(f"{path}: bad magic {magic!r}")
    payload = data[_FVVD_HEADER.size :]
    frame = PackedDepthFrame.from_bytes(payload, width, height)
    return frame, frame_index


def write_pbm_mask(path, mask: np.ndarray) -> None:
    """Write a boolean mask as binary PBM (P4); 1 bits mark foreground."""
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    rows = np.packbits(mask, axis=1)  # per-row byte padding, as PBM requires
    Path(path).write_bytes(f"P4\n{w} {h}\n".encode("ascii") + rows.tobytes())


def read_pbm_mask(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if not data.startswith(b"P4"):
        raise DepthCodecError(f"{path}: not a binary PBM file")
    # header: "P4\n<w> <h>\n" with no comment lines (we never write them)
    nl = data.index(b"\n", 3)
    w, h = (int(x) for x in data[3:nl].split())
    row_bytes = (w + 7) // 8
    body = np.frombuffer(data[nl + 1 :], dtype=np.uint8)
    if body.size != row_bytes * h:
        raise DepthCodecError(f"{path}: PBM body is {body.size} bytes, expected {row_bytes * h}")
    bits = np.unpackbits(body.reshape(h, row_bytes), axis=1)[:, :w]
    return bits.astype(bool)
