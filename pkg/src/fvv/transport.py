"""Wire protocol: binary media framing and a JSON control channel.

Media messages ride a reliable ordered byte stream (TCP). Lossless transport
is a hard requirement for depth, so there is no datagram mode; payloads may
optionally be DEFLATE-compressed, which stays byte-exact after inflation.

Header layout, little-endian, 26 bytes total:

    magic      4s   "FVVM"
    version    u8   protocol version (currently 1)
    msg_type   u8   1=color (I420), 2=packed depth, 3=mask (1 bpp)
    camera_id  u16  source camera; 0xFFFF marks the synthesized virtual view
    capture_ts u64  microseconds on the shared clock
    width      u16
    height     u16
    flags      u16  bit 0: payload deflated, bit 1: payload is a PNG image
    payload_len u32

Control messages are length-prefixed JSON documents (u32 length then UTF-8
bytes) carrying a "type" tag; they stay human-readable for debugging.
"""

from __future__ import annotations

import json
import struct
import threading
import zlib
from dataclasses import dataclass

import numpy as np

MEDIA_MAGIC = b"FVVM"
MEDIA_VERSION = 1
HEADER = struct.Struct("<4sBBHQHHHI")
HEADER_SIZE = HEADER.size  # 26 bytes

MSG_COLOR = 1
MSG_PACKED_DEPTH = 2
MSG_MASK = 3

FLAG_DEFLATE = 0x0001
FLAG_PNG = 0x0002

VIRTUAL_CAMERA_ID = 0xFFFF

DEFAULT_MEDIA_PORT = 9500
DEFAULT_CONTROL_PORT = 9501
DEFAULT_WS_PORT = 9502

HEARTBEAT_INTERVAL_US = 1_000_000
# healthy peers heartbeat at 1 Hz, so anything this quiet is gone; keeping the
# budget under 5 s guarantees detection within 5 s of the last byte
PEER_TIMEOUT_US = 4_500_000

ERR_VIEWER_SLOT_TAKEN = 1
ERR_BAD_MESSAGE = 2


class TransportError(RuntimeError):
    """Base transport failure; `code` gives the machine-readable cause."""

    code = "transport"


class BadMagicError(TransportError):
    code = "bad_magic"


class VersionMismatchError(TransportError):
    code = "version_mismatch"


class TruncatedError(TransportError):
    code = "truncated"


class PayloadSizeError(TransportError):
    code = "payload_size"


class DecompressError(TransportError):
    code = "decompress"


def mask_payload_size(width: int, height: int) -> int:
    return ((width + 7) // 8) * height


def expected_payload_size(msg_type: int, width: int, height: int) -> int | None:
    """Decompressed payload size a message type implies; None if free-form."""
    if msg_type in (MSG_COLOR, MSG_PACKED_DEPTH):
        return width * height * 3 // 2
    if msg_type == MSG_MASK:
        return mask_payload_size(width, height)
    return None


@dataclass(frozen=True)
class MediaMessage:
    msg_type: int
    camera_id: int
    capture_ts: int
    width: int
    height: int
    payload: bytes
    flags: int = 0  # non-transport flags (FLAG_PNG); FLAG_DEFLATE is added on encode

    def __post_init__(self):
        if not (self.flags & FLAG_PNG):
            expected = expected_payload_size(self.msg_type, self.width, self.height)
            if expected is not None and len(self.payload) != expected:
                raise PayloadSizeError(
                    f"msg_type {self.msg_type} at {self.width}x{self.height} needs "
                    f"{expected} payload bytes, got {len(self.payload)}"
                )


def encode_media(msg: MediaMessage, compress: bool = False) -> bytes:
    payload = msg.payload
    flags = msg.flags & ~FLAG_DEFLATE
    if compress:
        payload = zlib.compress(msg.payload)
        flags |= FLAG_DEFLATE
    header = HEADER.pack(
        MEDIA_MAGIC,
        MEDIA_VERSION,
        msg.msg_type,
        msg.camera_id,
        msg.capture_ts,
        msg.width,
        msg.height,
        flags,
        len(payload),
    )
    return header + payload


def decode_media(data: bytes) -> tuple[MediaMessage, int]:
    """Decode one message from the front of `data`; returns (message, bytes consumed)."""
    if len(data) < HEADER_SIZE:
        raise TruncatedError(f"need {HEADER_SIZE} header bytes, have {len(data)}")
    magic, version, msg_type, camera_id, capture_ts, width, height, flags, payload_len = HEADER.unpack_from(data)
    if magic != MEDIA_MAGIC:
        raise BadMagicError(f"bad magic {magic!r}")
    if version != MEDIA_VERSION:
        raise VersionMismatchError(f"unsupported media version {version}")
    end = HEADER_SIZE + payload_len
    if len(data) < end:
        raise TruncatedError(f"payload needs {payload_len} bytes, have {len(data) - HEADER_SIZE}")
    payload = bytes(data[HEADER_SIZE:end])
    if flags & FLAG_DEFLATE:
        try:
            payload = zlib.decompress(payload)
        except zlib.error as e:
            raise DecompressError(f"camera {camera_id} ts {capture_ts}: {e}") from e
    if not (flags & FLAG_PNG):
        expected = expected_payload_size(msg_type, width, height)
        if expected is not None and len(payload) != expected:
            raise PayloadSizeError(
                f"msg_type {msg_type} at {width}x{height}: payload {len(payload)} != expected {expected}"
            )
    msg = MediaMessage(
        msg_type=msg_type,
        camera_id=camera_id,
        capture_ts=capture_ts,
        width=width,
        height=height,
        payload=payload,
        flags=flags & ~FLAG_DEFLATE,
    )
    return msg, end


class MediaDecoder:
    """Incremental media-stream parser; feed arbitrary byte chunks."""

    def __init__(self):
        self._buf = bytearray()

    def feed(self, chunk: bytes) -> list[MediaMessage]:
        self._buf.extend(chunk)
        out: list[MediaMessage] = []
        while True:
            try:
                msg, used = decode_media(bytes(self._buf))
            except TruncatedError:
                break
            del self._buf[:used]
            out.append(msg)
        return out

    @property
    def pending_bytes(self) -> int:
        return len(self._buf)


def mask_to_payload(mask: np.ndarray) -> bytes:
    mask = np.asarray(mask, dtype=bool)
    return np.packbits(mask, axis=1).tobytes()


def mask_from_payload(payload: bytes, width: int, height: int) -> np.ndarray:
    row_bytes = (width + 7) // 8
    raw = np.frombuffer(payload, dtype=np.uint8).reshape(height, row_bytes)
    return np.unpackbits(raw, axis=1)[:, :width].astype(bool)


# ---------------------------------------------------------------------------
# control channel: length-prefixed JSON

_LEN = struct.Struct("<I")
MAX_CONTROL_BYTES = 1 << 20


def encode_control(msg: dict) -> bytes:
    if "type" not in msg:
        raise TransportError("control message needs a 'type' field")
    body = json.dumps(msg, separators=(",", ":")).encode("utf-8")
    return _LEN.pack(len(body)) + body


class ControlDecoder:
    def __init__(self):
        self._buf = bytearray()

    def feed(self, chunk: bytes) -> list[dict]:
        self._buf.extend(chunk)
        out: list[dict] = []
        while len(self._buf) >= _LEN.size:
            (n,) = _LEN.unpack_from(self._buf)
            if n > MAX_CONTROL_BYTES:
                raise TransportError(f"control message of {n} bytes exceeds limit")
            if len(self._buf) < _LEN.size + n:
                break
            body = bytes(self._buf[_LEN.size : _LEN.size + n])
            del self._buf[: _LEN.size + n]
            try:
                msg = json.loads(body)
            except json.JSONDecodeError as e:
                raise TransportError(f"malformed control JSON: {e}") from e
            if not isinstance(msg, dict) or "type" not in msg:
                raise TransportError("control message must be an object with a 'type' field")
            out.append(msg)
        return out


def make_clock_probe(t1: int) -> dict:
    return {"type": "clock_probe", "t1": t1}


def make_clock_reply(t1: int, t2: int, t3: int) -> dict:
    return {"type": "clock_reply", "t1": t1, "t2": t2, "t3": t3}


def make_subscribe(camera_ids) -> dict:
    return {"type": "subscribe", "camera_ids": sorted(int(c) for c in camera_ids)}


def make_unsubscribe(camera_ids) -> dict:
    return {"type": "unsubscribe", "camera_ids": sorted(int(c) for c in camera_ids)}


def make_viewpoint(pose_floats, intrinsics_floats, client_ts: int) -> dict:
    pose = [float(x) for x in pose_floats]
    intr = [float(x) for x in intrinsics_floats]
    if len(pose) != 12 or len(intr) != 6:
        raise TransportError("viewpoint needs 12 pose floats and 6 intrinsics floats")
    return {"type": "viewpoint", "pose": pose, "intrinsics": intr, "client_ts": int(client_ts)}


def make_selection_report(active, subscribed) -> dict:
    return {
        "type": "selection_report",
        "active": [int(c) for c in active],
        "subscribed": sorted(int(c) for c in subscribed),
    }


def make_error(code: int, text: str) -> dict:
    return {"type": "error", "code": int(code), "text": text}


def make_heartbeat(ts: int) -> dict:
    return {"type": "heartbeat", "ts": int(ts)}


def viewpoint_to_camera(msg: dict, cam_id: int = VIRTUAL_CAMERA_ID):
    """Build a CameraModel from a viewpoint control message."""
    from .geometry import CameraIntrinsics, CameraModel, CameraPose

    pose = msg["pose"]
    intr = msg["intrinsics"]
    rotation = np.array(pose[:9], dtype=np.float64).reshape(3, 3)
    translation = np.array(pose[9:12], dtype=np.float64)
    fx, fy, cx, cy, width, height = intr
    return CameraModel(
        id=cam_id,
        intrinsics=CameraIntrinsics(fx=fx, fy=fy, cx=cx, cy=cy, width=int(width), height=int(height)),
        pose=CameraPose(rotation, translation),
    )


def camera_to_viewpoint(cam, client_ts: int) -> dict:
    k = cam.intrinsics
    pose = [float(x) for x in cam.pose.rotation.reshape(-1)] + [float(x) for x in cam.pose.translation]
    return make_viewpoint(pose, [k.fx, k.fy, k.cx, k.cy, k.width, k.height], client_ts)


# ---------------------------------------------------------------------------
# liveness


class LivenessTracker:
    """Tracks last-heard times per peer against a silence budget.

    Time comes from the caller so tests can drive a fake clock; the live
    server feeds a monotonic clock in microseconds. Thread-safe: socket
    handler threads note arrivals while another thread reaps.
    """

    def __init__(self, timeout_us: int = PEER_TIMEOUT_US):
        self.timeout_us = timeout_us
        self._last: dict = {}
        self._lock = threading.Lock()

    def note(self, peer, now_us: int) -> None:
        with self._lock:
            self._last[peer] = now_us

    def remove(self, peer) -> None:
        with self._lock:
            self._last.pop(peer, None)

    def expired(self, now_us: int) -> list:
        with self._lock:
            gone = [p for p, t in self._last.items() if now_us - t > self.timeout_us]
            for p in gone:
                del self._last[p]
        return gone

    def peers(self) -> list:
        with self._lock:
            return list(self._last)


# ---------------------------------------------------------------------------
# socket helpers


def send_all(sock, data: bytes) -> None:
    sock.sendall(data)


def recv_some(sock, n: int = 65536) -> bytes:
    """One recv; empty bytes means the peer closed the stream."""
    return sock.recv(n)
