import numpy as np
import pytest

from fvv.transport import (
    FLAG_PNG,
    HEADER_SIZE,
    MSG_COLOR,
    MSG_MASK,
    MSG_PACKED_DEPTH,
    BadMagicError,
    ControlDecoder,
    DecompressError,
    LivenessTracker,
    MediaDecoder,
    MediaMessage,
    PayloadSizeError,
    TransportError,
    TruncatedError,
    VersionMismatchError,
    camera_to_viewpoint,
    decode_media,
    encode_control,
    encode_media,
    make_heartbeat,
    make_selection_report,
    make_subscribe,
    make_viewpoint,
    mask_from_payload,
    mask_to_payload,
    viewpoint_to_camera,
)


def random_message(rng) -> MediaMessage:
    msg_type = int(rng.choice([MSG_COLOR, MSG_PACKED_DEPTH, MSG_MASK]))
    w = int(rng.integers(1, 33)) * 2
    h = int(rng.integers(1, 33)) * 2
    if msg_type == MSG_MASK:
        n = ((w + 7) // 8) * h
    else:
        n = w * h * 3 // 2
    return MediaMessage(
        msg_type=msg_type,
        camera_id=int(rng.integers(0, 10)),
        capture_ts=int(rng.integers(0, 2**48)),
        width=w,
        height=h,
        payload=rng.integers(0, 256, n, dtype=np.uint8).tobytes(),
    )


class TestMediaCodec:
    def test_minimal_color_frame_sizes(self):
        msg = MediaMessage(MSG_COLOR, 0, 0, 2, 2, bytes(6))
        data = encode_media(msg)
        assert len(data) == HEADER_SIZE + 6
        assert HEADER_SIZE == 26

    def test_round_trip(self):
        rng = np.random.default_rng(20240809)
        for _ in range(300):
            msg = random_message(rng)
            compress = bool(rng.integers(0, 2))
            back, used = decode_media(encode_media(msg, compress=compress))
            assert back == msg
            assert used == len(encode_media(msg, compress=compress))

    def test_compressed_equals_uncompressed(self):
        rng = np.random.default_rng(1)
        msg = random_message(rng)
        a, _ = decode_media(encode_media(msg, compress=False))
        b, _ = decode_media(encode_media(msg, compress=True))
        assert a == b

    def test_bad_magic(self):
        data = b"XXXX" + encode_media(MediaMessage(MSG_COLOR, 0, 0, 2, 2, bytes(6)))[4:]
        with pytest.raises(BadMagicError):
            decode_media(data)

    def test_version_mismatch(self):
        data = bytearray(encode_media(MediaMessage(MSG_COLOR, 0, 0, 2, 2, bytes(6))))
        data[4] = 99
        with pytest.raises(VersionMismatchError):
            decode_media(bytes(data))

    def test_truncated(self):
        data = encode_media(MediaMessage(MSG_COLOR, 0, 0, 2, 2, bytes(6)))
        with pytest.raises(TruncatedError):
            decode_media(data[:10])
        with pytest.raises(TruncatedError):
            decode_media(data[:-1])

    def test_payload_size_mismatch(self):
        with pytest.raises(PayloadSizeError):
            MediaMessage(MSG_COLOR, 0, 0, 2, 2, bytes(7))

    def test_decompress_failure(self):
        import struct

        from fvv.transport import FLAG_DEFLATE, HEADER, MEDIA_MAGIC, MEDIA_VERSION

        bogus = b"not deflate"
        header = HEADER.pack(MEDIA_MAGIC, MEDIA_VERSION, MSG_COLOR, 0, 0, 2, 2, FLAG_DEFLATE, len(bogus))
        with pytest.raises(DecompressError):
            decode_media(header + bogus)

    def test_png_flag_skips_size_check(self):
        msg = MediaMessage(MSG_COLOR, 0xFFFF, 1, 640, 360, b"fakepng", flags=FLAG_PNG)
        back, _ = decode_media(encode_media(msg, compress=False))
        assert back.payload == b"fakepng"
        assert back.flags & FLAG_PNG

    def test_stream_reassembly_with_random_split_points(self):
        rng = np.random.default_rng(20240809)
        msgs = [random_message(rng) for _ in range(120)]
        stream = b"".join(encode_media(m, compress=bool(rng.integers(0, 2))) for m in msgs)
        dec = MediaDecoder()
        got = []
        i = 0
        while i < len(stream):
            n = int(rng.integers(1, 4096))
            got.extend(dec.feed(stream[i : i + n]))
            i += n
        assert got == msgs
        assert dec.pending_bytes == 0

    def test_capture_ts_order_preserved(self):
        rng = np.random.default_rng(3)
        msgs = []
        ts = 0
        for _ in range(50):
            m = random_message(rng)
            ts += int(rng.integers(1, 1000))
            msgs.append(
                MediaMessage(m.msg_type, 1, ts, m.width, m.height, m.payload)
            )
        stream = b"".join(encode_media(m) for m in msgs)
        dec = MediaDecoder()
        out = dec.feed(stream)
        assert [m.capture_ts for m in out] == [m.capture_ts for m in msgs]


class TestMaskPayload:
    def test_round_trip(self):
        rng = np.random.default_rng(4)
        for w, h in [(2, 2), (10, 6), (34, 12)]:
            mask = rng.random((h, w)) > 0.5
            assert np.array_equal(mask_from_payload(mask_to_payload(mask), w, h), mask)


class TestControlCodec:
    def test_round_trip_all_types(self):
        msgs = [
            {"type": "clock_probe", "t1": 12345},
            {"type": "clock_reply", "t1": 1, "t2": 2, "t3": 3},
            make_subscribe({3, 1, 2}),
            {"type": "unsubscribe", "camera_ids": [7]},
            make_viewpoint(list(range(12)), [100, 100, 50, 50, 100, 100], 999),
            make_selection_report([3, 4, 2], {1, 2, 3, 4, 5}),
            {"type": "error", "code": 1, "text": "viewer slot taken"},
            make_heartbeat(5),
        ]
        dec = ControlDecoder()
        stream = b"".join(encode_control(m) for m in msgs)
        # feed byte by byte to exercise framing
        out = []
        for i in range(len(stream)):
            out.extend(dec.feed(stream[i : i + 1]))
        assert out == msgs

    def test_rejects_untyped(self):
        with pytest.raises(TransportError):
            encode_control({"no_type": 1})
        dec = ControlDecoder()
        import json
        import struct

        body = json.dumps({"x": 1}).encode()
        with pytest.raises(TransportError):
            dec.feed(struct.pack("<I", len(body)) + body)

    def test_viewpoint_camera_round_trip(self):
        from fvv.geometry import CameraIntrinsics, CameraModel, look_at

        cam = CameraModel(
            7,
            CameraIntrinsics(fx=500.0, fy=500.0, cx=320.0, cy=180.0, width=640, height=360),
            look_at((1.0, -0.5, -3.0), (0.0, -0.5, 0.0)),
        )
        msg = camera_to_viewpoint(cam, client_ts=42)
        back = viewpoint_to_camera(msg, cam_id=7)
        assert back.intrinsics == cam.intrinsics
        assert np.allclose(back.pose.rotation, cam.pose.rotation)
        assert np.allclose(back.pose.translation, cam.pose.translation)

    def test_viewpoint_validates_lengths(self):
        with pytest.raises(TransportError):
            make_viewpoint([0.0] * 11, [0.0] * 6, 0)


class TestLiveness:
    def test_capture_node_kill_detected_within_timeout(self):
        lt = LivenessTracker(timeout_us=5_000_000)
        lt.note("cam3", 0)
        lt.note("cam4", 0)
        # cam4 keeps talking, cam3 is killed at t=0
        for t in range(1_000_000, 5_000_001, 1_000_000):
            lt.note("cam4", t)
            assert lt.expired(t) == []
        gone = lt.expired(5_000_001)
        assert gone == ["cam3"]
        assert lt.peers() == ["cam4"]

    def test_expired_peer_reported_once(self):
        lt = LivenessTracker(timeout_us=100)
        lt.note("x", 0)
        assert lt.expired(200) == ["x"]
        assert lt.expired(300) == []
