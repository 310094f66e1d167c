import numpy as np
import pytest

from fvv.depth_codec import (
    DepthCodecError,
    DepthMap,
    I420Frame,
    PackedDepthFrame,
    pack_depth,
    read_packed_frame,
    read_pbm_mask,
    unpack_depth,
    write_packed_frame,
    write_pbm_mask,
)


def cell_map(d00, d01, d10, d11) -> DepthMap:
    return DepthMap(np.array([[d00, d01], [d10, d11]], dtype=np.uint16))


def test_zero_cell():
    p = pack_depth(cell_map(0, 0, 0, 0))
    assert p.y_plane.tolist() == [[0, 0], [0, 0]]
    assert p.u_plane[0, 0] == 0x00
    assert p.v_plane[0, 0] == 0x00


def test_layout_example():
    p = pack_depth(cell_map(0xABC, 0x123, 0xFFF, 0x000))
    assert p.y_plane.tolist() == [[0xAB, 0x12], [0xFF, 0x00]]
    assert p.u_plane[0, 0] == 0xC3
    assert p.v_plane[0, 0] == 0xF0


def test_unpack_example():
    p = PackedDepthFrame(
        np.array([[0xAB, 0x12], [0xFF, 0x00]], dtype=np.uint8),
        np.array([[0xC3]], dtype=np.uint8),
        np.array([[0xF0]], dtype=np.uint8),
    )
    assert unpack_depth(p).codes.tolist() == [[0xABC, 0x123], [0xFFF, 0x000]]


def test_all_ff_planes():
    p = PackedDepthFrame(
        np.full((4, 4), 0xFF, dtype=np.uint8),
        np.full((2, 2), 0xFF, dtype=np.uint8),
        np.full((2, 2), 0xFF, dtype=np.uint8),
    )
    assert (unpack_depth(p).codes == 0xFFF).all()


def test_exhaustive_single_cell_sweep():
    # every 12-bit value in each of the four cell positions
    for pos in range(4):
        vals = np.zeros((4096, 4), dtype=np.uint16)
        vals[:, pos] = np.arange(4096)
        codes = vals.reshape(4096, 2, 2)
        big = np.zeros((2, 4096 * 2), dtype=np.uint16)
        for i in range(4096):
            big[:, 2 * i : 2 * i + 2] = codes[i]
        d = DepthMap(big)
        assert unpack_depth(pack_depth(d)) == d


def test_random_round_trip():
    rng = np.random.default_rng(20240809)
    for _ in range(200):
        d = DepthMap(rng.integers(0, 4096, (64, 64), dtype=np.uint16))
        assert unpack_depth(pack_depth(d)) == d


def test_locality_one_code_changes_one_y_and_one_chroma_byte():
    rng = np.random.default_rng(2)
    d = rng.integers(0, 4096, (16, 16), dtype=np.uint16)
    base = pack_depth(DepthMap(d))
    for _ in range(50):
        r, c = rng.integers(0, 16, 2)
        d2 = d.copy()
        d2[r, c] ^= rng.integers(1, 4096, dtype=np.uint16)
        mod = pack_depth(DepthMap(d2))
        y_diff = int((base.y_plane != mod.y_plane).sum())
        u_diff = int((base.u_plane != mod.u_plane).sum())
        v_diff = int((base.v_plane != mod.v_plane).sum())
        assert y_diff <= 1
        assert u_diff + v_diff <= 1
        # the touched chroma byte belongs to the pixel's own cell
        if u_diff:
            assert (base.u_plane != mod.u_plane)[r // 2, c // 2]
        if v_diff:
            assert (base.v_plane != mod.v_plane)[r // 2, c // 2]


def test_packed_byte_count():
    rng = np.random.default_rng(3)
    for w, h in [(2, 2), (64, 64), (640, 360)]:
        d = DepthMap(rng.integers(0, 4096, (h, w), dtype=np.uint16))
        assert len(pack_depth(d).to_bytes()) == w * h * 3 // 2


def test_rejects_odd_dims_and_big_codes():
    with pytest.raises(DepthCodecError):
        DepthMap(np.zeros((3, 4), dtype=np.uint16))
    with pytest.raises(DepthCodecError):
        DepthMap(np.full((2, 2), 4096, dtype=np.int32))


def test_rejects_mismatched_planes():
    with pytest.raises(DepthCodecError):
        PackedDepthFrame(
            np.zeros((4, 4), dtype=np.uint8),
            np.zeros((2, 2), dtype=np.uint8),
            np.zeros((1, 2), dtype=np.uint8),
        )


def test_file_dump_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    d = DepthMap(rng.integers(0, 4096, (32, 48), dtype=np.uint16))
    frame = pack_depth(d)
    path = tmp_path / "frame.fvvd"
    write_packed_frame(path, frame, frame_index=1234)
    raw = path.read_bytes()
    assert raw[:4] == b"FVVD"
    assert len(raw) == 16 + 48 * 32 * 3 // 2
    back, idx = read_packed_frame(path)
    assert idx == 1234
    assert back == frame
    assert unpack_depth(back) == d


def test_file_dump_bad_magic(tmp_path):
    path = tmp_path / "bad.fvvd"
    path.write_bytes(b"XXXX" + bytes(12) + bytes(6))
    with pytest.raises(DepthCodecError, match="magic"):
        read_packed_frame(path)


def test_i420_frame_bytes_round_trip():
    rng = np.random.default_rng(5)
    f = I420Frame(
        rng.integers(0, 256, (6, 8), dtype=np.uint8),
        rng.integers(0, 256, (3, 4), dtype=np.uint8),
        rng.integers(0, 256, (3, 4), dtype=np.uint8),
    )
    assert I420Frame.from_bytes(f.to_bytes(), 8, 6) == f


def test_pbm_mask_round_trip(tmp_path):
    rng = np.random.default_rng(6)
    mask = rng.random((18, 22)) > 0.7
    path = tmp_path / "mask.pbm"
    write_pbm_mask(path, mask)
    assert np.array_equal(read_pbm_mask(path), mask)
