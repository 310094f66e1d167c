import json

import numpy as np
import pytest

from fvv.cli import main
from fvv.depth_codec import read_packed_frame, unpack_depth


def test_pack_unpack_depth_round_trip(tmp_path, capsys):
    rng = np.random.default_rng(5)
    codes = rng.integers(0, 4096, (36, 64), dtype="<u2")
    raw = tmp_path / "depth.u16"
    raw.write_bytes(codes.tobytes())
    fvvd = tmp_path / "depth.fvvd"
    out = tmp_path / "back.u16"
    assert main(["pack-depth", "--in", str(raw), "--width", "64", "--height", "36",
                 "--frame-index", "7", "--out", str(fvvd)]) == 0
    frame, idx = read_packed_frame(fvvd)
    assert idx == 7
    assert np.array_equal(unpack_depth(frame).codes, codes)
    assert main(["unpack-depth", "--in", str(fvvd), "--out", str(out)]) == 0
    assert out.read_bytes() == raw.read_bytes()


def test_pack_depth_size_error_is_one_line(tmp_path, capsys):
    raw = tmp_path / "short.u16"
    raw.write_bytes(b"xy")
    rc = main(["pack-depth", "--in", str(raw), "--width", "64", "--height", "36", "--out", str(tmp_path / "x")])
    assert rc == 1
    err = capsys.readouterr().err
    assert "expected" in err and err.count("\n") == 1


def test_dataset_background_synthesize_flow(tmp_path, capsys):
    ds = tmp_path / "ds"
    bg = tmp_path / "bg"
    out = tmp_path / "view.png"
    assert main(["render-dataset", "--scene", "default", "--ticks", "2",
                 "--resolution", "96x54", "--out", str(ds)]) == 0
    assert (ds / "calibration.json").is_file()
    assert main(["build-background", "--scene", "default",
                 "--calibration", str(ds / "calibration.json"), "--out", str(bg)]) == 0

    from fvv.geometry import load_calibration
    from fvv.scene_sim import arc_pose

    rig, _ = load_calibration(ds / "calibration.json")
    cam = arc_pose(rig, 0.5)
    pose = [str(x) for x in cam.pose.rotation.reshape(-1)] + [str(x) for x in cam.pose.translation]
    intr = cam.intrinsics
    pose += [str(x) for x in (intr.fx, intr.fy, intr.cx, intr.cy, intr.width, intr.height)]
    assert main(["synthesize", "--dataset", str(ds), "--background-model", str(bg),
                 "--tick", "1", "--pose", *pose, "--out", str(out)]) == 0
    from PIL import Image

    img = Image.open(out)
    assert img.size == (96, 54)


def test_bench_emits_stage_table(capsys):
    assert main(["bench", "--resolution", "96x54", "--ticks", "3", "--scene", "default",
                 "--output-encoding", "i420"]) == 0
    out = capsys.readouterr().out
    for stage in ("assembly", "warp", "blend", "composite", "encode"):
        assert stage in out
    assert "fps" in out


def test_unknown_config_key_fails_with_name(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"perid": 5}))
    rc = main(["--config", str(cfg), "bench", "--ticks", "1", "--resolution", "64x36"])
    assert rc == 1
    assert "perid" in capsys.readouterr().err


def test_synthesize_missing_tick_errors(tmp_path, capsys):
    ds = tmp_path / "ds"
    bg = tmp_path / "bg"
    assert main(["render-dataset", "--scene", "empty", "--ticks", "1",
                 "--resolution", "64x36", "--out", str(ds)]) == 0
    assert main(["build-background", "--scene", "empty",
                 "--calibration", str(ds / "calibration.json"), "--out", str(bg)]) == 0
    pose = ["1", "0", "0", "0", "1", "0", "0", "0", "1", "0", "0", "0",
            "100", "100", "32", "18", "64", "36"]
    rc = main(["synthesize", "--dataset", str(ds), "--background-model", str(bg),
               "--tick", "9", "--pose", *pose, "--out", str(tmp_path / "x.png")])
    assert rc == 1
    assert "tick 9" in capsys.readouterr().err
