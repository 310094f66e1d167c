"""Command-line entry points.

Every command exits nonzero with a one-line cause on error. Shared flags:
--config names a JSON config file (else the FVV_CONFIG environment variable
is consulted) and individual flags override file values.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .config import ConfigError, parse_config


def _setup_logging(level: str) -> None:
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s %(message)s",
        stream=sys.stderr,
    )


def _parse_resolution(text: str) -> tuple[int, int]:
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except ValueError:
        raise argparse.ArgumentTypeError(f"resolution must look like 640x360, got {text!r}") from None


def _config_from_args(args) -> Config:
    overrides = {}
    for key in (
        "calibration_path",
        "background_model_path",
        "period_us",
        "tolerance_us",
        "max_staleness",
        "selection_lambda",
        "hysteresis",
        "blend_epsilon_m",
        "splat_2x2",
        "host",
        "media_port",
        "control_port",
        "ws_port",
        "output_encoding",
        "scene",
        "ticks",
        "log_level",
    ):
        if hasattr(args, key):
            overrides[key] = getattr(args, key)
    if getattr(args, "resolution", None) is not None:
        overrides["width"], overrides["height"] = args.resolution
    return parse_config(file_path=getattr(args, "config", None), overrides=overrides)


# ---------------------------------------------------------------------------
# commands


def cmd_serve(args) -> int:
    from .edge_server import EdgeServer
    from .wsbridge import WebSocketBridge

    cfg = _config_from_args(args)
    server = EdgeServer(cfg)
    server.start()
    bridge = WebSocketBridge(cfg.host, cfg.ws_port, server.control_port, server.media_port)
    bridge.start()
    print(
        f"serving: media :{server.media_port} control :{server.control_port} ws :{bridge.ws_port}",
        flush=True,
    )
    try:
        while True:
            time.sleep(1.0)
    except KeyboardInterrupt:
        pass
    finally:
        bridge.stop()
        server.stop()
    return 0


def _camera_range(text: str) -> list[int]:
    if ".." in text:
        lo, hi = text.split("..")
        return list(range(int(lo), int(hi) + 1))
    return [int(x) for x in text.split(",")]


def cmd_capture_sim(args) -> int:
    from .capture import run_capture_rig
    from .geometry import load_calibration
    from .scene_sim import build_scene, default_quantizer, default_rig
    from .sync import ClockModel

    cfg = _config_from_args(args)
    scene = build_scene(cfg.scene)
    if cfg.calibration_path:
        rig, quantizer = load_calibration(cfg.calibration_path)
    else:
        rig, quantizer = default_rig(cfg.width, cfg.height), default_quantizer()
    wanted = set(args.cameras)
    cameras = [c for c in rig if c.id in wanted]
    missing = wanted - {c.id for c in cameras}
    if missing:
        raise ValueError(f"cameras not in rig: {sorted(missing)}")
    rng = np.random.default_rng(args.clock_seed)
    offsets = {c.id: int(rng.integers(-50_000, 50_000)) for c in cameras}

    nodes = run_capture_rig(
        cameras,
        scene,
        quantizer,
        host=args.server,
        media_port=cfg.media_port,
        control_port=cfg.control_port,
        period_us=cfg.period_us,
        max_frames=args.frames,
        clock_for=lambda cid: ClockModel(offset_us=offsets[cid], drift_ppm=float(rng.uniform(-50, 50))),
    )
    print(f"capture nodes up: {sorted(n.camera.id for n in nodes)}", flush=True)
    try:
        while any(t.is_alive() for n in nodes for t in n._threads):
            time.sleep(0.5)
            if args.frames is not None and all(
                n.max_frames is not None and n.frames_sent >= n.max_frames for n in nodes
            ):
                break
    except KeyboardInterrupt:
        pass
    finally:
        for n in nodes:
            n.stop()
    return 0


def cmd_render_dataset(args) -> int:
    from .scene_sim import build_scene, default_quantizer, default_rig, render_dataset_to

    cfg = _config_from_args(args)
    rig = default_rig(cfg.width, cfg.height)
    render_dataset_to(
        args.out,
        build_scene(cfg.scene),
        rig,
        default_quantizer(),
        ticks=cfg.ticks,
        period_us=cfg.period_us,
    )
    print(f"dataset: {args.out} ({cfg.ticks} ticks, {len(rig)} cameras, {cfg.width}x{cfg.height})")
    return 0


def cmd_build_background(args) -> int:
    from .geometry import load_calibration
    from .scene_sim import build_scene, default_quantizer, default_rig, render
    from .synthesis import build_background_model, save_background_model

    cfg = _config_from_args(args)
    if cfg.calibration_path:
        rig, quantizer = load_calibration(cfg.calibration_path)
    else:
        rig, quantizer = default_rig(cfg.width, cfg.height), default_quantizer()
    scene = build_scene(cfg.scene).background_only()
    model = build_background_model(rig, lambda cam: render(scene, cam, 0, quantizer)[1])
    save_background_model(args.out, model, rig, quantizer)
    print(f"background model: {args.out} ({len(rig)} cameras)")
    return 0


def cmd_synthesize(args) -> int:
    from PIL import Image

    from .scene_sim import i420_to_rgb, load_dataset
    from .selection import select
    from .sync import FrameEntry, FrameSet, TimedFrame
    from .synthesis import SynthesisConfig, load_background_model, synthesize
    from .depth_codec import DepthMap, pack_depth
    from .transport import viewpoint_to_camera

    cfg = _config_from_args(args)
    rig, quantizer, frames = load_dataset(args.dataset)
    rig_map = {c.id: c for c in rig}
    model, _, model_q = load_background_model(args.background_model)
    if model_q != quantizer:
        raise ValueError("background model quantizer does not match the dataset")

    pose = [float(x) for x in args.pose]
    if len(pose) != 18:
        raise ValueError(f"--pose needs 18 floats (9 rotation, 3 translation, 6 intrinsics), got {len(pose)}")
    virtual = viewpoint_to_camera({"pose": pose[:12], "intrinsics": pose[12:]})

    tick = args.tick
    entries = {}
    for cam in rig:
        if tick not in frames[cam.id]:
            raise ValueError(f"camera {cam.id} has no tick {tick}")
        color, depth, mask = frames[cam.id][tick]
        fg_codes = np.where(mask, depth.codes, 0).astype(np.uint16)
        entries[cam.id] = FrameEntry(
            TimedFrame(cam.id, tick * cfg.period_us, color, pack_depth(DepthMap(fg_codes)), mask), 0
        )
    vs = select(virtual, rig, prev=None, hysteresis=cfg.hysteresis, axis_weight=cfg.selection_lambda)
    fs = FrameSet(tick * cfg.period_us, {cid: entries[cid] for cid in vs.subscribed})
    layered = synthesize(
        fs,
        vs,
        rig_map,
        model,
        quantizer,
        SynthesisConfig(cfg.blend_epsilon_m, cfg.splat_2x2, cfg.selection_lambda),
    )
    Image.fromarray(i420_to_rgb(layered.final)).save(args.out)
    print(f"synthesized tick {tick} from cameras {list(vs.active)} -> {args.out}")
    return 0


def cmd_pack_depth(args) -> int:
    from .depth_codec import DepthMap, pack_depth, write_packed_frame

    raw = Path(args.infile).read_bytes()
    expected = args.width * args.height * 2
    if len(raw) != expected:
        raise ValueError(f"{args.infile}: {len(raw)} bytes, expected {expected} (u16le {args.width}x{args.height})")
    codes = np.frombuffer(raw, dtype="<u2").reshape(args.height, args.width)
    write_packed_frame(args.out, pack_depth(DepthMap(codes)), frame_index=args.frame_index)
    print(f"packed {args.width}x{args.height} -> {args.out}")
    return 0


def cmd_unpack_depth(args) -> int:
    from .depth_codec import read_packed_frame, unpack_depth

    frame, idx = read_packed_frame(args.infile)
    codes = unpack_depth(frame).codes.astype("<u2")
    Path(args.out).write_bytes(codes.tobytes())
    print(f"unpacked frame {idx} ({frame.width}x{frame.height}) -> {args.out}")
    return 0


def cmd_bench(args) -> int:
    from .edge_server import PipelineStats, encode_output_frame, format_stats_table
    from .scene_sim import arc_pose, build_scene, default_quantizer, default_rig, render, CaptureSimulator
    from .selection import camera_distance, select
    from .sync import FrameAssembler, FrameEntry, TimedFrame
    from .synthesis import SynthesisConfig, build_background_model, synthesize
    from .depth_codec import DepthMap, pack_depth

    cfg = _config_from_args(args)
    rig = default_rig(cfg.width, cfg.height)
    rig_map = {c.id: c for c in rig}
    quantizer = default_quantizer()
    scene = build_scene(cfg.scene)
    print(f"bench: {cfg.width}x{cfg.height}, {cfg.ticks} ticks, scene {cfg.scene!r}", flush=True)

    t0 = time.monotonic()
    empty = scene.background_only()
    model = build_background_model(rig, lambda c: render(empty, c, 0, quantizer)[1])
    sims = {c.id: CaptureSimulator(scene, c, quantizer) for c in rig}
    print(f"offline setup (background model + capture caches): {time.monotonic() - t0:.2f} s", flush=True)

    stats = PipelineStats()
    synth_cfg = SynthesisConfig(cfg.blend_epsilon_m, cfg.splat_2x2, cfg.selection_lambda)
    vs = None
    asm = None
    render_us = 0
    t_start = time.monotonic()
    for tick in range(cfg.ticks):
        t_us = tick * cfg.period_us
        s = tick / max(cfg.ticks - 1, 1)
        vs = select(
            arc_pose(rig, s),
            rig,
            prev=vs,
            hysteresis=cfg.hysteresis,
            axis_weight=cfg.selection_lambda,
        )
        if asm is None or set(asm.camera_ids) != set(vs.subscribed):
            asm = FrameAssembler(
                vs.subscribed,
                period_us=cfg.period_us,
                tolerance_us=cfg.effective_tolerance_us,
                anchor_ts=t_us,
            )
        r0 = time.monotonic_ns()
        for cid in vs.subscribed:
            color, depth, mask = sims[cid].render(t_us)
            fg = DepthMap(np.where(mask, depth.codes, 0).astype(np.uint16))
            asm.push(TimedFrame(cid, t_us, color, pack_depth(fg), mask))
        render_us += (time.monotonic_ns() - r0) // 1000

        a0 = time.monotonic_ns()
        sets = asm.ready(now_ts=t_us + cfg.effective_tolerance_us + 1)
        stats.record_stage("assembly", (time.monotonic_ns() - a0) // 1000)
        if not sets:
            continue
        fs = sets[-1]
        stage_us: dict = {}
        distances = [camera_distance(vs.virtual, rig_map[c], cfg.selection_lambda) for c in vs.active]
        layered = synthesize(fs, vs, rig_map, model, quantizer, synth_cfg, distances, stage_us)
        e0 = time.monotonic_ns()
        encode_output_frame(layered.final, fs.tick_ts, cfg.output_encoding)
        for stage in ("warp", "blend", "composite"):
            stats.record_stage(stage, stage_us[stage])
        stats.record_stage("encode", (time.monotonic_ns() - e0) // 1000)
        stats.bump(frames_synthesized=1)
    wall = time.monotonic() - t_start

    snap = stats.snapshot()
    print(format_stats_table(snap))
    print(f"capture rendering (not a server stage): {render_us / max(snap['frames_synthesized'], 1) / 1000:.2f} ms/tick")
    print(f"wall time {wall:.2f} s for {snap['frames_synthesized']} frames -> end-to-end {snap['frames_synthesized'] / wall:.2f} fps")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fvv", description="Desk-scale free-viewpoint video pipeline.")
    p.add_argument("--config", help="JSON config file (else $FVV_CONFIG)")
    p.add_argument("--log-level", dest="log_level", default=None, help="debug|info|warning|error")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("serve", help="run the edge server and websocket bridge")
    sp.add_argument("--calibration", dest="calibration_path")
    sp.add_argument("--background-model", dest="background_model_path")
    sp.add_argument("--host", dest="host")
    sp.add_argument("--media-port", dest="media_port", type=int)
    sp.add_argument("--control-port", dest="control_port", type=int)
    sp.add_argument("--ws-port", dest="ws_port", type=int)
    sp.add_argument("--period-us", dest="period_us", type=int)
    sp.add_argument("--output-encoding", dest="output_encoding", choices=["png", "i420"])
    sp.set_defaults(fn=cmd_serve)

    cp = sub.add_parser("capture-sim", help="run simulated capture nodes")
    cp.add_argument("--scene", dest="scene")
    cp.add_argument("--server", default="127.0.0.1")
    cp.add_argument("--cameras", type=_camera_range, default=list(range(9)), help="e.g. 0..8 or 0,2,4")
    cp.add_argument("--media-port", dest="media_port", type=int)
    cp.add_argument("--control-port", dest="control_port", type=int)
    cp.add_argument("--period-us", dest="period_us", type=int)
    cp.add_argument("--frames", type=int, default=None, help="stop after N frames per camera")
    cp.add_argument("--resolution", type=_parse_resolution)
    cp.add_argument("--calibration", dest="calibration_path")
    cp.add_argument("--clock-seed", type=int, default=1)
    cp.set_defaults(fn=cmd_capture_sim)

    rp = sub.add_parser("render-dataset", help="render a scene to a dataset directory")
    rp.add_argument("--scene", dest="scene")
    rp.add_argument("--ticks", dest="ticks", type=int)
    rp.add_argument("--out", required=True)
    rp.add_argument("--resolution", type=_parse_resolution)
    rp.add_argument("--period-us", dest="period_us", type=int)
    rp.set_defaults(fn=cmd_render_dataset)

    bp = sub.add_parser("build-background", help="build the offline background depth model")
    bp.add_argument("--scene", dest="scene")
    bp.add_argument("--calibration", dest="calibration_path")
    bp.add_argument("--out", required=True)
    bp.add_argument("--resolution", type=_parse_resolution)
    bp.set_defaults(fn=cmd_build_background)

    yp = sub.add_parser("synthesize", help="offline single-frame synthesis from a dataset")
    yp.add_argument("--dataset", required=True)
    yp.add_argument("--background-model", required=True)
    yp.add_argument("--pose", nargs=18, required=True, metavar="F", help="9 rotation + 3 translation + 6 intrinsics")
    yp.add_argument("--tick", type=int, default=0)
    yp.add_argument("--out", required=True)
    yp.set_defaults(fn=cmd_synthesize)

    kp = sub.add_parser("pack-depth", help="pack raw u16le depth codes into a .fvvd dump")
    kp.add_argument("--in", dest="infile", required=True)
    kp.add_argument("--width", type=int, required=True)
    kp.add_argument("--height", type=int, required=True)
    kp.add_argument("--frame-index", type=int, default=0)
    kp.add_argument("--out", required=True)
    kp.set_defaults(fn=cmd_pack_depth)

    up = sub.add_parser("unpack-depth", help="unpack a .fvvd dump to raw u16le depth codes")
    up.add_argument("--in", dest="infile", required=True)
    up.add_argument("--out", required=True)
    up.set_defaults(fn=cmd_unpack_depth)

    np_ = sub.add_parser("bench", help="offline pipeline benchmark with per-stage timings")
    np_.add_argument("--resolution", type=_parse_resolution)
    np_.add_argument("--ticks", dest="ticks", type=int)
    np_.add_argument("--scene", dest="scene")
    np_.add_argument("--output-encoding", dest="output_encoding", choices=["png", "i420"])
    np_.set_defaults(fn=cmd_bench)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg_level = args.log_level or "info"
        _setup_logging(cfg_level)
        return args.fn(args)
    except KeyboardInterrupt:
        return 130
    except (ConfigError, ValueError, FileNotFoundError, OSError) as e:
        print(f"fvv {args.command}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
