"""Edge server: ingest capture streams, synchronize, select, synthesize, serve.

One pipeline thread owns assembly, selection, synthesis and encode; socket
handler threads only move bytes and enqueue work. Capture nodes connect on
the media port (binary frames) and the control port (clock exchange and
subscription commands); the single viewer drives the virtual camera over its
control connection and receives synthesized frames on a media connection.
"""

from __future__ import annotations

import io
import logging
import queue
import socket
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import transport
from .config import Config
from .depth_codec import I420Frame, PackedDepthFrame
from .geometry import CameraModel, load_calibration
from .scene_sim import i420_to_rgb
from .selection import ViewState, camera_distance, select
from .sync import FrameAssembler, StreamLostError, TimedFrame
from .synthesis import SynthesisConfig, load_background_model, synthesize
from .transport import (
    ControlDecoder,
    MediaDecoder,
    MediaMessage,
    encode_control,
    encode_media,
)

log = logging.getLogger("fvv.server")

STAGES = ("assembly", "warp", "blend", "composite", "encode")


def mono_us() -> int:
    return time.monotonic_ns() // 1000


@dataclass
class PipelineStats:
    """Counters and per-stage timings; all reads go through snapshot()."""

    frames_synthesized: int = 0
    sets_assembled: int = 0
    sets_dropped: int = 0
    sets_skipped: int = 0  # ready sets not synthesized (selection epoch moved on)
    incomplete_sets: int = 0  # sets missing a member of their camera group; must stay 0
    stale_frames: int = 0
    stream_losses: int = 0
    stage_total_us: dict = field(default_factory=lambda: {s: 0 for s in STAGES})
    stage_last_us: dict = field(default_factory=lambda: {s: 0 for s in STAGES})
    last_latency_us: int = 0

    def __post_init__(self):
        self._lock = threading.Lock()

    def record_stage(self, stage: str, us: int) -> None:
        with self._lock:
            self.stage_total_us[stage] += us
            self.stage_last_us[stage] = us

    def bump(self, **counters) -> None:
        with self._lock:
            for name, n in counters.items():
                setattr(self, name, getattr(self, name) + n)

    def set_latency(self, us: int) -> None:
        with self._lock:
            self.last_latency_us = us

    def snapshot(self) -> dict:
        with self._lock:
            per_frame = {
                s: (self.stage_total_us[s] / self.frames_synthesized if self.frames_synthesized else 0.0)
                for s in STAGES
            }
            return {
                "frames_synthesized": self.frames_synthesized,
                "sets_assembled": self.sets_assembled,
                "sets_dropped": self.sets_dropped,
                "sets_skipped": self.sets_skipped,
                "incomplete_sets": self.incomplete_sets,
                "stale_frames": self.stale_frames,
                "stream_losses": self.stream_losses,
                "stage_mean_us": per_frame,
                "stage_last_us": dict(self.stage_last_us),
                "last_latency_us": self.last_latency_us,
            }


def format_stats_table(snapshot: dict) -> str:
    lines = [f"{'stage':<12}{'mean ms':>10}{'last ms':>10}"]
    total = 0.0
    for s in STAGES:
        mean = snapshot["stage_mean_us"][s] / 1000.0
        total += mean
        lines.append(f"{s:<12}{mean:>10.2f}{snapshot['stage_last_us'][s] / 1000.0:>10.2f}")
    lines.append(f"{'total':<12}{total:>10.2f}")
    fps = 1000.0 / total if total > 0 else 0.0
    lines.append(f"frames: {snapshot['frames_synthesized']}  pipeline fps: {fps:.2f}")
    return "\n".join(lines)


def encode_output_frame(frame: I420Frame, tick_ts: int, encoding: str) -> bytes:
    """Wrap a synthesized frame as a media message for the viewer."""
    if encoding == "png":
        from PIL import Image

        buf = io.BytesIO()
        Image.fromarray(i420_to_rgb(frame)).save(buf, format="PNG", compress_level=1)
        msg = MediaMessage(
            transport.MSG_COLOR,
            transport.VIRTUAL_CAMERA_ID,
            tick_ts,
            frame.width,
            frame.height,
            buf.getvalue(),
            flags=transport.FLAG_PNG,
        )
    else:
        msg = MediaMessage(
            transport.MSG_COLOR,
            transport.VIRTUAL_CAMERA_ID,
            tick_ts,
            frame.width,
            frame.height,
            frame.to_bytes(),
        )
    return encode_media(msg)


class _CaptureIngest:
    """Groups a capture connection's media messages into TimedFrames."""

    def __init__(self, expected_size: tuple[int, int]):
        self.expected = expected_size
        self._partial: dict[int, dict] = {}

    def add(self, msg: MediaMessage) -> TimedFrame | None:
        w, h = self.expected
        if (msg.width, msg.height) != (w, h):
            raise transport.PayloadSizeError(
                f"camera {msg.camera_id}: frame {msg.width}x{msg.height} does not match calibration {w}x{h}"
            )
        slot = self._partial.setdefault(msg.capture_ts, {})
        slot[msg.msg_type] = msg
        if len(slot) < 3:
            return None
        del self._partial[msg.capture_ts]
        color = I420Frame.from_bytes(slot[transport.MSG_COLOR].payload, w, h)
        depth = PackedDepthFrame.from_bytes(slot[transport.MSG_PACKED_DEPTH].payload, w, h)
        mask = transport.mask_from_payload(slot[transport.MSG_MASK].payload, w, h)
        # drop stragglers from older ticks to bound memory
        for ts in [t for t in self._partial if t < msg.capture_ts - 2_000_000]:
            del self._partial[ts]
        return TimedFrame(msg.camera_id, msg.capture_ts, color, depth, mask)


class EdgeServer:
    def __init__(self, config: Config):
        self.config = config
        if not config.calibration_path:
            raise ValueError("server needs calibration_path")
        if not config.background_model_path:
            raise ValueError("server needs background_model_path")
        for p in (config.calibration_path, config.background_model_path):
            if not Path(p).exists():
                raise FileNotFoundError(f"configured path does not exist: {p}")
        rig, quantizer = load_calibration(config.calibration_path)
        self.rig = {c.id: c for c in rig}
        self.quantizer = quantizer
        self.background, bg_rig, bg_q = load_background_model(config.background_model_path)
        if bg_q != quantizer:
            raise ValueError("background model quantizer does not match calibration")
        for cam in rig:
            dm = self.background.for_camera(cam.id)
            if (dm.width, dm.height) != (cam.intrinsics.width, cam.intrinsics.height):
                raise ValueError(f"background model for camera {cam.id} does not match its intrinsics")
        self.synth_config = SynthesisConfig(
            blend_epsilon_m=config.blend_epsilon_m,
            splat_2x2=config.splat_2x2,
            axis_weight=config.selection_lambda,
        )
        self.stats = PipelineStats()

        self._inbox: queue.Queue = queue.Queue(maxsize=256)
        self._viewpoint_lock = threading.Lock()
        self._latest_viewpoint: CameraModel | None = None
        self._view_state: ViewState | None = None
        self._assembler: FrameAssembler | None = None
        self._last_tick: int | None = None
        self._dead_cameras: set[int] = set()
        self._subscribed: frozenset[int] = frozenset()

        self._capture_controls: dict[int, socket.socket] = {}
        self._viewer_control: socket.socket | None = None
        self._viewer_owner: int | None = None  # id() of the owning control socket
        self._viewer_media: socket.socket | None = None
        self._conn_lock = threading.Lock()
        self._liveness = transport.LivenessTracker(transport.PEER_TIMEOUT_US)

        self._threads: list[threading.Thread] = []
        self._running = threading.Event()
        self._media_listener: socket.socket | None = None
        self._control_listener: socket.socket | None = None
        self.media_port = config.media_port
        self.control_port = config.control_port

    # -- lifecycle ----------------------------------------------------------

    def start(self) -> None:
        self._running.set()
        self._media_listener = self._listen(self.config.media_port)
        self.media_port = self._media_listener.getsockname()[1]
        self._control_listener = self._listen(self.config.control_port)
        self.control_port = self._control_listener.getsockname()[1]
        for fn, name in (
            (self._accept_media, "media-accept"),
            (self._accept_control, "control-accept"),
            (self._pipeline, "pipeline"),
        ):
            t = threading.Thread(target=fn, name=name, daemon=True)
            t.start()
            self._threads.append(t)
        log.info("server up: media :%d control :%d", self.media_port, self.control_port)

    def stop(self) -> None:
        self._running.clear()
        for s in (self._media_listener, self._control_listener):
            if s is not None:
                try:
                    s.close()
                except OSError:
                    pass
        with self._conn_lock:
            conns = list(self._capture_controls.values())
            if self._viewer_control is not None:
                conns.append(self._viewer_control)
            if self._viewer_media is not None:
                conns.append(self._viewer_media)
        for c in conns:
            try:
                c.close()
            except OSError:
                pass
        for t in self._threads:
            t.join(timeout=2.0)

    def _listen(self, port: int) -> socket.socket:
        s = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        s.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        s.bind((self.config.host, port))
        s.listen(16)
        s.settimeout(0.25)
        return s

    # -- accept loops ---------------------------------------------------------

    def _accept_media(self) -> None:
        while self._running.is_set():
            try:
                conn, _ = self._media_listener.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            threading.Thread(target=self._media_conn, args=(conn,), daemon=True).start()

    def _accept_control(self) -> None:
        while self._running.is_set():
            try:
                conn, _ = self._control_listener.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            threading.Thread(target=self._control_conn, args=(conn,), daemon=True).start()

    # -- media connections ----------------------------------------------------

    def _read_hello(self, conn: socket.socket) -> dict | None:
        dec = ControlDecoder()
        conn.settimeout(5.0)
        try:
            while True:
                data = conn.recv(4096)
                if not data:
                    return None
                msgs = dec.feed(data)
                if msgs:
                    return msgs[0]
        except (OSError, transport.TransportError):
            return None

    def _media_conn(self, conn: socket.socket) -> None:
        hello = self._read_hello(conn)
        if hello is None:
            conn.close()
            return
        if hello.get("type") == "viewer_media_hello":
            with self._conn_lock:
                old = self._viewer_media
                self._viewer_media = conn
            if old is not None:
                try:
                    old.close()
                except OSError:
                    pass
            return  # writes happen from the pipeline thread
        if hello.get("type") != "capture_hello":
            conn.close()
            return
        cam_id = int(hello.get("camera_id", -1))
        if cam_id not in self.rig:
            conn.close()
            return
        cam = self.rig[cam_id]
        ingest = _CaptureIngest((cam.intrinsics.width, cam.intrinsics.height))
        decoder = MediaDecoder()
        conn.settimeout(0.5)
        self._mark_alive(cam_id)
        while self._running.is_set():
            try:
                data = conn.recv(1 << 16)
            except socket.timeout:
                continue
            except OSError:
                break
            if not data:
                break
            self._mark_alive(cam_id)
            try:
                for msg in decoder.feed(data):
                    frame = ingest.add(msg)
                    if frame is None:
                        continue
                    # drop unsubscribed cameras at the socket
                    if frame.camera_id not in self._subscribed:
                        continue
                    try:
                        self._inbox.put_nowait(frame)
                    except queue.Full:
                        pass  # pipeline is behind; newest-frames policy drops
            except transport.TransportError as e:
                log.warning("camera %d media stream error: %s", cam_id, e)
                break
        conn.close()

    # -- control connections ----------------------------------------------------

    def _control_conn(self, conn: socket.socket) -> None:
        dec = ControlDecoder()
        conn.settimeout(0.25)
        peer_cam: int | None = None
        is_viewer = False
        last_beat = mono_us()
        while self._running.is_set():
            now = mono_us()
            if now - last_beat >= transport.HEARTBEAT_INTERVAL_US:
                last_beat = now
                try:
                    conn.sendall(encode_control(transport.make_heartbeat(now)))
                except OSError:
                    break
            self._reap_dead_peers(now)
            try:
                data = conn.recv(1 << 16)
            except socket.timeout:
                continue
            except OSError:
                break
            if not data:
                break
            try:
                msgs = dec.feed(data)
            except transport.TransportError as e:
                try:
                    conn.sendall(encode_control(transport.make_error(transport.ERR_BAD_MESSAGE, str(e))))
                except OSError:
                    pass
                break
            for msg in msgs:
                kind = msg.get("type")
                if kind == "capture_hello":
                    peer_cam = int(msg.get("camera_id", -1))
                    with self._conn_lock:
                        self._capture_controls[peer_cam] = conn
                    self._mark_alive(peer_cam)
                    # late joiner (or rejoiner) becomes selectable again
                    self._dead_cameras.discard(peer_cam)
                    if peer_cam in self._subscribed:
                        try:
                            conn.sendall(encode_control(transport.make_subscribe([peer_cam])))
                        except OSError:
                            pass
                elif kind == "viewer_hello":
                    is_viewer = True
                    with self._conn_lock:
                        self._viewer_control = conn
                elif kind == "clock_probe":
                    t2 = mono_us()
                    reply = transport.make_clock_reply(int(msg["t1"]), t2, mono_us())
                    try:
                        conn.sendall(encode_control(reply))
                    except OSError:
                        pass
                elif kind == "heartbeat":
                    if peer_cam is not None:
                        self._mark_alive(peer_cam)
                elif kind == "viewpoint":
                    with self._conn_lock:
                        owner = self._viewer_owner
                        if owner is None:
                            self._viewer_owner = id(conn)
                            owner = id(conn)
                    if owner != id(conn):
                        try:
                            conn.sendall(
                                encode_control(
                                    transport.make_error(transport.ERR_VIEWER_SLOT_TAKEN, "viewer slot taken")
                                )
                            )
                        except OSError:
                            pass
                        continue
                    try:
                        cam = transport.viewpoint_to_camera(msg)
                    except (KeyError, ValueError, transport.TransportError) as e:
                        try:
                            conn.sendall(encode_control(transport.make_error(transport.ERR_BAD_MESSAGE, str(e))))
                        except OSError:
                            pass
                        continue
                    with self._viewpoint_lock:
                        self._latest_viewpoint = cam
                elif kind == "stats_request":
                    body = {"type": "stats", **self.stats.snapshot()}
                    try:
                        conn.sendall(encode_control(body))
                    except OSError:
                        pass
                elif kind == "rig_request":
                    try:
                        conn.sendall(encode_control(self._rig_message()))
                    except OSError:
                        pass
        # connection closed
        with self._conn_lock:
            if peer_cam is not None and self._capture_controls.get(peer_cam) is conn:
                del self._capture_controls[peer_cam]
            if is_viewer and self._viewer_control is conn:
                self._viewer_control = None
            if self._viewer_owner == id(conn):
                self._viewer_owner = None
        if peer_cam is not None:
            self._liveness.remove(peer_cam)
            self._on_stream_lost(peer_cam)
        conn.close()

    def _rig_message(self) -> dict:
        cams = []
        for cam in sorted(self.rig.values(), key=lambda c: c.id):
            k = cam.intrinsics
            cams.append(
                {
                    "id": cam.id,
                    "intrinsics": [k.fx, k.fy, k.cx, k.cy, k.width, k.height],
                    "pose": [float(x) for x in cam.pose.rotation.reshape(-1)]
                    + [float(x) for x in cam.pose.translation],
                    "center": [float(x) for x in cam.pose.center],
                }
            )
        return {"type": "rig", "cameras": cams}

    # -- liveness / stream loss -------------------------------------------------

    def _mark_alive(self, cam_id: int) -> None:
        self._liveness.note(cam_id, mono_us())

    def _reap_dead_peers(self, now_us: int) -> None:
        for cam_id in self._liveness.expired(now_us):
            log.warning("camera %d silent for > %d us: stream lost", cam_id, self._liveness.timeout_us)
            self._on_stream_lost(cam_id)

    def _on_stream_lost(self, cam_id: int) -> None:
        self._dead_cameras.add(cam_id)
        self.stats.bump(stream_losses=1)

    # -- subscriptions ------------------------------------------------------------

    def _apply_subscriptions(self, new_subscribed: frozenset[int]) -> None:
        old = self._subscribed
        if new_subscribed == old:
            return
        added = new_subscribed - old
        removed = old - new_subscribed
        self._subscribed = new_subscribed
        with self._conn_lock:
            controls = dict(self._capture_controls)
        for cam_id in added:
            c = controls.get(cam_id)
            if c is not None:
                try:
                    c.sendall(encode_control(transport.make_subscribe([cam_id])))
                except OSError:
                    pass
        for cam_id in removed:
            c = controls.get(cam_id)
            if c is not None:
                try:
                    c.sendall(encode_control(transport.make_unsubscribe([cam_id])))
                except OSError:
                    pass
        if not new_subscribed:
            self._assembler = None
            return
        anchor = self._last_tick + self.config.period_us if self._last_tick is not None else None
        self._assembler = FrameAssembler(
            new_subscribed,
            period_us=self.config.period_us,
            tolerance_us=self.config.effective_tolerance_us,
            max_staleness=self.config.max_staleness,
            anchor_ts=anchor,
        )

    # -- the pipeline -------------------------------------------------------------

    def _available_rig(self) -> list[CameraModel]:
        """Cameras that can actually deliver: connected and not declared lost."""
        with self._conn_lock:
            connected = set(self._capture_controls)
        return [c for c in self.rig.values() if c.id in connected and c.id not in self._dead_cameras]

    def _emit_to_viewer(self, payload: bytes) -> None:
        with self._conn_lock:
            sink = self._viewer_media
        if sink is None:
            return
        try:
            sink.sendall(payload)
        except OSError:
            with self._conn_lock:
                if self._viewer_media is sink:
                    self._viewer_media = None

    def _send_selection_report(self, vs: ViewState) -> None:
        with self._conn_lock:
            viewer = self._viewer_control
        if viewer is None:
            return
        try:
            viewer.sendall(encode_control(transport.make_selection_report(vs.active, vs.subscribed)))
        except OSError:
            pass

    def _pipeline(self) -> None:
        period_s = self.config.period_us / 1e6
        while self._running.is_set():
            # ingest everything queued, then work
            drained = False
            try:
                frame = self._inbox.get(timeout=period_s / 4)
                drained = True
                self._push_frame(frame)
            except queue.Empty:
                pass
            while True:
                try:
                    self._push_frame(self._inbox.get_nowait())
                    drained = True
                except queue.Empty:
                    break

            with self._viewpoint_lock:
                viewpoint = self._latest_viewpoint
            if viewpoint is None:
                continue  # idle: no synthesized frames until a viewpoint exists

            rig = self._available_rig()
            if len(rig) < 1:
                continue
            vs = select(
                viewpoint,
                rig,
                prev=self._view_state,
                hysteresis=self.config.hysteresis,
                axis_weight=self.config.selection_lambda,
                ts=mono_us(),
            )
            changed = (
                self._view_state is None
                or vs.active != self._view_state.active
                or vs.subscribed != self._view_state.subscribed
            )
            # the virtual pose changes continuously; report only set changes
            self._view_state = vs
            if changed:
                self._send_selection_report(vs)
                self._apply_subscriptions(vs.subscribed)

            if self._assembler is None:
                continue
            t0 = mono_us()
            try:
                sets = self._assembler.ready(now_ts=mono_us())
            except StreamLostError as e:
                self._on_stream_lost(e.camera_id)
                self._apply_subscriptions(frozenset())  # force rebuild on next loop
                self._view_state = None
                continue
            self.stats.record_stage("assembly", mono_us() - t0)
            if not sets:
                continue
            self.stats.bump(sets_assembled=len(sets), sets_dropped=len(sets) - 1)
            fs = sets[-1]  # newest-frames policy: older ready sets are dropped
            for s_ in sets:
                if set(s_.frames) != set(self._assembler.camera_ids):
                    self.stats.bump(incomplete_sets=1)
            self.stats.bump(stale_frames=sum(e.staleness > 0 for e in fs.frames.values()))
            if not all(c in fs.frames for c in vs.active):
                self.stats.bump(sets_skipped=1)
                continue  # selection moved ahead of the assembler; next tick catches up
            self._synthesize_and_emit(fs, vs)

    def _push_frame(self, frame: TimedFrame) -> None:
        asm = self._assembler
        if asm is None or frame.camera_id not in asm.camera_ids:
            return
        try:
            asm.push(frame)
        except ValueError:
            pass  # out-of-order duplicate after a resubscribe; drop

    def _synthesize_and_emit(self, fs, vs: ViewState) -> None:
        distances = [camera_distance(vs.virtual, self.rig[c], self.config.selection_lambda) for c in vs.active]
        stage_us: dict = {}
        t1 = mono_us()
        layered = synthesize(
            fs,
            vs,
            self.rig,
            self.background,
            self.quantizer,
            self.synth_config,
            distances=distances,
            stage_us=stage_us,
        )
        t2 = mono_us()
        payload = encode_output_frame(layered.final, fs.tick_ts, self.config.output_encoding)
        t3 = mono_us()
        for stage in ("warp", "blend", "composite"):
            self.stats.record_stage(stage, stage_us.get(stage, 0))
        self.stats.record_stage("encode", t3 - t2)
        self.stats.bump(frames_synthesized=1)
        self._last_tick = fs.tick_ts
        self.stats.set_latency(mono_us() - fs.tick_ts)
        self._emit_to_viewer(payload)
        log.debug(
            "tick %d synthesized in %.1f ms (encode %.1f ms)",
            fs.tick_ts,
            (t2 - t1) / 1000.0,
            (t3 - t2) / 1000.0,
        )
