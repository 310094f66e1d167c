"""Simulated capture node.

Renders its camera's view of the synthetic scene on a capture schedule,
corrects its (deliberately skewed) local clock against the server via
two-way exchanges, and pushes color + foreground depth + mask onto the
media channel while it is subscribed. Unsubscribed nodes stop sending and
stop rendering; the control connection stays up for heartbeats and
re-subscription.
"""

from __future__ import annotations

import logging
import socket
import threading
import time

import numpy as np

from . import transport
from .depth_codec import DepthMap, pack_depth
from .geometry import CameraModel, DepthQuantizer
from .scene_sim import CaptureSimulator, Scene
from .sync import ClockModel, ClockSyncError, estimate_offset
from .transport import ControlDecoder, MediaMessage, encode_control, encode_media

log = logging.getLogger("fvv.capture")

RESYNC_INTERVAL_US = 1_000_000


def mono_us() -> int:
    return time.monotonic_ns() // 1000


class CaptureNode:
    def __init__(
        self,
        camera: CameraModel,
        scene: Scene,
        quantizer: DepthQuantizer,
        host: str,
        media_port: int,
        control_port: int,
        clock: ClockModel | None = None,
        period_us: int = 33_333,
        jitter_us: int = 2_000,
        phase_us: int | None = None,
        max_frames: int | None = None,
        compress_depth: bool = True,
    ):
        self.camera = camera
        self.sim = CaptureSimulator(scene, camera, quantizer)
        self.host = host
        self.media_port = media_port
        self.control_port = control_port
        self.clock = clock or ClockModel(offset_us=0)
        self.period_us = period_us
        self.jitter_us = jitter_us
        rng = np.random.default_rng(camera.id * 7919 + 13)
        self.phase_us = int(rng.integers(0, period_us)) if phase_us is None else phase_us
        self._jitter_rng = rng
        self.max_frames = max_frames
        self.compress_depth = compress_depth

        self._offset_us: float | None = None
        self._subscribed = threading.Event()
        self._running = threading.Event()
        self._synced = threading.Event()
        self._threads: list[threading.Thread] = []
        self._control: socket.socket | None = None
        self._media: socket.socket | None = None
        self.frames_sent = 0

    # -- clocks -----------------------------------------------------------

    def local_now(self) -> int:
        return self.clock.local_time(mono_us())

    def shared_now(self) -> int:
        off = self._offset_us or 0
        return int(self.local_now() + off)

    # -- lifecycle ----------------------------------------------------------

    def start(self) -> None:
        self._running.set()
        self._control = socket.create_connection((self.host, self.control_port), timeout=5.0)
        self._control.sendall(encode_control({"type": "capture_hello", "camera_id": self.camera.id}))
        self._media = socket.create_connection((self.host, self.media_port), timeout=5.0)
        self._media.sendall(encode_control({"type": "capture_hello", "camera_id": self.camera.id}))
        for fn, name in ((self._control_loop, "ctl"), (self._capture_loop, "cap")):
            t = threading.Thread(target=fn, name=f"cam{self.camera.id}-{name}", daemon=True)
            t.start()
            self._threads.append(t)

    def stop(self) -> None:
        self._running.clear()
        for s in (self._control, self._media):
            if s is not None:
                try:
                    s.close()
                except OSError:
                    pass
        for t in self._threads:
            t.join(timeout=2.0)

    def join(self, timeout: float | None = None) -> None:
        for t in self._threads:
            t.join(timeout=timeout)

    # -- control: clock exchange, subscriptions, heartbeats ------------------

    def _send_probe(self) -> int:
        t1 = self.local_now()
        self._control.sendall(encode_control(transport.make_clock_probe(t1)))
        return t1

    def _control_loop(self) -> None:
        dec = ControlDecoder()
        self._control.settimeout(0.2)
        pending_t1 = self._send_probe()
        last_sync = mono_us()
        last_beat = mono_us()
        while self._running.is_set():
            now = mono_us()
            if now - last_beat >= transport.HEARTBEAT_INTERVAL_US:
                last_beat = now
                try:
                    self._control.sendall(encode_control(transport.make_heartbeat(self.shared_now())))
                except OSError:
                    break
            if pending_t1 is None and now - last_sync >= RESYNC_INTERVAL_US:
                try:
                    pending_t1 = self._send_probe()
                except OSError:
                    break
                last_sync = now
            try:
                data = self._control.recv(4096)
            except socket.timeout:
                continue
            except OSError:
                break
            if not data:
                break
            try:
                msgs = dec.feed(data)
            except transport.TransportError:
                break
            for msg in msgs:
                kind = msg.get("type")
                if kind == "clock_reply" and pending_t1 is not None and msg.get("t1") == pending_t1:
                    t4 = self.local_now()
                    try:
                        offset, delay = estimate_offset(msg["t1"], msg["t2"], msg["t3"], t4)
                    except ClockSyncError as e:
                        log.warning("camera %d: discarding exchange: %s", self.camera.id, e)
                    else:
                        self._offset_us = offset
                        self._synced.set()
                        log.debug("camera %d: offset %.0f us, delay %.0f us", self.camera.id, offset, delay)
                    pending_t1 = None
                elif kind == "subscribe" and self.camera.id in msg.get("camera_ids", []):
                    self._subscribed.set()
                elif kind == "unsubscribe" and self.camera.id in msg.get("camera_ids", []):
                    self._subscribed.clear()

    # -- capture ------------------------------------------------------------

    def _capture_loop(self) -> None:
        if not self._synced.wait(timeout=5.0):
            log.error("camera %d: clock never synchronized", self.camera.id)
            return
        period = self.period_us
        k = (self.shared_now() - self.phase_us) // period + 1
        while self._running.is_set():
            if self.max_frames is not None and self.frames_sent >= self.max_frames:
                return
            target = self.phase_us + k * period + int(self._jitter_rng.integers(-self.jitter_us, self.jitter_us + 1))
            k += 1
            wait_us = target - self.shared_now()
            if wait_us > 0:
                time.sleep(wait_us / 1e6)
            elif wait_us < -period:
                continue  # fell behind by more than a frame: drop, do not queue
            if not self._subscribed.is_set():
                continue
            capture_ts = max(self.shared_now(), 0)
            color, depth, mask = self.sim.render(capture_ts)
            fg_only = DepthMap(np.where(mask, depth.codes, 0).astype(np.uint16))
            try:
                self._send_frame(capture_ts, color, fg_only, mask)
            except OSError:
                return
            self.frames_sent += 1

    def _send_frame(self, ts: int, color, fg_depth: DepthMap, mask) -> None:
        w, h = self.camera.intrinsics.width, self.camera.intrinsics.height
        packets = [
            encode_media(
                MediaMessage(transport.MSG_COLOR, self.camera.id, ts, w, h, color.to_bytes())
            ),
            encode_media(
                MediaMessage(
                    transport.MSG_PACKED_DEPTH, self.camera.id, ts, w, h, pack_depth(fg_depth).to_bytes()
                ),
                compress=self.compress_depth,
            ),
            encode_media(
                MediaMessage(
                    transport.MSG_MASK, self.camera.id, ts, w, h, transport.mask_to_payload(mask)
                ),
                compress=self.compress_depth,
            ),
        ]
        self._media.sendall(b"".join(packets))


def run_capture_rig(
    cameras: list[CameraModel],
    scene: Scene,
    quantizer: DepthQuantizer,
    host: str,
    media_port: int,
    control_port: int,
    period_us: int = 33_333,
    max_frames: int | None = None,
    clock_for=None,
) -> list[CaptureNode]:
    """Start one CaptureNode per camera; returns the started nodes."""
    nodes = []
    for cam in cameras:
        clock = clock_for(cam.id) if clock_for else ClockModel(offset_us=0)
        node = CaptureNode(
            cam,
            scene,
            quantizer,
            host,
            media_port,
            control_port,
            clock=clock,
            period_us=period_us,
            max_frames=max_frames,
        )
        node.start()
        nodes.append(node)
    return nodes
