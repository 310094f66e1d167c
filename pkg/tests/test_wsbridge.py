import json
import socket
import threading
import time

import pytest

from fvv.config import Config
from fvv.edge_server import EdgeServer
from fvv.geometry import save_calibration
from fvv.scene_sim import arc_pose, build_scene, default_quantizer, default_rig, render
from fvv.synthesis import build_background_model, save_background_model
from fvv.transport import MediaDecoder, camera_to_viewpoint
from fvv.wsbridge import (
    OP_BINARY,
    OP_CLOSE,
    OP_PING,
    OP_PONG,
    OP_TEXT,
    FrameReader,
    WebSocketBridge,
    client_handshake,
    encode_frame,
)

W, H = 64, 36


class WSClient:
    def __init__(self, host, port):
        self.sock = socket.create_connection((host, port), timeout=5)
        client_handshake(self.sock, f"{host}:{port}")
        self.reader = FrameReader()
        self.texts = []
        self.binaries = []
        self.pongs = []
        self._stop = threading.Event()
        threading.Thread(target=self._read, daemon=True).start()

    def _read(self):
        self.sock.settimeout(0.2)
        while not self._stop.is_set():
            try:
                data = self.sock.recv(1 << 16)
            except socket.timeout:
                continue
            except OSError:
                return
            if not data:
                return
            for opcode, payload in self.reader.feed(data):
                if opcode == OP_TEXT:
                    self.texts.append(json.loads(payload))
                elif opcode == OP_BINARY:
                    self.binaries.append(payload)
                elif opcode == OP_PONG:
                    self.pongs.append(payload)

    def send_json(self, msg: dict):
        self.sock.sendall(encode_frame(OP_TEXT, json.dumps(msg).encode(), mask=True))

    def ping(self, payload=b"hi"):
        self.sock.sendall(encode_frame(OP_PING, payload, mask=True))

    def close(self):
        self._stop.set()
        try:
            self.sock.sendall(encode_frame(OP_CLOSE, b"", mask=True))
            self.sock.close()
        except OSError:
            pass


def test_frame_codec_round_trip():
    r = FrameReader()
    payloads = [b"", b"x", b"y" * 200, b"z" * 70000]
    stream = b"".join(encode_frame(OP_BINARY, p, mask=m) for p, m in zip(payloads, (True, False, True, False)))
    got = []
    for i in range(0, len(stream), 1337):
        got.extend(r.feed(stream[i : i + 1337]))
    assert [p for _, p in got] == payloads


@pytest.fixture(scope="module")
def live(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("ws")
    rig = default_rig(W, H)
    q = default_quantizer()
    scene = build_scene("default")
    save_calibration(tmp / "calibration.json", rig, q)
    model = build_background_model(rig, lambda c: render(scene.background_only(), c, 0, q)[1])
    save_background_model(tmp / "bg", model, rig, q)
    server = EdgeServer(
        Config(
            calibration_path=str(tmp / "calibration.json"),
            background_model_path=str(tmp / "bg"),
            period_us=100_000,
            media_port=0,
            control_port=0,
            output_encoding="png",
            width=W,
            height=H,
        )
    )
    server.start()
    bridge = WebSocketBridge("127.0.0.1", 0, server.control_port, server.media_port)
    bridge.start()
    yield server, bridge, rig, q, scene
    bridge.stop()
    server.stop()


def test_bridge_control_and_media(live):
    server, bridge, rig, q, scene = live
    from fvv.capture import run_capture_rig

    nodes = run_capture_rig(
        [c for c in rig if c.id in {3, 4, 5, 6, 7}],
        scene,
        q,
        "127.0.0.1",
        server.media_port,
        server.control_port,
        period_us=100_000,
    )
    client = WSClient("127.0.0.1", bridge.ws_port)
    try:
        client.ping(b"abc")
        deadline = time.time() + 3
        while time.time() < deadline and not client.pongs:
            time.sleep(0.05)
        assert client.pongs == [b"abc"]

        # heartbeats flow as text JSON
        deadline = time.time() + 3
        while time.time() < deadline and not any(m["type"] == "heartbeat" for m in client.texts):
            time.sleep(0.05)
        assert any(m["type"] == "heartbeat" for m in client.texts)

        # rig fetch, then drive the viewpoint and receive PNG frames
        client.send_json({"type": "rig_request"})
        client.send_json(camera_to_viewpoint(arc_pose(rig, 0.5), 1))
        deadline = time.time() + 10
        while time.time() < deadline and len(client.binaries) < 2:
            time.sleep(0.1)
        assert any(m["type"] == "rig" for m in client.texts)
        assert any(m["type"] == "selection_report" for m in client.texts)
        assert len(client.binaries) >= 2
        dec = MediaDecoder()
        msgs = dec.feed(client.binaries[0])
        assert len(msgs) == 1
        assert msgs[0].payload.startswith(b"\x89PNG")
    finally:
        client.close()
        for n in nodes:
            n.stop()
