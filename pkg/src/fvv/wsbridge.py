"""WebSocket bridge for the browser viewer.

Exposes the transport protocol over a single WebSocket: text frames carry
control messages as plain JSON documents (no length prefix; WebSocket
frames already delimit), binary frames carry one encoded media message
each. Per browser connection the bridge opens ordinary viewer connections
to the server's control and media ports and shuttles messages both ways,
so the single-viewer policy and heartbeat logic live in one place only.

The RFC 6455 subset implemented here is deliberately small: no extensions,
no fragmentation on send, server never masks, 125..2^63 payload sizes.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import os
import socket
import struct
import threading

from . import transport
from .transport import ControlDecoder, MediaDecoder, encode_control, encode_media

log = logging.getLogger("fvv.ws")

_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"

OP_TEXT = 0x1
OP_BINARY = 0x2
OP_CLOSE = 0x8
OP_PING = 0x9
OP_PONG = 0xA


class WebSocketError(RuntimeError):
    pass


def _accept_key(key: str) -> str:
    digest = hashlib.sha1((key + _GUID).encode("ascii")).digest()
    return base64.b64encode(digest).decode("ascii")


def encode_frame(opcode: int, payload: bytes, mask: bool = False) -> bytes:
    head = bytearray([0x80 | opcode])
    n = len(payload)
    mask_bit = 0x80 if mask else 0
    if n < 126:
        head.append(mask_bit | n)
    elif n < (1 << 16):
        head.append(mask_bit | 126)
        head += struct.pack(">H", n)
    else:
        head.append(mask_bit | 127)
        head += struct.pack(">Q", n)
    if mask:
        key = os.urandom(4)
        head += key
        payload = bytes(b ^ key[i % 4] for i, b in enumerate(payload))
    return bytes(head) + payload


class FrameReader:
    """Incremental WebSocket frame parser."""

    def __init__(self):
        self._buf = bytearray()

    def feed(self, chunk: bytes) -> list[tuple[int, bytes]]:
        self._buf.extend(chunk)
        frames = []
        while True:
            parsed = self._try_parse()
            if parsed is None:
                return frames
            frames.append(parsed)

    def _try_parse(self):
        buf = self._buf
        if len(buf) < 2:
            return None
        opcode = buf[0] & 0x0F
        masked = bool(buf[1] & 0x80)
        n = buf[1] & 0x7F
        pos = 2
        if n == 126:
            if len(buf) < 4:
                return None
            n = struct.unpack_from(">H", buf, 2)[0]
            pos = 4
        elif n == 127:
            if len(buf) < 10:
                return None
            n = struct.unpack_from(">Q", buf, 2)[0]
            pos = 10
        key = b""
        if masked:
            if len(buf) < pos + 4:
                return None
            key = bytes(buf[pos : pos + 4])
            pos += 4
        if len(buf) < pos + n:
            return None
        payload = bytes(buf[pos : pos + n])
        if masked:
            payload = bytes(b ^ key[i % 4] for i, b in enumerate(payload))
        del buf[: pos + n]
        return opcode, payload


def server_handshake(conn: socket.socket) -> None:
    """Read the HTTP upgrade request and answer 101."""
    data = bytearray()
    while b"\r\n\r\n" not in data:
        chunk = conn.recv(4096)
        if not chunk:
            raise WebSocketError("connection closed during handshake")
        data.extend(chunk)
        if len(data) > 65536:
            raise WebSocketError("oversized handshake")
    head = bytes(data).split(b"\r\n\r\n", 1)[0].decode("latin1")
    key = None
    for line in head.split("\r\n")[1:]:
        name, _, value = line.partition(":")
        if name.strip().lower() == "sec-websocket-key":
            key = value.strip()
    if key is None:
        raise WebSocketError("missing Sec-WebSocket-Key")
    resp = (
        "HTTP/1.1 101 Switching Protocols\r\n"
        "Upgrade: websocket\r\n"
        "Connection: Upgrade\r\n"
        f"Sec-WebSocket-Accept: {_accept_key(key)}\r\n"
        "\r\n"
    )
    conn.sendall(resp.encode("latin1"))


def client_handshake(conn: socket.socket, host: str, path: str = "/") -> None:
    key = base64.b64encode(os.urandom(16)).decode("ascii")
    req = (
        f"GET {path} HTTP/1.1\r\n"
        f"Host: {host}\r\n"
        "Upgrade: websocket\r\n"
        "Connection: Upgrade\r\n"
        f"Sec-WebSocket-Key: {key}\r\n"
        "Sec-WebSocket-Version: 13\r\n"
        "\r\n"
    )
    conn.sendall(req.encode("latin1"))
    data = bytearray()
    while b"\r\n\r\n" not in data:
        chunk = conn.recv(4096)
        if not chunk:
            raise WebSocketError("connection closed during handshake")
        data.extend(chunk)
    head = bytes(data).split(b"\r\n\r\n", 1)[0].decode("latin1")
    if "101" not in head.split("\r\n")[0]:
        raise WebSocketError(f"handshake rejected: {head.splitlines()[0]}")
    expect = _accept_key(key)
    if f"Sec-WebSocket-Accept: {expect}" not in head and expect not in head:
        raise WebSocketError("bad Sec-WebSocket-Accept")


class WebSocketBridge:
    """Accepts browser WebSocket clients and proxies them onto the transport."""

    def __init__(self, host: str, ws_port: int, control_port: int, media_port: int):
        self.host = host
        self.ws_port = ws_port
        self.control_port = control_port
        self.media_port = media_port
        self._running = threading.Event()
        self._listener: socket.socket | None = None
        self._threads: list[threading.Thread] = []

    def start(self) -> None:
        self._running.set()
        s = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        s.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        s.bind((self.host, self.ws_port))
        s.listen(8)
        s.settimeout(0.25)
        self._listener = s
        self.ws_port = s.getsockname()[1]
        t = threading.Thread(target=self._accept_loop, name="ws-accept", daemon=True)
        t.start()
        self._threads.append(t)
        log.info("websocket bridge on :%d", self.ws_port)

    def stop(self) -> None:
        self._running.clear()
        if self._listener is not None:
            try:
                self._listener.close()
            except OSError:
                pass
        for t in self._threads:
            t.join(timeout=2.0)

    def _accept_loop(self) -> None:
        while self._running.is_set():
            try:
                conn, _ = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            threading.Thread(target=self._client, args=(conn,), daemon=True).start()

    def _client(self, ws: socket.socket) -> None:
        try:
            server_handshake(ws)
        except (WebSocketError, OSError) as e:
            log.warning("handshake failed: %s", e)
            ws.close()
            return
        try:
            control = socket.create_connection((self.host, self.control_port), timeout=5.0)
            control.sendall(encode_control({"type": "viewer_hello"}))
            media = socket.create_connection((self.host, self.media_port), timeout=5.0)
            media.sendall(encode_control({"type": "viewer_media_hello"}))
        except OSError as e:
            log.warning("cannot reach edge server: %s", e)
            ws.close()
            return

        ws_lock = threading.Lock()
        alive = threading.Event()
        alive.set()

        def ws_send(opcode: int, payload: bytes) -> None:
            with ws_lock:
                ws.sendall(encode_frame(opcode, payload))

        def pump_control() -> None:
            dec = ControlDecoder()
            control.settimeout(0.25)
            while alive.is_set():
                try:
                    data = control.recv(1 << 16)
                except socket.timeout:
                    continue
                except OSError:
                    break
                if not data:
                    break
                try:
                    for msg in dec.feed(data):
                        ws_send(OP_TEXT, json.dumps(msg, separators=(",", ":")).encode("utf-8"))
                except (transport.TransportError, OSError):
                    break
            alive.clear()

        def pump_media() -> None:
            dec = MediaDecoder()
            media.settimeout(0.25)
            while alive.is_set():
                try:
                    data = media.recv(1 << 16)
                except socket.timeout:
                    continue
                except OSError:
                    break
                if not data:
                    break
                try:
                    for msg in dec.feed(data):
                        ws_send(OP_BINARY, encode_media(msg))
                except (transport.TransportError, OSError):
                    break
            alive.clear()

        for fn, name in ((pump_control, "ws-ctl"), (pump_media, "ws-media")):
            t = threading.Thread(target=fn, name=name, daemon=True)
            t.start()

        reader = FrameReader()
        ws.settimeout(0.25)
        while alive.is_set():
            try:
                data = ws.recv(1 << 16)
            except socket.timeout:
                continue
            except OSError:
                break
            if not data:
                break
            try:
                frames = reader.feed(data)
            except (WebSocketError, struct.error):
                break
            stop = False
            for opcode, payload in frames:
                if opcode == OP_CLOSE:
                    stop = True
                    break
                if opcode == OP_PING:
                    try:
                        ws_send(OP_PONG, payload)
                    except OSError:
                        stop = True
                    continue
                if opcode != OP_TEXT:
                    continue
                try:
                    msg = json.loads(payload)
                    control.sendall(encode_control(msg))
                except (json.JSONDecodeError, transport.TransportError):
                    ws_send(OP_TEXT, json.dumps(transport.make_error(transport.ERR_BAD_MESSAGE, "bad JSON")).encode())
                except OSError:
                    stop = True
            if stop:
                break
        alive.clear()
        for s in (control, media, ws):
            try:
                s.close()
            except OSError:
                pass
