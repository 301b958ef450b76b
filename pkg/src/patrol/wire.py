"""Socket plumbing shared by both daemons: framed TCP exchanges and capture.

One connection carries one request frame and at most one response frame.
A FrameCapture can be attached to any sender/server to record every frame
for byte accounting and code-distribution audits.
"""

from __future__ import annotations

import socket
import socketserver
import threading
from dataclasses import dataclass

from . import proto

DEFAULT_TIMEOUT = 5.0


@dataclass(frozen=True)
class CapturedFrame:
    direction: str
    peer: str
    msg_type: proto.MsgType
    flags: int
    frame_len: int
    payload: bytes


class FrameCapture:
    """Thread-safe frame recorder."""

    def __init__(self, keep_payloads: bool = True) -> None:
        self._frames: list[CapturedFrame] = []
        self._lock = threading.Lock()
        self.keep_payloads = keep_payloads

    def record(self, direction: str, peer: str, msg_type: proto.MsgType, flags: int, payload: bytes) -> None:
        frame = CapturedFrame(
            direction=direction,
            peer=peer,
            msg_type=msg_type,
            flags=flags,
            frame_len=proto.HEADER_LEN + len(payload),
            payload=payload if self.keep_payloads else b"",
        )
        with self._lock:
            self._frames.append(frame)

    def frames(self, msg_type: proto.MsgType | None = None) -> list[CapturedFrame]:
        with self._lock:
            frames = list(self._frames)
        if msg_type is not None:
            frames = [f for f in frames if f.msg_type == msg_type]
        return frames

    def clear(self) -> None:
        with self._lock:
            self._frames.clear()

    def total_bytes(self, msg_type: proto.MsgType | None = None) -> int:
        return sum(f.frame_len for f in self.frames(msg_type))


def parse_addr(addr: str) -> tuple[str, int]:
    host, _, port = addr.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"bad address {addr!r}, expected host:port")
    return host, int(port)


def format_addr(host: str, port: int) -> str:
    return f"{host}:{port}"


def send_frame(
    addr: str,
    msg_type: proto.MsgType,
    payload: bytes,
    flags: int = 0,
    expect_reply: bool = False,
    timeout: float = DEFAULT_TIMEOUT,
    capture: FrameCapture | None = None,
) -> tuple[proto.MsgType, int, bytes] | None:
    """Send one frame to addr; optionally read one reply frame back."""
    host, port = parse_addr(addr)
    frame = proto.encode_frame(msg_type, flags, payload)
    with socket.create_connection((host, port), timeout=timeout) as sock:
        sock.sendall(frame)
        if capture:
            capture.record("out", addr, msg_type, flags, payload)
        if not expect_reply:
            sock.shutdown(socket.SHUT_WR)
            return None
        reply = proto.read_frame(sock.makefile("rb"))
        if capture:
            capture.record("in", addr, reply[0], reply[1], reply[2])
        return reply


def send_payload(
    addr: str,
    msg_type: proto.MsgType,
    raw: bytes,
    extra_flags: int = 0,
    expect_reply: bool = False,
    timeout: float = DEFAULT_TIMEOUT,
    capture: FrameCapture | None = None,
):
    """Compress-if-smaller and send canonical payload bytes."""
    packed, was_compressed = proto.compress(raw)
    flags = extra_flags | (proto.FLAG_COMPRESSED if was_compressed else 0)
    return send_frame(
        addr, msg_type, packed, flags=flags,
        expect_reply=expect_reply, timeout=timeout, capture=capture,
    )


def unpack_payload(flags: int, payload: bytes) -> bytes:
    if flags & proto.FLAG_COMPRESSED:
        return proto.decompress(payload)
    return payload


class FrameServer:
    """Threaded TCP listener dispatching one frame per connection to a handler.

    handler(msg_type, flags, payload, peer) returns None or a
    (msg_type, flags, payload) reply tuple.
    """

    def __init__(self, host: str, port: int, handler, capture: FrameCapture | None = None) -> None:
        self.handler = handler
        self.capture = capture
        outer = self

        class _Handler(socketserver.StreamRequestHandler):
            timeout = DEFAULT_TIMEOUT

            def handle(self) -> None:
                peer = format_addr(*self.client_address[:2])
                try:
                    msg_type, flags, payload = proto.read_frame(self.rfile)
                except proto.ProtocolError:
                    return
                if outer.capture:
                    outer.capture.record("in", peer, msg_type, flags, payload)
                reply = outer.handler(msg_type, flags, payload, peer)
                if reply is not None:
                    r_type, r_flags, r_payload = reply
                    self.wfile.write(proto.encode_frame(r_type, r_flags, r_payload))
                    if outer.capture:
                        outer.capture.record("out", peer, r_type, r_flags, r_payload)

        class _Server(socketserver.ThreadingTCPServer):
            allow_reuse_address = True
            daemon_threads = True

        self._server = _Server((host, port), _Handler)
        self.host = host
        self.port = self._server.server_address[1]
        self._thread: threading.Thread | None = None
        self._stopped = False

    @property
    def address(self) -> str:
        return format_addr(self.host, self.port)

    def start(self) -> None:
        self._thread = threading.Thread(
            target=lambda: self._server.serve_forever(poll_interval=0.05),
            name=f"frames@{self.port}",
            daemon=True,
        )
        self._thread.start()

    def stop(self) -> None:
        if self._stopped:
            return
        self._stopped = True
        self._server.shutdown()
        self._server.server_close()
        if self._thread:
            self._thread.join(timeout=2.0)
