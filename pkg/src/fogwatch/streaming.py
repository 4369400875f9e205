"""Fog-initiated feature streaming over chunked HTTP.

The edge server publishes each frame's canonical encoding once; every
session streams those same bytes, so concurrent clients receive identical
payloads. Streaming is strictly fog-initiated: a session begins only on a
request that passes access screening, resumes from the current frame (never
replayed), and stops on connection loss.

Endpoints: ``GET /stream/features`` (token-screened chunked text),
``GET /cameras`` (newline-separated ids), ``GET /video`` (placeholder stub).
"""

from __future__ import annotations

import http.client
import logging
import select
import threading
from urllib.parse import parse_qs, urlparse

from .httpd import QuietHandler, start_server
from .security import TOKEN_HEADER
from .tracking import FrameFeatureSet
from .wire import StreamDecoder, encode_frame

log = logging.getLogger(__name__)

VIDEO_PLACEHOLDER = b"live video relay is reserved; this build streams features only\n"


class FrameBus:
    """Single-publisher frame sequence with encode-once snapshots."""

    def __init__(self, camera_id: str):
        self.camera_id = camera_id
        self._items: list[bytes] = []
        self._cond = threading.Condition()
        self.closed = False

    def publish(self, frame: FrameFeatureSet) -> bytes:
        payload = encode_frame(frame)
        with self._cond:
            self._items.append(payload)
            self._cond.notify_all()
        return payload

    def close(self) -> None:
        with self._cond:
            self.closed = True
            self._cond.notify_all()

    @property
    def cursor(self) -> int:
        with self._cond:
            return len(self._items)

    def wait_from(self, cursor: int, timeout: float) -> list[bytes]:
        """Items published at or after cursor; empty list on timeout/close."""
        with self._cond:
            if len(self._items) <= cursor and not self.closed:
                self._cond.wait(timeout)
            return self._items[cursor:]


class FeatureStreamServer:
    """Edge-side HTTP server over one or more camera frame buses.

    ``screen(token, resource, action)`` decides admission (fail-closed by
    default deny); ``feature_bytes_served`` counts every frame byte written
    to any client, which the fail-closed tests pin to zero for unauthorized
    traffic.
    """

    def __init__(self, screen=None):
        self.buses: dict[str, FrameBus] = {}
        self.screen = screen or (lambda token, res, act: (False, "no screen configured"))
        self.feature_bytes_served = 0
        self.sessions_started = 0
        self.sessions_ended = 0
        self._count_lock = threading.Lock()
        self._server = None
        self.port: int | None = None
        self.on_session = None  # callback(camera_id) when a granted session begins

    def add_camera(self, camera_id: str) -> FrameBus:
        bus = FrameBus(camera_id)
        self.buses[camera_id] = bus
        return bus

    def publish(self, frame: FrameFeatureSet) -> None:
        self.buses[frame.camera_id].publish(frame)

    def _count(self, n: int) -> None:
        with self._count_lock:
            self.feature_bytes_served += n

    def start(self, host: str = "127.0.0.1", port: int = 0) -> int:
        self._server, self.port = start_server(_make_handler(self), host, port)
        return self.port

    def stop(self) -> None:
        for bus in self.buses.values():
            bus.close()
        if self._server is not None:
            self._server.shutdown()
            self._server.server_close()


def _client_gone(connection) -> bool:
    """A streaming client never sends; readability means close (or garbage)."""
    try:
        readable, _, _ = select.select([connection], [], [], 0)
        if not readable:
            return False
        return connection.recv(1, 0x40) == b""  # MSG_DONTWAIT
    except (BlockingIOError, InterruptedError):
        return False
    except OSError:
        return True


def _make_handler(server: FeatureStreamServer):
    class Handler(QuietHandler):
        def do_GET(self):
            parsed = urlparse(self.path)
            if parsed.path == "/cameras":
                body = "".join(f"{cid}\n" for cid in sorted(server.buses))
                self.send_text(200, body)
            elif parsed.path == "/video":
                self.send_bytes(200, VIDEO_PLACEHOLDER, "text/plain")
            elif parsed.path == "/stream/features":
                self._stream(parsed)
            else:
                self.send_text(404, "not found\n")

        def _stream(self, parsed):
            query = parse_qs(parsed.query)
            camera_id = query.get("camera", [None])[0]
            if camera_id is None and len(server.buses) == 1:
                camera_id = next(iter(server.buses))
            bus = server.buses.get(camera_id or "")
            if bus is None:
                self.send_text(404, f"unknown camera {camera_id!r}\n")
                return

            token = self.headers.get(TOKEN_HEADER)
            allow, reason = server.screen(token, f"camera/{camera_id}/features", "read")
            if not allow:
                self.send_text(403, f"denied: {reason}\n")
                return

            with server._count_lock:
                server.sessions_started += 1
            if server.on_session is not None:
                server.on_session(camera_id)

            self.send_response(200)
            self.send_header("Content-Type", "text/plain")
            self.send_header("Transfer-Encoding", "chunked")
            self.send_header("Connection", "close")
            self.end_headers()

            cursor = bus.cursor  # resume from the current frame, no replay
            try:
                while not bus.closed:
                    items = bus.wait_from(cursor, timeout=0.25)
                    if not items:
                        if _client_gone(self.connection):
                            break
                        continue
                    for payload in items:
                        self._write_chunk(payload)
                        server._count(len(payload))
                    cursor += len(items)
                self._write_chunk(b"")  # terminal chunk on orderly close
            except (BrokenPipeError, ConnectionResetError):
                pass
            finally:
                with server._count_lock:
                    server.sessions_ended += 1

        def _write_chunk(self, payload: bytes) -> None:
            self.wfile.write(f"{len(payload):x}\r\n".encode() + payload + b"\r\n")
            self.wfile.flush()

    return Handler


class StreamClosed(Exception):
    """Connection ended; re-request to resume from the current frame."""


class AccessDenied(Exception):
    def __init__(self, status: int, reason: str):
        super().__init__(f"denied ({status}): {reason}")
        self.status = status
        self.reason = reason


def fetch_features(host: str, port: int, token: str, camera_id: str | None = None,
                   on_raw=None, timeout: float = 30.0, read_size: int = 4096):
    """Request the feature stream and yield complete frames in order.

    ``on_raw`` receives every received chunk before decoding (the fog node
    points this at its daily log). Connection loss raises StreamClosed after
    the final complete frame; no partial frame is ever yielded.
    """
    conn = http.client.HTTPConnection(host, port, timeout=timeout)
    path = "/stream/features"
    if camera_id is not None:
        path += f"?camera={camera_id}"
    try:
        conn.request("GET", path, headers={TOKEN_HEADER: token})
        resp = conn.getresponse()
        if resp.status != 200:
            body = resp.read().decode(errors="replace").strip()
            raise AccessDenied(resp.status, body)
        decoder = StreamDecoder()
        while True:
            try:
                chunk = resp.read(read_size)
            except (http.client.IncompleteRead, ConnectionResetError, OSError) as exc:
                raise StreamClosed(str(exc))
            if not chunk:
                raise StreamClosed("stream ended")
            if on_raw is not None:
                on_raw(chunk)
            for frame in decoder.feed(chunk):
                yield frame
    finally:
        conn.close()


def list_cameras(host: str, port: int, timeout: float = 10.0) -> list[str]:
    conn = http.client.HTTPConnection(host, port, timeout=timeout)
    try:
        conn.request("GET", "/cameras")
        resp = conn.getresponse()
        return [line for line in resp.read().decode().splitlines() if line]
    finally:
        conn.close()
