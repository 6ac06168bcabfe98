"""Sealed request/response exchange and the length-prefixed TCP transport.

A frame on the byte stream is ``length:u32be | bytes``. Request frames carry
a sealed envelope; response frames carry either a sealed envelope or, when
the server could not open the request, a plain encoded ``ErrorResponse``.
"""

from __future__ import annotations

import logging
import socket
import socketserver
import struct
import threading
import time
from typing import Callable, Optional, Protocol

from . import crypto
from .codec import MAGIC, Record, decode
from .errors import AuthorityUnreachable, VpkiError
from .messages import ErrorResponse, Request

log = logging.getLogger(__name__)

MAX_FRAME = 16 * 1024 * 1024


class Endpoint(Protocol):
    authority_id: str

    def exchange(self, data: bytes, now: float) -> bytes: ...


class LocalEndpoint:
    """Calls an in-process handler directly."""

    def __init__(self, authority_id: str, handler: Callable[[bytes, float], bytes]) -> None:
        self.authority_id = authority_id
        self._handler = handler
        self.online = True

    def exchange(self, data: bytes, now: float) -> bytes:
        if not self.online:
            raise AuthorityUnreachable(self.authority_id)
        return self._handler(data, now)


def seal_request(
    body: Record, recipient: bytes, seed: Optional[bytes] = None
) -> tuple[bytes, crypto.KeyPair]:
    """Return the sealed request bytes and the one-time key for the reply."""
    reply = crypto.generate_keypair(None if seed is None else b"reply\x00" + seed)
    envelope = crypto.seal(Request(body, reply.public_key).encode(), recipient, seed)
    return envelope.to_bytes(), reply


def open_response(data: bytes, reply_key: crypto.KeyPair) -> Record:
    """Open a sealed reply; raise :class:`VpkiError` for error responses."""
    if data[:4] == MAGIC:
        msg = decode(data)
    else:
        msg = decode(crypto.open_envelope(data, reply_key))
    if isinstance(msg, ErrorResponse):
        raise VpkiError(msg.code, msg.message)
    return msg


def call(endpoint: Endpoint, recipient: bytes, body: Record, now: float, seed: Optional[bytes] = None) -> Record:
    data, reply = seal_request(body, recipient, seed)
    return open_response(endpoint.exchange(data, now), reply)


def write_frame(sock: socket.socket, payload: bytes) -> None:
    sock.sendall(struct.pack(">I", len(payload)) + payload)


def _read_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise ConnectionError("connection closed mid-frame")
        buf.extend(chunk)
    return bytes(buf)


def read_frame(sock: socket.socket) -> bytes:
    (n,) = struct.unpack(">I", _read_exact(sock, 4))
    if n > MAX_FRAME:
        raise ConnectionError(f"frame of {n} bytes exceeds limit")
    return _read_exact(sock, n)


class RemoteEndpoint:
    """Client side of a TCP service; keeps one connection open."""

    def __init__(self, authority_id: str, host: str, port: int, timeout: float = 10.0) -> None:
        self.authority_id = authority_id
        self.address = (host, port)
        self.timeout = timeout
        self._sock: Optional[socket.socket] = None
        self._lock = threading.Lock()

    def _connect(self) -> socket.socket:
        if self._sock is None:
            try:
                self._sock = socket.create_connection(self.address, timeout=self.timeout)
            except OSError as exc:
                raise AuthorityUnreachable(self.authority_id) from exc
            self._sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        return self._sock

    def exchange(self, data: bytes, now: float) -> bytes:
        with self._lock:
            sock = self._connect()
            try:
                write_frame(sock, data)
                return read_frame(sock)
            except (OSError, ConnectionError) as exc:
                self.close()
                raise AuthorityUnreachable(self.authority_id) from exc

    def close(self) -> None:
        if self._sock is not None:
            self._sock.close()
            self._sock = None


class _Handler(socketserver.BaseRequestHandler):
    def handle(self) -> None:
        server: FrameServer = self.server  # type: ignore[assignment]
        self.request.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        while True:
            try:
                frame = read_frame(self.request)
            except (ConnectionError, OSError):
                return
            try:
                reply = server.handler(frame, server.clock())
            except Exception:  # keep serving other clients
                log.exception("handler failed")
                reply = ErrorResponse("internal-error").encode()
            try:
                write_frame(self.request, reply)
            except OSError:
                return


class FrameServer(socketserver.ThreadingTCPServer):
    """Threaded TCP server feeding frames to ``handler(data, now)``."""

    daemon_threads = True
    allow_reuse_address = True

    def __init__(
        self,
        handler: Callable[[bytes, float], bytes],
        host: str = "127.0.0.1",
        port: int = 0,
        clock: Callable[[], float] = time.time,
    ) -> None:
        self.handler = handler
        self.clock = clock
        super().__init__((host, port), _Handler)

    @property
    def port(self) -> int:
        return self.server_address[1]

    def start(self) -> "FrameServer":
        threading.Thread(target=self.serve_forever, daemon=True).start()
        return self

    def stop(self) -> None:
        self.shutdown()
        self.server_close()
