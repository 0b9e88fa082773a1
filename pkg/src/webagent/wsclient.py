"""Minimal WebSocket client: handshake, masked frames, ping/pong, close.

Covers exactly what a command/response debugging protocol needs - text
frames over a single connection with per-receive timeouts.  Client frames
are masked as the protocol requires; fragmented messages are reassembled;
pings are answered transparently.
"""

from __future__ import annotations

import base64
import hashlib
import os
import socket
import ssl
import struct
from urllib.parse import urlparse

_ACCEPT_GUID = b"258EAFA5-E914-47DA-95CA-C5AB0DC85B11"

OP_CONT = 0x0
OP_TEXT = 0x1
OP_BINARY = 0x2
OP_CLOSE = 0x8
OP_PING = 0x9
OP_PONG = 0xA


class WebSocketError(Exception):
    pass


class HandshakeFailed(WebSocketError):
    pass


class ConnectionClosed(WebSocketError):
    pass


class WebSocketClient:
    def __init__(self, url: str, timeout: float = 10.0) -> None:
        parsed = urlparse(url)
        if parsed.scheme not in ("ws", "wss"):
            raise WebSocketError(f"not a websocket url: {url}")
        host = parsed.hostname or "localhost"
        port = parsed.port or (443 if parsed.scheme == "wss" else 80)
        path = parsed.path or "/"
        if parsed.query:
            path += "?" + parsed.query

        self._sock = socket.create_connection((host, port), timeout=timeout)
        if parsed.scheme == "wss":
            self._sock = ssl.create_default_context().wrap_socket(
                self._sock, server_hostname=host
            )
        self._buffer = b""
        self._open = True
        self._handshake(host, port, path)

    def _handshake(self, host: str, port: int, path: str) -> None:
        key = base64.b64encode(os.urandom(16)).decode()
        request = (
            f"GET {path} HTTP/1.1\r\n"
            f"Host: {host}:{port}\r\n"
            "Upgrade: websocket\r\n"
            "Connection: Upgrade\r\n"
            f"Sec-WebSocket-Key: {key}\r\n"
            "Sec-WebSocket-Version: 13\r\n"
            "\r\n"
        )
        self._sock.sendall(request.encode())
        response = b""
        while b"\r\n\r\n" not in response:
            chunk = self._sock.recv(4096)
            if not chunk:
                raise HandshakeFailed("connection closed during handshake")
            response += chunk
        head, _, rest = response.partition(b"\r\n\r\n")
        self._buffer = rest
        status_line = head.split(b"\r\n", 1)[0]
        if b"101" not in status_line:
            raise HandshakeFailed(f"unexpected handshake status: {status_line.decode(errors='replace')}")
        expected = base64.b64encode(hashlib.sha1(key.encode() + _ACCEPT_GUID).digest())
        for line in head.split(b"\r\n")[1:]:
            name, _, value = line.partition(b":")
            if name.strip().lower() == b"sec-websocket-accept":
                if value.strip() != expected:
                    raise HandshakeFailed("Sec-WebSocket-Accept mismatch")
                return
        raise HandshakeFailed("no Sec-WebSocket-Accept header")

    # -- frame plumbing ------------------------------------------------------

    def _read_exact(self, n: int) -> bytes:
        while len(self._buffer) < n:
            try:
                chunk = self._sock.recv(65536)
            except socket.timeout:
                raise TimeoutError("websocket receive timed out")
            if not chunk:
                self._open = False
                raise ConnectionClosed("socket closed mid-frame")
            self._buffer += chunk
        data, self._buffer = self._buffer[:n], self._buffer[n:]
        return data

    def _read_frame(self) -> tuple[int, bool, bytes]:
        b1, b2 = self._read_exact(2)
        fin = bool(b1 & 0x80)
        opcode = b1 & 0x0F
        masked = bool(b2 & 0x80)
        length = b2 & 0x7F
        if length == 126:
            (length,) = struct.unpack(">H", self._read_exact(2))
        elif length == 127:
            (length,) = struct.unpack(">Q", self._read_exact(8))
        mask = self._read_exact(4) if masked else b""
        payload = self._read_exact(length)
        if masked:
            payload = bytes(b ^ mask[i % 4] for i, b in enumerate(payload))
        return opcode, fin, payload

    def _send_frame(self, opcode: int, payload: bytes) -> None:
        mask = os.urandom(4)
        header = bytes([0x80 | opcode])
        n = len(payload)
        if n < 126:
            header += bytes([0x80 | n])
        elif n < 1 << 16:
            header += bytes([0x80 | 126]) + struct.pack(">H", n)
        else:
            header += bytes([0x80 | 127]) + struct.pack(">Q", n)
        masked = bytes(b ^ mask[i % 4] for i, b in enumerate(payload))
        self._sock.sendall(header + mask + masked)

    # -- public surface ------------------------------------------------------

    def send_text(self, text: str) -> None:
        if not self._open:
            raise ConnectionClosed("websocket is closed")
        self._send_frame(OP_TEXT, text.encode("utf-8"))

    def recv_text(self, timeout: float | None = None) -> str:
        """Next complete text message; pings are answered, pongs skipped."""
        if timeout is not None:
            self._sock.settimeout(timeout)
        message = b""
        expecting_continuation = False
        while True:
            opcode, fin, payload = self._read_frame()
            if opcode == OP_PING:
                self._send_frame(OP_PONG, payload)
                continue
            if opcode == OP_PONG:
                continue
            if opcode == OP_CLOSE:
                self._open = False
                try:
                    self._send_frame(OP_CLOSE, b"")
                except Exception:
                    pass
                raise ConnectionClosed("server closed the connection")
            if opcode in (OP_TEXT, OP_BINARY) and not expecting_continuation:
                message = payload
                if fin:
                    return message.decode("utf-8")
                expecting_continuation = True
            elif opcode == OP_CONT and expecting_continuation:
                message += payload
                if fin:
                    return message.decode("utf-8")
            else:
                raise WebSocketError(f"unexpected frame opcode {opcode}")

    def close(self) -> None:
        if self._open:
            self._open = False
            try:
                self._send_frame(OP_CLOSE, struct.pack(">H", 1000))
            except Exception:
                pass
        try:
            self._sock.close()
        except OSError:
            pass
