"""Live-session tests against a loopback stub speaking the debugging protocol.

The stub implements the server side of the WebSocket framing on raw sockets,
independently of the client under test: handshake accept key, unmasked server
frames, masked client frames decoded by hand.
"""

import base64
import hashlib
import json
import socket
import struct
import threading
import time

import pytest

from webagent.devtools import DevToolsConnection, LiveSession
from webagent.harvester import harvest
from webagent.protocol import InteractionEvent
from webagent.session import DispatchTimeout, PreconditionFailure
from webagent.wsclient import ConnectionClosed, WebSocketClient

GUID = b"258EAFA5-E914-47DA-95CA-C5AB0DC85B11"


def encode_frame(opcode, payload, fin=True):
    b1 = (0x80 if fin else 0) | opcode
    n = len(payload)
    if n < 126:
        header = bytes([b1, n])
    elif n < 65536:
        header = bytes([b1, 126]) + struct.pack(">H", n)
    else:
        header = bytes([b1, 127]) + struct.pack(">Q", n)
    return header + payload


class StubWSServer:
    """One-connection WebSocket server with a pluggable message handler."""

    def __init__(self, handler):
        self.handler = handler
        self.sock = socket.socket()
        self.sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self.sock.bind(("127.0.0.1", 0))
        self.sock.listen(1)
        self.port = self.sock.getsockname()[1]
        self.received_opcodes = []
        self.conn = None
        self._thread = threading.Thread(target=self._serve, daemon=True)
        self._thread.start()

    @property
    def url(self):
        return f"ws://127.0.0.1:{self.port}/devtools"

    def _serve(self):
        try:
            conn, _ = self.sock.accept()
        except OSError:
            return
        self.conn = conn
        data = b""
        while b"\r\n\r\n" not in data:
            chunk = conn.recv(4096)
            if not chunk:
                return
            data += chunk
        headers = {}
        for line in data.split(b"\r\n")[1:]:
            if b":" in line:
                k, v = line.split(b":", 1)
                headers[k.strip().lower()] = v.strip()
        accept = base64.b64encode(
            hashlib.sha1(headers[b"sec-websocket-key"] + GUID).digest()
        )
        conn.sendall(
            b"HTTP/1.1 101 Switching Protocols\r\n"
            b"Upgrade: websocket\r\nConnection: Upgrade\r\n"
            b"Sec-WebSocket-Accept: " + accept + b"\r\n\r\n"
        )
        buffer = b""

        def read_exact(n):
            nonlocal buffer
            while len(buffer) < n:
                chunk = conn.recv(65536)
                if not chunk:
                    raise ConnectionError
                buffer += chunk
            out, buffer = buffer[:n], buffer[n:]
            return out

        try:
            while True:
                b1, b2 = read_exact(2)
                opcode = b1 & 0x0F
                masked = bool(b2 & 0x80)
                length = b2 & 0x7F
                if length == 126:
                    (length,) = struct.unpack(">H", read_exact(2))
                elif length == 127:
                    (length,) = struct.unpack(">Q", read_exact(8))
                mask = read_exact(4) if masked else b""
                payload = read_exact(length)
                if masked:
                    payload = bytes(b ^ mask[i % 4] for i, b in enumerate(payload))
                self.received_opcodes.append(opcode)
                if opcode == 0x8:  # close
                    conn.sendall(encode_frame(0x8, b""))
                    return
                if opcode in (0x9, 0xA):  # ping/pong from client
                    continue
                self.handler(self, json.loads(payload.decode()))
        except (ConnectionError, OSError):
            pass

    def send_json(self, obj):
        self.conn.sendall(encode_frame(0x1, json.dumps(obj).encode()))

    def send_raw(self, data):
        self.conn.sendall(data)

    def close(self):
        try:
            self.sock.close()
        except OSError:
            pass


class FakeBrowser:
    """Protocol-level browser double: two pages, click on the search button
    navigates from the first to the second."""

    def __init__(self, world_dict):
        self.pages = {
            "https://www.google.com/": world_dict["pages"]["google-home"],
            "https://www.google.com/search?q=pizza": world_dict["pages"]["pizza-results"],
        }
        self.url = "about:blank"
        self.scroll = [0.0, 0.0]
        self.typed = []
        self.mouse = []

    def page_payload(self):
        page = json.loads(json.dumps(self.pages[self.url]))
        page["url"] = self.url
        page["scroll"] = {"x": self.scroll[0], "y": self.scroll[1]}
        return json.dumps(page)

    def handle(self, server, message):
        method = message.get("method")
        params = message.get("params", {})
        mid = message.get("id")

        def reply(value=None, raw_result=None):
            result = raw_result if raw_result is not None else {"result": {"value": value}}
            server.send_json({"id": mid, "result": result})

        if method == "Stub.noreply":
            return
        if method in ("Page.enable", "Runtime.enable"):
            reply(raw_result={})
            return
        if method == "Page.navigate":
            self.url = params["url"]
            self.scroll = [0.0, 0.0]
            server.send_json({"method": "Page.frameStartedLoading", "params": {"frameId": "f1"}})
            reply(raw_result={"frameId": "f1"})
            return
        if method == "Input.dispatchMouseEvent":
            self.mouse.append((params["type"], params["x"], params["y"]))
            if (
                params["type"] == "mousePressed"
                and self.url == "https://www.google.com/"
                and abs(params["x"] - 459) < 200
                and abs(params["y"] - 453) < 100
            ):
                self.url = "https://www.google.com/search?q=pizza"
                self.scroll = [0.0, 0.0]
            reply(raw_result={})
            return
        if method == "Input.insertText":
            self.typed.append(params["text"])
            reply(raw_result={})
            return
        if method == "Runtime.evaluate":
            expr = params["expression"]
            if "document.readyState" in expr:
                reply("complete")
            elif expr.startswith("window.scrollTo"):
                self.scroll[1] = float(expr.split(",")[1].strip(" )"))
                reply(None)
            elif "location.href" in expr and "tag_name" not in expr:
                reply(self.url)
            elif "__agent_cursor__" in expr:
                reply(True)
            elif "document.activeElement" in expr:
                reply("INPUT")
            elif "tag_name" in expr:
                reply(self.page_payload())
            else:
                reply(None)
            return
        reply(raw_result={})


@pytest.fixture
def browser(world_dict):
    fake = FakeBrowser(world_dict)
    server = StubWSServer(lambda srv, msg: fake.handle(srv, msg))
    yield fake, server
    server.close()


class TestWebSocketClient:
    def test_echo_round_trip(self):
        def handler(server, message):
            server.send_json({"echo": message})

        server = StubWSServer(handler)
        ws = WebSocketClient(server.url, timeout=2.0)
        ws.send_text('{"hello": 1}')
        assert json.loads(ws.recv_text(timeout=2.0)) == {"echo": {"hello": 1}}
        ws.close()
        server.close()

    def test_large_message_uses_extended_length(self):
        big = "x" * 70_000

        def handler(server, message):
            server.send_json({"big": message["big"]})

        server = StubWSServer(handler)
        ws = WebSocketClient(server.url, timeout=5.0)
        ws.send_text(json.dumps({"big": big}))
        assert json.loads(ws.recv_text(timeout=5.0))["big"] == big
        ws.close()
        server.close()

    def test_fragmented_message_reassembled(self):
        def handler(server, message):
            payload = json.dumps({"ok": True}).encode()
            server.send_raw(encode_frame(0x1, payload[:5], fin=False))
            server.send_raw(encode_frame(0x0, payload[5:], fin=True))

        server = StubWSServer(handler)
        ws = WebSocketClient(server.url, timeout=2.0)
        ws.send_text("{}")
        assert json.loads(ws.recv_text(timeout=2.0)) == {"ok": True}
        ws.close()
        server.close()

    def test_ping_answered_with_pong(self):
        def handler(server, message):
            server.send_raw(encode_frame(0x9, b"keepalive"))
            server.send_json({"after": "ping"})

        server = StubWSServer(handler)
        ws = WebSocketClient(server.url, timeout=2.0)
        ws.send_text("{}")
        assert json.loads(ws.recv_text(timeout=2.0)) == {"after": "ping"}
        time.sleep(0.1)
        assert 0xA in server.received_opcodes  # our pong reached the server
        ws.close()
        server.close()

    def test_server_close_raises(self):
        def handler(server, message):
            server.send_raw(encode_frame(0x8, struct.pack(">H", 1000)))

        server = StubWSServer(handler)
        ws = WebSocketClient(server.url, timeout=2.0)
        ws.send_text("{}")
        with pytest.raises(ConnectionClosed):
            ws.recv_text(timeout=2.0)
        server.close()


class TestDevToolsConnection:
    def test_events_queued_while_waiting_for_response(self, browser):
        fake, server = browser
        conn = DevToolsConnection(server.url, command_timeout=2.0)
        result = conn.call("Page.navigate", {"url": "https://www.google.com/"})
        assert result == {"frameId": "f1"}
        assert [e["method"] for e in conn.events] == ["Page.frameStartedLoading"]
        conn.close()

    def test_command_timeout(self, browser):
        fake, server = browser
        conn = DevToolsConnection(server.url, command_timeout=0.4)
        started = time.monotonic()
        with pytest.raises(DispatchTimeout):
            conn.call("Stub.noreply")
        assert time.monotonic() - started < 2.0
        conn.close()


class TestLiveSession:
    def test_navigate_and_harvest(self, browser, golden_elements_line):
        fake, server = browser
        session = LiveSession(server.url, command_timeout=3.0)
        session.navigate("https://www.google.com/")
        elements = session.elements()
        assert len(elements) == 11
        from webagent.harvester import serialize_elements

        assert serialize_elements(elements) == golden_elements_line
        session.close()

    def test_dispatch_flow_with_navigation(self, browser):
        fake, server = browser
        session = LiveSession(server.url, command_timeout=3.0)
        session.navigate("https://www.google.com/")
        session.elements()
        session.dispatch(InteractionEvent("cursor_move", 9))
        assert session.state.cursor.position == (459, 453)
        assert ("mouseMoved", 459.0, 453.0) in fake.mouse
        session.dispatch(InteractionEvent("click", 9))
        assert session.state.page_id == "https://www.google.com/search?q=pizza"
        assert session.state.cursor.current_item is None  # reset by navigation
        session.close()

    def test_preconditions_enforced_live(self, browser):
        fake, server = browser
        session = LiveSession(server.url, command_timeout=3.0)
        session.navigate("https://www.google.com/")
        with pytest.raises(PreconditionFailure) as err:
            session.dispatch(InteractionEvent("click", 9))
        assert err.value.rule_id == "R2"
        session.close()

    def test_scroll_and_text_input(self, browser):
        fake, server = browser
        session = LiveSession(server.url, command_timeout=3.0)
        session.navigate("https://www.google.com/search?q=pizza")
        session.dispatch(InteractionEvent("scroll", 3))
        assert fake.scroll[1] > 0
        session.dispatch(InteractionEvent("cursor_move", 0))
        session.dispatch(InteractionEvent("text_input", 0, "deep dish"))
        assert fake.typed == ["deep dish"]
        session.close()

    def test_overlay_cursor(self, browser):
        fake, server = browser
        session = LiveSession(server.url, command_timeout=3.0)
        session.navigate("https://www.google.com/")
        assert session.overlay_cursor((459, 453), engaged=True) is True
        assert session.overlay_cursor((459, 453), engaged=False) is True
        session.close()
