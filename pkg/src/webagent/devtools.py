"""Live browser control over a DevTools-style debugging protocol.

Commands are JSON objects with a client-assigned ``id``; the connection
matches responses to calls by that id and queues unsolicited event messages
aside.  :class:`LiveSession` exposes the same surface as the simulated
session - navigate, snapshot, dispatch, overlay_cursor - and enforces the
same movement discipline against the element map pinned at the last
observation.
"""

from __future__ import annotations

import json
import time
from collections import deque
from typing import Any

from .harvester import ElementMap, HarvestConfig, PageSnapshot, harvest, round_half_up, snapshot_from_dict
from .protocol import CursorState, InteractionEvent
from .session import (
    DispatchTimeout,
    NavigationTimeout,
    SessionError,
    SessionLost,
    SessionState,
    check_event_preconditions,
)

COMMAND_TIMEOUT_S = 10.0
CURSOR_ANIMATION_S = 0.3
CURSOR_ANIMATION_STEPS = 6

# Injected into the page to report candidate nodes in fixture-snapshot shape.
# Accessible-name approximation: aria-label, then an associated <label>, then
# value/alt/title, then trimmed inner text.
HARVEST_SCRIPT = r"""
(() => {
  const cap = (s) => (s || "").trim().slice(0, 300);
  const implicitRole = (el) => {
    const tag = el.tagName.toLowerCase();
    if (tag === "a" && el.hasAttribute("href")) return "link";
    if (tag === "button") return "button";
    if (tag === "select") return "combobox";
    if (tag === "textarea") return "textbox";
    if (tag === "input") {
      const t = (el.getAttribute("type") || "text").toLowerCase();
      if (["button", "submit", "reset", "image"].includes(t)) return "button";
      if (t === "checkbox") return "checkbox";
      if (t === "radio") return "radio";
      if (t === "range") return "slider";
      if (t === "search") return "searchbox";
      return "textbox";
    }
    return "";
  };
  const accessibleName = (el) => {
    const aria = el.getAttribute("aria-label");
    if (aria) return cap(aria);
    if (el.labels && el.labels.length) return cap(el.labels[0].innerText);
    const labelled = el.getAttribute("aria-labelledby");
    if (labelled) {
      const ref = document.getElementById(labelled.split(/\s+/)[0]);
      if (ref) return cap(ref.innerText);
    }
    return cap(el.value || el.getAttribute("alt") || el.getAttribute("title") || el.innerText);
  };
  const nodes = [];
  for (const el of document.querySelectorAll("*")) {
    const style = window.getComputedStyle(el);
    const rect = el.getBoundingClientRect();
    const box = {
      x: rect.left + window.scrollX,
      y: rect.top + window.scrollY,
      height: rect.height,
      width: rect.width,
    };
    const tabindexAttr = el.getAttribute("tabindex");
    nodes.push({
      tag_name: el.tagName.toLowerCase(),
      accessible_name: accessibleName(el),
      aria_role: el.getAttribute("role") || implicitRole(el),
      id: el.id || "",
      class: el.getAttribute("class") || "",
      text: cap(el.innerText),
      box: box,
      hidden: style.display === "none" || style.visibility === "hidden" ||
              el.getAttribute("aria-hidden") === "true",
      has_click_handler: el.hasAttribute("onclick"),
      tabindex: tabindexAttr === null ? null : parseInt(tabindexAttr, 10),
      editable: el.isContentEditable || ["input", "textarea"].includes(el.tagName.toLowerCase()),
    });
  }
  return JSON.stringify({
    url: location.href,
    viewport: { width: window.innerWidth, height: window.innerHeight },
    scroll: { x: window.scrollX, y: window.scrollY },
    nodes: nodes,
  });
})()
"""

OVERLAY_FUNCTION = """
((x, y, engaged) => {
  let marker = document.getElementById("__agent_cursor__");
  if (!marker) {
    marker = document.createElement("div");
    marker.id = "__agent_cursor__";
    marker.style.cssText =
      "position:fixed;z-index:2147483647;width:14px;height:14px;" +
      "border-radius:50%;background:rgba(220,40,40,0.9);" +
      "border:2px solid white;pointer-events:none;transition:left 0.3s linear, top 0.3s linear;";
    document.body.appendChild(marker);
  }
  marker.style.left = (x - window.scrollX) + "px";
  marker.style.top = (y - window.scrollY) + "px";
  marker.style.display = engaged ? "block" : "none";
  return true;
})"""


class DevToolsCommandError(SessionError):
    def __init__(self, method: str, error: dict) -> None:
        self.method = method
        self.error = error
        super().__init__(f"{method} failed: {error.get('message', error)}")


class DevToolsConnection:
    """Id-correlated command channel over one WebSocket."""

    def __init__(self, ws_url: str, command_timeout: float = COMMAND_TIMEOUT_S) -> None:
        from .wsclient import WebSocketClient

        self.command_timeout = command_timeout
        self._ws = WebSocketClient(ws_url, timeout=command_timeout)
        self._next_id = 0
        self.events: deque[dict] = deque(maxlen=1000)

    def call(self, method: str, params: dict | None = None, timeout: float | None = None) -> dict:
        """Send one command and block for its response, queueing events aside."""
        from .wsclient import ConnectionClosed

        self._next_id += 1
        command_id = self._next_id
        message = {"id": command_id, "method": method, "params": params or {}}
        deadline = time.monotonic() + (timeout if timeout is not None else self.command_timeout)
        try:
            self._ws.send_text(json.dumps(message))
            while True:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    raise DispatchTimeout(f"{method} had no response in time")
                try:
                    raw = self._ws.recv_text(timeout=remaining)
                except TimeoutError:
                    raise DispatchTimeout(f"{method} had no response in time")
                data = json.loads(raw)
                if data.get("id") == command_id:
                    if "error" in data:
                        raise DevToolsCommandError(method, data["error"])
                    return data.get("result", {})
                if "method" in data:
                    self.events.append(data)
                # Responses to other ids (stale) are dropped.
        except ConnectionClosed as exc:
            raise SessionLost(f"browser connection lost during {method}") from exc

    def close(self) -> None:
        self._ws.close()


class LiveSession:
    """A real page behind a debugging-protocol endpoint.

    Mirrors the simulated session's contract: preconditions are checked
    against the harvest pinned at the last navigate()/snapshot(), and the
    red cursor overlay tracks AI control.
    """

    def __init__(
        self,
        ws_url: str,
        harvest_config: HarvestConfig | None = None,
        cursor_carryover: bool = True,
        command_timeout: float = COMMAND_TIMEOUT_S,
    ) -> None:
        self.conn = DevToolsConnection(ws_url, command_timeout=command_timeout)
        self._harvest_config = harvest_config
        self.cursor_carryover = cursor_carryover
        self._state: SessionState | None = None
        self._plan_elements: ElementMap = {}
        self._plan_scrolled: set[int] = set()
        self._plan_cursor_item: int | None = None
        self.conn.call("Page.enable")
        self.conn.call("Runtime.enable")

    @property
    def state(self) -> SessionState:
        if self._state is None:
            raise SessionLost("session has not navigated anywhere yet")
        return self._state

    # -- observation ---------------------------------------------------------

    def _evaluate(self, expression: str, timeout: float | None = None) -> Any:
        result = self.conn.call(
            "Runtime.evaluate",
            {"expression": expression, "returnByValue": True},
            timeout=timeout,
        )
        return result.get("result", {}).get("value")

    def _fetch_snapshot(self) -> PageSnapshot:
        payload = self._evaluate(HARVEST_SCRIPT)
        if payload is None:
            raise SessionLost("harvest script returned nothing")
        return snapshot_from_dict(json.loads(payload))

    def _repin(self, snapshot: PageSnapshot) -> None:
        self._plan_elements = harvest(snapshot, self._harvest_config)
        self._plan_scrolled = set()
        cursor = self._state.cursor if self._state else CursorState()
        self._plan_cursor_item = None
        if self.cursor_carryover and cursor.current_item is not None:
            record = self._plan_elements.get(str(cursor.current_item))
            if record is not None and record.location == cursor.position:
                self._plan_cursor_item = cursor.current_item

    def navigate(self, url: str, load_timeout: float = 30.0) -> SessionState:
        self.conn.call("Page.navigate", {"url": url})
        deadline = time.monotonic() + load_timeout
        while True:
            if self._evaluate("document.readyState") == "complete":
                break
            if time.monotonic() > deadline:
                raise NavigationTimeout(f"{url} did not finish loading")
            time.sleep(0.1)
        snapshot = self._fetch_snapshot()
        self._state = SessionState(snapshot=snapshot, cursor=CursorState(), page_id=snapshot.url)
        self._repin(snapshot)
        return self._state

    def snapshot(self) -> PageSnapshot:
        snapshot = self._fetch_snapshot()
        self.state.snapshot = snapshot
        self._state.page_id = snapshot.url
        self._repin(snapshot)
        return snapshot

    def elements(self) -> ElementMap:
        self.snapshot()
        return dict(self._plan_elements)

    # -- action --------------------------------------------------------------

    def dispatch(self, event: InteractionEvent) -> SessionState:
        state = self.state
        check_event_preconditions(
            event, self._plan_elements, self._plan_scrolled, self._plan_cursor_item
        )
        record = self._plan_elements[str(event.item)]
        if event.kind == "cursor_move":
            self._animate_cursor(record.location)
            state.cursor = CursorState(current_item=event.item, position=record.location)
            self._plan_cursor_item = event.item
        elif event.kind == "scroll":
            viewport = state.snapshot.viewport
            target_center = record.location[1] + record.size[0] / 2
            new_y = max(0, round_half_up(target_center - viewport.height / 2))
            self._evaluate(f"window.scrollTo(window.scrollX, {new_y})")
            state.snapshot.scroll_offset = (state.snapshot.scroll_offset[0], float(new_y))
            self._plan_scrolled.add(event.item)
        elif event.kind == "click":
            self._click_at(state.cursor.position or record.location)
            self._settle_after_possible_navigation()
        elif event.kind == "text_input":
            self._focus_if_needed(record)
            self.conn.call("Input.insertText", {"text": event.text or ""})
        return self.state

    def _animate_cursor(self, target: tuple[int, int]) -> None:
        origin = self.state.cursor.position or target
        for i in range(1, CURSOR_ANIMATION_STEPS + 1):
            t = i / CURSOR_ANIMATION_STEPS
            x = origin[0] + (target[0] - origin[0]) * t
            y = origin[1] + (target[1] - origin[1]) * t
            self.conn.call(
                "Input.dispatchMouseEvent",
                {"type": "mouseMoved", "x": x, "y": y},
            )
            time.sleep(CURSOR_ANIMATION_S / CURSOR_ANIMATION_STEPS)
        self.overlay_cursor(target, engaged=True)

    def _click_at(self, position: tuple[int, int]) -> None:
        x, y = position
        for mouse_type, clicks in (("mousePressed", 1), ("mouseReleased", 1)):
            self.conn.call(
                "Input.dispatchMouseEvent",
                {"type": mouse_type, "x": x, "y": y, "button": "left", "clickCount": clicks},
            )

    def _settle_after_possible_navigation(self) -> None:
        time.sleep(0.2)
        url = self._evaluate("location.href")
        if url and url != self.state.page_id:
            # The click navigated: fresh page, cursor and pin reset.
            snapshot = self._fetch_snapshot()
            self._state = SessionState(
                snapshot=snapshot, cursor=CursorState(), page_id=snapshot.url
            )
            self._repin(snapshot)

    def _focus_if_needed(self, record) -> None:
        active = self._evaluate("document.activeElement && document.activeElement.tagName")
        if not active or str(active).lower() != record.tag_name:
            self._click_at(self.state.cursor.position or record.location)

    def overlay_cursor(self, position: tuple[int, int], engaged: bool = True) -> bool:
        flag = "true" if engaged else "false"
        script = f"{OVERLAY_FUNCTION}({position[0]}, {position[1]}, {flag})"
        return bool(self._evaluate(script))

    def close(self) -> None:
        self.conn.close()
