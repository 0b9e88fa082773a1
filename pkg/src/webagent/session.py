"""The page under control: fixture-driven simulated sessions.

A :class:`FixtureWorld` describes deterministic pages and event-triggered
transitions; :class:`SimulatedSession` executes interaction events against it
with exactly the preconditions a live browser session enforces.  Element
preconditions are checked against the element map pinned at the most recent
``snapshot()``/``navigate()`` observation - the map the model planned
against - plus the scroll/cursor state accumulated since.

The live WebSocket-driven session lives in :mod:`webagent.devtools` and
shares this module's precondition logic.
"""

from __future__ import annotations

import copy
import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from .harvester import (
    ElementMap,
    HarvestConfig,
    PageSnapshot,
    classify_interactable,
    harvest,
    round_half_up,
    snapshot_from_dict,
    snapshot_to_dict,
)
from .protocol import (
    EVENT_KINDS,
    RULE_CURSOR_ON_ITEM,
    RULE_EDITABLE_TARGET,
    RULE_ITEM_EXISTS,
    RULE_KNOWN_KIND,
    RULE_SCROLL_BEFORE_MOVE,
    CursorState,
    InteractionEvent,
    record_editable,
)

log = logging.getLogger(__name__)

ObserverFn = Callable[[str, dict], None]


class SessionError(Exception):
    pass


class UnknownPage(SessionError):
    def __init__(self, page_id: str) -> None:
        super().__init__(f"fixture world has no page {page_id!r}")


class SessionLost(SessionError):
    pass


class NavigationTimeout(SessionError):
    pass


class DispatchTimeout(SessionError):
    pass


class PreconditionFailure(SessionError):
    """An event refused at execution time; mirrors validator rules R1-R5."""

    def __init__(self, rule_id: str, message: str) -> None:
        self.rule_id = rule_id
        super().__init__(f"{rule_id}: {message}")


class WorldError(ValueError):
    """Raised for a malformed fixture world file."""


@dataclass
class SessionState:
    snapshot: PageSnapshot
    cursor: CursorState
    page_id: str


@dataclass(frozen=True)
class NodeEdit:
    """One field change on a node, addressed by its position in snapshot.nodes."""

    node: int
    changes: dict[str, Any]


@dataclass(frozen=True)
class Transition:
    """What a page does when a matching event lands on it."""

    page: str
    on_type: str
    on_item: int
    goto: str | None = None
    mutate: tuple[NodeEdit, ...] = ()


class FixtureWorld:
    """Deterministic stand-in for a live browser: pages plus transitions."""

    def __init__(
        self,
        pages: dict[str, PageSnapshot],
        transitions: list[Transition],
        start: str | None = None,
    ) -> None:
        self.pages = pages
        self.transitions = transitions
        self.start = start or (next(iter(pages)) if pages else None)
        self._check()

    def _check(self) -> None:
        for t in self.transitions:
            if t.page not in self.pages:
                raise WorldError(f"transition references unknown page {t.page!r}")
            if t.goto is not None and t.goto not in self.pages:
                raise WorldError(f"transition goto target {t.goto!r} does not exist")
            if t.on_type not in EVENT_KINDS:
                raise WorldError(f"transition event type {t.on_type!r} is not valid")
            elements = harvest(self.pages[t.page])
            if str(t.on_item) not in elements:
                raise WorldError(
                    f"transition on page {t.page!r} references element {t.on_item}, "
                    f"which does not harvest from that page"
                )
            for edit in t.mutate:
                if not 0 <= edit.node < len(self.pages[t.page].nodes):
                    raise WorldError(f"mutation references node {edit.node} out of range")

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "FixtureWorld":
        pages = {pid: snapshot_from_dict(p) for pid, p in data.get("pages", {}).items()}
        transitions = []
        for t in data.get("transitions", []):
            on = t.get("on", {})
            edits = tuple(
                NodeEdit(node=int(e["node"]), changes=dict(e["set"]))
                for e in t.get("mutate", [])
            )
            transitions.append(
                Transition(
                    page=t["page"],
                    on_type=on.get("type", ""),
                    on_item=int(on.get("item", -1)),
                    goto=t.get("goto"),
                    mutate=edits,
                )
            )
        return cls(pages=pages, transitions=transitions, start=data.get("start"))

    @classmethod
    def load(cls, path: str | Path) -> "FixtureWorld":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise WorldError(f"world file {path} does not parse: {exc}") from exc
        return cls.from_dict(data)

    def digest(self) -> str:
        """Stable content hash used for transcript/world matching."""
        payload = {
            "pages": {pid: snapshot_to_dict(p) for pid, p in sorted(self.pages.items())},
            "transitions": [
                {
                    "page": t.page,
                    "on": {"type": t.on_type, "item": t.on_item},
                    "goto": t.goto,
                    "mutate": [{"node": e.node, "set": e.changes} for e in t.mutate],
                }
                for t in self.transitions
            ],
        }
        blob = json.dumps(payload, sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()


def check_event_preconditions(
    event: InteractionEvent,
    pinned: ElementMap,
    scrolled: set[int],
    cursor_item: int | None,
) -> None:
    """Executor-side guard, applied to real state right before an event runs.

    Raises :class:`PreconditionFailure` with the matching rule id.  Kept
    separate from ``validate_events`` on purpose: the two are compared
    against each other as independent implementations of the discipline.
    """
    if event.kind not in EVENT_KINDS:
        raise PreconditionFailure(RULE_KNOWN_KIND, f"unknown event kind {event.kind!r}")
    record = pinned.get(str(event.item))
    if record is None:
        raise PreconditionFailure(RULE_ITEM_EXISTS, f"item {event.item} is not on the page")
    if event.kind == "cursor_move":
        if not record.visible_in_viewport and event.item not in scrolled:
            raise PreconditionFailure(
                RULE_SCROLL_BEFORE_MOVE,
                f"item {event.item} is outside the viewport; scroll to it first",
            )
    elif event.kind in ("click", "text_input"):
        if cursor_item != event.item:
            raise PreconditionFailure(
                RULE_CURSOR_ON_ITEM, f"cursor is not on item {event.item}; move to it first"
            )
        if event.kind == "text_input" and not record_editable(record):
            raise PreconditionFailure(
                RULE_EDITABLE_TARGET, f"item {event.item} does not take text input"
            )


class SimulatedSession:
    """One deterministic page-under-control; commands are serialized by the
    single logical owner (no internal locking; do not share across threads)."""

    def __init__(
        self,
        world: FixtureWorld,
        harvest_config: HarvestConfig | None = None,
        cursor_carryover: bool = True,
    ) -> None:
        self._world = copy.deepcopy(world)
        self._harvest_config = harvest_config
        self.cursor_carryover = cursor_carryover
        self._state: SessionState | None = None
        self._observers: list[ObserverFn] = []
        # Plan pin: what the model was shown, refreshed on navigate/snapshot.
        self._plan_elements: ElementMap = {}
        self._plan_scrolled: set[int] = set()
        self._plan_cursor_item: int | None = None
        self.cursor_trace: list[tuple[tuple[int, int], bool]] = []

    @property
    def world(self) -> FixtureWorld:
        return self._world

    @property
    def state(self) -> SessionState:
        if self._state is None:
            raise SessionLost("session has not navigated anywhere yet")
        return self._state

    def add_observer(self, fn: ObserverFn) -> None:
        self._observers.append(fn)

    def _emit(self, kind: str, payload: dict) -> None:
        for fn in self._observers:
            fn(kind, payload)

    def _repin(self) -> None:
        snap = self.state.snapshot
        self._plan_elements = harvest(snap, self._harvest_config)
        self._plan_scrolled = set()
        cursor = self.state.cursor
        self._plan_cursor_item = None
        if self.cursor_carryover and cursor.current_item is not None:
            record = self._plan_elements.get(str(cursor.current_item))
            if record is not None and record.location == cursor.position:
                self._plan_cursor_item = cursor.current_item

    def navigate(self, page_id: str) -> SessionState:
        if page_id not in self._world.pages:
            raise UnknownPage(page_id)
        self._state = SessionState(
            snapshot=copy.deepcopy(self._world.pages[page_id]),
            cursor=CursorState(),
            page_id=page_id,
        )
        self._repin()
        self._emit("navigated", {"page": page_id})
        return self._state

    def snapshot(self) -> PageSnapshot:
        """Observe the current page; also re-pins the plan element map."""
        snap = copy.deepcopy(self.state.snapshot)
        self._repin()
        return snap

    def elements(self) -> ElementMap:
        """Harvest of the current page, identical to the pinned plan map."""
        self.snapshot()
        return dict(self._plan_elements)

    def dispatch(self, event: InteractionEvent) -> SessionState:
        """Execute one event, re-checking the movement discipline first."""
        state = self.state
        check_event_preconditions(
            event, self._plan_elements, self._plan_scrolled, self._plan_cursor_item
        )
        record = self._plan_elements[str(event.item)]

        if event.kind == "cursor_move":
            state.cursor = CursorState(current_item=event.item, position=record.location)
            self._plan_cursor_item = event.item
            self._emit("cursor_moved", {"x": record.location[0], "y": record.location[1]})
        elif event.kind == "scroll":
            self._apply_scroll(record)
            self._plan_scrolled.add(event.item)
        elif event.kind == "click":
            self._apply_transition_or_default(event)
        elif event.kind == "text_input":
            self._apply_text(event)
            self._apply_transition_or_default(event)
        return self.state

    def _apply_scroll(self, record) -> None:
        snap = self.state.snapshot
        target_center = record.location[1] + record.size[0] / 2
        new_y = max(0, round_half_up(target_center - snap.viewport.height / 2))
        snap.scroll_offset = (snap.scroll_offset[0], float(new_y))
        self._emit("scrolled", {"x": snap.scroll_offset[0], "y": snap.scroll_offset[1]})

    def _find_node_index(self, item: int) -> int:
        """Map an element id back to its node position in document order."""
        cfg = self._harvest_config
        count = -1
        for i, node in enumerate(self.state.snapshot.nodes):
            if classify_interactable(node, cfg):
                count += 1
                if count == item:
                    return i
        raise PreconditionFailure(RULE_ITEM_EXISTS, f"item {item} vanished from the page")

    def _apply_text(self, event: InteractionEvent) -> None:
        idx = self._find_node_index(event.item)
        self.state.snapshot.nodes[idx].text = event.text or ""
        self._emit("typed", {"item": event.item, "chars": len(event.text or "")})

    def _apply_transition_or_default(self, event: InteractionEvent) -> None:
        for t in self._world.transitions:
            if (
                t.page == self.state.page_id
                and t.on_type == event.kind
                and t.on_item == event.item
            ):
                if t.goto is not None:
                    self.navigate(t.goto)
                elif t.mutate:
                    self.mutate([(e.node, e.changes) for e in t.mutate])
                return
        # No transition: the event lands without page effects.

    def mutate(self, edits: list[tuple[int, dict[str, Any]]]) -> None:
        """Edit nodes of the current page, persistently in the world too.

        Used by mutate transitions and by tests simulating human changes
        during takeover.
        """
        page = self._world.pages[self.state.page_id]
        for node_index, changes in edits:
            for target in (page.nodes[node_index], self.state.snapshot.nodes[node_index]):
                for fieldname, value in changes.items():
                    if not hasattr(target, fieldname):
                        raise WorldError(f"node has no field {fieldname!r}")
                    setattr(target, fieldname, value)
        self._emit("mutated", {"page": self.state.page_id, "nodes": [e[0] for e in edits]})

    def overlay_cursor(self, position: tuple[int, int], engaged: bool = True) -> bool:
        """Record the AI-cursor marker state (the live session renders it)."""
        self.cursor_trace.append((tuple(position), engaged))
        return True
