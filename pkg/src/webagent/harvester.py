"""Harvest interactable page elements into a numbered, order-preserving map.

The harvester turns a :class:`PageSnapshot` (captured live or loaded from a
fixture file) into an :class:`ElementMap`: element ids "0", "1", ... assigned
in document order to every node the classification whitelist accepts.  The
map serializes to a single-line JSON object whose key order and separator
style are fixed, so downstream prompts and golden files are byte-stable.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

TEXT_CAP = 300  # bound per-element text so prompts stay small

DEFAULT_INTERACTABLE_TAGS = frozenset({"a", "button", "input", "textarea", "select"})
DEFAULT_INTERACTABLE_ROLES = frozenset({
    "button",
    "link",
    "textbox",
    "searchbox",
    "checkbox",
    "radio",
    "combobox",
    "menuitem",
    "tab",
    "slider",
    "switch",
})

# Wire key order for a serialized element record. "accesible_name" (one 's')
# is the canonical wire spelling; the in-memory field is spelled correctly.
WIRE_KEYS = (
    "tag_name",
    "accesible_name",
    "aria_role",
    "id",
    "class",
    "text",
    "location",
    "size",
    "visible_in_viewport",
)


class SnapshotError(ValueError):
    """Raised for a malformed PageSnapshot or fixture file."""


@dataclass(frozen=True)
class Rect:
    """Axis-aligned box; x/y is the top-left corner in page coordinates (CSS px)."""

    x: float
    y: float
    height: float
    width: float


@dataclass(frozen=True)
class Viewport:
    width: float
    height: float


@dataclass
class NodeInfo:
    """Raw per-node facts as reported by the DOM (live script or fixture)."""

    tag_name: str
    accessible_name: str = ""
    aria_role: str = ""
    dom_id: str = ""
    css_class: str = ""
    text: str = ""
    box: Rect = field(default_factory=lambda: Rect(0, 0, 0, 0))
    hidden: bool = False
    has_click_handler: bool = False
    tabindex: int | None = None
    editable: bool = False


@dataclass
class PageSnapshot:
    """One observation of a page: geometry, scroll position, and nodes in document order."""

    url: str
    viewport: Viewport
    scroll_offset: tuple[float, float] = (0.0, 0.0)
    nodes: list[NodeInfo] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.viewport.width <= 0 or self.viewport.height <= 0:
            raise SnapshotError(f"viewport must be positive, got {self.viewport}")


@dataclass(frozen=True)
class ElementRecord:
    """One interactable element as shown to the model."""

    tag_name: str
    accessible_name: str
    aria_role: str
    dom_id: str
    css_class: str
    text: str
    location: tuple[int, int]
    size: tuple[int, int]  # (height, width)
    visible_in_viewport: bool

    def to_wire(self) -> dict[str, Any]:
        return {
            "tag_name": self.tag_name,
            "accesible_name": self.accessible_name,
            "aria_role": self.aria_role,
            "id": self.dom_id,
            "class": self.css_class,
            "text": self.text,
            "location": {"x": self.location[0], "y": self.location[1]},
            "size": {"height": self.size[0], "width": self.size[1]},
            "visible_in_viewport": self.visible_in_viewport,
        }

    @classmethod
    def from_wire(cls, obj: dict[str, Any]) -> "ElementRecord":
        missing = [k for k in WIRE_KEYS if k not in obj]
        if missing:
            raise SnapshotError(f"element record missing keys: {missing}")
        return cls(
            tag_name=obj["tag_name"],
            accessible_name=obj["accesible_name"],
            aria_role=obj["aria_role"],
            dom_id=obj["id"],
            css_class=obj["class"],
            text=obj["text"],
            location=(int(obj["location"]["x"]), int(obj["location"]["y"])),
            size=(int(obj["size"]["height"]), int(obj["size"]["width"])),
            visible_in_viewport=bool(obj["visible_in_viewport"]),
        )


ElementMap = dict[str, ElementRecord]


@dataclass(frozen=True)
class HarvestConfig:
    """Classification whitelist; override via file for site-specific tweaks."""

    tags: frozenset[str] = DEFAULT_INTERACTABLE_TAGS
    roles: frozenset[str] = DEFAULT_INTERACTABLE_ROLES
    text_cap: int = TEXT_CAP

    @classmethod
    def from_file(cls, path: str | Path) -> "HarvestConfig":
        data = json.loads(Path(path).read_text())
        return cls(
            tags=frozenset(data.get("tags", DEFAULT_INTERACTABLE_TAGS)),
            roles=frozenset(data.get("roles", DEFAULT_INTERACTABLE_ROLES)),
            text_cap=int(data.get("text_cap", TEXT_CAP)),
        )


def round_half_up(value: float) -> int:
    """Round with ties going up (toward +inf), matching DOM geometry conventions."""
    return int(math.floor(value + 0.5))


def classify_interactable(node: NodeInfo, config: HarvestConfig | None = None) -> bool:
    """Whitelist classification: tag, ARIA role, tab stop, or click handler."""
    cfg = config or HarvestConfig()
    if node.tag_name in cfg.tags:
        return True
    if node.aria_role in cfg.roles:
        return True
    if node.tabindex is not None and node.tabindex >= 0:
        return True
    return node.has_click_handler


def compute_visibility(
    box: Rect,
    hidden: bool,
    viewport: Viewport,
    scroll_offset: tuple[float, float],
) -> bool:
    """True when the box overlaps the scrolled viewport with positive area.

    The viewport rectangle in page coordinates spans
    [scroll_x, scroll_x + width) x [scroll_y, scroll_y + height).
    Degenerate (zero-area) boxes and edge-touching boxes do not count.
    """
    if hidden:
        return False
    sx, sy = scroll_offset
    # Disjointness test: separated along either axis, or degenerate.
    if box.width <= 0 or box.height <= 0:
        return False
    if box.x >= sx + viewport.width or box.x + box.width <= sx:
        return False
    if box.y >= sy + viewport.height or box.y + box.height <= sy:
        return False
    return True


def harvest(snapshot: PageSnapshot, config: HarvestConfig | None = None) -> ElementMap:
    """Number every interactable node in document order, starting from "0".

    An empty snapshot yields an empty map; non-interactable nodes never
    influence the output.
    """
    cfg = config or HarvestConfig()
    elements: ElementMap = {}
    next_id = 0
    for node in snapshot.nodes:
        if not classify_interactable(node, cfg):
            continue
        record = ElementRecord(
            tag_name=node.tag_name,
            accessible_name=node.accessible_name,
            aria_role=node.aria_role,
            dom_id=node.dom_id,
            css_class=node.css_class,
            text=node.text.strip()[: cfg.text_cap],
            location=(round_half_up(node.box.x), round_half_up(node.box.y)),
            size=(round_half_up(node.box.height), round_half_up(node.box.width)),
            visible_in_viewport=compute_visibility(
                node.box, node.hidden, snapshot.viewport, snapshot.scroll_offset
            ),
        )
        elements[str(next_id)] = record
        next_id += 1
    return elements


def serialize_elements(elements: ElementMap) -> str:
    """Single-line JSON with fixed key order; reparses to an equal map."""
    return json.dumps({k: rec.to_wire() for k, rec in elements.items()}, ensure_ascii=False)


def parse_elements(text: str) -> ElementMap:
    """Inverse of :func:`serialize_elements`."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SnapshotError(f"elements JSON does not parse: {exc}") from exc
    if not isinstance(data, dict):
        raise SnapshotError("elements JSON must be an object")
    elements: ElementMap = {}
    for key, obj in data.items():
        if not key.isdigit():
            raise SnapshotError(f"element id {key!r} is not a decimal string")
        elements[key] = ElementRecord.from_wire(obj)
    expected = [str(i) for i in range(len(elements))]
    if list(elements.keys()) != expected:
        raise SnapshotError("element ids must be contiguous from 0 in order")
    return elements


def node_from_dict(obj: dict[str, Any]) -> NodeInfo:
    box = obj.get("box", {})
    if float(box.get("height", 0)) < 0 or float(box.get("width", 0)) < 0:
        raise SnapshotError(f"node box must have non-negative size: {box}")
    tabindex = obj.get("tabindex")
    return NodeInfo(
        tag_name=str(obj.get("tag_name", "")).lower(),
        accessible_name=obj.get("accessible_name", ""),
        aria_role=obj.get("aria_role", ""),
        dom_id=obj.get("id", ""),
        css_class=obj.get("class", ""),
        text=obj.get("text", ""),
        box=Rect(
            x=float(box.get("x", 0)),
            y=float(box.get("y", 0)),
            height=float(box.get("height", 0)),
            width=float(box.get("width", 0)),
        ),
        hidden=bool(obj.get("hidden", False)),
        has_click_handler=bool(obj.get("has_click_handler", False)),
        tabindex=None if tabindex is None else int(tabindex),
        editable=bool(obj.get("editable", False)),
    )


def node_to_dict(node: NodeInfo) -> dict[str, Any]:
    out: dict[str, Any] = {
        "tag_name": node.tag_name,
        "accessible_name": node.accessible_name,
        "aria_role": node.aria_role,
        "id": node.dom_id,
        "class": node.css_class,
        "text": node.text,
        "box": {
            "x": node.box.x,
            "y": node.box.y,
            "height": node.box.height,
            "width": node.box.width,
        },
        "hidden": node.hidden,
        "has_click_handler": node.has_click_handler,
        "editable": node.editable,
    }
    if node.tabindex is not None:
        out["tabindex"] = node.tabindex
    return out


def snapshot_from_dict(data: dict[str, Any]) -> PageSnapshot:
    try:
        viewport = Viewport(
            width=float(data["viewport"]["width"]),
            height=float(data["viewport"]["height"]),
        )
    except (KeyError, TypeError) as exc:
        raise SnapshotError(f"snapshot is missing viewport geometry: {exc}") from exc
    scroll = data.get("scroll", {})
    return PageSnapshot(
        url=data.get("url", ""),
        viewport=viewport,
        scroll_offset=(float(scroll.get("x", 0)), float(scroll.get("y", 0))),
        nodes=[node_from_dict(n) for n in data.get("nodes", [])],
    )


def snapshot_to_dict(snapshot: PageSnapshot) -> dict[str, Any]:
    return {
        "url": snapshot.url,
        "viewport": {"width": snapshot.viewport.width, "height": snapshot.viewport.height},
        "scroll": {"x": snapshot.scroll_offset[0], "y": snapshot.scroll_offset[1]},
        "nodes": [node_to_dict(n) for n in snapshot.nodes],
    }


def load_snapshot(path: str | Path) -> PageSnapshot:
    """Read a PageSnapshot fixture file (see README for the schema)."""
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SnapshotError(f"fixture {path} does not parse: {exc}") from exc
    return snapshot_from_dict(data)
