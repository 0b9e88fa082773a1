"""The model-facing action contract: request/response types, parsing, validation.

The model receives an :class:`AgentInput` (task, numbered elements, next step,
history, answered questions) and must answer with a JSON object carrying
exactly five keys: event_list, next_step, is_complete, questions, action.
:func:`parse_output` digs that object out of arbitrary model text;
:func:`validate_events` checks a plan against the cursor/scroll movement
discipline before anything touches the page.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Any

from .harvester import ElementMap, ElementRecord

log = logging.getLogger(__name__)

EVENT_KINDS = ("click", "cursor_move", "scroll", "text_input")

OUTPUT_KEYS = ("event_list", "next_step", "is_complete", "questions", "action")

# Movement-discipline rule ids (see validate_events).
RULE_ITEM_EXISTS = "R1"
RULE_CURSOR_ON_ITEM = "R2"
RULE_SCROLL_BEFORE_MOVE = "R3"
RULE_EDITABLE_TARGET = "R4"
RULE_KNOWN_KIND = "R5"

# Roles that make an element a non-text widget even on an <input> tag.
_WIDGET_ROLES = frozenset(
    {"button", "link", "checkbox", "radio", "menuitem", "tab", "slider", "switch"}
)
_TEXTY_ROLES = frozenset({"textbox", "searchbox"})


class ProtocolError(Exception):
    """Base for action-protocol failures; orchestrator repair hooks onto this."""


class NoJsonObject(ProtocolError):
    def __init__(self) -> None:
        super().__init__("no balanced JSON object found in model output")


class MissingKey(ProtocolError):
    def __init__(self, key: str) -> None:
        self.key = key
        super().__init__(f"required key missing: {key}")


class WrongType(ProtocolError):
    def __init__(self, key: str, expected: str) -> None:
        self.key = key
        super().__init__(f"key {key!r} must be {expected}")


class UnknownEventKind(ProtocolError):
    def __init__(self, kind: Any) -> None:
        self.kind = kind
        super().__init__(f"unknown event kind: {kind!r}")


class EscapeViolation(ProtocolError):
    def __init__(self) -> None:
        super().__init__("model JSON contains backslash escapes (strict mode)")


class EmptyTask(ProtocolError):
    def __init__(self) -> None:
        super().__init__("task description must be non-empty")


@dataclass(frozen=True)
class InteractionEvent:
    """One page action. ``text`` is present exactly for text_input events."""

    kind: str
    item: int
    text: str | None = None

    def to_wire(self) -> dict[str, Any]:
        obj: dict[str, Any] = {"type": self.kind, "item": self.item}
        if self.kind == "text_input":
            obj["text"] = self.text
        return obj


@dataclass
class AgentInput:
    """Everything the model sees for one step (before template rendering)."""

    task_description: str
    elements: ElementMap
    next_step: str = ""
    history: str = ""
    clarifying_qa: list[tuple[str, str]] = field(default_factory=list)


@dataclass
class AgentOutput:
    """The model's plan for one step; all five keys are always present."""

    event_list: list[InteractionEvent]
    next_step: str
    is_complete: bool
    questions: list[str]
    action: str

    def to_wire(self) -> dict[str, Any]:
        return {
            "event_list": [ev.to_wire() for ev in self.event_list],
            "next_step": self.next_step,
            "is_complete": self.is_complete,
            "questions": list(self.questions),
            "action": self.action,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_wire(), ensure_ascii=False)


@dataclass(frozen=True)
class CursorState:
    """Where the AI cursor sits; position mirrors the element's location."""

    current_item: int | None = None
    position: tuple[int, int] | None = None


@dataclass(frozen=True)
class Violation:
    event_index: int
    rule_id: str
    message: str


@dataclass
class ValidationReport:
    ok: bool
    violations: list[Violation] = field(default_factory=list)


def _event_from_wire(obj: Any, index: int) -> InteractionEvent:
    if not isinstance(obj, dict):
        raise WrongType(f"event_list[{index}]", "an object")
    if "type" not in obj:
        raise MissingKey(f"event_list[{index}].type")
    kind = obj["type"]
    if kind not in EVENT_KINDS:
        raise UnknownEventKind(kind)
    if "item" not in obj:
        raise MissingKey(f"event_list[{index}].item")
    item = obj["item"]
    if isinstance(item, bool) or not isinstance(item, int) or item < 0:
        raise WrongType(f"event_list[{index}].item", "a non-negative integer")
    text: str | None = None
    if kind == "text_input":
        if "text" not in obj:
            raise MissingKey(f"event_list[{index}].text")
        text = obj["text"]
        if not isinstance(text, str) or not text:
            raise WrongType(f"event_list[{index}].text", "a non-empty string")
    return InteractionEvent(kind=kind, item=item, text=text)


def _first_json_object(raw: str) -> tuple[dict[str, Any], str]:
    """Locate and decode the first balanced top-level JSON object in raw text."""
    decoder = json.JSONDecoder()
    pos = raw.find("{")
    while pos != -1:
        try:
            value, end = decoder.raw_decode(raw, pos)
        except json.JSONDecodeError:
            pos = raw.find("{", pos + 1)
            continue
        if isinstance(value, dict):
            return value, raw[pos:end]
        pos = raw.find("{", pos + 1)
    raise NoJsonObject()


def parse_output(raw: str, strict: bool = True) -> AgentOutput:
    """Parse model text into an AgentOutput, or raise a typed ProtocolError.

    The first balanced JSON object is used even when the model wraps it in
    prose.  Strict mode additionally rejects any backslash escape inside the
    object text (a backslash in valid JSON can only start an escape).
    """
    data, json_text = _first_json_object(raw)
    if strict and "\\" in json_text:
        raise EscapeViolation()

    for key in OUTPUT_KEYS:
        if key not in data:
            raise MissingKey(key)

    extras = [k for k in data if k not in OUTPUT_KEYS]
    if extras:
        log.warning("dropping unknown keys from model output: %s", extras)

    if not isinstance(data["event_list"], list):
        raise WrongType("event_list", "an array")
    if not isinstance(data["next_step"], str):
        raise WrongType("next_step", "a string")
    if not isinstance(data["is_complete"], bool):
        raise WrongType("is_complete", "a boolean")
    if not isinstance(data["questions"], list) or any(
        not isinstance(q, str) for q in data["questions"]
    ):
        raise WrongType("questions", "an array of strings")
    if not isinstance(data["action"], str):
        raise WrongType("action", "a string")

    events = [_event_from_wire(obj, i) for i, obj in enumerate(data["event_list"])]
    return AgentOutput(
        event_list=events,
        next_step=data["next_step"],
        is_complete=data["is_complete"],
        questions=list(data["questions"]),
        action=data["action"],
    )


def record_editable(record: ElementRecord) -> bool:
    """Can text be typed here?  Widget roles override an editable tag.

    An <input aria-role=button> is a button, not a text target; a bare
    <input>/<textarea>, or anything exposing a textbox/searchbox role, takes
    text.
    """
    if record.aria_role in _TEXTY_ROLES:
        return True
    if record.tag_name in ("input", "textarea"):
        return record.aria_role not in _WIDGET_ROLES and record.aria_role not in ("option",)
    return False


def _carried_cursor_item(cursor: CursorState | None, elements: ElementMap) -> int | None:
    """A cursor carried across steps counts only if its element is unchanged."""
    if cursor is None or cursor.current_item is None:
        return None
    record = elements.get(str(cursor.current_item))
    if record is None:
        return None
    if cursor.position is not None and tuple(cursor.position) != record.location:
        return None
    return cursor.current_item


def validate_events(
    events: list[InteractionEvent],
    elements: ElementMap,
    cursor: CursorState | None = None,
) -> ValidationReport:
    """Check a plan against the movement discipline, collecting every violation.

    Rules, threaded through simulated state in event order:

    * R1 - the item must exist in the element map shown to the model.
    * R2 - click/text_input requires the cursor already on that item (via an
      earlier cursor_move here, or carried in from ``cursor``).
    * R3 - cursor_move to an off-viewport item requires an earlier scroll to
      that same item; a scroll marks the item visible for the rest of the plan.
    * R4 - text_input targets must take text (see :func:`record_editable`).
    * R5 - the kind must be one of the four event kinds.

    Only events that pass their own checks advance the simulated state, so the
    first reported violation is exactly where the executor would stop.
    """
    violations: list[Violation] = []
    cursor_item = _carried_cursor_item(cursor, elements)
    scrolled: set[int] = set()

    for index, event in enumerate(events):
        if event.kind not in EVENT_KINDS:
            violations.append(
                Violation(index, RULE_KNOWN_KIND, f"unknown event kind {event.kind!r}")
            )
            continue
        record = elements.get(str(event.item))
        if record is None:
            violations.append(
                Violation(index, RULE_ITEM_EXISTS, f"item {event.item} is not on the page")
            )
            continue

        ok = True
        if event.kind == "cursor_move":
            if not record.visible_in_viewport and event.item not in scrolled:
                violations.append(
                    Violation(
                        index,
                        RULE_SCROLL_BEFORE_MOVE,
                        f"item {event.item} is outside the viewport; scroll to it first",
                    )
                )
                ok = False
            if ok:
                cursor_item = event.item
        elif event.kind == "scroll":
            scrolled.add(event.item)
        elif event.kind in ("click", "text_input"):
            if cursor_item != event.item:
                violations.append(
                    Violation(
                        index,
                        RULE_CURSOR_ON_ITEM,
                        f"cursor is not on item {event.item}; move to it first",
                    )
                )
            if event.kind == "text_input" and not record_editable(record):
                violations.append(
                    Violation(
                        index,
                        RULE_EDITABLE_TARGET,
                        f"item {event.item} does not take text input",
                    )
                )

    return ValidationReport(ok=not violations, violations=violations)


def build_input(
    task: str,
    elements: ElementMap,
    next_step: str = "",
    history: str = "",
    qa: list[tuple[str, str]] | None = None,
) -> AgentInput:
    """Assemble the per-step model input; defaults are applied at render time."""
    if not task:
        raise EmptyTask()
    return AgentInput(
        task_description=task,
        elements=elements,
        next_step=next_step,
        history=history,
        clarifying_qa=list(qa or []),
    )
