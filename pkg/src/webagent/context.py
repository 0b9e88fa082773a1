"""Prompt rendering and streaming history retention.

Rendering fills the five slots of the browse prompt template; sanitization
strips both quote characters from the assembled prompt (the template's own
final processing step).  History lives in a :class:`ContextState`: pinned
"sink" segments that survive forever (instructions + task) plus a sliding
window of per-step summaries trimmed to a character budget, newest kept.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .harvester import serialize_elements
from .protocol import AgentInput

DEFAULT_BUDGET = 24_000  # characters, gateway-agnostic

HISTORY_DEFAULT = "No history yet."
QUESTIONS_DEFAULT = "No clarifying questions yet."

TEMPLATE_SLOTS = ("task", "elements", "next_step", "history", "questions")
_SLOT_RE = re.compile(r"\{(task|elements|next_step|history|questions)\}")


class ContextError(Exception):
    pass


class TemplateSlotMissing(ContextError):
    def __init__(self, slot: str) -> None:
        self.slot = slot
        super().__init__(f"prompt template has no {{{slot}}} slot")


class SinkOverflow(ContextError):
    def __init__(self, sink_size: int, budget: int) -> None:
        super().__init__(f"sink segments ({sink_size} chars) exceed budget ({budget})")


class NonMonotonicStep(ContextError):
    def __init__(self, step_index: int) -> None:
        super().__init__(f"step index {step_index} does not advance the window")


@dataclass(frozen=True)
class HistorySegment:
    """One retained unit of context; sinks are pinned, steps may be evicted."""

    kind: str  # "sink" | "step"
    step_index: int  # 0 for sinks
    text: str

    @property
    def size(self) -> int:
        return len(self.text)


@dataclass(frozen=True)
class ContextState:
    """Immutable retention state; operations return new values."""

    sinks: tuple[HistorySegment, ...]
    window: tuple[HistorySegment, ...] = ()
    budget: int = DEFAULT_BUDGET

    @property
    def sink_size(self) -> int:
        return sum(seg.size for seg in self.sinks)

    @property
    def total_size(self) -> int:
        return self.sink_size + sum(seg.size for seg in self.window)


class PromptTemplate:
    """Template text with {task} {elements} {next_step} {history} {questions} slots."""

    def __init__(self, text: str) -> None:
        self.text = text
        found = set(_SLOT_RE.findall(text))
        for slot in TEMPLATE_SLOTS:
            if slot not in found:
                raise TemplateSlotMissing(slot)

    @classmethod
    def load(cls, path: str | Path) -> "PromptTemplate":
        return cls(Path(path).read_text())

    @classmethod
    def default(cls) -> "PromptTemplate":
        text = resources.files("webagent").joinpath("templates/browse_prompt.txt").read_text()
        return cls(text)

    @property
    def instructions(self) -> str:
        """The fixed preamble above the per-step sections (the sink text)."""
        # The section header is a line holding only "Task Description:";
        # the same words also appear mid-sentence inside the preamble.
        match = re.search(r"^[ \t]*Task Description:[ \t]*$", self.text, re.MULTILINE)
        return self.text if match is None else self.text[: match.start()]


def render_prompt(input: AgentInput, template: PromptTemplate | None = None) -> str:
    """Fill the template slots from the input.

    Empty history and questions get their literal default lines; an empty
    next step leaves its line blank.  Trailing whitespace is trimmed per line
    so an empty slot yields a genuinely blank line.
    """
    tpl = template or PromptTemplate.default()
    qa_lines = "\n".join(f"Q: {q} A: {a}" for q, a in input.clarifying_qa)
    values = {
        "task": input.task_description,
        "elements": serialize_elements(input.elements),
        "next_step": input.next_step,
        "history": input.history if input.history else HISTORY_DEFAULT,
        "questions": qa_lines if qa_lines else QUESTIONS_DEFAULT,
    }
    filled = _SLOT_RE.sub(lambda m: values[m.group(1)], tpl.text)
    return "\n".join(line.rstrip() for line in filled.split("\n"))


def sanitize_prompt(s: str) -> str:
    """Strip every double and single quote character; all else is preserved."""
    return s.replace('"', "").replace("'", "")


def evict(state: ContextState) -> ContextState:
    """Trim the window to the largest recent suffix that fits the budget."""
    sink_size = state.sink_size
    if sink_size > state.budget:
        raise SinkOverflow(sink_size, state.budget)
    remaining = state.budget - sink_size
    kept: list[HistorySegment] = []
    used = 0
    for seg in reversed(state.window):
        if used + seg.size > remaining:
            break
        kept.append(seg)
        used += seg.size
    kept.reverse()
    return ContextState(sinks=state.sinks, window=tuple(kept), budget=state.budget)


def append_step(state: ContextState, step_index: int, action: str) -> ContextState:
    """Record one step summary, then trim to budget."""
    if state.window and step_index <= state.window[-1].step_index:
        raise NonMonotonicStep(step_index)
    if step_index < 1:
        raise NonMonotonicStep(step_index)
    segment = HistorySegment(kind="step", step_index=step_index, text=f"Step {step_index}: {action}")
    grown = ContextState(
        sinks=state.sinks, window=state.window + (segment,), budget=state.budget
    )
    return evict(grown)


def render_history(state: ContextState) -> str:
    """Window texts oldest-first; empty window renders empty (default comes later)."""
    return "\n".join(seg.text for seg in state.window)


def new_context(
    instructions: str, task_description: str, budget: int = DEFAULT_BUDGET
) -> ContextState:
    """Start retention for one task: instruction + task sinks, empty window."""
    sinks = (
        HistorySegment(kind="sink", step_index=0, text=instructions),
        HistorySegment(kind="sink", step_index=0, text=task_description),
    )
    state = ContextState(sinks=sinks, window=(), budget=budget)
    if state.sink_size > budget:
        raise SinkOverflow(state.sink_size, budget)
    return state
