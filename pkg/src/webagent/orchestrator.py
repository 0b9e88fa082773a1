"""The plan-act loop, human steering, and replayable transcripts.

One :class:`TaskRunner` owns one task: it harvests the page, renders and
sanitizes the prompt, asks the gateway for a plan, validates and executes it,
and records everything to an append-only JSONL transcript.  Clarifying
questions park the task until a human answers; pause/takeover/abort commands
arrive from other threads and are applied at step boundaries (abort
immediately).  A recorded transcript replays against the same world with the
model outputs as a scripted oracle, and must regenerate itself exactly.
"""

from __future__ import annotations

import hashlib
import json
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable

from .context import (
    DEFAULT_BUDGET,
    ContextState,
    PromptTemplate,
    append_step,
    new_context,
    render_history,
    render_prompt,
    sanitize_prompt,
)
from .gateway import (
    CompletionRequest,
    GatewayError,
    OracleScript,
    ScriptedOracle,
    prompt_digest,
)
from .protocol import (
    AgentOutput,
    CursorState,
    EmptyTask,
    InteractionEvent,
    ProtocolError,
    ValidationReport,
    Violation,
    build_input,
    parse_output,
    validate_events,
)
from .session import PreconditionFailure, SessionError

# Task statuses.
RUNNING = "Running"
AWAITING_ANSWERS = "AwaitingAnswers"
PAUSED = "Paused"
TAKEN_OVER = "TakenOver"
COMPLETE = "Complete"
FAILED = "Failed"
ABORTED = "Aborted"
TERMINAL = frozenset({COMPLETE, FAILED, ABORTED})

# Failure reasons.
GATEWAY_FAILURE = "GatewayFailure"
PARSE_FAILURE = "ParseFailureAfterRetries"
EXECUTION_FAILURE = "ExecutionFailure"
MAX_STEPS = "MaxSteps"

CONTROL_COMMANDS = ("pause", "resume", "abort", "takeover", "release")

REPAIR_LINE = "Your previous output was not valid JSON. Respond with only the JSON object."

EmitFn = Callable[[str, dict], None]


class OrchestratorError(Exception):
    pass


class WrongStatus(OrchestratorError):
    def __init__(self, expected: str, actual: str) -> None:
        super().__init__(f"operation requires status {expected}, task is {actual}")


class AnswerCountMismatch(OrchestratorError):
    def __init__(self, expected: int, got: int) -> None:
        super().__init__(f"{expected} question(s) pending, got {got} answer(s)")


class IllegalTransition(OrchestratorError):
    def __init__(self, command: str, status: str) -> None:
        super().__init__(f"command {command!r} is not legal from status {status}")


class WorldMismatch(OrchestratorError):
    pass


class DivergenceAt(OrchestratorError):
    def __init__(self, step: int, detail: str = "") -> None:
        self.step = step
        super().__init__(f"replay diverged at step {step}" + (f": {detail}" if detail else ""))


@dataclass
class AgentConfig:
    max_steps: int = 25
    gateway_deadline: float = 120.0
    context_budget: int = DEFAULT_BUDGET
    sanitize: bool = True
    strict_parse: bool | None = None  # None: strict for scripted oracles only
    cursor_carryover: bool = True
    parse_retries: int = 2
    max_output_chars: int = 4000
    temperature: float = 0.0

    def to_dict(self) -> dict[str, Any]:
        return {
            "max_steps": self.max_steps,
            "gateway_deadline": self.gateway_deadline,
            "context_budget": self.context_budget,
            "sanitize": self.sanitize,
            "strict_parse": self.strict_parse,
            "cursor_carryover": self.cursor_carryover,
            "parse_retries": self.parse_retries,
            "max_output_chars": self.max_output_chars,
            "temperature": self.temperature,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "AgentConfig":
        return cls(**data)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()


@dataclass
class TaskState:
    task_id: str
    goal: str
    status: str = RUNNING
    step_count: int = 0
    pending_questions: list[str] = field(default_factory=list)
    context: ContextState | None = None
    cursor: CursorState = field(default_factory=CursorState)
    qa: list[tuple[str, str]] = field(default_factory=list)
    next_step: str = ""
    deferred_events: list[InteractionEvent] = field(default_factory=list)
    failure_reason: str | None = None

    def view(self) -> dict[str, Any]:
        """The externally visible slice, as served by the control API."""
        cursor = None
        if self.cursor.current_item is not None and self.cursor.position is not None:
            cursor = {
                "item": self.cursor.current_item,
                "x": self.cursor.position[0],
                "y": self.cursor.position[1],
            }
        return {
            "task_id": self.task_id,
            "goal": self.goal,
            "status": self.status,
            "step_count": self.step_count,
            "pending_questions": list(self.pending_questions),
            "cursor": cursor,
            "failure_reason": self.failure_reason,
        }


@dataclass
class StepRecord:
    step_index: int
    prompt_sha256: str = ""
    raw_outputs: list[str] = field(default_factory=list)
    output: AgentOutput | None = None
    parse_error: str | None = None
    validation: ValidationReport | None = None
    executed: list[dict] = field(default_factory=list)
    repair_attempts: int = 0
    aborted_after: int | None = None  # events dropped after a mid-plan navigation
    started_at: float = 0.0
    finished_at: float = 0.0

    def to_record(self) -> dict[str, Any]:
        validation = None
        if self.validation is not None:
            validation = {
                "ok": self.validation.ok,
                "violations": [
                    [v.event_index, v.rule_id, v.message] for v in self.validation.violations
                ],
            }
        return {
            "kind": "step",
            "step_index": self.step_index,
            "prompt_sha256": self.prompt_sha256,
            "raw_outputs": list(self.raw_outputs),
            "output": self.output.to_wire() if self.output is not None else None,
            "parse_error": self.parse_error,
            "validation": validation,
            "executed": list(self.executed),
            "repair_attempts": self.repair_attempts,
            "aborted_after": self.aborted_after,
            "started_at": self.started_at,
            "finished_at": self.finished_at,
        }


@dataclass
class SessionTranscript:
    header: dict[str, Any]
    steps: list[dict[str, Any]] = field(default_factory=list)
    answers: list[dict[str, Any]] = field(default_factory=list)  # in arrival order
    final_status: str | None = None

    def to_lines(self) -> list[str]:
        records: list[dict[str, Any]] = [self.header]
        by_position: list[dict[str, Any]] = sorted(
            self.steps + self.answers, key=lambda r: (r.get("step_index", 0), r["kind"] == "answers")
        )
        records.extend(by_position)
        if self.final_status is not None:
            records.append({"kind": "final", "status": self.final_status})
        return [json.dumps(r, ensure_ascii=False) for r in records]


def load_transcript(path: str | Path) -> SessionTranscript:
    header: dict[str, Any] | None = None
    steps: list[dict[str, Any]] = []
    answers: list[dict[str, Any]] = []
    final: str | None = None
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        record = json.loads(line)
        kind = record.get("kind")
        if kind == "header":
            header = record
        elif kind == "step":
            steps.append(record)
        elif kind == "answers":
            answers.append(record)
        elif kind == "final":
            final = record.get("status")
    if header is None:
        raise OrchestratorError(f"transcript {path} has no header record")
    return SessionTranscript(header=header, steps=steps, answers=answers, final_status=final)


TIMESTAMP_FIELDS = ("started_at", "finished_at")


def canonical_transcript_lines(transcript: SessionTranscript) -> list[str]:
    """Transcript lines with volatile timestamp fields removed."""
    lines = []
    for line in transcript.to_lines():
        record = json.loads(line)
        for fieldname in TIMESTAMP_FIELDS:
            record.pop(fieldname, None)
        lines.append(json.dumps(record, ensure_ascii=False))
    return lines


class _TranscriptWriter:
    """Append-only JSONL sink; every record is flushed as soon as it exists."""

    def __init__(self, path: str | Path | None) -> None:
        self._handle = open(path, "a", encoding="utf-8") if path is not None else None

    def write(self, record: dict[str, Any]) -> None:
        if self._handle is None:
            return
        self._handle.write(json.dumps(record, ensure_ascii=False) + "\n")
        self._handle.flush()

    def close(self) -> None:
        if self._handle is not None:
            self._handle.close()
            self._handle = None


class TaskRunner:
    """Drives one task over one session; thread-safe for control commands.

    The run loop is the single writer of task progress; ``control`` and
    ``supply_answers`` may be called from other threads and take effect at
    step boundaries (abort also interrupts waits immediately).
    """

    def __init__(
        self,
        goal: str,
        session,
        gateway,
        config: AgentConfig | None = None,
        *,
        start: str | None = None,
        template: PromptTemplate | None = None,
        transcript_path: str | Path | None = None,
        emit: EmitFn | None = None,
        mode: str = "fixture",
        world_digest: str | None = None,
        answer_provider: Callable[[list[str]], list[str]] | None = None,
        task_id: str | None = None,
    ) -> None:
        if not goal:
            raise EmptyTask()
        self.session = session
        self.gateway = gateway
        self.config = config or AgentConfig()
        self.template = template or PromptTemplate.default()
        self.start_target = start
        self.answer_provider = answer_provider
        self._emit_fn = emit or (lambda kind, payload: None)
        self._cond = threading.Condition()
        self._started = False

        if hasattr(session, "cursor_carryover"):
            session.cursor_carryover = self.config.cursor_carryover

        strict = self.config.strict_parse
        self._strict_parse = isinstance(gateway, ScriptedOracle) if strict is None else strict

        self.state = TaskState(
            task_id=task_id or uuid.uuid4().hex[:12],
            goal=goal,
            context=new_context(
                self.template.instructions, goal, budget=self.config.context_budget
            ),
        )
        header = {
            "kind": "header",
            "goal": goal,
            "start": start,
            "mode": mode,
            "world_sha256": world_digest,
            "config": self.config.to_dict(),
            "config_sha256": self.config.digest(),
        }
        self.transcript = SessionTranscript(header=header)
        self._writer = _TranscriptWriter(transcript_path)

    # -- events ------------------------------------------------------------

    def _emit(self, kind: str, payload: dict) -> None:
        self._emit_fn(kind, payload)

    def _set_status(self, status: str, reason: str | None = None) -> None:
        with self._cond:
            if self.state.status in TERMINAL:
                return
            self.state.status = status
            if reason is not None:
                self.state.failure_reason = reason
            self._cond.notify_all()
        self._emit("status_changed", {"status": status, "reason": reason})
        if status == COMPLETE:
            self._emit("task_complete", {"steps": self.state.step_count})

    # -- lifecycle ---------------------------------------------------------

    def start(self) -> None:
        """Navigate to the start target and persist the header."""
        if self._started:
            return
        self._started = True
        self._writer.write(self.transcript.header)
        if self.start_target is not None:
            self.session.navigate(self.start_target)

    def step(self) -> StepRecord:
        """Run one loop iteration; requires status Running."""
        with self._cond:
            if self.state.status != RUNNING:
                raise WrongStatus(RUNNING, self.state.status)
            self.state.step_count += 1
            step_index = self.state.step_count
        self.start()

        record = StepRecord(step_index=step_index, started_at=time.time())
        self._emit("step_started", {"step": step_index})

        try:
            self._run_step(record)
        except _StepFailed as failure:
            record.finished_at = time.time()
            self._persist(record)
            self._set_status(FAILED, failure.reason)
            return record
        record.finished_at = time.time()
        self._persist(record)
        return record

    def _persist(self, record: StepRecord) -> None:
        data = record.to_record()
        self.transcript.steps.append(data)
        self._writer.write(data)

    def _run_step(self, record: StepRecord) -> None:
        state = self.state

        # Held-over plan from a question step: runs now that answers arrived.
        if state.deferred_events:
            self._dispatch_deferred(record)

        elements = self.session.elements()
        self._emit("elements_harvested", {"count": len(elements)})

        agent_input = build_input(
            state.goal,
            elements,
            next_step=state.next_step,
            history=render_history(state.context),
            qa=state.qa,
        )
        prompt = render_prompt(agent_input, self.template)
        if self.config.sanitize:
            prompt = sanitize_prompt(prompt)
        record.prompt_sha256 = prompt_digest(prompt)

        output = self._complete_and_parse(prompt, record)

        carried = state.cursor if self.config.cursor_carryover else None
        report = validate_events(output.event_list, elements, cursor=carried)
        record.validation = report
        self._emit(
            "validation_result",
            {
                "ok": report.ok,
                "violations": [[v.event_index, v.rule_id, v.message] for v in report.violations],
            },
        )

        if output.questions:
            # Question gate: nothing is dispatched until a human answers.
            with self._cond:
                state.pending_questions = list(output.questions)
                state.deferred_events = list(output.event_list)
            state.context = append_step(state.context, record.step_index, output.action)
            state.next_step = output.next_step
            self._emit("question_pending", {"questions": list(output.questions)})
            self._set_status(AWAITING_ANSWERS)
            return

        self._dispatch_events(output.event_list, record)
        state.context = append_step(state.context, record.step_index, output.action)
        state.next_step = output.next_step
        if output.is_complete:
            self._set_status(COMPLETE)

    def _complete_and_parse(self, prompt: str, record: StepRecord) -> AgentOutput:
        request_prompt = prompt
        last_error: str | None = None
        for attempt in range(self.config.parse_retries + 1):
            request = CompletionRequest(
                prompt=request_prompt,
                max_output_chars=self.config.max_output_chars,
                temperature=self.config.temperature,
                deadline=self.config.gateway_deadline,
            )
            try:
                raw = self.gateway.complete(request)
            except GatewayError as exc:
                record.parse_error = f"{type(exc).__name__}: {exc}"
                raise _StepFailed(GATEWAY_FAILURE) from exc
            record.raw_outputs.append(raw)
            self._emit("llm_response", {"chars": len(raw), "attempt": attempt})
            try:
                output = parse_output(raw, strict=self._strict_parse)
                record.output = output
                record.parse_error = None
                record.repair_attempts = attempt
                return output
            except ProtocolError as exc:
                last_error = f"{type(exc).__name__}: {exc}"
                record.parse_error = last_error
                request_prompt = prompt + "\n" + REPAIR_LINE
        record.repair_attempts = self.config.parse_retries
        raise _StepFailed(PARSE_FAILURE)

    def _dispatch_events(
        self, events: list[InteractionEvent], record: StepRecord, deferred: bool = False
    ) -> None:
        state = self.state
        page_before = self.session.state.page_id
        for index, event in enumerate(events):
            entry: dict[str, Any] = {"event": event.to_wire(), "ok": True}
            if deferred:
                entry["deferred"] = True
            try:
                session_state = self.session.dispatch(event)
            except (PreconditionFailure, SessionError) as exc:
                entry["ok"] = False
                entry["error"] = str(exc)
                record.executed.append(entry)
                raise _StepFailed(EXECUTION_FAILURE) from exc
            record.executed.append(entry)
            self._emit("event_dispatched", {"event": event.to_wire(), "deferred": deferred})
            state.cursor = session_state.cursor
            if event.kind == "cursor_move" and session_state.cursor.position is not None:
                x, y = session_state.cursor.position
                self._emit("cursor_moved", {"x": x, "y": y})
                self.session.overlay_cursor((x, y), engaged=True)
            if session_state.page_id != page_before:
                # A click navigated mid-plan: drop the rest and re-harvest next step.
                record.aborted_after = index
                state.cursor = session_state.cursor
                break

    def _dispatch_deferred(self, record: StepRecord) -> None:
        """Re-validate and run events that arrived alongside questions."""
        state = self.state
        events = list(state.deferred_events)
        state.deferred_events = []
        elements = self.session.elements()
        carried = state.cursor if self.config.cursor_carryover else None
        report = validate_events(events, elements, cursor=carried)
        if not report.ok:
            # Page changed while parked; drop the stale plan, let the model re-plan.
            record.executed.append(
                {
                    "deferred_dropped": [e.to_wire() for e in events],
                    "violations": [
                        [v.event_index, v.rule_id, v.message] for v in report.violations
                    ],
                }
            )
            return
        self._dispatch_events(events, record, deferred=True)

    # -- human steering ----------------------------------------------------

    def supply_answers(self, answers: list[str]) -> TaskState:
        with self._cond:
            if self.state.status != AWAITING_ANSWERS:
                raise WrongStatus(AWAITING_ANSWERS, self.state.status)
            if len(answers) != len(self.state.pending_questions):
                raise AnswerCountMismatch(len(self.state.pending_questions), len(answers))
            pairs = list(zip(self.state.pending_questions, answers))
            self.state.qa.extend(pairs)
            self.state.pending_questions = []
        answer_record = {
            "kind": "answers",
            "step_index": self.state.step_count,
            "answers": list(answers),
        }
        self.transcript.answers.append(answer_record)
        self._writer.write(answer_record)
        self._set_status(RUNNING)
        return self.state

    def control(self, command: str) -> TaskState:
        if command not in CONTROL_COMMANDS:
            raise IllegalTransition(command, self.state.status)
        with self._cond:  # reentrant: _set_status shares this condition
            status = self.state.status
            resumed = AWAITING_ANSWERS if self.state.pending_questions else RUNNING
            return self._apply_control(command, status, resumed)

    def _apply_control(self, command: str, status: str, resumed: str) -> TaskState:
        if command == "abort":
            if status in TERMINAL:
                raise IllegalTransition(command, status)
            self._set_status(ABORTED)
        elif command == "pause":
            if status != RUNNING:
                raise IllegalTransition(command, status)
            self._set_status(PAUSED)
        elif command == "resume":
            if status not in (PAUSED, TAKEN_OVER):
                raise IllegalTransition(command, status)
            if status == TAKEN_OVER:
                self._show_cursor()
            self._set_status(resumed)
        elif command == "takeover":
            if status not in (RUNNING, PAUSED, AWAITING_ANSWERS):
                raise IllegalTransition(command, status)
            self.session.overlay_cursor(self.state.cursor.position or (0, 0), engaged=False)
            self._set_status(TAKEN_OVER)
        elif command == "release":
            if status != TAKEN_OVER:
                raise IllegalTransition(command, status)
            self._show_cursor()
            self._set_status(resumed)
        return self.state

    def _show_cursor(self) -> None:
        self.session.overlay_cursor(self.state.cursor.position or (0, 0), engaged=True)

    # -- the loop ----------------------------------------------------------

    def run(self) -> SessionTranscript:
        """Step until terminal; park while paused/awaiting/taken over."""
        self.start()
        while True:
            with self._cond:
                status = self.state.status
                if status in TERMINAL:
                    break
                parked = status in (PAUSED, TAKEN_OVER) or (
                    status == AWAITING_ANSWERS and self.answer_provider is None
                )
                if parked:
                    self._cond.wait(timeout=0.05)
                    continue

            if self.state.status == RUNNING:
                if self.state.step_count >= self.config.max_steps:
                    self._set_status(FAILED, MAX_STEPS)
                    break
                self.step()
            elif self.state.status == AWAITING_ANSWERS and self.answer_provider is not None:
                answers = self.answer_provider(list(self.state.pending_questions))
                self.supply_answers(answers)

        self.transcript.final_status = self.state.status
        self._writer.write({"kind": "final", "status": self.state.status})
        self._writer.close()
        return self.transcript


class _StepFailed(Exception):
    def __init__(self, reason: str) -> None:
        self.reason = reason
        super().__init__(reason)


def run_task(
    goal: str,
    start: str | None,
    session,
    gateway,
    config: AgentConfig | None = None,
    **kwargs,
) -> SessionTranscript:
    """Convenience wrapper: build a runner and drive it to a terminal status."""
    runner = TaskRunner(goal, session, gateway, config, start=start, **kwargs)
    return runner.run()


def replay(
    transcript: SessionTranscript,
    world,
    config: AgentConfig | None = None,
) -> SessionTranscript:
    """Re-run a recorded session and insist it regenerates itself.

    The recorded raw model outputs become a scripted oracle; recorded answers
    are re-supplied in order.  Prompt digests, parsed outputs, validations,
    and executed events must all match, step by step.
    """
    from .session import SimulatedSession

    header = transcript.header
    recorded_world = header.get("world_sha256")
    if recorded_world is not None and recorded_world != world.digest():
        raise WorldMismatch(
            f"transcript was recorded against world {recorded_world[:12]}..., "
            f"got {world.digest()[:12]}..."
        )
    cfg = config or AgentConfig.from_dict(header["config"])
    if cfg.digest() != header.get("config_sha256"):
        raise WorldMismatch("config digest does not match the transcript header")

    responses: list[str] = []
    for step_record in transcript.steps:
        responses.extend(step_record["raw_outputs"])
    oracle = ScriptedOracle(OracleScript.from_responses(responses))

    answer_queue = [list(rec["answers"]) for rec in transcript.answers]

    def provide_answers(questions: list[str]) -> list[str]:
        if not answer_queue:
            raise DivergenceAt(
                len(transcript.steps), "replay asked for answers the transcript does not hold"
            )
        return answer_queue.pop(0)

    session = SimulatedSession(world, cursor_carryover=cfg.cursor_carryover)
    runner = TaskRunner(
        header["goal"],
        session,
        oracle,
        cfg,
        start=header.get("start"),
        mode=header.get("mode", "fixture"),
        world_digest=world.digest(),
        answer_provider=provide_answers,
    )
    regenerated = runner.run()

    compare_fields = ("prompt_sha256", "raw_outputs", "output", "parse_error", "validation",
                      "executed", "repair_attempts", "aborted_after")
    for original, redone in zip(transcript.steps, regenerated.steps):
        for fieldname in compare_fields:
            if original.get(fieldname) != redone.get(fieldname):
                raise DivergenceAt(original["step_index"], fieldname)
    if len(regenerated.steps) != len(transcript.steps):
        raise DivergenceAt(min(len(regenerated.steps), len(transcript.steps)) + 1, "step count")
    if transcript.final_status is not None and regenerated.final_status != transcript.final_status:
        raise DivergenceAt(len(transcript.steps), "final status")
    return regenerated
