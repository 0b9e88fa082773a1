"""HTTP control plane: create tasks, observe the event stream, steer.

One worker thread drives each task; this API is the only write path for
outside callers (the copilot UI included).  Events are fanned out per task
over server-sent events with a monotonically increasing ``seq`` - the buffer
is bounded, so a slow consumer may see a gap, which it can detect from the
numbering.  Binds to loopback by default; there is no authentication layer.
"""

from __future__ import annotations

import json
import logging
import threading
from collections import deque
from pathlib import Path
from typing import Iterator

from fastapi import FastAPI, HTTPException
from fastapi.responses import PlainTextResponse, StreamingResponse
from pydantic import BaseModel, Field

from .gateway import GatewayError, HttpCompletionGateway, ScriptedOracle
from .orchestrator import (
    TERMINAL,
    AgentConfig,
    AnswerCountMismatch,
    IllegalTransition,
    TaskRunner,
    WrongStatus,
)
from .session import FixtureWorld, SimulatedSession, WorldError

log = logging.getLogger(__name__)

EVENT_BUFFER = 1000
STREAM_POLL_S = 0.05


class EventBus:
    """Per-task broadcast buffer; bounded, ordered, gap-detectable."""

    def __init__(self, maxlen: int = EVENT_BUFFER) -> None:
        self._events: deque[dict] = deque(maxlen=maxlen)
        self._cond = threading.Condition()
        self._seq = 0
        self._closed = False

    def publish(self, kind: str, payload: dict) -> None:
        with self._cond:
            self._seq += 1
            self._events.append({"seq": self._seq, "type": kind, "payload": payload})
            self._cond.notify_all()

    def close(self) -> None:
        with self._cond:
            self._closed = True
            self._cond.notify_all()

    def events_after(self, seq: int) -> list[dict]:
        with self._cond:
            return [e for e in self._events if e["seq"] > seq]

    def stream(self, after: int = 0) -> Iterator[dict]:
        """Yield events with seq > after until the task is over and drained."""
        last = after
        while True:
            with self._cond:
                fresh = [e for e in self._events if e["seq"] > last]
                if not fresh:
                    if self._closed:
                        return
                    self._cond.wait(timeout=STREAM_POLL_S)
                    continue
            for event in fresh:
                last = event["seq"]
                yield event


class TaskHandle:
    def __init__(self, runner: TaskRunner, bus: EventBus) -> None:
        self.runner = runner
        self.bus = bus
        self.thread = threading.Thread(target=self._run, daemon=True)

    def _run(self) -> None:
        try:
            self.runner.run()
        except Exception:  # keep the bus closing even on unexpected bugs
            log.exception("task %s crashed", self.runner.state.task_id)
        finally:
            self.bus.close()

    def start(self) -> None:
        self.thread.start()


class CreateTaskBody(BaseModel):
    goal: str
    start: str | None = None
    mode: str = Field(default="fixture", pattern="^(fixture|live)$")
    world: str | None = None  # path to a fixture world file
    oracle: str | None = None  # path to an oracle script file
    max_steps: int | None = None
    sanitize: bool | None = None


class AnswersBody(BaseModel):
    answers: list[str]


def create_app(
    browser_ws_url: str | None = None,
    ui_dir: str | Path | None = None,
) -> FastAPI:
    app = FastAPI(title="webagent control API")
    tasks: dict[str, TaskHandle] = {}
    app.state.tasks = tasks

    def get_handle(task_id: str) -> TaskHandle:
        handle = tasks.get(task_id)
        if handle is None:
            raise HTTPException(status_code=404, detail=f"no task {task_id}")
        return handle

    @app.post("/tasks")
    def create_task(body: CreateTaskBody) -> dict:
        config = AgentConfig()
        if body.max_steps is not None:
            config.max_steps = body.max_steps
        if body.sanitize is not None:
            config.sanitize = body.sanitize

        if body.mode == "fixture":
            if not body.world or not body.oracle:
                raise HTTPException(422, "fixture mode needs world and oracle paths")
            try:
                world = FixtureWorld.load(body.world)
                gateway = ScriptedOracle.from_file(body.oracle)
            except (WorldError, GatewayError, OSError) as exc:
                raise HTTPException(400, str(exc))
            session = SimulatedSession(world)
            start = body.start or world.start
            world_digest = world.digest()
        else:
            from .devtools import LiveSession

            ws_url = browser_ws_url
            if not ws_url:
                raise HTTPException(422, "live mode needs the server started with a browser WS URL")
            try:
                session = LiveSession(ws_url)
                gateway = HttpCompletionGateway()
            except Exception as exc:
                raise HTTPException(502, f"live session unavailable: {exc}")
            start = body.start
            world_digest = None

        bus = EventBus()
        try:
            runner = TaskRunner(
                body.goal,
                session,
                gateway,
                config,
                start=start,
                emit=bus.publish,
                mode=body.mode,
                world_digest=world_digest,
            )
        except Exception as exc:
            raise HTTPException(400, str(exc))
        handle = TaskHandle(runner, bus)
        tasks[runner.state.task_id] = handle
        handle.start()
        return {"task_id": runner.state.task_id}

    @app.get("/tasks/{task_id}")
    def get_task(task_id: str) -> dict:
        return get_handle(task_id).runner.state.view()

    @app.post("/tasks/{task_id}/answers")
    def post_answers(task_id: str, body: AnswersBody) -> dict:
        handle = get_handle(task_id)
        try:
            handle.runner.supply_answers(body.answers)
        except (WrongStatus, AnswerCountMismatch) as exc:
            raise HTTPException(409, str(exc))
        return handle.runner.state.view()

    def control_endpoint(command: str):
        def endpoint(task_id: str) -> dict:
            handle = get_handle(task_id)
            try:
                handle.runner.control(command)
            except IllegalTransition as exc:
                raise HTTPException(409, str(exc))
            return handle.runner.state.view()

        endpoint.__name__ = f"post_{command}"
        return endpoint

    for command in ("pause", "resume", "abort", "takeover", "release"):
        app.post(f"/tasks/{{task_id}}/{command}")(control_endpoint(command))

    @app.get("/tasks/{task_id}/transcript")
    def get_transcript(task_id: str) -> PlainTextResponse:
        handle = get_handle(task_id)
        lines = handle.runner.transcript.to_lines()
        if handle.runner.transcript.final_status is None and handle.runner.state.status in TERMINAL:
            lines.append(json.dumps({"kind": "final", "status": handle.runner.state.status}))
        return PlainTextResponse("\n".join(lines) + "\n", media_type="application/jsonl")

    @app.get("/tasks/{task_id}/events")
    def get_events(task_id: str, after: int = 0) -> StreamingResponse:
        handle = get_handle(task_id)

        def sse() -> Iterator[str]:
            for event in handle.bus.stream(after=after):
                yield f"data: {json.dumps(event, ensure_ascii=False)}\n\n"

        return StreamingResponse(sse(), media_type="text/event-stream")

    if ui_dir is not None and Path(ui_dir).is_dir():
        # API routes are registered first and win; everything else is UI files.
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
