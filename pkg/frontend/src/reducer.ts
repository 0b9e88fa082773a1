/** Pure view-state reducer over the task event stream.
 *
 * Deterministic by construction: the same recorded event sequence always
 * produces the same final ViewState. Gaps in the seq numbering are never
 * swallowed silently; they insert a visible "missed events" marker.
 */

import type { LogLine, StreamEvent, ViewState } from "./types.js";

export function initialView(goal = ""): ViewState {
  return {
    taskId: null,
    goal,
    status: "Idle",
    log: [],
    cursor: null,
    questions: [],
    answerDrafts: [],
    dialogOpen: false,
    lastSeq: 0,
    missedEvents: 0,
    banner: null,
    connection: "idle",
  };
}

/** Statuses from which each command is legal; mirrors the orchestrator. */
export function allowedActions(status: string): string[] {
  const actions: string[] = [];
  if (status === "Running") actions.push("pause", "takeover", "abort");
  if (status === "Paused") actions.push("resume", "takeover", "abort");
  if (status === "AwaitingAnswers") actions.push("answers", "takeover", "abort");
  if (status === "TakenOver") actions.push("resume", "release", "abort");
  if (status === "Idle") actions.push("start");
  return actions;
}

function describe(event: StreamEvent): string {
  const p = event.payload as Record<string, any>;
  switch (event.type) {
    case "step_started":
      return `step ${p.step} started`;
    case "elements_harvested":
      return `harvested ${p.count} interactable element(s)`;
    case "llm_response":
      return `model replied (${p.chars} chars${p.attempt ? `, retry ${p.attempt}` : ""})`;
    case "validation_result":
      return p.ok
        ? "plan passed the movement rules"
        : `plan violates movement rules: ${JSON.stringify(p.violations)}`;
    case "event_dispatched": {
      const ev = p.event ?? {};
      const text = ev.type === "text_input" ? ` "${ev.text}"` : "";
      return `executed ${ev.type} on item ${ev.item}${text}${p.deferred ? " (deferred)" : ""}`;
    }
    case "cursor_moved":
      return `cursor moved to (${p.x}, ${p.y})`;
    case "question_pending":
      return `model asks: ${(p.questions ?? []).join(" | ")}`;
    case "status_changed":
      return `status: ${p.status}${p.reason ? ` (${p.reason})` : ""}`;
    case "task_complete":
      return `task complete after ${p.steps} step(s)`;
    default:
      return `${event.type}: ${JSON.stringify(event.payload)}`;
  }
}

function pushLog(log: LogLine[], line: LogLine): LogLine[] {
  return [...log, line];
}

export function reduce(view: ViewState, event: StreamEvent): ViewState {
  if (typeof event?.seq !== "number" || typeof event?.type !== "string") {
    // Malformed: keep it visible as a raw log line, change nothing else.
    return { ...view, log: pushLog(view.log, { seq: null, text: `?? ${JSON.stringify(event)}` }) };
  }
  if (event.seq <= view.lastSeq) {
    return view; // stale duplicate
  }

  let log = view.log;
  let missedEvents = view.missedEvents;
  if (view.lastSeq > 0 && event.seq > view.lastSeq + 1) {
    const missed = event.seq - view.lastSeq - 1;
    missedEvents += missed;
    log = pushLog(log, { seq: null, text: `-- missed ${missed} event(s) --` });
  }
  log = pushLog(log, { seq: event.seq, text: describe(event) });

  const next: ViewState = { ...view, log, missedEvents, lastSeq: event.seq };
  const p = event.payload as Record<string, any>;

  switch (event.type) {
    case "cursor_moved":
      next.cursor = { x: Number(p.x), y: Number(p.y) };
      break;
    case "question_pending": {
      const questions = (p.questions ?? []).map(String);
      next.questions = questions;
      next.answerDrafts = questions.map(() => "");
      next.dialogOpen = true;
      break;
    }
    case "status_changed": {
      next.status = String(p.status);
      const keepsDialog = next.status === "AwaitingAnswers" || next.status === "TakenOver";
      if (!keepsDialog || next.questions.length === 0) {
        next.dialogOpen = false;
        if (next.status !== "TakenOver") {
          next.questions = [];
          next.answerDrafts = [];
        }
      }
      break;
    }
    default:
      break; // the log line is the effect
  }
  return next;
}

export function replayStream(events: StreamEvent[], goal = ""): ViewState {
  return events.reduce(reduce, initialView(goal));
}
