/** Wire shapes of the control API and the view-model the panel renders. */

export interface StreamEvent {
  seq: number;
  type: string;
  payload: Record<string, unknown>;
}

export interface TaskView {
  task_id: string;
  goal: string;
  status: string;
  step_count: number;
  pending_questions: string[];
  cursor: { item: number; x: number; y: number } | null;
  failure_reason: string | null;
}

export interface CreateTaskBody {
  goal: string;
  start?: string;
  mode: "fixture" | "live";
  world?: string;
  oracle?: string;
  max_steps?: number;
}

export type ConnectionState = "idle" | "connecting" | "open" | "closed" | "error";

export interface LogLine {
  seq: number | null; // null for locally generated markers
  text: string;
}

export interface ViewState {
  taskId: string | null;
  goal: string;
  status: string;
  log: LogLine[];
  cursor: { x: number; y: number } | null;
  questions: string[];
  answerDrafts: string[];
  dialogOpen: boolean;
  lastSeq: number;
  missedEvents: number;
  banner: string | null;
  connection: ConnectionState;
}

export type SubmitAction =
  | { kind: "start"; goal: string; body: CreateTaskBody }
  | { kind: "answers"; answers: string[] }
  | { kind: "pause" }
  | { kind: "resume" }
  | { kind: "abort" }
  | { kind: "takeover" }
  | { kind: "release" };
