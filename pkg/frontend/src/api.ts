/** Control-API client; every task mutation the panel makes goes through here.
 *
 * The event stream is server-sent events consumed via fetch streaming, which
 * works both in the browser and under node 20 (the tests). A thin
 * EventSource path exists for browsers that prefer it.
 */

import type { CreateTaskBody, StreamEvent, SubmitAction, TaskView, ViewState } from "./types.js";

export class ApiError extends Error {
  constructor(
    public status: number,
    public detail: string,
  ) {
    super(`API ${status}: ${detail}`);
  }
}

async function parseError(response: Response): Promise<ApiError> {
  let detail = response.statusText;
  try {
    const body = await response.json();
    detail = body.detail ?? JSON.stringify(body);
  } catch {
    /* non-JSON error body */
  }
  return new ApiError(response.status, detail);
}

export class ControlClient {
  constructor(public baseUrl: string) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const response = await fetch(this.baseUrl + path, {
      method,
      headers: body === undefined ? {} : { "Content-Type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    if (!response.ok) throw await parseError(response);
    return (await response.json()) as T;
  }

  createTask(body: CreateTaskBody): Promise<{ task_id: string }> {
    return this.request("POST", "/tasks", body);
  }

  getTask(taskId: string): Promise<TaskView> {
    return this.request("GET", `/tasks/${taskId}`);
  }

  answers(taskId: string, answers: string[]): Promise<TaskView> {
    return this.request("POST", `/tasks/${taskId}/answers`, { answers });
  }

  command(taskId: string, command: string): Promise<TaskView> {
    return this.request("POST", `/tasks/${taskId}/${command}`);
  }

  async transcript(taskId: string): Promise<string> {
    const response = await fetch(`${this.baseUrl}/tasks/${taskId}/transcript`);
    if (!response.ok) throw await parseError(response);
    return response.text();
  }

  /** Consume the SSE stream, invoking onEvent per event, until it closes. */
  async streamEvents(
    taskId: string,
    onEvent: (event: StreamEvent) => void,
    after = 0,
    signal?: AbortSignal,
  ): Promise<void> {
    const response = await fetch(`${this.baseUrl}/tasks/${taskId}/events?after=${after}`, {
      signal,
    });
    if (!response.ok || response.body === null) throw await parseError(response);
    const reader = response.body.getReader();
    const decoder = new TextDecoder();
    let buffer = "";
    for (;;) {
      const { done, value } = await reader.read();
      if (done) break;
      buffer += decoder.decode(value, { stream: true });
      let boundary;
      while ((boundary = buffer.indexOf("\n\n")) !== -1) {
        const chunk = buffer.slice(0, boundary);
        buffer = buffer.slice(boundary + 2);
        for (const line of chunk.split("\n")) {
          if (line.startsWith("data: ")) {
            onEvent(JSON.parse(line.slice("data: ".length)) as StreamEvent);
          }
        }
      }
    }
  }
}

/** Issue the API call for a user action and return a view PATCH.
 *
 * The caller merges the patch into its live view. Stream events may arrive
 * while the request is in flight, so rebuilding the whole view from a
 * pre-request snapshot would roll the event cursor back; a patch only
 * carries the fields the acknowledgement actually owns. Errors come back as
 * a banner patch, never as corrupted task state.
 */
export async function submit(
  client: ControlClient,
  view: Pick<ViewState, "taskId">,
  action: SubmitAction,
): Promise<Partial<ViewState>> {
  try {
    switch (action.kind) {
      case "start": {
        const created = await client.createTask(action.body);
        return { taskId: created.task_id, goal: action.goal, status: "Running", banner: null };
      }
      case "answers": {
        if (view.taskId === null) throw new ApiError(0, "no task yet");
        const state = await client.answers(view.taskId, action.answers);
        return {
          status: state.status,
          questions: [],
          answerDrafts: [],
          dialogOpen: false,
          banner: null,
        };
      }
      default: {
        if (view.taskId === null) throw new ApiError(0, "no task yet");
        const state = await client.command(view.taskId, action.kind);
        return { status: state.status, banner: null };
      }
    }
  } catch (error) {
    const message = error instanceof ApiError ? error.message : String(error);
    return { banner: message };
  }
}
