/** DOM glue for the copilot panel: goal entry on the left, live feedback on
 * the right, with the question dialog and steering buttons in between.
 * All task state flows through reduce() and submit(); nothing here mutates
 * the task except via the control API.
 */

import { ControlClient, submit } from "./api.js";
import { allowedActions, initialView, reduce } from "./reducer.js";
import type { StreamEvent, SubmitAction, ViewState } from "./types.js";

const PAGE_SCALE = 0.12; // mini-map scale for cursor coordinates

const $ = (id: string) => document.getElementById(id)!;

class CopilotApp {
  client = new ControlClient("");
  view: ViewState = initialView();
  source: EventSource | null = null;

  start() {
    $("btn-start").onclick = () => {
      const goal = ($("goal") as HTMLTextAreaElement).value.trim();
      if (!goal) return;
      void this.dispatch({
        kind: "start",
        goal,
        body: {
          goal,
          mode: "fixture",
          world: ($("world") as HTMLInputElement).value.trim(),
          oracle: ($("oracle") as HTMLInputElement).value.trim(),
        },
      });
    };
    for (const command of ["pause", "resume", "abort", "takeover", "release"] as const) {
      $(`btn-${command}`).onclick = () => void this.dispatch({ kind: command });
    }
    $("btn-answers").onclick = () => {
      const inputs = document.querySelectorAll<HTMLInputElement>("#dialog input");
      void this.dispatch({ kind: "answers", answers: [...inputs].map((i) => i.value) });
    };
    this.render();
  }

  async dispatch(action: SubmitAction) {
    const hadTask = this.view.taskId;
    const patch = await submit(this.client, this.view, action);
    this.view = { ...this.view, ...patch };
    if (action.kind === "start" && this.view.taskId && this.view.taskId !== hadTask) {
      this.connect(this.view.taskId);
    }
    this.render();
  }

  connect(taskId: string) {
    this.source?.close();
    this.view = { ...this.view, connection: "connecting" };
    const source = new EventSource(`/tasks/${taskId}/events`);
    this.source = source;
    source.onopen = () => {
      this.view = { ...this.view, connection: "open" };
      this.render();
    };
    source.onmessage = (message) => {
      this.apply(JSON.parse(message.data) as StreamEvent);
    };
    source.onerror = () => {
      // The server closes the stream at terminal status; don't auto-reconnect then.
      const terminal = ["Complete", "Failed", "Aborted"].includes(this.view.status);
      source.close();
      this.view = { ...this.view, connection: terminal ? "closed" : "error" };
      this.render();
    };
  }

  apply(event: StreamEvent) {
    this.view = reduce(this.view, event);
    this.render();
  }

  render() {
    const view = this.view;
    const badge = $("status");
    badge.textContent = view.status;
    badge.dataset.status = view.status;
    $("connection").textContent = view.connection;
    $("banner").textContent = view.banner ?? "";
    ($("banner") as HTMLElement).style.display = view.banner ? "block" : "none";

    const legal = new Set(allowedActions(view.status));
    for (const command of ["pause", "resume", "abort", "takeover", "release"]) {
      ($(`btn-${command}`) as HTMLButtonElement).disabled = !legal.has(command);
    }
    ($("btn-start") as HTMLButtonElement).disabled = view.taskId !== null && !["Complete", "Failed", "Aborted"].includes(view.status);

    const log = $("log");
    log.textContent = view.log.map((line) => line.text).join("\n");
    log.scrollTop = log.scrollHeight;

    const dot = $("cursor-dot") as HTMLElement;
    if (view.cursor) {
      dot.style.display = "block";
      dot.style.left = `${view.cursor.x * PAGE_SCALE}px`;
      dot.style.top = `${view.cursor.y * PAGE_SCALE}px`;
      $("cursor-pos").textContent = `(${view.cursor.x}, ${view.cursor.y})`;
    } else {
      dot.style.display = "none";
      $("cursor-pos").textContent = "-";
    }

    const dialog = $("dialog") as HTMLElement;
    dialog.style.display = view.dialogOpen ? "block" : "none";
    if (view.dialogOpen) {
      const list = $("dialog-questions");
      if (list.childElementCount !== view.questions.length) {
        list.innerHTML = "";
        view.questions.forEach((question, index) => {
          const label = document.createElement("label");
          label.textContent = question;
          const input = document.createElement("input");
          input.type = "text";
          input.dataset.index = String(index);
          label.appendChild(input);
          list.appendChild(label);
        });
      }
    }
  }
}

new CopilotApp().start();
