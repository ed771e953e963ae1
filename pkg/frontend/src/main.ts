/** Browser bootstrap: wires the session to the DOM and the keyboard. */

import { ApiClient } from "./api.js";
import { actionForKey } from "./keyboard.js";
import { renderApp } from "./render.js";
import { AnnotationSession } from "./state.js";
import type { Verdict } from "./types.js";

const REFRESH_MS = 15_000;

function annotatorId(): string {
  const stored = window.localStorage.getItem("annotator_id");
  if (stored) return stored;
  const entered = window.prompt("Annotator id:", "") ?? "";
  const id = entered.trim() || `anon-${Math.random().toString(36).slice(2, 8)}`;
  window.localStorage.setItem("annotator_id", id);
  return id;
}

async function start(): Promise<void> {
  const root = document.getElementById("app");
  if (!root) throw new Error("missing #app container");
  const api = new ApiClient(window.location.origin);
  const session = new AnnotationSession(annotatorId(), api);

  const redraw = () => {
    root.innerHTML = renderApp(session);
  };

  const refresh = async () => {
    await session.refresh();
    redraw();
  };

  const submit = async (verdict: Verdict) => {
    await session.submitVerdict(verdict);
    redraw();
    // pull the server's view (resolution state, queue) without blocking input
    void session.refresh().then(redraw);
    session.next();
    redraw();
  };

  document.addEventListener("keydown", (event) => {
    const target = event.target as HTMLElement | null;
    const typing = !!target && ("value" in target || target.isContentEditable);
    if (event.key === "r" && !typing) {
      void refresh();
      return;
    }
    const action = actionForKey(event.key, typing, event.metaKey || event.ctrlKey || event.altKey);
    if (action.kind === "none") return;
    event.preventDefault();
    if (action.kind === "next") session.next();
    else if (action.kind === "prev") session.prev();
    else void submit(action.verdict);
    redraw();
  });

  root.addEventListener("click", (event) => {
    const target = event.target as HTMLElement;
    const verdict = target.dataset?.verdict as Verdict | undefined;
    if (verdict) {
      void submit(verdict);
      return;
    }
    if (target.id === "retry") {
      void session.flushUnsent().then(refresh);
      return;
    }
    const item = target.closest<HTMLElement>(".queue-item");
    if (item?.dataset.index) {
      session.cursor = Number(item.dataset.index);
      redraw();
    }
  });

  window.setInterval(() => {
    if (!session.offline) void refresh();
    else void session.flushUnsent().then(refresh);
  }, REFRESH_MS);

  await refresh();
}

void start();
