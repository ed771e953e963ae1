/** Per-annotator session state: task queue, optimistic verdicts, offline buffer.
 *
 * The session never computes unanimity itself; `resolution` is rendered
 * verbatim from the server payload.
 */

import { ApiClient, ApiError, ServiceUnreachable } from "./api.js";
import type { Progress, TaskView, Verdict } from "./types.js";

export interface Notice {
  kind: "info" | "conflict" | "offline";
  message: string;
}

interface PendingSubmission {
  taskId: string;
  verdict: Verdict;
  clientToken: string;
}

let tokenCounter = 0;

function newToken(): string {
  tokenCounter += 1;
  return `${Date.now().toString(36)}-${Math.random().toString(36).slice(2, 10)}-${tokenCounter}`;
}

export class AnnotationSession {
  readonly annotatorId: string;
  private readonly api: ApiClient;

  queue: TaskView[] = [];
  cursor = 0;
  progressCounts: Progress | null = null;
  notices: Notice[] = [];
  offline = false;
  /** Verdicts not yet acknowledged by the server (service down). */
  unsent: PendingSubmission[] = [];
  /** In-flight tokens per task so a double-click reuses one token. */
  private inFlight = new Map<string, PendingSubmission>();

  constructor(annotatorId: string, api: ApiClient) {
    this.annotatorId = annotatorId;
    this.api = api;
  }

  current(): TaskView | null {
    return this.queue[this.cursor] ?? null;
  }

  next(): void {
    if (this.cursor < this.queue.length - 1) this.cursor += 1;
  }

  prev(): void {
    if (this.cursor > 0) this.cursor -= 1;
  }

  /** Reload open tasks; server order is preserved (stable across reloads). */
  async refresh(): Promise<void> {
    const currentId = this.current()?.task_id ?? null;
    try {
      this.queue = await this.api.listTasks({ status: "open", annotator: this.annotatorId });
      this.progressCounts = await this.api.progress();
      this.offline = false;
    } catch (err) {
      if (err instanceof ServiceUnreachable) {
        this.offline = true;
        this.pushNotice("offline", "service unreachable; retrying keeps your unsent verdicts");
        return;
      }
      throw err;
    }
    if (currentId !== null) {
      const index = this.queue.findIndex((t) => t.task_id === currentId);
      this.cursor = index >= 0 ? index : Math.min(this.cursor, Math.max(this.queue.length - 1, 0));
    } else {
      this.cursor = 0;
    }
  }

  /** Optimistic submit for the current task; rolls back on server rejection. */
  async submitVerdict(verdict: Verdict): Promise<boolean> {
    const task = this.current();
    if (task === null) return false;
    return this.submitFor(task, verdict);
  }

  private async submitFor(task: TaskView, verdict: Verdict): Promise<boolean> {
    const previous = task.my_verdict;
    task.my_verdict = verdict; // optimistic
    const existing = this.inFlight.get(task.task_id);
    const submission: PendingSubmission =
      existing && existing.verdict === verdict
        ? existing // double-click: reuse the token so the server stores one label
        : { taskId: task.task_id, verdict, clientToken: newToken() };
    this.inFlight.set(task.task_id, submission);
    try {
      const result = await this.api.submitLabel(
        submission.taskId,
        this.annotatorId,
        submission.verdict,
        submission.clientToken,
      );
      task.status = result.status;
      if (result.status !== "open") {
        // resolved on the server; pick up its resolution on the next refresh
        this.pushNotice("info", `task ${task.task_id} resolved: ${result.status}`);
      }
      return true;
    } catch (err) {
      if (err instanceof ServiceUnreachable) {
        this.offline = true;
        if (!this.unsent.some((p) => p.clientToken === submission.clientToken)) {
          this.unsent.push(submission);
        }
        this.pushNotice("offline", "verdict queued; service unreachable");
        return false;
      }
      task.my_verdict = previous; // rollback
      if (err instanceof ApiError && err.status === 409) {
        this.pushNotice("conflict", `verdict discarded: ${err.detail}`);
        return false;
      }
      throw err;
    } finally {
      if (this.inFlight.get(task.task_id) === submission) {
        this.inFlight.delete(task.task_id);
      }
    }
  }

  /** Retry buffered submissions after an outage; keeps order, stops on failure. */
  async flushUnsent(): Promise<number> {
    let sent = 0;
    while (this.unsent.length > 0) {
      const pending = this.unsent[0];
      try {
        await this.api.submitLabel(
          pending.taskId,
          this.annotatorId,
          pending.verdict,
          pending.clientToken,
        );
      } catch (err) {
        if (err instanceof ServiceUnreachable) {
          this.offline = true;
          return sent;
        }
        // server-side rejection (e.g. resolved meanwhile): drop with a notice
        this.unsent.shift();
        this.pushNotice("conflict", `queued verdict dropped: ${String(err)}`);
        continue;
      }
      this.unsent.shift();
      sent += 1;
      this.offline = false;
    }
    return sent;
  }

  pushNotice(kind: Notice["kind"], message: string): void {
    this.notices.push({ kind, message });
    if (this.notices.length > 5) this.notices.shift();
  }
}
