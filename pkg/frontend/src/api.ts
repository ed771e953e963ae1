/** Thin typed client over the annotation service HTTP API. */

import type { Progress, SubmitResult, TaskStatus, TaskView, Verdict } from "./types.js";

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly code: string,
    public readonly detail: string,
  ) {
    super(`${code}: ${detail}`);
  }
}

/** Network-level failure (service down), as opposed to a server-sent error. */
export class ServiceUnreachable extends Error {}

async function parseError(response: Response): Promise<ApiError> {
  let code = "error";
  let detail = response.statusText;
  try {
    const body = (await response.json()) as { error?: string; detail?: string };
    code = body.error ?? code;
    detail = body.detail ?? detail;
  } catch {
    // non-JSON error body: keep the status text
  }
  return new ApiError(response.status, code, detail);
}

export class ApiClient {
  private readonly base: string;
  private readonly fetchFn: FetchLike;

  constructor(baseUrl: string, fetchFn?: FetchLike) {
    this.base = baseUrl.replace(/\/+$/, "");
    this.fetchFn = fetchFn ?? ((input, init) => fetch(input, init));
  }

  private async request(path: string, init?: RequestInit): Promise<unknown> {
    let response: Response;
    try {
      response = await this.fetchFn(this.base + path, init);
    } catch (err) {
      throw new ServiceUnreachable(String(err));
    }
    if (!response.ok) {
      throw await parseError(response);
    }
    return response.json();
  }

  async listTasks(options: { status?: TaskStatus; annotator?: string } = {}): Promise<TaskView[]> {
    const query = new URLSearchParams();
    if (options.status) query.set("status", options.status);
    if (options.annotator) query.set("annotator", options.annotator);
    const suffix = query.size > 0 ? `?${query.toString()}` : "";
    const body = (await this.request(`/tasks${suffix}`)) as { tasks: TaskView[] };
    return body.tasks;
  }

  async submitLabel(
    taskId: string,
    annotatorId: string,
    verdict: Verdict,
    clientToken: string,
  ): Promise<SubmitResult> {
    return (await this.request(`/tasks/${encodeURIComponent(taskId)}/label`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({
        annotator_id: annotatorId,
        verdict,
        client_token: clientToken,
      }),
    })) as SubmitResult;
  }

  async progress(): Promise<Progress> {
    return (await this.request("/progress")) as Progress;
  }

  async finalize(): Promise<{ finalized: boolean; decisions: number }> {
    return (await this.request("/finalize", { method: "POST" })) as {
      finalized: boolean;
      decisions: number;
    };
  }
}
