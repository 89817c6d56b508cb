/** Thin typed client over the service's JSON API. */

import type {
  ExportResponse,
  Progress,
  TaskListResponse,
  TaskPayload,
  Verdict,
} from "./types.js";

export type FetchFn = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
    this.name = "ApiError";
  }
}

async function parse<T>(response: Response): Promise<T> {
  if (!response.ok) {
    let detail = response.statusText;
    try {
      const body = (await response.json()) as { detail?: string };
      if (body.detail) detail = body.detail;
    } catch {
      // non-JSON error body; keep the status text
    }
    throw new ApiError(response.status, detail);
  }
  return (await response.json()) as T;
}

export class AnnotationApi {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchFn: FetchFn = (input, init) => fetch(input, init),
  ) {}

  listTasks(status: "pending" | "labeled" | "all", limit: number): Promise<TaskListResponse> {
    const query = new URLSearchParams({ status, limit: String(limit) });
    return this.request<TaskListResponse>(`/api/tasks?${query}`);
  }

  getTask(taskId: string): Promise<TaskPayload> {
    return this.request<TaskPayload>(`/api/tasks/${encodeURIComponent(taskId)}`);
  }

  submitVerdict(taskId: string, verdict: Verdict, annotator: string): Promise<TaskPayload> {
    return this.request<TaskPayload>(`/api/tasks/${encodeURIComponent(taskId)}/verdict`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ verdict, annotator }),
    });
  }

  progress(): Promise<Progress> {
    return this.request<Progress>("/api/progress");
  }

  export(kind: "selector" | "judgments"): Promise<ExportResponse> {
    return this.request<ExportResponse>("/api/export", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ kind }),
    });
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchFn(this.baseUrl + path, init);
    return parse<T>(response);
  }
}
