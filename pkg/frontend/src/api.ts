// All persistence flows through the serve API; the UI never touches run
// artifacts directly.

import type {
  AnnotationRecord,
  AnnotationsSnapshot,
  BriefPayload,
  MetricsPayload,
  PlanPayload,
  ReportSummary,
  ResolveResult,
  ThreadReportPayload,
} from "./types";

export class ApiError extends Error {
  constructor(public status: number, public detail: string) {
    super(`API ${status}: ${detail}`);
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private base = "",
    private fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await this.fetchFn(this.base + path, init);
    if (!resp.ok) {
      let detail = resp.statusText;
      try {
        detail = (await resp.json()).detail ?? detail;
      } catch {
        // non-JSON error body
      }
      throw new ApiError(resp.status, detail);
    }
    return resp.json() as Promise<T>;
  }

  async reports(): Promise<ReportSummary[]> {
    const body = await this.request<{ reports: ReportSummary[] }>("/api/reports");
    return body.reports;
  }

  async report(threadId: number | string): Promise<ThreadReportPayload> {
    const body = await this.request<{ report: ThreadReportPayload }>(
      `/api/reports/${threadId}`,
    );
    return body.report;
  }

  async brief(): Promise<BriefPayload> {
    const body = await this.request<{ brief: BriefPayload }>("/api/brief");
    return body.brief;
  }

  async plan(): Promise<PlanPayload> {
    const body = await this.request<{ plan: PlanPayload }>("/api/plan");
    return body.plan;
  }

  async resolve(key: string): Promise<ResolveResult> {
    return this.request<ResolveResult>(`/api/resolve/${key}`);
  }

  async annotations(): Promise<AnnotationsSnapshot> {
    return this.request<AnnotationsSnapshot>("/api/annotations");
  }

  async postAnnotation<T extends AnnotationRecord>(record: T): Promise<T> {
    const body = await this.request<{ annotation: T }>("/api/annotations", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(record),
    });
    return body.annotation;
  }

  async metrics(): Promise<MetricsPayload> {
    return this.request<MetricsPayload>("/api/metrics");
  }
}
