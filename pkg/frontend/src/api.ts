import type {
  BatchQuery,
  ChoiceMap,
  ExportPayload,
  SessionInfo,
  SubmitResult,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    detail: string,
  ) {
    super(detail);
    this.name = "ApiError";
  }
}

async function parseOrThrow<T>(resp: Response): Promise<T> {
  if (resp.ok) {
    return (await resp.json()) as T;
  }
  let detail = `${resp.status} ${resp.statusText}`;
  try {
    const body = (await resp.json()) as { detail?: string };
    if (body.detail) detail = body.detail;
  } catch {
    // non-JSON error body; keep the status line
  }
  throw new ApiError(resp.status, detail);
}

export class ApiClient {
  constructor(private readonly base: string) {}

  private url(path: string): string {
    return this.base.replace(/\/$/, "") + path;
  }

  async registerDataset(embeddingsPath: string, manifestPath: string) {
    const resp = await fetch(this.url("/datasets"), {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({
        embeddings_path: embeddingsPath,
        manifest_path: manifestPath,
      }),
    });
    return parseOrThrow<{ name: string; num_classes: number }>(resp);
  }

  async openSession(
    dataset: string,
    config: Record<string, unknown>,
  ): Promise<SessionInfo> {
    const resp = await fetch(this.url("/sessions"), {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ dataset, config }),
    });
    return parseOrThrow<SessionInfo>(resp);
  }

  async query(sessionId: string): Promise<BatchQuery> {
    const resp = await fetch(this.url(`/sessions/${sessionId}/query`));
    return parseOrThrow<BatchQuery>(resp);
  }

  async submitLabels(
    sessionId: string,
    choices: ChoiceMap,
  ): Promise<SubmitResult> {
    const labels: Record<string, number | string> = {};
    for (const [index, choice] of Object.entries(choices)) {
      labels[index] = choice;
    }
    const resp = await fetch(this.url(`/sessions/${sessionId}/labels`), {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ labels }),
    });
    return parseOrThrow<SubmitResult>(resp);
  }

  async status(sessionId: string): Promise<SessionInfo> {
    const resp = await fetch(this.url(`/sessions/${sessionId}/status`));
    return parseOrThrow<SessionInfo>(resp);
  }

  async exportRecord(sessionId: string): Promise<ExportPayload> {
    const resp = await fetch(this.url(`/sessions/${sessionId}/export`));
    return parseOrThrow<ExportPayload>(resp);
  }

  exportUrl(sessionId: string): string {
    return this.url(`/sessions/${sessionId}/export`);
  }
}
