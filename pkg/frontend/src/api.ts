// Typed client for the prediction/consultation HTTP API.

export interface Turn {
  role: "user" | "assistant";
  text: string;
}

export interface Diagnosis {
  report_id: string;
  probabilities: Record<string, number>;
  predicted: string[];
  advice: string | null;
}

export interface AssistantReply {
  kind: "follow_up" | "prediction";
  text: string;
  state: string;
}

export interface Transcript {
  session_id: string;
  state: string;
  turns: Turn[];
  result: Diagnosis | null;
}

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private baseUrl: string,
    private fetchFn: FetchLike = (...args) => fetch(...args),
  ) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const init: RequestInit = { method, headers: { "Content-Type": "application/json" } };
    if (body !== undefined) init.body = JSON.stringify(body);
    const resp = await this.fetchFn(this.baseUrl + path, init);
    if (!resp.ok) {
      let detail = resp.statusText;
      try {
        const payload = await resp.json();
        if (payload && payload.detail) detail = JSON.stringify(payload.detail);
      } catch {
        // non-JSON error body; keep the status text
      }
      throw new ApiError(resp.status, detail);
    }
    return (await resp.json()) as T;
  }

  health(): Promise<{ status: string }> {
    return this.request("GET", "/healthz");
  }

  createSession(): Promise<{ session_id: string }> {
    return this.request("POST", "/v1/sessions");
  }

  sendMessage(sessionId: string, text: string): Promise<AssistantReply> {
    return this.request("POST", `/v1/sessions/${sessionId}/messages`, { text });
  }

  getSession(sessionId: string): Promise<Transcript> {
    return this.request("GET", `/v1/sessions/${sessionId}`);
  }

  finalize(sessionId: string): Promise<Diagnosis> {
    return this.request("POST", `/v1/sessions/${sessionId}/finalize`);
  }

  predict(narrative: string): Promise<Diagnosis> {
    return this.request("POST", "/v1/predict", { narrative });
  }
}
