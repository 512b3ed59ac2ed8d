/**
 * Typed client for the diagnosis-session service HTTP API.
 *
 * The console is a pure client: every piece of state it shows comes back
 * out of these endpoints, so a refresh can never lose anything.
 */

export type ResponderTag = "LLM" | "Physician";

export interface StepJson {
  index: number;
  deep_think: string;
  question: string;
  responder: ResponderTag;
  answer: string | null;
}

export interface FinalJson {
  body: string;
  step_refs: number[];
  answer_line: string | null;
}

export interface TranscriptJson {
  instruction: string;
  steps: StepJson[];
  final: FinalJson | null;
  references: Array<[number, string]>;
}

export interface PendingRequest {
  step: number;
  question: string;
}

export interface SessionView {
  session_id: string;
  state: string;
  case_id: string | null;
  pending: PendingRequest | null;
  transcript: TranscriptJson;
}

export interface SessionReport {
  session_id: string;
  state: string;
  op_count: number;
  final_answer: string | null;
  matched: boolean | null;
  op_effectiveness: number | null;
}

export type FulfillResult =
  | { ok: true; session: SessionView }
  | { ok: false; status: number; detail: string };

export class ServiceError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

export class ServiceClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchImpl: typeof fetch = fetch,
  ) {}

  private url(path: string): string {
    return this.baseUrl.replace(/\/$/, "") + path;
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchImpl(this.url(path), {
      headers: { "Content-Type": "application/json" },
      ...init,
    });
    if (!response.ok) {
      throw new ServiceError(response.status, await response.text());
    }
    return (await response.json()) as T;
  }

  async health(): Promise<{ status: string; sessions: number }> {
    return this.request("/healthz");
  }

  async listSessions(state?: string): Promise<SessionView[]> {
    const query = state ? `?state=${encodeURIComponent(state)}` : "";
    const body = await this.request<{ sessions: SessionView[] }>(`/sessions${query}`);
    return body.sessions;
  }

  async getSession(sessionId: string): Promise<SessionView> {
    return this.request(`/sessions/${encodeURIComponent(sessionId)}`);
  }

  async startSession(body: {
    case_id?: string;
    chief_complaint?: string;
    question?: string;
  }): Promise<SessionView> {
    return this.request("/sessions", { method: "POST", body: JSON.stringify(body) });
  }

  /**
   * Submit a physician result.  Only one submission wins: a 409 (someone
   * else fulfilled first, or the session moved on) comes back as
   * {ok: false} so the caller can refresh instead of crashing.
   */
  async fulfill(sessionId: string, step: number, answer: string): Promise<FulfillResult> {
    const response = await this.fetchImpl(
      this.url(`/sessions/${encodeURIComponent(sessionId)}/fulfill`),
      {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify({ step, answer }),
      },
    );
    if (response.status === 409) {
      return { ok: false, status: 409, detail: await response.text() };
    }
    if (!response.ok) {
      throw new ServiceError(response.status, await response.text());
    }
    return { ok: true, session: (await response.json()) as SessionView };
  }

  async report(sessionId: string): Promise<SessionReport> {
    return this.request(`/sessions/${encodeURIComponent(sessionId)}/report`);
  }
}
