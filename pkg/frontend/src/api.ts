import type { CompletionView } from "./types";

export class ApiError extends Error {
  constructor(
    public status: number,
    public detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
  }
}

async function envelope(response: Response): Promise<never> {
  let detail = response.statusText;
  try {
    const body = await response.json();
    if (body && typeof body.detail === "string") detail = body.detail;
  } catch {
    // non-JSON error body; keep the status text
  }
  throw new ApiError(response.status, detail);
}

/** Typed client for the completion service JSON endpoints. */
export class ApiClient {
  constructor(
    private baseUrl: string = "",
    private fetchFn: typeof fetch = (...args) => fetch(...args),
  ) {}

  async createUser(): Promise<number> {
    const res = await this.fetchFn(`${this.baseUrl}/users`, { method: "POST" });
    if (!res.ok) await envelope(res);
    const body = await res.json();
    return body.user_id as number;
  }

  async complete(userId: number, prefix: string, topN = 10): Promise<CompletionView[]> {
    const params = new URLSearchParams({
      user_id: String(userId),
      prefix,
      top_n: String(topN),
    });
    const res = await this.fetchFn(`${this.baseUrl}/complete?${params}`);
    if (!res.ok) await envelope(res);
    const body = await res.json();
    return (body.completions as CompletionView[]) ?? [];
  }

  async select(userId: number, query: string): Promise<void> {
    const res = await this.fetchFn(`${this.baseUrl}/select`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ user_id: userId, query }),
    });
    if (!res.ok && res.status !== 204) await envelope(res);
  }

  async health(): Promise<boolean> {
    try {
      const res = await this.fetchFn(`${this.baseUrl}/health`);
      return res.ok;
    } catch {
      return false;
    }
  }
}
