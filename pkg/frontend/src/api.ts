// Typed client for the retouching service JSON API.

export interface Scores {
  colorfulness: number | null;
  contrast: number | null;
  cct_kelvin: number | null;
  brightness: number | null;
}

export interface RetouchRequest {
  image_b64: string;
  c: number[];
  steps: number;
  seed?: number;
  extended: boolean;
  session?: string;
}

export interface RetouchResponse {
  image_b64: string;
  scores: Scores;
  seed: number;
  ms: number;
  session: string;
}

export interface SessionStats {
  id: string;
  operations: number;
  failure: boolean;
  satisfied: boolean;
}

export class ApiError extends Error {
  constructor(public status: number, detail: string) {
    super(detail);
  }
}

async function post<T>(url: string, body: unknown): Promise<T> {
  const resp = await fetch(url, {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify(body),
  });
  if (!resp.ok) {
    const detail = await resp
      .json()
      .then((d) => String(d.detail ?? resp.statusText))
      .catch(() => resp.statusText);
    throw new ApiError(resp.status, detail);
  }
  return resp.json() as Promise<T>;
}

export class ApiClient {
  constructor(private baseUrl: string = "") {}

  retouch(req: RetouchRequest): Promise<RetouchResponse> {
    return post<RetouchResponse>(`${this.baseUrl}/retouch`, req);
  }

  feedback(session: string, satisfied: boolean): Promise<{ ok: boolean }> {
    return post<{ ok: boolean }>(`${this.baseUrl}/feedback`, { session, satisfied });
  }

  async sessionStats(id: string): Promise<SessionStats> {
    const resp = await fetch(`${this.baseUrl}/session/${id}`);
    if (!resp.ok) throw new ApiError(resp.status, resp.statusText);
    return resp.json() as Promise<SessionStats>;
  }
}
