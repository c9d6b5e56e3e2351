// Client for the title-generation service. Field names mirror the wire
// format exactly; do not rename.

export type LanguageId = "java" | "csharp" | "python" | "javascript";

export interface GenerateRequest {
  language: LanguageId;
  description: string;
  code: string;
  beam_width: number;
  num_titles: number;
}

export interface ScoredTitle {
  text: string;
  normalized_score: number;
}

export interface GenerateResponse {
  titles: ScoredTitle[];
  model_id: string;
  elapsed_ms: number;
}

export interface HealthResponse {
  model_id: string | null;
  uptime_seconds: number;
  ready: boolean;
}

export class ApiError extends Error {
  status: number;
  field?: string;

  constructor(message: string, status: number, field?: string) {
    super(message);
    this.status = status;
    this.field = field;
  }
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

async function errorFrom(res: Response): Promise<ApiError> {
  let message = `service error (HTTP ${res.status})`;
  let field: string | undefined;
  try {
    const body = await res.json();
    if (typeof body.error === "string") message = body.error;
    if (typeof body.field === "string") field = body.field;
  } catch {
    // non-JSON error body; keep the generic message
  }
  return new ApiError(message, res.status, field);
}

export async function generateTitles(
  baseUrl: string,
  request: GenerateRequest,
  fetchFn: FetchLike = fetch,
): Promise<GenerateResponse> {
  const res = await fetchFn(`${baseUrl}/api/generate`, {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify(request),
  });
  if (!res.ok) throw await errorFrom(res);
  return (await res.json()) as GenerateResponse;
}

export async function checkHealth(
  baseUrl: string,
  fetchFn: FetchLike = fetch,
): Promise<HealthResponse> {
  const res = await fetchFn(`${baseUrl}/api/health`);
  if (!res.ok) throw await errorFrom(res);
  return (await res.json()) as HealthResponse;
}
