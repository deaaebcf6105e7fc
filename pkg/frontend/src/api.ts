// Typed client for the quotefinder recommendation service.

export interface SpanPayload {
  token_start: number;
  token_end: number;
  text: string;
}

export interface Recommendation {
  paragraph_index: number;
  paragraph_text: string;
  span: SpanPayload | null;
  p_paragraph: number;
  p_span: number;
  fused: number;
}

export interface RecommendResponse {
  recommendations: Recommendation[];
}

export interface RecommendRequest {
  source_id: string;
  title: string;
  context: string;
  top_k: number;
}

export interface SourceSummary {
  id: string;
  date: string;
  paragraph_count: number;
}

export interface SourcePayload {
  id: string;
  date: string;
  paragraphs: string[][];
}

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

async function parseError(response: Response): Promise<never> {
  let detail = response.statusText;
  try {
    const body = await response.json();
    detail = body.detail ?? body.error ?? detail;
  } catch {
    // non-JSON error body: keep the status text
  }
  throw new ApiError(response.status, detail);
}

export class ApiClient {
  constructor(private baseUrl: string = "") {}

  async listSources(): Promise<SourceSummary[]> {
    const response = await fetch(`${this.baseUrl}/sources`);
    if (!response.ok) return parseError(response);
    return response.json();
  }

  async indexSource(payload: SourcePayload): Promise<string> {
    const response = await fetch(`${this.baseUrl}/sources`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(payload),
    });
    if (!response.ok) return parseError(response);
    const body = await response.json();
    return body.id;
  }

  async recommend(request: RecommendRequest): Promise<RecommendResponse> {
    const response = await fetch(`${this.baseUrl}/recommend`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(request),
    });
    if (!response.ok) return parseError(response);
    return response.json();
  }
}
