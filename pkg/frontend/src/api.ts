/** Typed client for the mixforge prediction service HTTP API. */

export interface ColumnSpec {
  name: string;
  unit: string;
  observed_min: number;
  observed_max: number;
  observed_mean: number | null;
  kind: "input" | "target";
}

export interface SchemaResponse {
  name: string;
  columns: ColumnSpec[];
  targets: string[];
  features_used: Record<string, string[]>;
  strict_ranges: boolean;
}

export interface PredictionEntry {
  value: number;
  unit: string;
  features_used: string[];
}

export interface RangeWarning {
  column: string;
  value: number;
  observed_min: number;
  observed_max: number;
  message: string;
}

export interface PredictResponse {
  predictions: Record<string, PredictionEntry>;
  warnings: RangeWarning[];
}

export interface Attribution {
  base_value: number;
  contributions: Record<string, number>;
  prediction: number;
}

export interface ExplainResponse {
  explanations: Record<string, Attribution>;
  warnings: RangeWarning[];
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly body: unknown,
    message?: string,
  ) {
    super(message ?? `service responded with HTTP ${status}`);
    this.name = "ApiError";
  }

  /** Field-level detail for 422 responses, when the service named one. */
  get feature(): string | null {
    if (typeof this.body === "object" && this.body !== null && "feature" in this.body) {
      return String((this.body as Record<string, unknown>).feature);
    }
    return null;
  }
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class MixforgeClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async get<T>(path: string): Promise<T> {
    const res = await this.fetchFn(this.baseUrl + path);
    if (!res.ok) {
      throw new ApiError(res.status, await safeJson(res));
    }
    return (await res.json()) as T;
  }

  private async post<T>(path: string, body: unknown): Promise<T> {
    const res = await this.fetchFn(this.baseUrl + path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
    if (!res.ok) {
      throw new ApiError(res.status, await safeJson(res));
    }
    return (await res.json()) as T;
  }

  health(): Promise<{ status: string }> {
    return this.get("/health");
  }

  schema(): Promise<SchemaResponse> {
    return this.get("/schema");
  }

  modelInfo(): Promise<Record<string, unknown>> {
    return this.get("/model/info");
  }

  predict(mix: Record<string, number>): Promise<PredictResponse> {
    return this.post("/predict", mix);
  }

  explain(mix: Record<string, number>): Promise<ExplainResponse> {
    return this.post("/explain", mix);
  }
}

async function safeJson(res: Response): Promise<unknown> {
  try {
    return await res.json();
  } catch {
    return null;
  }
}
