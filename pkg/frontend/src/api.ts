/**
 * Typed client for the pocscreen REST service.
 *
 * The bearer token lives only in this object's memory; it is never written
 * to any durable storage. Network failures throw OfflineError so callers can
 * distinguish "service unreachable" from a rejected request.
 */

export interface Demographics {
  name: string;
  birth_date: string;
  sex: string;
  contact: string;
}

export interface ScreeningResult {
  timestamp: number;
  image_ref: string;
  features: number[] | null;
  predicted_hb_gdl: number;
  remark: string;
  severity: string;
  model_version: string;
  latency_ms: number;
}

export interface PatientRecord {
  patient_id: string;
  demographics: Demographics;
  encounters: { timestamp: number; notes: string }[];
  screenings: ScreeningResult[];
  revision: number;
}

export interface PatientSummary {
  patient_id: string;
  name: string;
  revision: number;
  n_screenings: number;
}

export interface PatientPage {
  patients: PatientSummary[];
  total: number;
  limit: number;
  offset: number;
}

export class ApiError extends Error {
  constructor(
    public status: number,
    message: string,
  ) {
    super(message);
  }
}

export class OfflineError extends Error {
  constructor(cause: string) {
    super(`service unreachable: ${cause}`);
  }
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  private token: string | null = null;

  constructor(
    private baseUrl: string = "",
    private fetchImpl: FetchLike = (url, init) => fetch(url, init),
  ) {}

  get hasSession(): boolean {
    return this.token !== null;
  }

  clearSession(): void {
    this.token = null;
  }

  private headers(extra: Record<string, string> = {}): Record<string, string> {
    const out: Record<string, string> = { ...extra };
    if (this.token) out["Authorization"] = `Bearer ${this.token}`;
    return out;
  }

  private async request(path: string, init: RequestInit): Promise<Response> {
    let response: Response;
    try {
      response = await this.fetchImpl(this.baseUrl + path, init);
    } catch (err) {
      throw new OfflineError(String(err));
    }
    if (!response.ok) {
      let detail = `HTTP ${response.status}`;
      try {
        const body = (await response.json()) as { error?: string };
        if (body && body.error) detail = body.error;
      } catch {
        /* non-JSON error body */
      }
      throw new ApiError(response.status, detail);
    }
    return response;
  }

  private async json<T>(path: string, init: RequestInit = {}): Promise<T> {
    const response = await this.request(path, init);
    return (await response.json()) as T;
  }

  async login(username: string, password: string): Promise<void> {
    const body = await this.json<{ token: string }>("/auth/login", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ username, password }),
    });
    this.token = body.token;
  }

  async health(): Promise<{ status: string; model_version: string }> {
    return this.json("/health");
  }

  async listPatients(limit = 50, offset = 0): Promise<PatientPage> {
    return this.json(`/patients?limit=${limit}&offset=${offset}`, {
      headers: this.headers(),
    });
  }

  async createPatient(demographics: Partial<Demographics>): Promise<PatientRecord> {
    return this.json("/patients", {
      method: "POST",
      headers: this.headers({ "Content-Type": "application/json" }),
      body: JSON.stringify({ demographics }),
    });
  }

  async getPatient(patientId: string): Promise<PatientRecord> {
    return this.json(`/patients/${patientId}`, { headers: this.headers() });
  }

  async listScreenings(patientId: string): Promise<ScreeningResult[]> {
    const body = await this.json<{ screenings: ScreeningResult[] }>(
      `/patients/${patientId}/screenings`,
      { headers: this.headers() },
    );
    return body.screenings;
  }

  /** Multipart image + annotation submission; returns the stored result. */
  async submitSample(
    patientId: string,
    image: Blob,
    annotations: string,
  ): Promise<ScreeningResult> {
    const form = new FormData();
    form.append("image", image, "capture.png");
    form.append("annotations", annotations);
    const body = await this.json<{ screening: ScreeningResult }>(
      `/patients/${patientId}/screenings`,
      { method: "POST", headers: this.headers(), body: form },
    );
    return body.screening;
  }
}
