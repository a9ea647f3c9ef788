/**
 * In-memory stand-in for the pocscreen REST service, mirroring its JSON
 * shapes and auth behavior. `offline` simulates a dead network: the fetch
 * rejects the way a browser fetch does.
 */

import type { FetchLike, PatientRecord, ScreeningResult } from "../src/api.js";

const ANEMIA_THRESHOLD = 12.0;

function severityOf(hb: number): string {
  if (hb < 8) return "severe";
  if (hb < 11) return "moderate";
  if (hb < 12) return "mild";
  return "non_anemic";
}

export class MockService {
  offline = false;
  tokens = new Set<string>();
  patients = new Map<string, PatientRecord>();
  private nextToken = 1;
  private nextPatient = 1;
  requests: string[] = [];

  constructor(private credentials: Record<string, string> = { clin: "clin-password-1" }) {}

  fetch: FetchLike = async (url, init) => {
    if (this.offline) {
      throw new TypeError("fetch failed: network is unreachable");
    }
    const method = init?.method ?? "GET";
    const path = url.split("?")[0];
    this.requests.push(`${method} ${path}`);
    return this.route(method, path, init ?? {});
  };

  private json(body: unknown, status = 200): Response {
    return new Response(JSON.stringify(body), {
      status,
      headers: { "Content-Type": "application/json" },
    });
  }

  private authed(init: RequestInit): boolean {
    const headers = (init.headers ?? {}) as Record<string, string>;
    const auth = headers["Authorization"] ?? "";
    return auth.startsWith("Bearer ") && this.tokens.has(auth.slice(7));
  }

  private async route(method: string, path: string, init: RequestInit): Promise<Response> {
    if (method === "POST" && path === "/auth/login") {
      const body = JSON.parse(String(init.body)) as { username: string; password: string };
      if (this.credentials[body.username] === body.password) {
        const token = `tok-${this.nextToken++}-${Math.random().toString(36).slice(2)}`;
        this.tokens.add(token);
        return this.json({ token, expires_at: Date.now() / 1000 + 28800 });
      }
      return this.json({ error: "invalid credentials" }, 401);
    }
    if (method === "GET" && path === "/health") {
      return this.json({ status: "ok", model_version: "mock-1", store_version: 1 });
    }
    if (!this.authed(init)) {
      return this.json({ error: "authentication required" }, 401);
    }

    if (method === "GET" && path === "/patients") {
      const patients = [...this.patients.values()].map((p) => ({
        patient_id: p.patient_id,
        name: p.demographics.name,
        revision: p.revision,
        n_screenings: p.screenings.length,
      }));
      return this.json({ patients, total: patients.length, limit: 50, offset: 0 });
    }
    if (method === "POST" && path === "/patients") {
      const body = JSON.parse(String(init.body)) as { demographics: Record<string, string> };
      const record: PatientRecord = {
        patient_id: `p${this.nextPatient++}`,
        demographics: {
          name: body.demographics.name ?? "",
          birth_date: body.demographics.birth_date ?? "",
          sex: body.demographics.sex ?? "",
          contact: body.demographics.contact ?? "",
        },
        encounters: [],
        screenings: [],
        revision: 0,
      };
      this.patients.set(record.patient_id, record);
      return this.json(record, 201);
    }

    const patientMatch = /^\/patients\/([^/]+)$/.exec(path);
    if (method === "GET" && patientMatch) {
      const record = this.patients.get(patientMatch[1]);
      return record ? this.json(record) : this.json({ error: "unknown patient" }, 404);
    }

    const screeningsMatch = /^\/patients\/([^/]+)\/screenings$/.exec(path);
    if (screeningsMatch) {
      const record = this.patients.get(screeningsMatch[1]);
      if (!record) return this.json({ error: "unknown patient" }, 404);
      if (method === "GET") {
        return this.json({ patient_id: record.patient_id, screenings: record.screenings });
      }
      const form = init.body as FormData;
      const annotations = String(form.get("annotations") ?? "");
      if (!/^0 /m.test(annotations)) {
        return this.json({ error: "roi: no nail region" }, 422);
      }
      const image = form.get("image") as Blob;
      const bytes = new Uint8Array(await image.arrayBuffer());
      let acc = 0;
      for (const b of bytes) acc = (acc + b) % 997;
      const hb = 7.5 + (acc % 90) / 10; // deterministic in the payload
      const screening: ScreeningResult = {
        timestamp: record.screenings.length + 1,
        image_ref: `upload:${acc}`,
        features: null,
        predicted_hb_gdl: hb,
        remark: hb < ANEMIA_THRESHOLD ? "anemic" : "non_anemic",
        severity: severityOf(hb),
        model_version: "mock-1",
        latency_ms: 5.0,
      };
      record.screenings = [...record.screenings, screening];
      record.revision += 1;
      return this.json({ patient_id: record.patient_id, screening }, 201);
    }

    return this.json({ error: "not found" }, 404);
  }
}

export class MemoryStorage {
  private map = new Map<string, string>();

  getItem(key: string): string | null {
    return this.map.has(key) ? this.map.get(key)! : null;
  }

  setItem(key: string, value: string): void {
    this.map.set(key, value);
  }

  removeItem(key: string): void {
    this.map.delete(key);
  }

  dump(): string {
    return JSON.stringify([...this.map.entries()]);
  }
}

export function pngDataUrl(seed: number): string {
  // not a real PNG; the mock only hashes bytes, and the queue just stores it
  const bytes = new Uint8Array(64);
  for (let i = 0; i < bytes.length; i++) bytes[i] = (seed * 31 + i * 7) % 256;
  let binary = "";
  for (const b of bytes) binary += String.fromCharCode(b);
  return `data:image/png;base64,${btoa(binary)}`;
}
