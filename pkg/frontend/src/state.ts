/**
 * View state: live session flag, current patient, offline banner, and cached
 * read-only snapshots. Snapshots persist so the dashboard can render the
 * last-known records while offline; credentials and tokens never do.
 */

import { PatientRecord, PatientSummary } from "./api.js";

interface StorageLike {
  getItem(key: string): string | null;
  setItem(key: string, value: string): void;
  removeItem(key: string): void;
}

const CACHE_KEY = "pocscreen.cache.v1";

interface CachePayload {
  patients: PatientSummary[];
  records: Record<string, PatientRecord>;
  savedAt: number;
}

export class SnapshotCache {
  constructor(private storage: StorageLike) {}

  private load(): CachePayload {
    const raw = this.storage.getItem(CACHE_KEY);
    if (!raw) return { patients: [], records: {}, savedAt: 0 };
    try {
      return JSON.parse(raw) as CachePayload;
    } catch {
      return { patients: [], records: {}, savedAt: 0 };
    }
  }

  private save(payload: CachePayload): void {
    this.storage.setItem(CACHE_KEY, JSON.stringify(payload));
  }

  rememberPatients(patients: PatientSummary[]): void {
    const cache = this.load();
    cache.patients = patients;
    cache.savedAt = Date.now();
    this.save(cache);
  }

  rememberRecord(record: PatientRecord): void {
    const cache = this.load();
    cache.records[record.patient_id] = record;
    cache.savedAt = Date.now();
    this.save(cache);
  }

  patients(): PatientSummary[] {
    return this.load().patients;
  }

  record(patientId: string): PatientRecord | null {
    return this.load().records[patientId] ?? null;
  }

  clear(): void {
    this.storage.removeItem(CACHE_KEY);
  }
}

export type View =
  | { kind: "login" }
  | { kind: "patients" }
  | { kind: "chart"; patientId: string }
  | { kind: "submit"; patientId: string }
  | { kind: "not_found"; patientId: string };

export class ViewState {
  view: View = { kind: "login" };
  offline = false;
  authenticated = false;
  private listeners: (() => void)[] = [];

  subscribe(listener: () => void): void {
    this.listeners.push(listener);
  }

  private emit(): void {
    for (const listener of this.listeners) listener();
  }

  setOffline(offline: boolean): void {
    if (this.offline !== offline) {
      this.offline = offline;
      this.emit();
    }
  }

  setAuthenticated(on: boolean): void {
    this.authenticated = on;
    if (!on) this.view = { kind: "login" };
    this.emit();
  }

  navigate(view: View): void {
    if (view.kind !== "login" && !this.authenticated && !this.offline) {
      throw new Error("cannot render patient data without a live session");
    }
    this.view = view;
    this.emit();
  }
}
