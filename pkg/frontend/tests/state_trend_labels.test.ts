import { describe, expect, it } from "vitest";

import type { PatientRecord, ScreeningResult } from "../src/api.js";
import { formatHb, remarkBadge, severityBadge } from "../src/labels.js";
import { SnapshotCache, ViewState } from "../src/state.js";
import { polyline, trendPoints } from "../src/trend.js";
import { MemoryStorage } from "./mock_service.js";

function screening(timestamp: number, hb: number, severity: string): ScreeningResult {
  return {
    timestamp,
    image_ref: "x",
    features: null,
    predicted_hb_gdl: hb,
    remark: hb < 12 ? "anemic" : "non_anemic",
    severity,
    model_version: "m",
    latency_ms: 1,
  };
}

describe("trend", () => {
  it("keeps service time order and carries severity through", () => {
    const points = trendPoints([
      screening(1, 11.0, "mild"),
      screening(2, 9.4, "moderate"),
      screening(3, 12.5, "non_anemic"),
    ]);
    expect(points.map((p) => p.timestamp)).toEqual([1, 2, 3]);
    expect(points[1].severity).toBe("moderate");
  });

  it("builds an svg polyline for two or more points", () => {
    const points = trendPoints([screening(1, 10, "moderate"), screening(2, 12, "non_anemic")]);
    const line = polyline(points, 100, 50);
    expect(line).not.toBeNull();
    expect(line!.split(" ")).toHaveLength(2);
  });

  it("declines to draw a line through fewer than two points", () => {
    expect(polyline(trendPoints([screening(1, 10, "moderate")]), 100, 50)).toBeNull();
    expect(polyline([], 100, 50)).toBeNull();
  });
});

describe("labels mirror service values", () => {
  it("maps known severities to badges without re-deriving thresholds", () => {
    expect(severityBadge("moderate").label).toBe("Moderate");
    expect(severityBadge("severe").css).toBe("badge-severe");
    // unknown values pass straight through rather than being reclassified
    expect(severityBadge("mystery").label).toBe("mystery");
  });

  it("maps remarks", () => {
    expect(remarkBadge("anemic").label).toBe("Anemic");
    expect(remarkBadge("non_anemic").css).toBe("badge-ok");
  });

  it("formats hemoglobin", () => {
    expect(formatHb(9.4)).toBe("9.40 g/dL");
  });
});

describe("SnapshotCache", () => {
  const record: PatientRecord = {
    patient_id: "p1",
    demographics: { name: "N", birth_date: "", sex: "", contact: "" },
    encounters: [],
    screenings: [screening(1, 9.4, "moderate")],
    revision: 1,
  };

  it("persists snapshots across reloads", () => {
    const storage = new MemoryStorage();
    const cache = new SnapshotCache(storage);
    cache.rememberRecord(record);
    cache.rememberPatients([
      { patient_id: "p1", name: "N", revision: 1, n_screenings: 1 },
    ]);
    const reloaded = new SnapshotCache(storage);
    expect(reloaded.record("p1")?.screenings[0].predicted_hb_gdl).toBe(9.4);
    expect(reloaded.patients()).toHaveLength(1);
    expect(reloaded.record("ghost")).toBeNull();
  });
});

describe("ViewState", () => {
  it("blocks patient views without a session when online", () => {
    const state = new ViewState();
    expect(() => state.navigate({ kind: "patients" })).toThrow(/session/);
    state.setAuthenticated(true);
    state.navigate({ kind: "patients" });
    expect(state.view.kind).toBe("patients");
  });

  it("allows cached read-only views while offline", () => {
    const state = new ViewState();
    state.setOffline(true);
    state.navigate({ kind: "chart", patientId: "p1" });
    expect(state.view).toEqual({ kind: "chart", patientId: "p1" });
  });

  it("returns to login on logout", () => {
    const state = new ViewState();
    state.setAuthenticated(true);
    state.navigate({ kind: "patients" });
    state.setAuthenticated(false);
    expect(state.view.kind).toBe("login");
  });

  it("notifies subscribers", () => {
    const state = new ViewState();
    let calls = 0;
    state.subscribe(() => calls++);
    state.setAuthenticated(true);
    state.setOffline(true);
    expect(calls).toBe(2);
  });
});
