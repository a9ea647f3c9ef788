/**
 * Longitudinal hemoglobin trend derived from a patient's screening history.
 * The service returns screenings time-ordered; points preserve that order.
 */

import { ScreeningResult } from "./api.js";

export interface TrendPoint {
  timestamp: number;
  hb_gdl: number;
  severity: string;
}

export function trendPoints(screenings: ScreeningResult[]): TrendPoint[] {
  return screenings.map((s) => ({
    timestamp: s.timestamp,
    hb_gdl: s.predicted_hb_gdl,
    severity: s.severity,
  }));
}

/** SVG polyline points string for a fixed viewport, or null for <2 points. */
export function polyline(
  points: TrendPoint[],
  width: number,
  height: number,
  pad = 6,
): string | null {
  if (points.length < 2) return null;
  const ts = points.map((p) => p.timestamp);
  const hbs = points.map((p) => p.hb_gdl);
  const t0 = Math.min(...ts);
  const t1 = Math.max(...ts);
  const lo = Math.min(...hbs);
  const hi = Math.max(...hbs);
  const spanT = t1 - t0 || 1;
  const spanH = hi - lo || 1;
  return points
    .map((p) => {
      const x = pad + ((p.timestamp - t0) / spanT) * (width - 2 * pad);
      const y = height - pad - ((p.hb_gdl - lo) / spanH) * (height - 2 * pad);
      return `${x.toFixed(1)},${y.toFixed(1)}`;
    })
    .join(" ");
}
