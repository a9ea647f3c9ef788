/**
 * Manual ROI overlay: the detector is external, so the operator draws the
 * nail/skin/reference boxes over the captured frame. Boxes convert to the
 * service's normalized center-format annotation lines.
 */

export type RegionClass = "nail" | "skin" | "reference";

export const REGION_CLASS_IDS: Record<RegionClass, number> = {
  nail: 0,
  skin: 1,
  reference: 2,
};

export interface OverlayBox {
  region: RegionClass;
  cx: number; // normalized [0,1]
  cy: number;
  w: number;
  h: number;
}

const clamp01 = (v: number) => Math.min(1, Math.max(0, v));

/**
 * Convert a drag rectangle in displayed-pixel coordinates into a normalized
 * box. Returns null for degenerate drags (zero-ish area).
 */
export function boxFromDrag(
  region: RegionClass,
  x0: number,
  y0: number,
  x1: number,
  y1: number,
  displayWidth: number,
  displayHeight: number,
): OverlayBox | null {
  if (displayWidth <= 0 || displayHeight <= 0) return null;
  const left = clamp01(Math.min(x0, x1) / displayWidth);
  const right = clamp01(Math.max(x0, x1) / displayWidth);
  const top = clamp01(Math.min(y0, y1) / displayHeight);
  const bottom = clamp01(Math.max(y0, y1) / displayHeight);
  const w = right - left;
  const h = bottom - top;
  if (w < 0.005 || h < 0.005) return null;
  return { region, cx: left + w / 2, cy: top + h / 2, w, h };
}

export function encodeAnnotations(boxes: OverlayBox[]): string {
  return boxes
    .map(
      (b) =>
        `${REGION_CLASS_IDS[b.region]} ${b.cx.toFixed(6)} ${b.cy.toFixed(6)} ` +
        `${b.w.toFixed(6)} ${b.h.toFixed(6)}`,
    )
    .join("\n");
}

/** Client-side gate: a submission needs at least one nail box. */
export function validateForSubmit(boxes: OverlayBox[]): string | null {
  if (!boxes.some((b) => b.region === "nail")) {
    return "draw at least one nail box before submitting";
  }
  return null;
}
