/**
 * Presentation for service-computed labels. The service is the single source
 * of truth for remark/severity; the dashboard never re-derives thresholds.
 */

const SEVERITY_BADGES: Record<string, { label: string; css: string }> = {
  non_anemic: { label: "Non-anemic", css: "badge-ok" },
  mild: { label: "Mild", css: "badge-mild" },
  moderate: { label: "Moderate", css: "badge-moderate" },
  severe: { label: "Severe", css: "badge-severe" },
};

const REMARK_BADGES: Record<string, { label: string; css: string }> = {
  non_anemic: { label: "Non-anemic", css: "badge-ok" },
  anemic: { label: "Anemic", css: "badge-moderate" },
};

export function severityBadge(severity: string): { label: string; css: string } {
  return SEVERITY_BADGES[severity] ?? { label: severity, css: "badge-unknown" };
}

export function remarkBadge(remark: string): { label: string; css: string } {
  return REMARK_BADGES[remark] ?? { label: remark, css: "badge-unknown" };
}

export function formatHb(hb: number): string {
  return `${hb.toFixed(2)} g/dL`;
}

export function formatDate(epochSeconds: number): string {
  return new Date(epochSeconds * 1000).toISOString().slice(0, 10);
}
