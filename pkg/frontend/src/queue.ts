/**
 * Offline submission queue: FIFO, persisted to storage so it survives page
 * reloads, drained only on confirmed 2xx responses. Sessions and tokens are
 * NEVER stored here; a queued item holds only the sample payload itself.
 */

import { ApiClient, ApiError, OfflineError, ScreeningResult } from "./api.js";

export interface PendingSubmission {
  id: string;
  patientId: string;
  imageDataUrl: string; // data:image/png;base64,...
  annotations: string;
  queuedAt: number;
}

export interface FailedSubmission extends PendingSubmission {
  reason: string;
}

export interface DrainReport {
  delivered: { item: PendingSubmission; result: ScreeningResult }[];
  failed: FailedSubmission[];
  remaining: number;
}

interface StorageLike {
  getItem(key: string): string | null;
  setItem(key: string, value: string): void;
  removeItem(key: string): void;
}

const QUEUE_KEY = "pocscreen.queue.v1";

export function dataUrlToBlob(dataUrl: string): Blob {
  const [meta, base64] = dataUrl.split(",", 2);
  const match = /^data:([^;]+);base64$/.exec(meta);
  if (!match || base64 === undefined) {
    throw new Error("expected a base64 data URL");
  }
  const binary = atob(base64);
  const bytes = new Uint8Array(binary.length);
  for (let i = 0; i < binary.length; i++) bytes[i] = binary.charCodeAt(i);
  return new Blob([bytes], { type: match[1] });
}

export class OfflineQueue {
  private items: PendingSubmission[];

  constructor(private storage: StorageLike) {
    this.items = this.load();
  }

  private load(): PendingSubmission[] {
    const raw = this.storage.getItem(QUEUE_KEY);
    if (!raw) return [];
    try {
      const parsed = JSON.parse(raw) as PendingSubmission[];
      return Array.isArray(parsed) ? parsed : [];
    } catch {
      return [];
    }
  }

  private save(): void {
    this.storage.setItem(QUEUE_KEY, JSON.stringify(this.items));
  }

  get length(): number {
    return this.items.length;
  }

  peekAll(): readonly PendingSubmission[] {
    return this.items;
  }

  enqueue(item: Omit<PendingSubmission, "id" | "queuedAt">): PendingSubmission {
    const pending: PendingSubmission = {
      ...item,
      id: `q${Date.now().toString(36)}${Math.random().toString(36).slice(2, 8)}`,
      queuedAt: Date.now(),
    };
    this.items.push(pending);
    this.save();
    return pending;
  }

  /**
   * Deliver queued submissions in FIFO order. Items leave the queue on a
   * 2xx (delivered) or a definitive rejection (recorded under `failed`). A
   * connectivity failure stops the drain with everything else still queued.
   */
  async drain(client: ApiClient): Promise<DrainReport> {
    const report: DrainReport = { delivered: [], failed: [], remaining: 0 };
    while (this.items.length > 0) {
      const item = this.items[0];
      try {
        const result = await client.submitSample(
          item.patientId,
          dataUrlToBlob(item.imageDataUrl),
          item.annotations,
        );
        report.delivered.push({ item, result });
        this.items.shift();
        this.save();
      } catch (err) {
        if (err instanceof OfflineError) {
          break; // still offline: keep the item, retry on the next drain
        }
        const reason = err instanceof ApiError ? err.message : String(err);
        report.failed.push({ ...item, reason });
        this.items.shift();
        this.save();
      }
    }
    report.remaining = this.items.length;
    return report;
  }
}
