import { describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { dataUrlToBlob, OfflineQueue } from "../src/queue.js";
import { MemoryStorage, MockService, pngDataUrl } from "./mock_service.js";

async function loggedInClient(service: MockService): Promise<ApiClient> {
  const client = new ApiClient("", service.fetch);
  await client.login("clin", "clin-password-1");
  return client;
}

describe("dataUrlToBlob", () => {
  it("round-trips bytes", async () => {
    const url = pngDataUrl(3);
    const blob = dataUrlToBlob(url);
    expect(blob.type).toBe("image/png");
    const bytes = new Uint8Array(await blob.arrayBuffer());
    expect(bytes).toHaveLength(64);
    expect(bytes[1]).toBe((3 * 31 + 7) % 256);
  });

  it("rejects non-data URLs", () => {
    expect(() => dataUrlToBlob("https://example.com/x.png")).toThrow();
  });
});

describe("OfflineQueue", () => {
  it("persists items and survives a page reload", () => {
    const storage = new MemoryStorage();
    const queue = new OfflineQueue(storage);
    queue.enqueue({ patientId: "p1", imageDataUrl: pngDataUrl(1), annotations: "0 .5 .5 .2 .2" });
    queue.enqueue({ patientId: "p2", imageDataUrl: pngDataUrl(2), annotations: "0 .4 .4 .2 .2" });
    expect(queue.length).toBe(2);

    const reloaded = new OfflineQueue(storage); // same storage, fresh instance
    expect(reloaded.length).toBe(2);
    expect(reloaded.peekAll()[0].patientId).toBe("p1"); // FIFO order kept
    expect(reloaded.peekAll()[1].patientId).toBe("p2");
  });

  it("drains FIFO on 2xx and empties the queue", async () => {
    const service = new MockService();
    const client = await loggedInClient(service);
    const p1 = await client.createPatient({ name: "A" });
    const p2 = await client.createPatient({ name: "B" });

    const storage = new MemoryStorage();
    const queue = new OfflineQueue(storage);
    queue.enqueue({
      patientId: p1.patient_id,
      imageDataUrl: pngDataUrl(5),
      annotations: "0 0.5 0.5 0.2 0.2",
    });
    queue.enqueue({
      patientId: p2.patient_id,
      imageDataUrl: pngDataUrl(6),
      annotations: "0 0.5 0.5 0.2 0.2",
    });

    const report = await queue.drain(client);
    expect(report.delivered).toHaveLength(2);
    expect(report.failed).toHaveLength(0);
    expect(report.remaining).toBe(0);
    expect(queue.length).toBe(0);
    expect(report.delivered[0].item.patientId).toBe(p1.patient_id);
    expect((await client.listScreenings(p1.patient_id))).toHaveLength(1);
  });

  it("keeps everything queued while offline", async () => {
    const service = new MockService();
    const client = await loggedInClient(service);
    const p1 = await client.createPatient({ name: "A" });

    const storage = new MemoryStorage();
    const queue = new OfflineQueue(storage);
    queue.enqueue({
      patientId: p1.patient_id,
      imageDataUrl: pngDataUrl(5),
      annotations: "0 0.5 0.5 0.2 0.2",
    });
    service.offline = true;
    const report = await queue.drain(client);
    expect(report.delivered).toHaveLength(0);
    expect(report.remaining).toBe(1);
    expect(queue.length).toBe(1);
  });

  it("moves definitive rejections to failed without blocking the queue", async () => {
    const service = new MockService();
    const client = await loggedInClient(service);
    const p1 = await client.createPatient({ name: "A" });

    const storage = new MemoryStorage();
    const queue = new OfflineQueue(storage);
    queue.enqueue({
      patientId: p1.patient_id,
      imageDataUrl: pngDataUrl(8),
      annotations: "1 0.5 0.5 0.2 0.2", // skin only: service rejects with 422
    });
    queue.enqueue({
      patientId: p1.patient_id,
      imageDataUrl: pngDataUrl(9),
      annotations: "0 0.5 0.5 0.2 0.2",
    });
    const report = await queue.drain(client);
    expect(report.failed).toHaveLength(1);
    expect(report.failed[0].reason).toMatch(/nail/);
    expect(report.delivered).toHaveLength(1);
    expect(queue.length).toBe(0);
  });

  it("never stores tokens or credentials", async () => {
    const service = new MockService();
    const client = await loggedInClient(service);
    const storage = new MemoryStorage();
    const queue = new OfflineQueue(storage);
    queue.enqueue({ patientId: "p1", imageDataUrl: pngDataUrl(1), annotations: "0 .5 .5 .1 .1" });
    await queue.drain(client).catch(() => undefined);
    const dump = storage.dump();
    for (const token of service.tokens) {
      expect(dump).not.toContain(token);
    }
    expect(dump).not.toContain("clin-password-1");
  });
});
