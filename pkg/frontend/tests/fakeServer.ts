/** In-memory stand-in for the detection service, implementing the same
 * endpoints, validation rules and response shapes. Used to script browser
 * sessions without a network. */

import { FetchFn } from "../src/api.js";
import { AnnotationKind, DetectionRecord, StoredRecord } from "../src/types.js";

const KINDS: AnnotationKind[] = ["PP", "NP", "PS", "NS"];

interface FakeImage {
  height: number;
  width: number;
}

export class FakeServer {
  images = new Map<string, FakeImage>();
  records: StoredRecord[] = [];
  detections: DetectionRecord[] = [];
  activeModelId = "m0001";
  finetuneRunning = false;
  trigger = 200;
  failNextRequests = 0;
  capturedBodies: string[] = [];

  private imageCounter = 0;

  constructor(private readonly defaultDims: FakeImage = { height: 128, width: 128 }) {}

  unconsumedCount(): number {
    return this.records.filter((r) => r.consumed_by_model_id === null).length;
  }

  private respond(status: number, body: unknown): Response {
    return new Response(JSON.stringify(body), {
      status,
      headers: { "content-type": "application/json" },
    });
  }

  fetch: FetchFn = async (url, init) => {
    if (this.failNextRequests > 0) {
      this.failNextRequests -= 1;
      throw new TypeError("network failure (injected)");
    }
    const method = init?.method ?? "GET";
    const path = url.replace(/^https?:\/\/[^/]+/, "");

    if (method === "POST" && path === "/images") {
      this.imageCounter += 1;
      const imageId = `img${String(this.imageCounter).padStart(4, "0")}`;
      this.images.set(imageId, { ...this.defaultDims });
      return this.respond(200, { image_id: imageId, ...this.defaultDims });
    }

    const detectMatch = path.match(/^\/images\/([^/]+)\/detect$/);
    if (method === "POST" && detectMatch) {
      if (!this.images.has(detectMatch[1])) {
        return this.respond(404, { detail: "unknown image" });
      }
      return this.respond(200, {
        image_id: detectMatch[1],
        model_id: this.activeModelId,
        threshold: 0.5,
        count: this.detections.length,
        detections: this.detections,
        probmap: "detections/probmap.png",
        detections_file: "detections/out.csv",
      });
    }

    const annotationsMatch = path.match(/^\/images\/([^/]+)\/annotations$/);
    if (annotationsMatch) {
      const imageId = annotationsMatch[1];
      const image = this.images.get(imageId);
      if (!image) {
        return this.respond(404, { detail: "unknown image" });
      }
      if (method === "GET") {
        return this.respond(200, {
          records: this.records.filter((r) => r.fov_id === imageId),
        });
      }
      const raw = String(init?.body ?? "");
      this.capturedBodies.push(raw);
      let body: { records?: unknown } | unknown[];
      try {
        body = JSON.parse(raw);
      } catch {
        return this.respond(400, { detail: "invalid JSON" });
      }
      const items = Array.isArray(body) ? body : (body.records as unknown[]);
      const errors: unknown[] = [];
      const accepted: StoredRecord[] = [];
      (items ?? []).forEach((item, index) => {
        const rec = item as { fov_id?: string; kind?: AnnotationKind; points?: [number, number][] };
        if (!rec.kind || !KINDS.includes(rec.kind)) {
          errors.push({ index, field: "kind", error: "bad kind" });
          return;
        }
        if (!Array.isArray(rec.points) || rec.points.length === 0) {
          errors.push({ index, field: "points", error: "bad points" });
          return;
        }
        const outside = rec.points.some(
          ([row, col]) => row < 0 || row >= image.height || col < 0 || col >= image.width,
        );
        if (outside) {
          errors.push({ index, field: "points", error: "outside bounds" });
          return;
        }
        if (rec.fov_id !== undefined && rec.fov_id !== imageId) {
          errors.push({ index, field: "fov_id", error: "mismatch" });
          return;
        }
        accepted.push({
          id: this.records.length + accepted.length + 1,
          fov_id: imageId,
          kind: rec.kind,
          points: rec.points.map(([r, c]) => [r, c] as [number, number]),
          author: "",
          timestamp: Date.now() / 1000,
          consumed_by_model_id: null,
        });
      });
      if (errors.length > 0) {
        return this.respond(400, { detail: errors });
      }
      this.records.push(...accepted);
      const unconsumed = this.unconsumedCount();
      const triggered = unconsumed >= this.trigger && !this.finetuneRunning;
      if (triggered) {
        this.finetuneRunning = true;
      }
      return this.respond(200, {
        accepted: accepted.length,
        unconsumed_count: unconsumed,
        finetune_triggered: triggered,
        finetune_running: this.finetuneRunning,
      });
    }

    if (method === "GET" && path === "/models") {
      return this.respond(200, {
        active_model_id: this.activeModelId,
        finetune_running: this.finetuneRunning,
        finetune_error: null,
        models: [
          {
            model_id: this.activeModelId,
            parent_id: null,
            path: `models/${this.activeModelId}`,
            threshold: 0.5,
            created: 0,
            status: "ready",
          },
        ],
      });
    }

    return this.respond(404, { detail: `no route for ${method} ${path}` });
  };

  /** Simulate a fine-tune completing and swapping the active model. */
  completeFinetune(childId: string): void {
    for (const record of this.records) {
      if (record.consumed_by_model_id === null) {
        record.consumed_by_model_id = childId;
      }
    }
    this.activeModelId = childId;
    this.finetuneRunning = false;
  }
}
