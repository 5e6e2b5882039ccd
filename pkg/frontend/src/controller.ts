/** Session controller: optimistic UI with server reconciliation on submit.
 *
 * Drawn annotations wait in the buffer; submit POSTs them in the canonical
 * wire encoding. On success the buffer moves to the submitted mirror and the
 * unconsumed-correction counter reflects the server's count; on failure the
 * buffer is retained and a retry affordance is flagged. When a fine-tune
 * produces a new active model, the controller asks for a re-detection of the
 * open image.
 */

import { ApiClient } from "./api.js";
import { recordPoints } from "./schema.js";
import { ViewState } from "./store.js";
import { DetectionRecord } from "./types.js";

export interface SubmitOutcome {
  ok: boolean;
  unconsumedCount: number | null;
  finetuneRunning: boolean;
  retryAvailable: boolean;
}

export class SessionController {
  detections: DetectionRecord[] = [];
  lastDetectionModelId: string | null = null;
  unconsumedCount = 0;
  finetuneRunning = false;
  redetectSuggested = false;

  constructor(
    readonly api: ApiClient,
    readonly view: ViewState,
  ) {}

  async openImage(png: ArrayBuffer | Uint8Array): Promise<string> {
    const uploaded = await this.api.uploadImage(png);
    this.view.setImage(uploaded.image_id, uploaded.height, uploaded.width);
    this.detections = [];
    this.lastDetectionModelId = null;
    this.redetectSuggested = false;
    return uploaded.image_id;
  }

  async detect(): Promise<DetectionRecord[]> {
    const imageId = this.requireImage();
    const result = await this.api.detect(imageId);
    this.detections = result.detections;
    this.lastDetectionModelId = result.model_id;
    this.redetectSuggested = false;
    return this.detections;
  }

  /** POST the pending buffer; keep it untouched on any failure. */
  async submitBuffer(): Promise<SubmitOutcome> {
    const imageId = this.requireImage();
    const pending = this.view.buffer.pendingAnnotations;
    if (pending.length === 0) {
      throw new Error("nothing to submit");
    }
    try {
      const response = await this.api.submitAnnotations(imageId, [...pending]);
      this.view.buffer.markSubmitted();
      this.unconsumedCount = response.unconsumed_count;
      this.finetuneRunning = response.finetune_running || response.finetune_triggered;
      return {
        ok: true,
        unconsumedCount: response.unconsumed_count,
        finetuneRunning: this.finetuneRunning,
        retryAvailable: false,
      };
    } catch {
      return {
        ok: false,
        unconsumedCount: null,
        finetuneRunning: this.finetuneRunning,
        retryAvailable: true,
      };
    }
  }

  /** Re-fetch stored records and rebuild the submitted mirror from them. */
  async refreshAnnotations(): Promise<void> {
    const imageId = this.requireImage();
    const records = await this.api.fetchAnnotations(imageId);
    this.view.buffer.resetSubmitted(
      records.map((r) => ({
        kind: r.kind,
        points: recordPoints(r.points),
        state: "submitted" as const,
      })),
    );
  }

  /** Poll the registry; a new active model suggests re-detecting. */
  async pollModels(): Promise<void> {
    const models = await this.api.models();
    this.finetuneRunning = models.finetune_running;
    if (
      this.lastDetectionModelId !== null &&
      models.active_model_id !== null &&
      models.active_model_id !== this.lastDetectionModelId
    ) {
      this.redetectSuggested = true;
    }
  }

  private requireImage(): string {
    if (this.view.activeImageId === null) {
      throw new Error("no image loaded");
    }
    return this.view.activeImageId;
  }
}
