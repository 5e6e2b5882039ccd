/** Client-side state: the unsubmitted annotation buffer (with undo) and the
 * view state. Submitted annotations are an append-only mirror of the server;
 * the UI never mutates them after submission. */

import { ViewTransform, identityTransform } from "./transform.js";
import { AnnotationKind, CanvasAnnotation } from "./types.js";

export class AnnotationBuffer {
  private pending: CanvasAnnotation[] = [];
  private submitted: CanvasAnnotation[] = [];

  add(annotation: CanvasAnnotation): void {
    if (annotation.state !== "pending") {
      throw new Error("only pending annotations enter the buffer");
    }
    this.pending.push(annotation);
  }

  /** Remove and return the most recent unsubmitted annotation. */
  undo(): CanvasAnnotation | null {
    return this.pending.pop() ?? null;
  }

  get pendingAnnotations(): readonly CanvasAnnotation[] {
    return this.pending;
  }

  get submittedAnnotations(): readonly CanvasAnnotation[] {
    return this.submitted;
  }

  get pendingCount(): number {
    return this.pending.length;
  }

  /** Called after a successful POST: pending entries become submitted. */
  markSubmitted(): void {
    for (const annotation of this.pending) {
      this.submitted.push({ ...annotation, state: "submitted" });
    }
    this.pending = [];
  }

  /** Replace the submitted mirror from the server's stored records. */
  resetSubmitted(annotations: CanvasAnnotation[]): void {
    this.submitted = annotations.map((a) => ({ ...a, state: "submitted" }));
  }

  clearPending(): void {
    this.pending = [];
  }
}

export interface OverlayToggles {
  raw: boolean;
  probabilityMap: boolean;
  detections: boolean;
}

export class ViewState {
  activeImageId: string | null = null;
  imageHeight = 0;
  imageWidth = 0;
  transform: ViewTransform = identityTransform();
  overlays: OverlayToggles = { raw: true, probabilityMap: false, detections: true };
  probabilityOpacity = 0.5;
  activeTool: AnnotationKind = "PP";
  buffer = new AnnotationBuffer();

  setImage(imageId: string, height: number, width: number): void {
    this.activeImageId = imageId;
    this.imageHeight = height;
    this.imageWidth = width;
    this.transform = identityTransform();
    this.buffer = new AnnotationBuffer();
  }
}
