/** Annotation tools: clicks emit one point, scribbles sample a polyline at
 * pointer-move granularity. Tools work in screen space and emit image-pixel
 * annotations through the current view transform; interactions outside the
 * image are ignored with a feedback callback. */

import { ScreenPoint, ViewTransform, inBounds, screenToImagePixel } from "./transform.js";
import { AnnotationKind, CanvasAnnotation, CLICK_KINDS, ImagePoint } from "./types.js";

export const TOOL_KEYS: Record<string, AnnotationKind> = {
  p: "PP",
  n: "NP",
  s: "PS",
  x: "NS",
};

export interface ToolContext {
  transform: ViewTransform;
  imageHeight: number;
  imageWidth: number;
  /** Called when an interaction lands outside the image. */
  onRejected?: (point: ScreenPoint) => void;
}

export interface Tool {
  readonly kind: AnnotationKind;
  pointerDown(p: ScreenPoint, ctx: ToolContext): void;
  pointerMove(p: ScreenPoint, ctx: ToolContext): void;
  /** Returns the finished annotation, or null if none was produced. */
  pointerUp(p: ScreenPoint, ctx: ToolContext): CanvasAnnotation | null;
}

export class ClickTool implements Tool {
  constructor(readonly kind: AnnotationKind) {
    if (!CLICK_KINDS.includes(kind)) {
      throw new Error(`${kind} is not a click kind`);
    }
  }

  pointerDown(): void {}

  pointerMove(): void {}

  pointerUp(p: ScreenPoint, ctx: ToolContext): CanvasAnnotation | null {
    const pixel = screenToImagePixel(ctx.transform, p);
    if (!inBounds(pixel, ctx.imageHeight, ctx.imageWidth)) {
      ctx.onRejected?.(p);
      return null;
    }
    return { kind: this.kind, points: [pixel], state: "pending" };
  }
}

export class ScribbleTool implements Tool {
  private stroke: ImagePoint[] = [];
  private active = false;

  constructor(readonly kind: AnnotationKind) {
    if (CLICK_KINDS.includes(kind)) {
      throw new Error(`${kind} is not a scribble kind`);
    }
  }

  private push(p: ScreenPoint, ctx: ToolContext): void {
    const pixel = screenToImagePixel(ctx.transform, p);
    if (!inBounds(pixel, ctx.imageHeight, ctx.imageWidth)) {
      return; // stroke samples outside the image are skipped
    }
    const last = this.stroke[this.stroke.length - 1];
    if (!last || last.row !== pixel.row || last.col !== pixel.col) {
      this.stroke.push(pixel);
    }
  }

  pointerDown(p: ScreenPoint, ctx: ToolContext): void {
    this.active = true;
    this.stroke = [];
    this.push(p, ctx);
  }

  pointerMove(p: ScreenPoint, ctx: ToolContext): void {
    if (this.active) {
      this.push(p, ctx);
    }
  }

  pointerUp(p: ScreenPoint, ctx: ToolContext): CanvasAnnotation | null {
    if (!this.active) {
      return null;
    }
    this.push(p, ctx);
    this.active = false;
    const points = this.stroke;
    this.stroke = [];
    if (points.length === 0) {
      ctx.onRejected?.(p);
      return null;
    }
    return { kind: this.kind, points, state: "pending" };
  }
}

export function toolFor(kind: AnnotationKind): Tool {
  return CLICK_KINDS.includes(kind) ? new ClickTool(kind) : new ScribbleTool(kind);
}
