/** Browser wiring: canvas rendering and event plumbing over the logic
 * modules. Everything testable lives in transform/tools/store/controller;
 * this file only translates DOM events and draws. */

import { ApiClient } from "./api.js";
import { SessionController } from "./controller.js";
import { cssColor, legendStops, placeDetections } from "./overlay.js";
import { ViewState } from "./store.js";
import { ScreenPoint, imageToScreen, pan, zoomAbout } from "./transform.js";
import { TOOL_KEYS, Tool, toolFor } from "./tools.js";
import { AnnotationKind } from "./types.js";

const KIND_COLORS: Record<AnnotationKind, string> = {
  PP: "#19d2ff",
  PS: "#19ffa8",
  NP: "#ffd319",
  NS: "#ff8019",
};

export class App {
  private tool: Tool;
  private image: HTMLImageElement | null = null;
  private dragging = false;
  private lastPointer: ScreenPoint = { x: 0, y: 0 };

  constructor(
    private readonly canvas: HTMLCanvasElement,
    private readonly status: HTMLElement,
    readonly controller: SessionController,
    private readonly view: ViewState,
  ) {
    this.tool = toolFor(view.activeTool);
    canvas.addEventListener("pointerdown", (e) => this.onPointerDown(e));
    canvas.addEventListener("pointermove", (e) => this.onPointerMove(e));
    canvas.addEventListener("pointerup", (e) => this.onPointerUp(e));
    canvas.addEventListener("wheel", (e) => this.onWheel(e), { passive: false });
    window.addEventListener("keydown", (e) => this.onKey(e));
  }

  setTool(kind: AnnotationKind): void {
    this.view.activeTool = kind;
    this.tool = toolFor(kind);
    this.note(`tool: ${kind}`);
  }

  async loadFile(file: File): Promise<void> {
    const data = await file.arrayBuffer();
    const imageId = await this.controller.openImage(data);
    this.image = new Image();
    this.image.src = URL.createObjectURL(new Blob([data], { type: "image/png" }));
    await this.image.decode();
    this.note(`loaded ${imageId} (${this.view.imageHeight}x${this.view.imageWidth})`);
    this.render();
  }

  private screenPoint(e: PointerEvent): ScreenPoint {
    const rect = this.canvas.getBoundingClientRect();
    return { x: e.clientX - rect.left, y: e.clientY - rect.top };
  }

  private toolContext() {
    return {
      transform: this.view.transform,
      imageHeight: this.view.imageHeight,
      imageWidth: this.view.imageWidth,
      onRejected: () => this.note("outside the image"),
    };
  }

  private onPointerDown(e: PointerEvent): void {
    if (e.button === 1 || e.shiftKey) {
      this.dragging = true;
      this.lastPointer = this.screenPoint(e);
      return;
    }
    this.tool.pointerDown(this.screenPoint(e), this.toolContext());
  }

  private onPointerMove(e: PointerEvent): void {
    const p = this.screenPoint(e);
    if (this.dragging) {
      this.view.transform = pan(this.view.transform, p.x - this.lastPointer.x, p.y - this.lastPointer.y);
      this.lastPointer = p;
      this.render();
      return;
    }
    this.tool.pointerMove(p, this.toolContext());
  }

  private onPointerUp(e: PointerEvent): void {
    if (this.dragging) {
      this.dragging = false;
      return;
    }
    const annotation = this.tool.pointerUp(this.screenPoint(e), this.toolContext());
    if (annotation) {
      this.view.buffer.add(annotation);
      this.note(`${annotation.kind} buffered (${this.view.buffer.pendingCount} pending)`);
      this.render();
    }
  }

  private onWheel(e: WheelEvent): void {
    e.preventDefault();
    const factor = e.deltaY < 0 ? 1.25 : 0.8;
    this.view.transform = zoomAbout(this.view.transform, this.screenPoint(e as unknown as PointerEvent), factor);
    this.render();
  }

  private onKey(e: KeyboardEvent): void {
    const kind = TOOL_KEYS[e.key.toLowerCase()];
    if (kind) {
      this.setTool(kind);
    } else if (e.key === "z" && (e.ctrlKey || e.metaKey)) {
      this.view.buffer.undo();
      this.render();
    }
  }

  async submit(): Promise<void> {
    const outcome = await this.controller.submitBuffer();
    if (outcome.ok) {
      this.note(
        `submitted; ${outcome.unconsumedCount} unconsumed corrections` +
          (outcome.finetuneRunning ? " (fine-tuning)" : ""),
      );
    } else {
      this.note("submit failed; buffer kept, retry available");
    }
    this.render();
  }

  render(): void {
    const ctx = this.canvas.getContext("2d");
    if (!ctx) return;
    ctx.clearRect(0, 0, this.canvas.width, this.canvas.height);
    const t = this.view.transform;
    if (this.image && this.view.overlays.raw) {
      ctx.imageSmoothingEnabled = t.scale < 1;
      ctx.drawImage(
        this.image,
        t.panX,
        t.panY,
        this.view.imageWidth * t.scale,
        this.view.imageHeight * t.scale,
      );
    }
    if (this.view.overlays.detections) {
      for (const placed of placeDetections(this.controller.detections, t)) {
        ctx.beginPath();
        ctx.arc(placed.screen.x, placed.screen.y, 5, 0, 2 * Math.PI);
        ctx.fillStyle = cssColor(placed.color);
        ctx.fill();
        ctx.strokeStyle = "#000";
        ctx.stroke();
      }
    }
    for (const list of [this.view.buffer.submittedAnnotations, this.view.buffer.pendingAnnotations]) {
      for (const annotation of list) {
        ctx.strokeStyle = ctx.fillStyle = KIND_COLORS[annotation.kind];
        if (annotation.points.length === 1) {
          const s = imageToScreen(t, annotation.points[0].row + 0.5, annotation.points[0].col + 0.5);
          ctx.beginPath();
          ctx.arc(s.x, s.y, annotation.state === "pending" ? 4 : 3, 0, 2 * Math.PI);
          ctx.fill();
        } else {
          ctx.beginPath();
          annotation.points.forEach((p, i) => {
            const s = imageToScreen(t, p.row + 0.5, p.col + 0.5);
            if (i === 0) ctx.moveTo(s.x, s.y);
            else ctx.lineTo(s.x, s.y);
          });
          ctx.lineWidth = annotation.state === "pending" ? 3 : 2;
          ctx.stroke();
        }
      }
    }
    this.drawLegend(ctx);
  }

  private drawLegend(ctx: CanvasRenderingContext2D): void {
    const stops = legendStops(10);
    const x0 = this.canvas.width - 30;
    stops.forEach((stop, i) => {
      ctx.fillStyle = cssColor(stop.color);
      ctx.fillRect(x0, this.canvas.height - 20 - i * 12, 18, 12);
    });
    ctx.fillStyle = "#fff";
    ctx.font = "10px sans-serif";
    ctx.fillText("1.0", x0 - 20, this.canvas.height - 20 - 10 * 12 + 10);
    ctx.fillText("0.0", x0 - 20, this.canvas.height - 12);
  }

  private note(message: string): void {
    this.status.textContent = message;
  }
}

export function boot(): void {
  const canvas = document.getElementById("viewer") as HTMLCanvasElement;
  const status = document.getElementById("status") as HTMLElement;
  const fileInput = document.getElementById("file") as HTMLInputElement;
  const submitButton = document.getElementById("submit") as HTMLButtonElement;
  const detectButton = document.getElementById("detect") as HTMLButtonElement;
  const undoButton = document.getElementById("undo") as HTMLButtonElement;

  const view = new ViewState();
  const controller = new SessionController(new ApiClient(""), view);
  const app = new App(canvas, status, controller, view);

  fileInput.addEventListener("change", () => {
    const file = fileInput.files?.[0];
    if (file) void app.loadFile(file);
  });
  submitButton.addEventListener("click", () => void app.submit());
  detectButton.addEventListener("click", async () => {
    await controller.detect();
    app.render();
  });
  undoButton.addEventListener("click", () => {
    view.buffer.undo();
    app.render();
  });
  window.setInterval(() => void controller.pollModels(), 5000);
}
