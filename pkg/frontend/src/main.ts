/**
 * DOM wiring for the designer loop:
 * upload -> render -> segment -> sketch -> gallery -> preview -> commit/undo.
 */

import { ApiClient } from "./api.js";
import { buildGallery } from "./gallery.js";
import { SKETCH_SIZE, SketchStroke } from "./sketch.js";
import { SessionController, UiSessionState } from "./state.js";
import { Viewport } from "./viewport.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) {
    throw new Error(`missing element #${id}`);
  }
  return node as T;
}

class SketchPad {
  readonly strokes: SketchStroke[] = [];
  private drawing: SketchStroke | null = null;
  private readonly ctx: CanvasRenderingContext2D;

  constructor(private readonly canvas: HTMLCanvasElement,
              private readonly strokeWidth = 3) {
    canvas.width = SKETCH_SIZE;
    canvas.height = SKETCH_SIZE;
    this.ctx = canvas.getContext("2d")!;
    this.clear();
    canvas.addEventListener("pointerdown", (e) => this.begin(e));
    canvas.addEventListener("pointermove", (e) => this.extend(e));
    window.addEventListener("pointerup", () => this.finish());
  }

  private canvasPoint(e: PointerEvent): { x: number; y: number } {
    const rect = this.canvas.getBoundingClientRect();
    return {
      x: ((e.clientX - rect.left) / rect.width) * SKETCH_SIZE,
      y: ((e.clientY - rect.top) / rect.height) * SKETCH_SIZE,
    };
  }

  private begin(e: PointerEvent): void {
    this.drawing = { points: [this.canvasPoint(e)], width: this.strokeWidth };
  }

  private extend(e: PointerEvent): void {
    if (!this.drawing) {
      return;
    }
    const p = this.canvasPoint(e);
    const last = this.drawing.points[this.drawing.points.length - 1];
    this.drawing.points.push(p);
    this.ctx.strokeStyle = "#111";
    this.ctx.lineWidth = this.strokeWidth;
    this.ctx.lineCap = "round";
    this.ctx.beginPath();
    this.ctx.moveTo(last.x, last.y);
    this.ctx.lineTo(p.x, p.y);
    this.ctx.stroke();
  }

  private finish(): void {
    if (this.drawing && this.drawing.points.length >= 2) {
      this.strokes.push(this.drawing);
    }
    this.drawing = null;
  }

  clear(): void {
    this.strokes.length = 0;
    this.ctx.fillStyle = "#fff";
    this.ctx.fillRect(0, 0, SKETCH_SIZE, SKETCH_SIZE);
  }
}

async function boot(): Promise<void> {
  // served statically, the API origin comes from ?api=http://host:port
  const apiBase = new URLSearchParams(window.location.search).get("api") ?? "";
  const api = new ApiClient(apiBase);
  const controller = new SessionController(api);
  const viewport = new Viewport(el("viewport"));
  await viewport.init();
  const pad = new SketchPad(el<HTMLCanvasElement>("sketch-canvas"));

  const renderImg = el<HTMLImageElement>("render-view");
  const targetsBox = el("targets");
  const galleryBox = el("gallery");
  const reportBox = el("report");
  const toastBox = el("toasts");
  const commitButton = el<HTMLButtonElement>("commit");

  let shownToasts = 0;
  let shownHash: string | null = null;

  controller.onChange((state: UiSessionState) => {
    commitButton.disabled = !controller.canCommit;
    el("status").textContent = state.busy ? "busy"
      : state.summary ? `ready: ${state.summary.face_count} faces` : "no model";

    if (state.render) {
      renderImg.src = `data:image/png;base64,${state.render.image_png_base64}`;
    }

    targetsBox.replaceChildren(...state.targets.map((target, i) => {
      const chip = document.createElement("button");
      chip.textContent = `${target.label} #${i}`;
      chip.className = i === state.selectedTarget ? "chip selected" : "chip";
      chip.onclick = () => controller.selectTarget(i);
      return chip;
    }));

    galleryBox.replaceChildren(...buildGallery(state.candidates).map((item) => {
      const card = document.createElement("button");
      card.className = item.componentId === state.selectedCandidate
        ? "card selected" : "card";
      const img = document.createElement("img");
      img.src = item.thumbnailUrl;
      const caption = document.createElement("div");
      caption.textContent = `#${item.rank + 1} ${item.label} ${item.scoreText}`;
      card.append(img, caption);
      card.onclick = () => void controller.selectCandidate(item.componentId);
      return card;
    }));

    if (state.lastReport) {
      reportBox.textContent =
        `removed ${state.lastReport.removed_face_count}, ` +
        `added ${state.lastReport.added_face_count}, ` +
        `open boundary edges ${state.lastReport.open_boundary_edge_count}`;
    }

    const preview = state.pendingPreview;
    if (preview) {
      const obb = (preview.plan as { target_obb: { center: number[];
        half_extents: number[]; axes: number[] } }).target_obb;
      viewport.showGhostBox(obb.center, obb.half_extents, obb.axes);
    } else {
      viewport.clearGhost();
    }

    for (; shownToasts < state.toasts.length; shownToasts++) {
      const toast = state.toasts[shownToasts];
      const node = document.createElement("div");
      node.className = `toast ${toast.kind}`;
      node.textContent = `${toast.code}: ${toast.message}`;
      toastBox.appendChild(node);
      setTimeout(() => node.remove(), 6000);
    }

    if (state.exportHash && state.exportHash !== shownHash && state.sessionId) {
      shownHash = state.exportHash;
      void api.exportGlb(state.sessionId).then((glb) => viewport.showGlb(glb));
    }
  });

  await controller.start();

  el<HTMLInputElement>("model-file").addEventListener("change", async (e) => {
    const input = e.target as HTMLInputElement;
    if (input.files && input.files[0]) {
      await controller.uploadModel(input.files[0]);
    }
  });
  el("segment").onclick = () =>
    void controller.segment(el<HTMLInputElement>("prompt").value || "window");
  el("submit-sketch").onclick = () => void controller.submitSketch(pad.strokes);
  el("clear-sketch").onclick = () => pad.clear();
  commitButton.onclick = () => void controller.commit();
  el("undo").onclick = () => void controller.undo();
  el<HTMLSelectElement>("mode").onchange = (e) =>
    controller.setScalingMode((e.target as HTMLSelectElement).value as
      "per_axis" | "uniform");
}

void boot();
