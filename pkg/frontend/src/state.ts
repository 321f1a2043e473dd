/**
 * UI session state machine.
 *
 * Thin-client rule: state holds exactly what the service returned. Every
 * mutating call is guarded by the busy flag so double-clicks cannot issue
 * two commits; read-only calls (render, export) stay allowed.
 */

import {
  ApiClient,
  ApiError,
  Candidate,
  FusionReport,
  ModelSummary,
  PreviewResponse,
  RenderResponse,
  SegmentTarget,
} from "./api.js";
import { SketchStroke, encodePgm, hasInk, rasterizeSketch } from "./sketch.js";

export interface Toast {
  kind: "error" | "info";
  code: string;
  message: string;
}

export interface UiSessionState {
  sessionId: string | null;
  summary: ModelSummary | null;
  render: RenderResponse | null;
  targets: SegmentTarget[];
  candidates: Candidate[];
  selectedTarget: number | null;
  selectedCandidate: number | null;
  pendingPreview: PreviewResponse | null;
  lastReport: FusionReport | null;
  exportHash: string | null;
  scalingMode: "per_axis" | "uniform";
  busy: boolean;
  toasts: Toast[];
}

export function initialState(): UiSessionState {
  return {
    sessionId: null,
    summary: null,
    render: null,
    targets: [],
    candidates: [],
    selectedTarget: null,
    selectedCandidate: null,
    pendingPreview: null,
    lastReport: null,
    exportHash: null,
    scalingMode: "per_axis",
    busy: false,
    toasts: [],
  };
}

/** FNV-1a over bytes; display/comparison only. */
export function hashBytes(data: Uint8Array): string {
  let h = 0x811c9dc5;
  for (let i = 0; i < data.length; i++) {
    h ^= data[i];
    h = Math.imul(h, 0x01000193);
  }
  return (h >>> 0).toString(16).padStart(8, "0") + "-" + data.length.toString(16);
}

export class SessionController {
  readonly state: UiSessionState = initialState();
  private listeners: Array<(state: UiSessionState) => void> = [];

  constructor(private readonly api: ApiClient) {}

  onChange(listener: (state: UiSessionState) => void): void {
    this.listeners.push(listener);
  }

  private notify(): void {
    for (const listener of this.listeners) {
      listener(this.state);
    }
  }

  private toast(kind: Toast["kind"], code: string, message: string): void {
    this.state.toasts.push({ kind, code, message });
    this.notify();
  }

  /** Commit is enabled only with a target and candidate selected while idle. */
  get canCommit(): boolean {
    return (
      !this.state.busy &&
      this.state.selectedTarget !== null &&
      this.state.selectedCandidate !== null &&
      this.state.pendingPreview !== null
    );
  }

  /** Runs a mutating action under the busy flag; rejects re-entry. */
  private async mutate<T>(action: () => Promise<T>): Promise<T | null> {
    if (this.state.busy) {
      return null;
    }
    this.state.busy = true;
    this.notify();
    try {
      return await action();
    } catch (error) {
      if (error instanceof ApiError) {
        this.toast("error", error.code, error.message);
      } else {
        this.toast("error", "ClientError", String(error));
      }
      return null;
    } finally {
      this.state.busy = false;
      this.notify();
    }
  }

  private async refreshExportHash(): Promise<void> {
    if (!this.state.sessionId || !this.state.summary) {
      return;
    }
    const glb = await this.api.exportGlb(this.state.sessionId);
    this.state.exportHash = hashBytes(glb);
  }

  async start(): Promise<void> {
    await this.mutate(async () => {
      this.state.sessionId = await this.api.createSession();
    });
  }

  async uploadModel(glb: Uint8Array | Blob): Promise<void> {
    await this.mutate(async () => {
      const sid = this.requireSession();
      this.state.summary = await this.api.uploadModel(sid, glb);
      this.state.render = await this.api.render(sid);
      this.state.targets = [];
      this.state.candidates = [];
      this.state.selectedTarget = null;
      this.state.selectedCandidate = null;
      this.state.pendingPreview = null;
      this.state.lastReport = null;
      await this.refreshExportHash();
    });
  }

  async segment(prompt: string): Promise<void> {
    await this.mutate(async () => {
      const sid = this.requireSession();
      this.state.targets = await this.api.segment(sid, prompt);
      this.state.selectedTarget = this.state.targets.length ? 0 : null;
      this.state.pendingPreview = null;
    });
  }

  selectTarget(index: number): void {
    if (index >= 0 && index < this.state.targets.length) {
      this.state.selectedTarget = index;
      this.state.pendingPreview = null;
      this.notify();
    }
  }

  setScalingMode(mode: "per_axis" | "uniform"): void {
    this.state.scalingMode = mode;
    this.state.pendingPreview = null;
    this.notify();
  }

  /** Rasterizes the strokes and queries the catalog; blank sketches are
   * blocked client-side before any request is made. */
  async submitSketch(strokes: SketchStroke[], topK = 10): Promise<void> {
    const raster = rasterizeSketch(strokes);
    if (!hasInk(raster)) {
      this.toast("error", "EmptyQuery", "sketch is blank");
      return;
    }
    await this.mutate(async () => {
      const sid = this.requireSession();
      const candidates = await this.api.retrieve(sid, encodePgm(raster), topK);
      // gallery order is exactly the service's rank order
      this.state.candidates = candidates;
      this.state.selectedCandidate = null;
      this.state.pendingPreview = null;
    });
  }

  async selectCandidate(componentId: number): Promise<void> {
    await this.mutate(async () => {
      const sid = this.requireSession();
      if (this.state.selectedTarget === null) {
        throw new ApiError("PreconditionFailed", "select a target first");
      }
      this.state.selectedCandidate = componentId;
      this.state.pendingPreview = await this.api.preview(
        sid, this.state.selectedTarget, componentId, this.state.scalingMode);
      this.state.lastReport = this.state.pendingPreview.report;
    });
  }

  async commit(): Promise<void> {
    if (!this.canCommit) {
      return;
    }
    await this.mutate(async () => {
      const sid = this.requireSession();
      const preview = this.state.pendingPreview!;
      const result = await this.api.commit(sid, preview.plan, preview.revision);
      this.state.summary = result.summary;
      this.state.lastReport = result.report;
      this.state.pendingPreview = null;
      this.state.selectedCandidate = null;
      await this.refreshExportHash();
    });
  }

  async undo(): Promise<void> {
    await this.mutate(async () => {
      const sid = this.requireSession();
      this.state.summary = await this.api.undo(sid);
      this.state.pendingPreview = null;
      await this.refreshExportHash();
    });
  }

  private requireSession(): string {
    if (!this.state.sessionId) {
      throw new ApiError("PreconditionFailed", "no session started");
    }
    return this.state.sessionId;
  }
}
