import { describe, expect, it } from "vitest";

import {
  ApiClient,
  ApiError,
  Candidate,
  FusionReport,
  ModelSummary,
  PreviewResponse,
  RenderResponse,
  SegmentTarget,
} from "../src/api.js";
import { buildGallery } from "../src/gallery.js";
import { decodePgm, rasterizeSketch } from "../src/sketch.js";
import { SessionController, hashBytes } from "../src/state.js";

const REPORT: FusionReport = {
  removed_face_count: 2,
  added_face_count: 60,
  open_boundary_edge_count: 4,
  bounding_gap: 0.01,
};

function summary(revision: number): ModelSummary {
  return {
    session_id: "s1",
    status: "ready",
    vertex_count: 50,
    face_count: 42,
    aabb: { min: [0, 0, 0], max: [1, 1, 1] },
    revision,
  };
}

/** Scripted service double: export bytes change on commit, restore on undo. */
class MockApi extends ApiClient {
  commitCalls = 0;
  commitDelayMs = 0;
  failCommitWith: ApiError | null = null;
  retrieveCalls: Uint8Array[] = [];
  candidates: Candidate[] = [
    { component_id: 7, score: 0.91, name: "window_b", category: "window",
      thumbnail_png_base64: "b64b" },
    { component_id: 2, score: 0.88, name: "window_a", category: "window",
      thumbnail_png_base64: "b64a" },
    { component_id: 9, score: 0.31, name: "door_x", category: "door",
      thumbnail_png_base64: "b64d" },
  ];
  private revision = 1;
  private exports: Uint8Array[] = [new Uint8Array([1, 2, 3, 4])];

  constructor() {
    super("mock://");
  }

  override async createSession(): Promise<string> {
    return "s1";
  }

  override async uploadModel(): Promise<ModelSummary> {
    return summary(this.revision);
  }

  override async render(): Promise<RenderResponse> {
    return { image_png_base64: "cGc=", camera: {}, width: 64, height: 64 };
  }

  override async segment(_sid: string, prompt: string): Promise<SegmentTarget[]> {
    return [{ index: 0, label: prompt,
              obb: { center: [0, 0, 0], axes: [1, 0, 0, 0, 1, 0, 0, 0, 1],
                     half_extents: [1, 1, 0] } }];
  }

  override async retrieve(_sid: string, raster: Uint8Array): Promise<Candidate[]> {
    this.retrieveCalls.push(raster);
    return this.candidates;
  }

  override async preview(_sid: string, target: number, componentId: number,
                         mode: string): Promise<PreviewResponse> {
    return {
      plan: { component_id: componentId, target, scaling_mode: mode },
      report: REPORT,
      revision: this.revision,
    };
  }

  override async commit(): Promise<{ report: FusionReport; summary: ModelSummary }> {
    this.commitCalls++;
    if (this.failCommitWith) {
      throw this.failCommitWith;
    }
    if (this.commitDelayMs) {
      await new Promise((resolve) => setTimeout(resolve, this.commitDelayMs));
    }
    this.revision++;
    const next = new Uint8Array([9, 9, this.revision]);
    this.exports.push(next);
    return { report: REPORT, summary: summary(this.revision) };
  }

  override async undo(): Promise<ModelSummary> {
    if (this.exports.length > 1) {
      this.exports.pop();
    }
    this.revision++;
    return summary(this.revision);
  }

  override async exportGlb(): Promise<Uint8Array> {
    return this.exports[this.exports.length - 1];
  }

  override async echoRaster(raster: Uint8Array): Promise<Uint8Array> {
    // echoes decoded content re-encoded, like the real debug endpoint
    return raster.slice();
  }
}

async function readyController(): Promise<[SessionController, MockApi]> {
  const api = new MockApi();
  const controller = new SessionController(api);
  await controller.start();
  await controller.uploadModel(new Uint8Array([0]));
  return [controller, api];
}

const STROKES = [{ points: [{ x: 10, y: 10 }, { x: 200, y: 150 }], width: 3 }];

describe("gallery", () => {
  it("order equals response order exactly", async () => {
    const [controller, api] = await readyController();
    await controller.submitSketch(STROKES);
    const gallery = buildGallery(controller.state.candidates);
    expect(gallery.map((g) => g.componentId))
      .toEqual(api.candidates.map((c) => c.component_id));
    expect(gallery.map((g) => g.rank)).toEqual([0, 1, 2]);
  });

  it("blank sketch is blocked client-side before any request", async () => {
    const [controller, api] = await readyController();
    await controller.submitSketch([]);
    expect(api.retrieveCalls.length).toBe(0);
    const toast = controller.state.toasts.at(-1);
    expect(toast?.code).toBe("EmptyQuery");
  });
});

describe("commit / undo", () => {
  async function previewReady(): Promise<[SessionController, MockApi]> {
    const [controller, api] = await readyController();
    await controller.segment("window");
    await controller.submitSketch(STROKES);
    await controller.selectCandidate(7);
    return [controller, api];
  }

  it("commit enabled only with target and candidate selected while idle", async () => {
    const [controller] = await readyController();
    expect(controller.canCommit).toBe(false);
    await controller.segment("window");
    expect(controller.canCommit).toBe(false);
    await controller.submitSketch(STROKES);
    expect(controller.canCommit).toBe(false);
    await controller.selectCandidate(7);
    expect(controller.canCommit).toBe(true);
    controller.state.busy = true;
    expect(controller.canCommit).toBe(false);
  });

  it("commit then undo restores the pre-commit export hash", async () => {
    const [controller] = await previewReady();
    const before = controller.state.exportHash;
    expect(before).not.toBeNull();
    await controller.commit();
    const after = controller.state.exportHash;
    expect(after).not.toBe(before);
    await controller.undo();
    expect(controller.state.exportHash).toBe(before);
  });

  it("double-click cannot issue two commits", async () => {
    const [controller, api] = await previewReady();
    api.commitDelayMs = 30;
    const first = controller.commit();
    const second = controller.commit(); // busy flag set synchronously
    await Promise.all([first, second]);
    expect(api.commitCalls).toBe(1);
  });

  it("fusion report badge data comes from the service response", async () => {
    const [controller] = await previewReady();
    expect(controller.state.lastReport).toEqual(REPORT);
    await controller.commit();
    expect(controller.state.lastReport?.open_boundary_edge_count).toBe(4);
  });

  it("service error codes surface verbatim as toasts", async () => {
    const [controller, api] = await previewReady();
    api.failCommitWith = new ApiError("StalePlanError",
      "plan built at revision 1, session is at 2");
    await controller.commit();
    const toast = controller.state.toasts.at(-1);
    expect(toast?.kind).toBe("error");
    expect(toast?.code).toBe("StalePlanError");
    expect(toast?.message).toContain("revision");
  });
});

describe("echo round trip", () => {
  it("uploaded raster echoed by the debug endpoint is pixel-identical", async () => {
    const api = new MockApi();
    const raster = rasterizeSketch(STROKES);
    const { encodePgm } = await import("../src/sketch");
    const encoded = encodePgm(raster);
    const echoed = await api.echoRaster(encoded);
    expect(decodePgm(echoed).bits).toEqual(raster);
  });
});

describe("hashBytes", () => {
  it("distinguishes different payloads and is stable", () => {
    const a = hashBytes(new Uint8Array([1, 2, 3]));
    expect(hashBytes(new Uint8Array([1, 2, 3]))).toBe(a);
    expect(hashBytes(new Uint8Array([1, 2, 4]))).not.toBe(a);
    expect(hashBytes(new Uint8Array([1, 2, 3, 0]))).not.toBe(a);
  });
});
