/**
 * Typed client for the facadekit session API.
 *
 * The UI is a thin client: every OBB, score, and fusion report shown comes
 * from these responses, never from client-side geometry math.
 */

export interface ObbJson {
  center: number[];
  axes: number[];
  half_extents: number[];
}

export interface ModelSummary {
  session_id: string;
  status: string;
  vertex_count: number;
  face_count: number;
  aabb: { min: number[]; max: number[] };
  revision: number;
}

export interface RenderResponse {
  image_png_base64: string;
  camera: Record<string, unknown>;
  width: number;
  height: number;
}

export interface SegmentTarget {
  index: number;
  label: string;
  obb: ObbJson;
}

export interface Candidate {
  component_id: number;
  score: number;
  name: string;
  category: string;
  thumbnail_png_base64: string;
}

export interface FusionReport {
  removed_face_count: number;
  added_face_count: number;
  open_boundary_edge_count: number;
  bounding_gap: number;
}

export interface PreviewResponse {
  plan: Record<string, unknown>;
  report: FusionReport;
  revision: number;
}

export class ApiError extends Error {
  readonly code: string;

  constructor(code: string, message: string) {
    super(message);
    this.code = code;
  }
}

async function toError(response: Response): Promise<ApiError> {
  try {
    const body = await response.json();
    if (body && body.error) {
      return new ApiError(body.error.code, body.error.message);
    }
  } catch {
    /* non-JSON error body */
  }
  return new ApiError(`HTTP${response.status}`, response.statusText);
}

async function expectJson<T>(response: Response): Promise<T> {
  if (!response.ok) {
    throw await toError(response);
  }
  return (await response.json()) as T;
}

/** Copy into a plain ArrayBuffer; TS lib typings reject generic views as BlobPart. */
function toArrayBuffer(data: Uint8Array): ArrayBuffer {
  const copy = new ArrayBuffer(data.byteLength);
  new Uint8Array(copy).set(data);
  return copy;
}

export class ApiClient {
  constructor(private readonly baseUrl: string = "") {}

  private url(path: string): string {
    return `${this.baseUrl}${path}`;
  }

  async createSession(): Promise<string> {
    const body = await expectJson<{ session_id: string }>(
      await fetch(this.url("/sessions"), { method: "POST" }),
    );
    return body.session_id;
  }

  async uploadModel(sessionId: string, glb: Uint8Array | Blob): Promise<ModelSummary> {
    const form = new FormData();
    const part = glb instanceof Blob ? glb
      : new Blob([toArrayBuffer(glb)], { type: "model/gltf-binary" });
    form.append("model", part, "model.glb");
    return expectJson(await fetch(this.url(`/sessions/${sessionId}/model`), {
      method: "POST",
      body: form,
    }));
  }

  async render(sessionId: string, yaw = 0, elev = 0): Promise<RenderResponse> {
    return expectJson(await fetch(
      this.url(`/sessions/${sessionId}/render?yaw=${yaw}&elev=${elev}`),
    ));
  }

  async segment(sessionId: string, prompt: string): Promise<SegmentTarget[]> {
    const body = await expectJson<{ targets: SegmentTarget[] }>(
      await fetch(this.url(`/sessions/${sessionId}/segment`), {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify({ prompt }),
      }),
    );
    return body.targets;
  }

  async retrieve(sessionId: string, raster: Uint8Array, topK = 10): Promise<Candidate[]> {
    const form = new FormData();
    form.append("sketch",
      new Blob([toArrayBuffer(raster)], { type: "image/x-portable-graymap" }),
      "sketch.pgm");
    const body = await expectJson<{ candidates: Candidate[] }>(
      await fetch(this.url(`/sessions/${sessionId}/retrieve?top_k=${topK}`), {
        method: "POST",
        body: form,
      }),
    );
    return body.candidates;
  }

  async preview(sessionId: string, target: number, componentId: number,
                mode: string): Promise<PreviewResponse> {
    return expectJson(await fetch(this.url(`/sessions/${sessionId}/preview`), {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ target, component_id: componentId, mode }),
    }));
  }

  async commit(sessionId: string, plan: Record<string, unknown>,
               revision: number): Promise<{ report: FusionReport; summary: ModelSummary }> {
    return expectJson(await fetch(this.url(`/sessions/${sessionId}/commit`), {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ plan, revision }),
    }));
  }

  async undo(sessionId: string): Promise<ModelSummary> {
    return expectJson(await fetch(this.url(`/sessions/${sessionId}/undo`), {
      method: "POST",
    }));
  }

  async exportGlb(sessionId: string): Promise<Uint8Array> {
    const response = await fetch(this.url(`/sessions/${sessionId}/export`));
    if (!response.ok) {
      throw await toError(response);
    }
    return new Uint8Array(await response.arrayBuffer());
  }

  async echoRaster(raster: Uint8Array): Promise<Uint8Array> {
    const form = new FormData();
    form.append("raster", new Blob([toArrayBuffer(raster)]), "raster.pgm");
    const response = await fetch(this.url("/debug/echo-raster"), {
      method: "POST",
      body: form,
    });
    if (!response.ok) {
      throw await toError(response);
    }
    return new Uint8Array(await response.arrayBuffer());
  }
}
