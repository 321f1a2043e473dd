"""Session-oriented HTTP service for the full replacement loop.

Upload a model, render, segment components into OBBs, query the sketch
index, preview and commit replacements, undo, and export GLB. Sessions are
in-memory with bounded snapshot history; the catalog and retrieval index are
shared read-only across sessions; each session serializes its mutations
behind a lock.
"""

from __future__ import annotations

import base64
import io
import json
import os
import secrets
import subprocess
import tempfile
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, Response
from PIL import Image

from . import errors as err
from .asset_io import SceneAsset, TriangleMesh, flatten_scene, mesh_aabb, parse_glb, write_glb
from .catalog import CatalogManifest, load_catalog, load_component_asset
from .geometry import (
    OrientedBoundingBox,
    camera_to_json,
    obb_to_json,
    turntable_camera,
)
from .replacement import (
    apply_replacement,
    plan_from_json,
    plan_replacement,
    plan_to_json,
)
from .retrieval import (
    RetrievalIndex,
    component_view_cameras,
    load_sketch,
    query,
    render_line_art,
    sketch_to_png_bytes,
)
from .segmentation import MaskProviderConfig, extract_foreground, request_masks

_ERROR_STATUS = {
    "MalformedContainer": 400, "UnsupportedFeature": 400,
    "SerializationOverflow": 400, "DegenerateCamera": 400, "EmptyMesh": 400,
    "EmptyCloud": 400, "DegenerateSource": 400, "UndecodableImage": 400,
    "EmptyQuery": 400, "NoFeatures": 400, "UnsupportedFormat": 400,
    "UnsupportedVersion": 400, "DirectoryUnreadable": 400,
    "NoDepthInMask": 422,
    "CatalogEmpty": 409, "StalePlanError": 409, "DegenerateComponent": 409,
    "NothingToUndo": 409, "PreconditionFailed": 409,
    "NotFound": 404,
    "ProviderFailure": 502,
    "CapacityExceeded": 503,
    "IoFailure": 500,
}


@dataclass
class ServiceConfig:
    catalog_path: str | None = None
    port: int = 8787
    max_sessions: int = 32
    history_depth: int = 20
    render_size: int = 512
    mask_provider: dict | None = None
    generator_provider: dict | None = None
    snapshot_dir: str | None = None

    @classmethod
    def load(cls, config_file=None, env=os.environ) -> "ServiceConfig":
        """Config file values overridden by FACADEKIT_* environment vars."""
        data: dict = {}
        if config_file:
            data = json.loads(Path(config_file).read_text())
        overrides = {
            "catalog_path": env.get("FACADEKIT_CATALOG"),
            "port": env.get("FACADEKIT_PORT"),
            "max_sessions": env.get("FACADEKIT_MAX_SESSIONS"),
            "history_depth": env.get("FACADEKIT_HISTORY_DEPTH"),
            "render_size": env.get("FACADEKIT_RENDER_SIZE"),
            "snapshot_dir": env.get("FACADEKIT_SNAPSHOT_DIR"),
        }
        for key, value in overrides.items():
            if value is not None:
                data[key] = int(value) if key in ("port", "max_sessions",
                                                  "history_depth",
                                                  "render_size") else value
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in data.items() if k in known})


class Session:
    def __init__(self, session_id: str, history_depth: int):
        self.id = session_id
        self.building: TriangleMesh | None = None
        self.blobs: dict[str, bytes] = {}
        self.camera = None
        self.history: list[tuple[TriangleMesh, dict, dict]] = []
        self.detected: list[tuple[str, OrientedBoundingBox]] = []
        self.revision = 0
        self.history_depth = history_depth
        self.lock = threading.RLock()
        self.busy = False

    @property
    def status(self) -> str:
        if self.busy:
            return "busy"
        return "ready" if self.building is not None else "empty"

    def summary(self) -> dict:
        if self.building is None:
            raise err.PreconditionFailed("session has no model")
        lo, hi = mesh_aabb(self.building)
        return {
            "session_id": self.id,
            "status": self.status,
            "vertex_count": self.building.vertex_count,
            "face_count": self.building.triangle_count,
            "aabb": {"min": [float(v) for v in lo], "max": [float(v) for v in hi]},
            "revision": self.revision,
        }


class SessionStore:
    def __init__(self, config: ServiceConfig):
        self.config = config
        self._sessions: dict[str, Session] = {}
        self._lock = threading.Lock()

    def create(self) -> Session:
        with self._lock:
            if len(self._sessions) >= self.config.max_sessions:
                raise err.CapacityExceeded(
                    f"session cap {self.config.max_sessions} reached")
            session_id = secrets.token_hex(8)
            while session_id in self._sessions:
                session_id = secrets.token_hex(8)
            session = Session(session_id, self.config.history_depth)
            self._sessions[session_id] = session
            return session

    def get(self, session_id: str) -> Session:
        with self._lock:
            session = self._sessions.get(session_id)
        if session is None:
            raise err.NotFound(f"no session {session_id}")
        return session

    def snapshot_all(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        with self._lock:
            sessions = list(self._sessions.values())
        for session in sessions:
            with session.lock:
                if session.building is not None:
                    data = write_glb(SceneAsset(
                        meshes=[("model", session.building)],
                        opaque_blobs=dict(session.blobs)))
                    (directory / f"{session.id}.glb").write_bytes(data)


# ---------------------------------------------------------------------------
# request plumbing


def _parse_multipart(body: bytes, content_type: str) -> dict[str, bytes]:
    """Minimal multipart/form-data parser (no external parser available)."""
    marker = "boundary="
    pos = content_type.find(marker)
    if pos < 0:
        raise err.PreconditionFailed("multipart content without boundary")
    boundary = content_type[pos + len(marker):].split(";")[0].strip().strip('"')
    delim = b"--" + boundary.encode()
    fields: dict[str, bytes] = {}
    for chunk in body.split(delim):
        chunk = chunk.strip(b"\r\n")
        if not chunk or chunk == b"--":
            continue
        head, _, data = chunk.partition(b"\r\n\r\n")
        name = None
        for line in head.split(b"\r\n"):
            text = line.decode("utf-8", "replace")
            if text.lower().startswith("content-disposition"):
                for piece in text.split(";"):
                    piece = piece.strip()
                    if piece.startswith("name="):
                        name = piece[5:].strip('"')
        if name is not None:
            fields[name] = data
    return fields


async def _binary_fields(request: Request, default_field: str) -> dict[str, bytes]:
    body = await request.body()
    content_type = request.headers.get("content-type", "")
    if content_type.startswith("multipart/form-data"):
        return _parse_multipart(body, content_type)
    return {default_field: body}


async def _json_body(request: Request) -> dict:
    raw = await request.body()
    try:
        body = json.loads(raw or b"{}")
    except ValueError as exc:
        raise err.PreconditionFailed(f"request body is not valid JSON: {exc}") from exc
    if not isinstance(body, dict):
        raise err.PreconditionFailed("request body must be a JSON object")
    return body


def _depth_to_png(values: np.ndarray) -> bytes:
    finite = np.isfinite(values)
    img = np.full(values.shape, 255, dtype=np.uint8)
    if finite.any():
        lo, hi = values[finite].min(), values[finite].max()
        span = (hi - lo) or 1.0
        img[finite] = (40 + 190 * (values[finite] - lo) / span).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(img, mode="L").save(buf, format="PNG")
    return buf.getvalue()


def _generate_model_bytes(image_bytes: bytes, provider: dict) -> bytes:
    kind = provider.get("kind")
    params = provider.get("parameters", {})
    if kind == "external_command":
        command = params.get("command")
        if not command:
            raise err.ProviderFailure("generator provider needs 'command'")
        if isinstance(command, str):
            command = command.split()
        with tempfile.TemporaryDirectory(prefix="facadekit-gen-") as tmp:
            image_path = Path(tmp) / "facade.png"
            out_path = Path(tmp) / "model.glb"
            image_path.write_bytes(image_bytes)
            argv = list(command) + ["--image", str(image_path), "--out", str(out_path)]
            proc = subprocess.run(argv, capture_output=True, text=True,
                                  timeout=params.get("timeout", 600))
            if proc.returncode != 0 or not out_path.is_file():
                raise err.ProviderFailure(
                    f"generator exited {proc.returncode}",
                    detail={"stdout": proc.stdout, "stderr": proc.stderr})
            return out_path.read_bytes()
    if kind == "http_endpoint":
        import requests

        url = params.get("url")
        if not url:
            raise err.ProviderFailure("generator provider needs 'url'")
        try:
            resp = requests.post(url, files={"image": image_bytes},
                                 timeout=params.get("timeout", 600))
        except requests.RequestException as exc:
            raise err.ProviderFailure(f"generator unreachable: {exc}") from exc
        if resp.status_code != 200:
            raise err.ProviderFailure(f"generator returned {resp.status_code}")
        return resp.content
    raise err.ProviderFailure(f"unknown generator provider kind {kind!r}")


def _merged_materials(base_blobs: dict[str, bytes], component_blobs: dict[str, bytes],
                      base_max_slot: int, component_slots: list[int]) -> bytes | None:
    """Materials for a commit: base list padded to the fresh range, then the
    component's materials in remapped slot order."""
    base = json.loads(base_blobs["materials"]) if "materials" in base_blobs else []
    comp = json.loads(component_blobs["materials"]) if "materials" in component_blobs else []
    if not component_slots:
        return None
    while len(base) < base_max_slot + 1:
        base.append({})
    for slot in component_slots:
        base.append(comp[slot] if 0 <= slot < len(comp) else {})
    return json.dumps(base, sort_keys=True, separators=(",", ":")).encode()


def create_app(config: ServiceConfig | None = None) -> FastAPI:
    from fastapi.middleware.cors import CORSMiddleware

    config = config or ServiceConfig()
    app = FastAPI(title="facadekit", version="0.1.0")
    # the browser client is served statically from another origin
    app.add_middleware(CORSMiddleware, allow_origins=["*"], allow_methods=["*"],
                       allow_headers=["*"])
    store = SessionStore(config)
    app.state.config = config
    app.state.store = store
    app.state.manifest = None
    app.state.index = None
    app.state.thumbnails = {}
    app.state.thumb_lock = threading.Lock()
    if config.catalog_path:
        manifest, index = load_catalog(config.catalog_path)
        app.state.manifest = manifest
        app.state.index = index

    @app.exception_handler(err.EngineError)
    async def engine_error_handler(_request, exc: err.EngineError):
        payload = {"error": {"code": exc.code, "message": str(exc)}}
        if exc.detail is not None:
            payload["error"]["detail"] = exc.detail
        return JSONResponse(payload, status_code=_ERROR_STATUS.get(exc.code, 500))

    def need_catalog() -> tuple[CatalogManifest, RetrievalIndex]:
        if app.state.manifest is None or app.state.index is None:
            raise err.PreconditionFailed("no catalog loaded")
        return app.state.manifest, app.state.index

    def need_model(session: Session) -> TriangleMesh:
        if session.building is None:
            raise err.PreconditionFailed("session has no model")
        return session.building

    @app.post("/sessions", status_code=201)
    def create_session():
        session = store.create()
        return {"session_id": session.id, "status": session.status}

    @app.get("/sessions/{session_id}")
    def session_info(session_id: str):
        session = store.get(session_id)
        if session.building is None:
            return {"session_id": session.id, "status": session.status,
                    "revision": session.revision}
        return session.summary()

    @app.post("/sessions/{session_id}/model")
    async def upload_model(session_id: str, request: Request):
        session = store.get(session_id)
        fields = await _binary_fields(request, "model")
        if "model" in fields and fields["model"]:
            glb_bytes = fields["model"]
        elif "image" in fields and fields["image"]:
            provider = config.generator_provider
            if "provider" in fields:
                provider = json.loads(fields["provider"].decode())
            if not provider:
                raise err.ProviderFailure("no generator provider configured")
            glb_bytes = _generate_model_bytes(fields["image"], provider)
        else:
            raise err.PreconditionFailed("upload needs a 'model' or 'image' field")

        scene = parse_glb(glb_bytes)  # raises before any session mutation
        mesh = flatten_scene(scene)
        if mesh.vertex_count == 0:
            raise err.EmptyMesh("uploaded model has no geometry")
        with session.lock:
            session.busy = True
            try:
                session.building = mesh
                session.blobs = dict(scene.opaque_blobs)
                session.camera = turntable_camera(
                    mesh, 0.0, 0.0, 2.5,
                    width=config.render_size, height=config.render_size)
                session.history.clear()
                session.detected = []
                session.revision += 1
            finally:
                session.busy = False
            return session.summary()

    @app.get("/sessions/{session_id}/render")
    def render_view(session_id: str, yaw: float = 0.0, elev: float = 0.0,
                    size: int | None = None):
        from .geometry import render_depth

        session = store.get(session_id)
        mesh = need_model(session)
        render_size = size or config.render_size
        camera = turntable_camera(mesh, yaw, elev, 2.5,
                                  width=render_size, height=render_size)
        with session.lock:
            session.camera = camera
        depth = render_depth(mesh, camera)
        return {
            "image_png_base64": base64.b64encode(_depth_to_png(depth.values)).decode(),
            "camera": camera_to_json(camera),
            "width": render_size,
            "height": render_size,
        }

    @app.post("/sessions/{session_id}/segment")
    async def segment(session_id: str, request: Request):
        from .geometry import fit_obb, render_depth

        session = store.get(session_id)
        mesh = need_model(session)
        body = await _json_body(request)
        prompt = body.get("prompt", "")
        provider_cfg = body.get("provider") or config.mask_provider
        if not provider_cfg:
            raise err.ProviderFailure("no mask provider configured")
        provider = MaskProviderConfig(provider_cfg["kind"],
                                      provider_cfg.get("parameters", {}))
        band = tuple(body.get("band", (2.0, 98.0)))

        with session.lock:
            camera = session.camera
        depth = render_depth(mesh, camera)

        view_path = None
        if provider.kind != "file_map":
            tmp = tempfile.NamedTemporaryFile(suffix=".png", delete=False)
            tmp.write(_depth_to_png(depth.values))
            tmp.close()
            view_path = tmp.name
        try:
            masks = request_masks(prompt, view_path, provider)
        finally:
            if view_path:
                os.unlink(view_path)

        targets = []
        failures = []
        for i, mask in enumerate(masks):
            try:
                cloud = extract_foreground(mask, depth, camera, band=band)
                obb = fit_obb(cloud)
            except err.EngineError as exc:
                failures.append({"mask": i, "code": exc.code, "message": str(exc)})
                continue
            targets.append((mask.label or prompt, obb))
        with session.lock:
            session.detected = targets
        return {
            "targets": [{"index": i, "label": label, "obb": obb_to_json(obb)}
                        for i, (label, obb) in enumerate(targets)],
            "failures": failures,
        }

    def _thumbnail(component_id: int) -> str:
        with app.state.thumb_lock:
            cached = app.state.thumbnails.get(component_id)
        if cached is not None:
            return cached
        manifest, _ = need_catalog()
        mesh, _blobs = load_component_asset(manifest, manifest.by_id(component_id))
        camera = component_view_cameras(mesh, 1, size=128)[0]
        art = render_line_art(mesh, camera)
        encoded = base64.b64encode(sketch_to_png_bytes(art)).decode()
        with app.state.thumb_lock:
            app.state.thumbnails[component_id] = encoded
        return encoded

    @app.post("/sessions/{session_id}/retrieve")
    async def retrieve(session_id: str, request: Request, top_k: int = 10,
                       category: str | None = None):
        store.get(session_id)  # session must exist even though state is unused
        manifest, index = need_catalog()
        fields = await _binary_fields(request, "sketch")
        if request.headers.get("content-type", "").startswith("application/json"):
            body = json.loads(fields["sketch"] or b"{}")
            sketch_bytes = base64.b64decode(body.get("sketch_png_base64", ""))
            top_k = int(body.get("top_k", top_k))
            category = body.get("category", category)
        else:
            sketch_bytes = fields.get("sketch", b"")
        if not sketch_bytes:
            raise err.PreconditionFailed("no sketch supplied")
        sketch = load_sketch(sketch_bytes)
        allowed = None
        if category:
            allowed = {r.id for r in manifest.records if r.category == category}
        ranked = query(sketch, index, top_k=top_k, allowed_components=allowed)
        candidates = []
        for component_id, score in ranked:
            record = manifest.by_id(component_id)
            candidates.append({
                "component_id": component_id,
                "score": score,
                "name": record.name,
                "category": record.category,
                "thumbnail_png_base64": _thumbnail(component_id),
            })
        return {"candidates": candidates}

    def _plan_for(session: Session, target_index: int, component_id: int,
                  mode: str, inflation: float):
        manifest, _ = need_catalog()
        mesh = need_model(session)
        with session.lock:
            if not 0 <= target_index < len(session.detected):
                raise err.NotFound(f"no detected target {target_index}")
            _label, target_obb = session.detected[target_index]
        try:
            record = manifest.by_id(component_id)
        except KeyError:
            raise err.NotFound(f"no catalog component {component_id}") from None
        component, blobs = load_component_asset(manifest, record)
        plan = plan_replacement(mesh, target_obb, component_id,
                                record.canonical_obb, mode=mode,
                                inflation=inflation)
        return plan, component, blobs

    @app.post("/sessions/{session_id}/preview")
    async def preview(session_id: str, request: Request):
        session = store.get(session_id)
        body = await _json_body(request)
        plan, component, _blobs = _plan_for(
            session, int(body.get("target", 0)), int(body["component_id"]),
            body.get("mode", "per_axis"), float(body.get("inflation", 0.05)))
        scratch = need_model(session).copy()
        _mesh, report = apply_replacement(scratch, plan, component)
        return {
            "plan": plan_to_json(plan),
            "report": report.to_dict(),
            "revision": session.revision,
        }

    @app.post("/sessions/{session_id}/commit")
    async def commit(session_id: str, request: Request):
        session = store.get(session_id)
        manifest, _ = need_catalog()
        body = await _json_body(request)
        if "plan" not in body:
            raise err.PreconditionFailed("commit needs a plan")
        if "revision" not in body:
            raise err.PreconditionFailed(
                "commit needs the revision the plan was previewed against")
        plan = plan_from_json(body["plan"])
        base_revision = body["revision"]
        try:
            record = manifest.by_id(plan.component_id)
        except KeyError:
            raise err.NotFound(f"no catalog component {plan.component_id}") from None
        component, comp_blobs = load_component_asset(manifest, record)

        with session.lock:
            mesh = need_model(session)
            if int(base_revision) != session.revision:
                raise err.StalePlanError(
                    f"plan built at revision {base_revision}, "
                    f"session is at {session.revision}")
            session.busy = True
            try:
                new_mesh, report = apply_replacement(mesh, plan, component)
                session.history.append((mesh, dict(session.blobs),
                                        plan_to_json(plan)))
                if len(session.history) > session.history_depth:
                    session.history.pop(0)
                if component.material_slot is not None:
                    base_max = -1
                    if mesh.material_slot is not None and len(mesh.material_slot):
                        base_max = int(mesh.material_slot.max())
                    slots = sorted(int(s) for s in np.unique(component.material_slot)
                                   if s >= 0)
                    merged = _merged_materials(session.blobs, comp_blobs,
                                               base_max, slots)
                    if merged is not None:
                        session.blobs["materials"] = merged
                        # textures/images from the base would now dangle only if
                        # material order changed; it never does (append-only)
                session.building = new_mesh
                session.revision += 1
            finally:
                session.busy = False
            return {"report": report.to_dict(), "summary": session.summary()}

    @app.post("/sessions/{session_id}/undo")
    def undo(session_id: str):
        session = store.get(session_id)
        with session.lock:
            if not session.history:
                raise err.NothingToUndo("history is empty")
            session.busy = True
            try:
                mesh, blobs, _plan = session.history.pop()
                session.building = mesh
                session.blobs = blobs
                session.revision += 1
            finally:
                session.busy = False
            return session.summary()

    @app.get("/sessions/{session_id}/export")
    def export(session_id: str):
        session = store.get(session_id)
        with session.lock:
            mesh = need_model(session)
            blobs = dict(session.blobs)
        data = write_glb(SceneAsset(meshes=[("model", mesh)], opaque_blobs=blobs))
        return Response(content=data, media_type="model/gltf-binary")

    @app.post("/debug/echo-raster")
    async def echo_raster(request: Request):
        fields = await _binary_fields(request, "raster")
        raster = fields.get("raster", b"")
        if not raster:
            raise err.PreconditionFailed("no raster supplied")
        try:
            gray = Image.open(io.BytesIO(raster)).convert("L")
        except Exception as exc:  # noqa: BLE001
            raise err.UndecodableImage(str(exc)) from exc
        buf = io.BytesIO()
        gray.save(buf, format="PNG")
        return Response(content=buf.getvalue(), media_type="image/png")

    @app.get("/health")
    def health():
        return {
            "status": "ok",
            "catalog_loaded": app.state.manifest is not None,
            "components": len(app.state.manifest.records) if app.state.manifest else 0,
        }

    return app


def run_service(config: ServiceConfig) -> None:
    import uvicorn

    app = create_app(config)
    try:
        uvicorn.run(app, host="0.0.0.0", port=config.port, log_level="info")
    finally:
        if config.snapshot_dir:
            app.state.store.snapshot_all(config.snapshot_dir)
