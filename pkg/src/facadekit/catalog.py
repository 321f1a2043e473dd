"""Component catalog: GLB ingest, canonicalization, and archive persistence.

Components are canonicalized at ingest (recentered to their OBB center with
axes aligned to the OBB axes) so retrieval views and placement share one
reference frame. The archive stores the manifest plus the retrieval index;
component GLBs stay on disk and are referenced by relative path.
"""

from __future__ import annotations

import json
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .asset_io import TriangleMesh, flatten_scene, parse_glb
from .errors import (
    DanglingReferenceWarning,
    DirectoryUnreadable,
    EngineError,
    IoFailure,
    UnsupportedFormat,
    UnsupportedVersion,
)
from .geometry import OrientedBoundingBox, PointCloud, fit_obb, obb_from_json, obb_to_json
from .retrieval import RetrievalIndex, load_index_bytes, save_index_bytes

_ARCHIVE_MAGIC = b"CMPCAT1\x00"
ARCHIVE_VERSION = 1
_CATEGORY_PREFIXES = ("window", "door")


@dataclass
class ComponentRecord:
    id: int
    name: str
    category: str
    file_path: str  # relative to the manifest's source_root
    canonical_obb: OrientedBoundingBox
    tags: list[str] = field(default_factory=list)
    view_descriptors: list[int] = field(default_factory=list)


@dataclass
class CatalogManifest:
    records: list[ComponentRecord]
    source_root: str
    version: int = ARCHIVE_VERSION
    ingest_errors: list[tuple[str, str]] = field(default_factory=list)

    def by_id(self, component_id: int) -> ComponentRecord:
        for record in self.records:
            if record.id == component_id:
                return record
        raise KeyError(component_id)


def canonicalize_mesh(mesh: TriangleMesh) -> tuple[TriangleMesh, OrientedBoundingBox]:
    """Recenter/re-axis a mesh to its own OBB frame.

    Returns the canonical mesh and its OBB in the canonical frame, which by
    construction has center at the origin and identity axes.
    """
    obb = fit_obb(PointCloud(mesh.positions))
    canonical = mesh.copy()
    canonical.positions = (mesh.positions - obb.center) @ obb.axes
    if mesh.normals is not None:
        canonical.normals = mesh.normals @ obb.axes
    canonical_obb = OrientedBoundingBox(center=np.zeros(3), axes=np.eye(3),
                                        half_extents=obb.half_extents.copy())
    return canonical, canonical_obb


def _category_for(rel_path: str, sidecar: dict, extra_rule: dict | None) -> tuple[str, list[str]]:
    for source in (extra_rule or {}, sidecar):
        entry = source.get(rel_path)
        if entry:
            return str(entry.get("category", "component")), list(entry.get("tags", []))
    stem = Path(rel_path).stem.lower()
    for prefix in _CATEGORY_PREFIXES:
        if stem.startswith(prefix):
            return prefix, []
    return "component", []


def ingest_directory(path, category_rule: dict | None = None) -> CatalogManifest:
    """Build a manifest from every .glb under `path`.

    Ids follow lexicographic relative-path order; unparseable or empty files
    are recorded in ingest_errors rather than aborting.
    """
    root = Path(path)
    try:
        files = sorted(p for p in root.rglob("*.glb") if p.is_file())
    except OSError as exc:
        raise DirectoryUnreadable(f"cannot scan {root}: {exc}") from exc
    if not root.is_dir():
        raise DirectoryUnreadable(f"{root} is not a readable directory")

    sidecar: dict = {}
    sidecar_path = root / "metadata.json"
    if sidecar_path.is_file():
        try:
            sidecar = json.loads(sidecar_path.read_text())
        except (OSError, ValueError) as exc:
            warnings.warn(f"ignoring unreadable metadata.json: {exc}")

    records: list[ComponentRecord] = []
    errors: list[tuple[str, str]] = []
    next_id = 0
    for file in files:
        rel = file.relative_to(root).as_posix()
        try:
            mesh = flatten_scene(parse_glb(file.read_bytes()))
            if mesh.vertex_count == 0:
                raise EngineError("component has no geometry")
            _, canonical_obb = canonicalize_mesh(mesh)
        except EngineError as exc:
            errors.append((rel, exc.code))
            continue
        except OSError as exc:
            errors.append((rel, f"IoFailure:{exc.__class__.__name__}"))
            continue
        category, tags = _category_for(rel, sidecar, category_rule)
        records.append(ComponentRecord(
            id=next_id, name=file.stem, category=category, file_path=rel,
            canonical_obb=canonical_obb, tags=tags,
        ))
        next_id += 1
    return CatalogManifest(records=records, source_root=str(root),
                           ingest_errors=errors)


def load_component_asset(manifest: CatalogManifest,
                         record: ComponentRecord) -> tuple[TriangleMesh, dict[str, bytes]]:
    """Canonicalized component mesh plus its preserved opaque blobs."""
    path = Path(manifest.source_root) / record.file_path
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read component {record.file_path}: {exc}") from exc
    scene = parse_glb(data)
    canonical, _ = canonicalize_mesh(flatten_scene(scene))
    return canonical, scene.opaque_blobs


def load_component_mesh(manifest: CatalogManifest, record: ComponentRecord) -> TriangleMesh:
    """Parse, flatten, and canonicalize a component's GLB."""
    return load_component_asset(manifest, record)[0]


def _manifest_to_json(manifest: CatalogManifest) -> dict:
    return {
        "version": manifest.version,
        "source_root": manifest.source_root,
        "ingest_errors": [[p, c] for p, c in manifest.ingest_errors],
        "records": [
            {
                "id": r.id,
                "name": r.name,
                "category": r.category,
                "file_path": r.file_path,
                "canonical_obb": obb_to_json(r.canonical_obb),
                "tags": r.tags,
                "view_descriptors": r.view_descriptors,
            }
            for r in manifest.records
        ],
    }


def _manifest_from_json(doc: dict) -> CatalogManifest:
    records = [
        ComponentRecord(
            id=int(r["id"]), name=r["name"], category=r["category"],
            file_path=r["file_path"], canonical_obb=obb_from_json(r["canonical_obb"]),
            tags=list(r.get("tags", [])),
            view_descriptors=[int(v) for v in r.get("view_descriptors", [])],
        )
        for r in doc["records"]
    ]
    return CatalogManifest(records=records, source_root=doc["source_root"],
                           version=int(doc["version"]),
                           ingest_errors=[(p, c) for p, c in doc.get("ingest_errors", [])])


def save_catalog(manifest: CatalogManifest, index: RetrievalIndex, path) -> None:
    """Write the single versioned archive: magic, manifest JSON, index bytes."""
    manifest_bytes = json.dumps(_manifest_to_json(manifest), sort_keys=True,
                                separators=(",", ":")).encode("utf-8")
    index_bytes = save_index_bytes(index)
    try:
        with open(path, "wb") as fh:
            fh.write(_ARCHIVE_MAGIC)
            fh.write(struct.pack("<I", len(manifest_bytes)))
            fh.write(manifest_bytes)
            fh.write(struct.pack("<Q", len(index_bytes)))
            fh.write(index_bytes)
    except OSError as exc:
        raise IoFailure(f"cannot write catalog archive: {exc}") from exc


def load_catalog(path) -> tuple[CatalogManifest, RetrievalIndex]:
    """Inverse of save_catalog; warns about dangling component GLB paths."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read catalog archive: {exc}") from exc
    if data[: len(_ARCHIVE_MAGIC)] != _ARCHIVE_MAGIC:
        raise UnsupportedFormat("not a component catalog archive")
    offset = len(_ARCHIVE_MAGIC)
    (mlen,) = struct.unpack_from("<I", data, offset)
    offset += 4
    try:
        doc = json.loads(data[offset : offset + mlen].decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as exc:
        raise UnsupportedFormat(f"corrupt manifest block: {exc}") from exc
    offset += mlen
    if doc.get("version") != ARCHIVE_VERSION:
        raise UnsupportedVersion(f"archive version {doc.get('version')!r}")
    (ilen,) = struct.unpack_from("<Q", data, offset)
    offset += 8
    index = load_index_bytes(data[offset : offset + ilen])
    manifest = _manifest_from_json(doc)

    root = Path(manifest.source_root)
    for record in manifest.records:
        if not (root / record.file_path).is_file():
            warnings.warn(f"component file missing: {record.file_path}",
                          DanglingReferenceWarning)
    return manifest, index
