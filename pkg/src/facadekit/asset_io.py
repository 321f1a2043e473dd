"""GLB (binary glTF 2.0) parsing, serialization, and mesh validation.

Supported subset: container version 2, triangle primitives, float32
positions/normals/uvs, uint16/uint32 indices. Materials, textures, samplers,
and embedded images are preserved opaquely so edited assets stay viewable,
but their contents are never interpreted. Compressed or sparse accessors are
rejected, not dropped.

Coordinate convention throughout the package: right-handed, Y-up, meters
(the container format's native convention).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import MalformedContainer, SerializationOverflow, UnsupportedFeature

GLB_MAGIC = 0x46546C67
_JSON_CHUNK = 0x4E4F534A
_BIN_CHUNK = 0x004E4942

_COMPONENT_DTYPES = {
    5121: np.uint8,
    5123: np.uint16,
    5125: np.uint32,
    5126: np.float32,
}
_TYPE_WIDTHS = {"SCALAR": 1, "VEC2": 2, "VEC3": 3, "VEC4": 4}

# Instancing guard: a DAG of nodes can expand combinatorially when duplicated
# into a tree, so parsing aborts past this many instantiated nodes.
_MAX_NODE_INSTANCES = 100_000


@dataclass
class TriangleMesh:
    """Indexed triangle geometry. Positions are meters, float64 in memory."""

    positions: np.ndarray
    indices: np.ndarray
    normals: np.ndarray | None = None
    uvs: np.ndarray | None = None
    material_slot: np.ndarray | None = None

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        self.indices = np.asarray(self.indices, dtype=np.int64).reshape(-1, 3)
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
        if self.uvs is not None:
            self.uvs = np.asarray(self.uvs, dtype=np.float64).reshape(-1, 2)
        if self.material_slot is not None:
            self.material_slot = np.asarray(self.material_slot, dtype=np.int32).reshape(-1)

    @property
    def vertex_count(self) -> int:
        return len(self.positions)

    @property
    def triangle_count(self) -> int:
        return len(self.indices)

    def copy(self) -> "TriangleMesh":
        return TriangleMesh(
            self.positions.copy(),
            self.indices.copy(),
            None if self.normals is None else self.normals.copy(),
            None if self.uvs is None else self.uvs.copy(),
            None if self.material_slot is None else self.material_slot.copy(),
        )


@dataclass
class SceneNode:
    name: str = ""
    transform: np.ndarray = field(default_factory=lambda: np.eye(4))
    mesh: int | None = None
    children: list["SceneNode"] = field(default_factory=list)


@dataclass
class SceneAsset:
    meshes: list[tuple[str, TriangleMesh]] = field(default_factory=list)
    nodes: list[SceneNode] = field(default_factory=list)
    opaque_blobs: dict[str, bytes] = field(default_factory=dict)


@dataclass
class ValidationReport:
    errors: list[tuple[str, str]] = field(default_factory=list)
    warnings: list[tuple[str, str]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors


def surface_area(mesh: TriangleMesh) -> float:
    if mesh.triangle_count == 0:
        return 0.0
    tri = mesh.positions[mesh.indices]
    cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    return float(0.5 * np.linalg.norm(cross, axis=1).sum())


def mesh_aabb(mesh: TriangleMesh) -> tuple[np.ndarray, np.ndarray]:
    if mesh.vertex_count == 0:
        return np.zeros(3), np.zeros(3)
    return mesh.positions.min(axis=0), mesh.positions.max(axis=0)


# ---------------------------------------------------------------------------
# parsing


def _canonical_json(value) -> bytes:
    return json.dumps(value, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _split_chunks(data: bytes) -> tuple[dict, bytes]:
    if len(data) < 12:
        raise MalformedContainer("GLB header requires 12 bytes")
    magic, version, length = struct.unpack_from("<III", data, 0)
    if magic != GLB_MAGIC:
        raise MalformedContainer("bad magic")
    if version != 2:
        raise UnsupportedFeature(f"GLB container version {version}")
    if length < 12 or length > len(data):
        raise MalformedContainer("declared length exceeds file size")

    json_chunk: bytes | None = None
    bin_chunk = b""
    offset = 12
    while offset < length:
        if offset + 8 > length:
            raise MalformedContainer("truncated chunk header")
        chunk_len, chunk_type = struct.unpack_from("<II", data, offset)
        if chunk_len % 4 != 0:
            raise MalformedContainer("chunk length not 4-byte aligned")
        if offset + 8 + chunk_len > length:
            raise MalformedContainer("chunk overruns declared length")
        payload = data[offset + 8 : offset + 8 + chunk_len]
        if chunk_type == _JSON_CHUNK:
            if json_chunk is not None:
                raise MalformedContainer("duplicate JSON chunk")
            json_chunk = payload
        elif chunk_type == _BIN_CHUNK:
            bin_chunk = payload
        # readers must skip unknown chunk types (GLB container rule)
        offset += 8 + chunk_len

    if json_chunk is None:
        raise MalformedContainer("missing JSON chunk")
    try:
        doc = json.loads(json_chunk.decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as exc:
        raise MalformedContainer(f"undecodable JSON chunk: {exc}") from exc
    if not isinstance(doc, dict):
        raise MalformedContainer("JSON chunk is not an object")
    return doc, bin_chunk


def _as_list(doc: dict, key: str) -> list:
    value = doc.get(key, [])
    if not isinstance(value, list):
        raise MalformedContainer(f"'{key}' is not an array")
    return value


def _read_accessor(doc: dict, bin_chunk: bytes, index, *, allowed_components,
                   want_type: str) -> np.ndarray:
    accessors = _as_list(doc, "accessors")
    if not isinstance(index, int) or not 0 <= index < len(accessors):
        raise MalformedContainer(f"accessor index {index!r} out of range")
    acc = accessors[index]
    if not isinstance(acc, dict):
        raise MalformedContainer("accessor is not an object")
    if "sparse" in acc:
        raise UnsupportedFeature("sparse accessor")
    comp = acc.get("componentType")
    if comp not in _COMPONENT_DTYPES:
        raise MalformedContainer(f"unknown componentType {comp!r}")
    if comp not in allowed_components:
        raise UnsupportedFeature(f"componentType {comp} not in supported subset")
    if acc.get("type") != want_type:
        raise MalformedContainer(f"accessor type {acc.get('type')!r}, expected {want_type}")
    count = acc.get("count")
    if not isinstance(count, int) or count < 0:
        raise MalformedContainer("bad accessor count")

    width = _TYPE_WIDTHS[want_type]
    dtype = np.dtype(_COMPONENT_DTYPES[comp]).newbyteorder("<")
    need = count * width * dtype.itemsize

    if "bufferView" not in acc:
        # zero-filled accessor per the glTF spec
        return np.zeros((count, width), dtype=dtype)
    views = _as_list(doc, "bufferViews")
    view_idx = acc["bufferView"]
    if not isinstance(view_idx, int) or not 0 <= view_idx < len(views):
        raise MalformedContainer("bufferView index out of range")
    view = views[view_idx]
    if not isinstance(view, dict):
        raise MalformedContainer("bufferView is not an object")
    if view.get("buffer") != 0:
        raise UnsupportedFeature("external buffer references")
    stride = view.get("byteStride")
    if stride is not None and stride != width * dtype.itemsize:
        raise UnsupportedFeature("strided buffer view")
    view_offset = view.get("byteOffset", 0)
    view_length = view.get("byteLength")
    if not isinstance(view_offset, int) or not isinstance(view_length, int):
        raise MalformedContainer("bad bufferView bounds")
    if view_offset < 0 or view_length < 0 or view_offset + view_length > len(bin_chunk):
        raise MalformedContainer("bufferView outside binary chunk")
    acc_offset = acc.get("byteOffset", 0)
    if not isinstance(acc_offset, int) or acc_offset < 0 or acc_offset + need > view_length:
        raise MalformedContainer("accessor outside bufferView")

    start = view_offset + acc_offset
    arr = np.frombuffer(bin_chunk, dtype=dtype, count=count * width, offset=start)
    return arr.reshape(count, width)


def _parse_mesh(doc: dict, bin_chunk: bytes, mesh_json: dict) -> TriangleMesh:
    positions: list[np.ndarray] = []
    normals: list[np.ndarray] = []
    uvs: list[np.ndarray] = []
    indices: list[np.ndarray] = []
    slots: list[np.ndarray] = []
    have_normals = True
    have_uvs = True
    seen_position_accessors: dict[int, int] = {}
    vertex_total = 0

    prims = mesh_json.get("primitives", [])
    if not isinstance(prims, list):
        raise MalformedContainer("primitives is not an array")
    for prim in prims:
        if not isinstance(prim, dict):
            raise MalformedContainer("primitive is not an object")
        if prim.get("mode", 4) != 4:
            raise UnsupportedFeature(f"primitive mode {prim.get('mode')}")
        if "extensions" in prim:
            raise UnsupportedFeature("primitive extensions (e.g. compressed geometry)")
        attrs = prim.get("attributes")
        if not isinstance(attrs, dict) or "POSITION" not in attrs:
            raise MalformedContainer("primitive lacks POSITION")

        pos_acc = attrs["POSITION"]
        if isinstance(pos_acc, int) and pos_acc in seen_position_accessors:
            base = seen_position_accessors[pos_acc]
            prim_vertex_count = None  # shared vertices, nothing appended
        else:
            pos = _read_accessor(doc, bin_chunk, pos_acc,
                                 allowed_components={5126}, want_type="VEC3")
            base = vertex_total
            if isinstance(pos_acc, int):
                seen_position_accessors[pos_acc] = base
            vertex_total += len(pos)
            prim_vertex_count = len(pos)
            positions.append(np.asarray(pos, dtype=np.float64))
            if "NORMAL" in attrs:
                nrm = _read_accessor(doc, bin_chunk, attrs["NORMAL"],
                                     allowed_components={5126}, want_type="VEC3")
                normals.append(np.asarray(nrm, dtype=np.float64))
            else:
                have_normals = False
            if "TEXCOORD_0" in attrs:
                uv = _read_accessor(doc, bin_chunk, attrs["TEXCOORD_0"],
                                    allowed_components={5126}, want_type="VEC2")
                uvs.append(np.asarray(uv, dtype=np.float64))
            else:
                have_uvs = False

        if "indices" in prim:
            idx = _read_accessor(doc, bin_chunk, prim["indices"],
                                 allowed_components={5123, 5125}, want_type="SCALAR")
            idx = np.asarray(idx, dtype=np.int64).reshape(-1)
        else:
            if prim_vertex_count is None:
                raise MalformedContainer("non-indexed primitive reuses a vertex accessor")
            idx = np.arange(prim_vertex_count, dtype=np.int64)
        if len(idx) % 3 != 0:
            raise MalformedContainer("index count not a multiple of 3")
        tris = idx.reshape(-1, 3) + base
        indices.append(tris)
        mat = prim.get("material", -1)
        if not isinstance(mat, int):
            raise MalformedContainer("bad material index")
        slots.append(np.full(len(tris), mat, dtype=np.int32))

    pos_arr = np.concatenate(positions) if positions else np.zeros((0, 3))
    idx_arr = np.concatenate(indices) if indices else np.zeros((0, 3), dtype=np.int64)
    slot_arr = np.concatenate(slots) if slots else np.zeros(0, dtype=np.int32)
    nrm_arr = np.concatenate(normals) if (have_normals and normals) else None
    uv_arr = np.concatenate(uvs) if (have_uvs and uvs) else None
    if not np.any(slot_arr >= 0):
        slot_arr = None
    return TriangleMesh(pos_arr, idx_arr, nrm_arr, uv_arr, slot_arr)


def _quaternion_matrix(q) -> np.ndarray:
    x, y, z, w = (float(v) for v in q)
    n = x * x + y * y + z * z + w * w
    if n == 0:
        return np.eye(3)
    s = 2.0 / n
    return np.array([
        [1 - s * (y * y + z * z), s * (x * y - z * w), s * (x * z + y * w)],
        [s * (x * y + z * w), 1 - s * (x * x + z * z), s * (y * z - x * w)],
        [s * (x * z - y * w), s * (y * z + x * w), 1 - s * (x * x + y * y)],
    ])


def _node_transform(node_json: dict) -> np.ndarray:
    if "matrix" in node_json:
        vals = node_json["matrix"]
        if not isinstance(vals, list) or len(vals) != 16:
            raise MalformedContainer("node matrix must have 16 entries")
        return np.array(vals, dtype=np.float64).reshape(4, 4, order="F")
    m = np.eye(4)
    if "scale" in node_json:
        m[:3, :3] = np.diag([float(v) for v in node_json["scale"]])
    if "rotation" in node_json:
        m[:3, :3] = _quaternion_matrix(node_json["rotation"]) @ m[:3, :3]
    if "translation" in node_json:
        m[:3, 3] = [float(v) for v in node_json["translation"]]
    return m


def _build_node(doc: dict, index, mesh_count: int, path: tuple, counter: list) -> SceneNode:
    nodes_json = _as_list(doc, "nodes")
    if not isinstance(index, int) or not 0 <= index < len(nodes_json):
        raise MalformedContainer(f"node index {index!r} out of range")
    if index in path:
        raise MalformedContainer("node graph contains a cycle")
    counter[0] += 1
    if counter[0] > _MAX_NODE_INSTANCES:
        raise MalformedContainer("node instancing exceeds sanity limit")
    node_json = nodes_json[index]
    if not isinstance(node_json, dict):
        raise MalformedContainer("node is not an object")
    try:
        transform = _node_transform(node_json)
    except (TypeError, ValueError) as exc:
        raise MalformedContainer(f"bad node transform: {exc}") from exc
    mesh_ref = node_json.get("mesh")
    if mesh_ref is not None:
        if not isinstance(mesh_ref, int) or not 0 <= mesh_ref < mesh_count:
            raise MalformedContainer("node references a missing mesh")
    children_json = node_json.get("children", [])
    if not isinstance(children_json, list):
        raise MalformedContainer("node children is not an array")
    node = SceneNode(name=str(node_json.get("name", "")), transform=transform,
                     mesh=mesh_ref)
    for child in children_json:
        node.children.append(_build_node(doc, child, mesh_count, path + (index,), counter))
    return node


def _collect_blobs(doc: dict, bin_chunk: bytes) -> dict[str, bytes]:
    blobs: dict[str, bytes] = {}
    for key in ("materials", "textures", "samplers"):
        if doc.get(key):
            value = _as_list(doc, key)
            blobs[key] = _canonical_json(value)
    images = doc.get("images")
    if images:
        if not isinstance(images, list):
            raise MalformedContainer("'images' is not an array")
        views = _as_list(doc, "bufferViews")
        meta = []
        for i, img in enumerate(images):
            if not isinstance(img, dict):
                raise MalformedContainer("image is not an object")
            entry = {k: v for k, v in img.items() if k != "bufferView"}
            if "bufferView" in img:
                view_idx = img["bufferView"]
                if not isinstance(view_idx, int) or not 0 <= view_idx < len(views):
                    raise MalformedContainer("image bufferView out of range")
                view = views[view_idx]
                off = view.get("byteOffset", 0)
                length = view.get("byteLength", 0)
                if (not isinstance(off, int) or not isinstance(length, int)
                        or off < 0 or length < 0 or off + length > len(bin_chunk)):
                    raise MalformedContainer("image bufferView outside binary chunk")
                entry["__data"] = f"images/{i}"
                blobs[f"images/{i}"] = bytes(bin_chunk[off : off + length])
            meta.append(entry)
        blobs["images"] = _canonical_json(meta)
    return blobs


def parse_glb(data: bytes) -> SceneAsset:
    """Parse GLB bytes into a SceneAsset, preserving non-geometry opaquely."""
    doc, bin_chunk = _split_chunks(bytes(data))

    ext_required = doc.get("extensionsRequired")
    if ext_required:
        raise UnsupportedFeature(f"required extensions: {ext_required}")

    meshes: list[tuple[str, TriangleMesh]] = []
    for i, mesh_json in enumerate(_as_list(doc, "meshes")):
        if not isinstance(mesh_json, dict):
            raise MalformedContainer("mesh is not an object")
        name = str(mesh_json.get("name", f"mesh_{i}"))
        meshes.append((name, _parse_mesh(doc, bin_chunk, mesh_json)))

    roots: list[SceneNode] = []
    scenes = doc.get("scenes")
    if scenes:
        if not isinstance(scenes, list):
            raise MalformedContainer("'scenes' is not an array")
        scene_idx = doc.get("scene", 0)
        if not isinstance(scene_idx, int) or not 0 <= scene_idx < len(scenes):
            raise MalformedContainer("default scene index out of range")
        scene_json = scenes[scene_idx]
        if not isinstance(scene_json, dict):
            raise MalformedContainer("scene is not an object")
        counter = [0]
        root_refs = scene_json.get("nodes", [])
        if not isinstance(root_refs, list):
            raise MalformedContainer("scene nodes is not an array")
        for ref in root_refs:
            roots.append(_build_node(doc, ref, len(meshes), (), counter))

    return SceneAsset(meshes=meshes, nodes=roots, opaque_blobs=_collect_blobs(doc, bin_chunk))


# ---------------------------------------------------------------------------
# writing


def _pad_to(buf: bytearray, align: int, fill: bytes = b"\x00") -> None:
    while len(buf) % align:
        buf.extend(fill)


class _BinWriter:
    def __init__(self):
        self.buf = bytearray()
        self.views: list[dict] = []

    def add_view(self, payload: bytes) -> int:
        _pad_to(self.buf, 4)
        offset = len(self.buf)
        self.buf.extend(payload)
        self.views.append({"buffer": 0, "byteOffset": offset, "byteLength": len(payload)})
        return len(self.views) - 1


def _float_list(arr: np.ndarray) -> list[float]:
    return [float(v) for v in arr]


def _emit_mesh(mesh: TriangleMesh, name: str, writer: _BinWriter,
               accessors: list[dict], material_count: int) -> dict:
    pos32 = np.ascontiguousarray(mesh.positions, dtype="<f4")
    attributes: dict[str, int] = {}

    acc = {
        "bufferView": writer.add_view(pos32.tobytes()),
        "componentType": 5126,
        "count": int(len(pos32)),
        "type": "VEC3",
    }
    if len(pos32):
        acc["min"] = _float_list(pos32.min(axis=0))
        acc["max"] = _float_list(pos32.max(axis=0))
    else:
        acc["min"] = [0.0, 0.0, 0.0]
        acc["max"] = [0.0, 0.0, 0.0]
    accessors.append(acc)
    attributes["POSITION"] = len(accessors) - 1

    if mesh.normals is not None:
        nrm32 = np.ascontiguousarray(mesh.normals, dtype="<f4")
        accessors.append({
            "bufferView": writer.add_view(nrm32.tobytes()),
            "componentType": 5126,
            "count": int(len(nrm32)),
            "type": "VEC3",
        })
        attributes["NORMAL"] = len(accessors) - 1
    if mesh.uvs is not None:
        uv32 = np.ascontiguousarray(mesh.uvs, dtype="<f4")
        accessors.append({
            "bufferView": writer.add_view(uv32.tobytes()),
            "componentType": 5126,
            "count": int(len(uv32)),
            "type": "VEC2",
        })
        attributes["TEXCOORD_0"] = len(accessors) - 1

    use_u16 = mesh.vertex_count <= 0xFFFF
    idx_dtype = "<u2" if use_u16 else "<u4"
    component_type = 5123 if use_u16 else 5125

    # one primitive per contiguous run of equal material slot, preserving
    # triangle order so round-trips keep geometry bitwise stable
    slots = mesh.material_slot
    if slots is None:
        runs = [(-1, 0, mesh.triangle_count)] if mesh.triangle_count else []
        if mesh.triangle_count == 0:
            runs = [(-1, 0, 0)]
    else:
        runs = []
        start = 0
        for t in range(1, len(slots) + 1):
            if t == len(slots) or slots[t] != slots[start]:
                runs.append((int(slots[start]), start, t))
                start = t
        if not runs:
            runs = [(-1, 0, 0)]

    primitives = []
    for slot, start, end in runs:
        prim: dict = {"attributes": dict(attributes), "mode": 4}
        idx32 = np.ascontiguousarray(mesh.indices[start:end].reshape(-1), dtype=idx_dtype)
        accessors.append({
            "bufferView": writer.add_view(idx32.tobytes()),
            "componentType": component_type,
            "count": int(idx32.size),
            "type": "SCALAR",
        })
        prim["indices"] = len(accessors) - 1
        if 0 <= slot < material_count:
            prim["material"] = slot
        primitives.append(prim)

    return {"name": name, "primitives": primitives}


def _emit_nodes(roots: list[SceneNode], nodes_json: list[dict]) -> list[int]:
    root_ids = []
    seen: set[int] = set()

    def emit(node: SceneNode) -> int:
        if id(node) in seen:
            raise MalformedContainer("scene node graph contains a cycle")
        seen.add(id(node))
        entry: dict = {}
        if node.name:
            entry["name"] = node.name
        transform = np.asarray(node.transform, dtype=np.float64)
        if not np.array_equal(transform, np.eye(4)):
            entry["matrix"] = _float_list(transform.reshape(16, order="F"))
        if node.mesh is not None:
            entry["mesh"] = int(node.mesh)
        nodes_json.append(entry)
        index = len(nodes_json) - 1
        child_ids = [emit(c) for c in node.children]
        if child_ids:
            entry["children"] = child_ids
        seen.discard(id(node))
        return index

    for root in roots:
        root_ids.append(emit(root))
    return root_ids


def write_glb(scene: SceneAsset) -> bytes:
    """Serialize a SceneAsset to GLB bytes; inverse of parse_glb."""
    writer = _BinWriter()
    accessors: list[dict] = []
    doc: dict = {"asset": {"version": "2.0", "generator": "facadekit"}}

    blobs = scene.opaque_blobs
    materials = json.loads(blobs["materials"]) if "materials" in blobs else []

    meshes_json = [
        _emit_mesh(mesh, name, writer, accessors, len(materials))
        for name, mesh in scene.meshes
    ]

    nodes_json: list[dict] = []
    root_ids = _emit_nodes(scene.nodes, nodes_json)

    for key in ("materials", "textures", "samplers"):
        if key in blobs:
            doc[key] = json.loads(blobs[key])
    if "images" in blobs:
        images = []
        for entry in json.loads(blobs["images"]):
            entry = dict(entry)
            data_key = entry.pop("__data", None)
            if data_key is not None:
                entry["bufferView"] = writer.add_view(blobs[data_key])
            images.append(entry)
        doc["images"] = images

    if meshes_json:
        doc["meshes"] = meshes_json
    if accessors:
        doc["accessors"] = accessors
    if writer.views:
        doc["bufferViews"] = writer.views
    if nodes_json:
        doc["nodes"] = nodes_json
        doc["scenes"] = [{"nodes": root_ids}]
        doc["scene"] = 0

    _pad_to(writer.buf, 4)
    if writer.buf:
        doc["buffers"] = [{"byteLength": len(writer.buf)}]

    json_payload = bytearray(json.dumps(doc, separators=(",", ":")).encode("utf-8"))
    _pad_to(json_payload, 4, b" ")

    bin_payload = bytes(writer.buf)
    total = 12 + 8 + len(json_payload) + (8 + len(bin_payload) if bin_payload else 0)
    if len(json_payload) > 0xFFFFFFFF or len(bin_payload) > 0xFFFFFFFF or total > 0xFFFFFFFF:
        raise SerializationOverflow("chunk exceeds 32-bit size field")

    out = bytearray()
    out.extend(struct.pack("<III", GLB_MAGIC, 2, total))
    out.extend(struct.pack("<II", len(json_payload), _JSON_CHUNK))
    out.extend(json_payload)
    if bin_payload:
        out.extend(struct.pack("<II", len(bin_payload), _BIN_CHUNK))
        out.extend(bin_payload)
    return bytes(out)


# ---------------------------------------------------------------------------
# scene flattening and validation


def _transform_mesh(mesh: TriangleMesh, matrix: np.ndarray) -> TriangleMesh:
    if np.array_equal(matrix, np.eye(4)):
        return mesh.copy()
    linear = matrix[:3, :3]
    out = mesh.copy()
    out.positions = mesh.positions @ linear.T + matrix[:3, 3]
    if mesh.normals is not None:
        try:
            normal_matrix = np.linalg.inv(linear).T
        except np.linalg.LinAlgError:
            out.normals = None
            return out
        n = mesh.normals @ normal_matrix.T
        norms = np.linalg.norm(n, axis=1, keepdims=True)
        norms[norms == 0] = 1.0
        out.normals = n / norms
    return out


def _merge_meshes(parts: list[TriangleMesh]) -> TriangleMesh:
    if not parts:
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    positions = []
    indices = []
    offset = 0
    keep_normals = all(p.normals is not None for p in parts)
    keep_uvs = all(p.uvs is not None for p in parts)
    any_slots = any(p.material_slot is not None for p in parts)
    normals, uvs, slots = [], [], []
    for p in parts:
        positions.append(p.positions)
        indices.append(p.indices + offset)
        offset += p.vertex_count
        if keep_normals:
            normals.append(p.normals)
        if keep_uvs:
            uvs.append(p.uvs)
        if any_slots:
            slots.append(p.material_slot if p.material_slot is not None
                         else np.full(p.triangle_count, -1, dtype=np.int32))
    return TriangleMesh(
        np.concatenate(positions),
        np.concatenate(indices),
        np.concatenate(normals) if keep_normals else None,
        np.concatenate(uvs) if keep_uvs else None,
        np.concatenate(slots) if any_slots else None,
    )


def flatten_scene(scene: SceneAsset) -> TriangleMesh:
    """Bake all node transforms into a single mesh, duplicating instances."""
    parts: list[TriangleMesh] = []
    referenced: set[int] = set()

    def walk(node: SceneNode, parent: np.ndarray) -> None:
        world = parent @ np.asarray(node.transform, dtype=np.float64)
        if node.mesh is not None:
            referenced.add(node.mesh)
            parts.append(_transform_mesh(scene.meshes[node.mesh][1], world))
        for child in node.children:
            walk(child, world)

    for root in scene.nodes:
        walk(root, np.eye(4))

    # meshes never placed by a node still belong to the asset; append them
    # with identity transforms in declaration order
    for i, (_name, mesh) in enumerate(scene.meshes):
        if i not in referenced:
            parts.append(mesh.copy())

    return _merge_meshes(parts)


def validate_mesh(mesh: TriangleMesh) -> ValidationReport:
    """Check TriangleMesh invariants; problems are reported, never raised."""
    errors: list[tuple[str, str]] = []
    warnings: list[tuple[str, str]] = []

    finite = np.isfinite(mesh.positions).all(axis=1)
    for i in np.nonzero(~finite)[0]:
        errors.append(("NonFiniteCoordinate", f"position[{i}]"))

    n = mesh.vertex_count
    if mesh.triangle_count:
        bad = (mesh.indices < 0) | (mesh.indices >= n)
        for t in np.nonzero(bad.any(axis=1))[0]:
            errors.append(("IndexOutOfRange", f"triangle[{t}]"))

    if mesh.normals is not None:
        if len(mesh.normals) != n:
            errors.append(("AttributeCountMismatch", "normals"))
        else:
            lengths = np.linalg.norm(mesh.normals, axis=1)
            ok = np.isfinite(lengths) & (np.abs(lengths - 1.0) <= 1e-4)
            for i in np.nonzero(~ok)[0]:
                errors.append(("NonUnitNormal", f"normal[{i}]"))

    if mesh.uvs is not None:
        if len(mesh.uvs) != n:
            errors.append(("AttributeCountMismatch", "uvs"))
        else:
            ok = np.isfinite(mesh.uvs).all(axis=1)
            for i in np.nonzero(~ok)[0]:
                errors.append(("NonFiniteCoordinate", f"uv[{i}]"))

    if mesh.material_slot is not None and len(mesh.material_slot) != mesh.triangle_count:
        errors.append(("AttributeCountMismatch", "material_slot"))

    errors.sort()
    warnings.sort()
    return ValidationReport(errors=errors, warnings=warnings)
