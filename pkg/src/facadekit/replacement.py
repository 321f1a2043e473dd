"""Face removal and component splicing with fusion-quality reporting.

Seams are measured, not repaired: the FusionReport counts open boundary
edges around the removal hole and the gap from hole vertices to the inserted
component so callers can gate on them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .asset_io import TriangleMesh
from .errors import DegenerateComponent, DegenerateSource, StalePlanError
from .geometry import (
    AffinePlacement,
    OrientedBoundingBox,
    compute_alignment,
    obb_from_json,
    obb_to_json,
)

DEFAULT_INFLATION = 0.05
_ZERO_EXTENT_FLOOR = 1e-4  # meters; keeps flat regions selectable


@dataclass
class ReplacementPlan:
    target_obb: OrientedBoundingBox
    faces_to_remove: frozenset[int]
    component_id: int
    placement: AffinePlacement
    inflation: float = DEFAULT_INFLATION

    def __post_init__(self):
        self.faces_to_remove = frozenset(int(f) for f in self.faces_to_remove)


@dataclass
class FusionReport:
    removed_face_count: int = 0
    added_face_count: int = 0
    open_boundary_edge_count: int = 0
    bounding_gap: float = 0.0

    def to_dict(self) -> dict:
        return {
            "removed_face_count": self.removed_face_count,
            "added_face_count": self.added_face_count,
            "open_boundary_edge_count": self.open_boundary_edge_count,
            "bounding_gap": self.bounding_gap,
        }


def plan_to_json(plan: ReplacementPlan) -> dict:
    return {
        "target_obb": obb_to_json(plan.target_obb),
        "faces_to_remove": sorted(plan.faces_to_remove),
        "component_id": int(plan.component_id),
        "placement": plan.placement.to_matrix34(),
        "scaling_mode": plan.placement.scaling_mode,
        "inflation": float(plan.inflation),
    }


def plan_from_json(data: dict) -> ReplacementPlan:
    return ReplacementPlan(
        target_obb=obb_from_json(data["target_obb"]),
        faces_to_remove=frozenset(int(f) for f in data["faces_to_remove"]),
        component_id=int(data["component_id"]),
        placement=AffinePlacement.from_matrix34(data["placement"],
                                                data.get("scaling_mode", "per_axis")),
        inflation=float(data.get("inflation", DEFAULT_INFLATION)),
    )


def select_faces_in_region(mesh: TriangleMesh, obb: OrientedBoundingBox,
                           inflation: float = DEFAULT_INFLATION) -> set[int]:
    """Triangles whose three vertices all lie inside the inflated OBB.

    The all-vertices rule is conservative: faces merely abutting the region
    survive. Zero extents get an absolute 1e-4 m floor.
    """
    if mesh.triangle_count == 0:
        return set()
    # the absolute floor also absorbs float noise in near-planar region fits
    limits = np.maximum(obb.half_extents * (1.0 + inflation), _ZERO_EXTENT_FLOOR)
    local = (mesh.positions - obb.center) @ obb.axes
    vertex_inside = (np.abs(local) <= limits).all(axis=1)
    tri_inside = vertex_inside[mesh.indices].all(axis=1)
    return set(np.nonzero(tri_inside)[0].tolist())


def plan_replacement(mesh: TriangleMesh, target_obb: OrientedBoundingBox,
                     component_id: int, component_obb: OrientedBoundingBox,
                     mode: str = "per_axis",
                     inflation: float = DEFAULT_INFLATION) -> ReplacementPlan:
    """Build a plan: face selection plus component-to-target placement."""
    faces = select_faces_in_region(mesh, target_obb, inflation)
    try:
        placement = compute_alignment(component_obb, target_obb, mode)
    except DegenerateSource as exc:
        raise DegenerateComponent(str(exc)) from exc
    return ReplacementPlan(target_obb=target_obb, faces_to_remove=frozenset(faces),
                           component_id=component_id, placement=placement,
                           inflation=inflation)


def _undirected_edges(tris: np.ndarray) -> np.ndarray:
    edges = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    return np.sort(edges, axis=1)


def _edge_counter(edges: np.ndarray) -> dict[tuple[int, int], int]:
    out: dict[tuple[int, int], int] = {}
    for a, b in edges:
        key = (int(a), int(b))
        out[key] = out.get(key, 0) + 1
    return out


def _transform_normals(normals: np.ndarray, linear: np.ndarray,
                       transformed: TriangleMesh) -> np.ndarray | None:
    """Normals under an affine map via the adjugate; a singular (flattening)
    placement falls back to area-weighted normals of the transformed faces."""
    det = np.linalg.det(linear)
    if abs(det) > 1e-12:
        n = normals @ np.linalg.inv(linear)  # rows: n' = (M^-1)^T n
        lengths = np.linalg.norm(n, axis=1, keepdims=True)
        if (lengths > 1e-12).all():
            return n / lengths
    return _vertex_normals(transformed)


def _vertex_normals(mesh: TriangleMesh) -> np.ndarray:
    tri = mesh.positions[mesh.indices]
    face_n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    acc = np.zeros((mesh.vertex_count, 3))
    for c in range(3):
        np.add.at(acc, mesh.indices[:, c], face_n)
    lengths = np.linalg.norm(acc, axis=1, keepdims=True)
    fallback = np.array([0.0, 0.0, 1.0])
    acc = np.where(lengths > 1e-12, acc / np.maximum(lengths, 1e-12), fallback)
    return acc


def apply_replacement(mesh: TriangleMesh, plan: ReplacementPlan,
                      component: TriangleMesh) -> tuple[TriangleMesh, FusionReport]:
    """Remove the planned faces and insert the placed component.

    The component is expected in its canonical OBB frame (catalog components
    are canonicalized at ingest); plan.placement maps that frame onto the
    target region. Untouched base vertices keep bitwise-equal coordinates.
    """
    n_faces = mesh.triangle_count
    removal = np.zeros(n_faces, dtype=bool)
    for f in plan.faces_to_remove:
        if not 0 <= f < n_faces:
            raise StalePlanError(f"face id {f} out of range for mesh with "
                                 f"{n_faces} faces")
        removal[f] = True

    kept_tris = mesh.indices[~removal]
    removed_tris = mesh.indices[removal]

    # hole boundary: edges of removed faces bordering exactly one kept face
    kept_edge_counts = _edge_counter(_undirected_edges(kept_tris))
    removed_edges = {tuple(e) for e in _undirected_edges(removed_tris).tolist()}
    boundary_edges = [e for e in removed_edges if kept_edge_counts.get(e, 0) == 1]

    # compact the kept base mesh
    if len(kept_tris):
        used = np.unique(kept_tris)
        remap = np.full(mesh.vertex_count, -1, dtype=np.int64)
        remap[used] = np.arange(len(used))
        base = TriangleMesh(
            mesh.positions[used],
            remap[kept_tris],
            None if mesh.normals is None else mesh.normals[used],
            None if mesh.uvs is None else mesh.uvs[used],
            None if mesh.material_slot is None else mesh.material_slot[~removal],
        )
    else:
        base = TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64),
                            normals=np.zeros((0, 3)) if mesh.normals is not None else None,
                            uvs=np.zeros((0, 2)) if mesh.uvs is not None else None,
                            material_slot=(np.zeros(0, dtype=np.int32)
                                           if mesh.material_slot is not None else None))

    placed = component.copy()
    placed.positions = plan.placement.apply(component.positions)
    if component.normals is not None and placed.vertex_count:
        placed.normals = _transform_normals(component.normals,
                                            plan.placement.linear, placed)

    # component material slots move to a fresh range above the base's
    if placed.material_slot is not None:
        base_max = int(mesh.material_slot.max()) if mesh.material_slot is not None \
            and len(mesh.material_slot) else -1
        comp_slots = placed.material_slot
        distinct = sorted(int(s) for s in np.unique(comp_slots) if s >= 0)
        remap_slots = {old: base_max + 1 + rank for rank, old in enumerate(distinct)}
        placed.material_slot = np.asarray(
            [remap_slots.get(int(s), -1) for s in comp_slots], dtype=np.int32)

    merged = _merge_for_replacement(base, placed)

    gap = 0.0
    if boundary_edges and placed.vertex_count:
        boundary_vertex_ids = sorted({v for e in boundary_edges for v in e})
        verts = mesh.positions[boundary_vertex_ids]
        lo = placed.positions.min(axis=0)
        hi = placed.positions.max(axis=0)
        clamped = np.clip(verts, lo, hi)
        gap = float(np.linalg.norm(verts - clamped, axis=1).max())

    report = FusionReport(
        removed_face_count=int(removal.sum()),
        added_face_count=placed.triangle_count,
        open_boundary_edge_count=len(boundary_edges),
        bounding_gap=gap,
    )
    return merged, report


def _merge_for_replacement(base: TriangleMesh, placed: TriangleMesh) -> TriangleMesh:
    keep_normals = base.normals is not None and placed.normals is not None
    keep_uvs = base.uvs is not None and placed.uvs is not None
    any_slots = base.material_slot is not None or placed.material_slot is not None

    def slots_of(m: TriangleMesh) -> np.ndarray:
        if m.material_slot is not None:
            return m.material_slot
        return np.full(m.triangle_count, -1, dtype=np.int32)

    return TriangleMesh(
        np.concatenate([base.positions, placed.positions]),
        np.concatenate([base.indices, placed.indices + base.vertex_count]),
        np.concatenate([base.normals, placed.normals]) if keep_normals else None,
        np.concatenate([base.uvs, placed.uvs]) if keep_uvs else None,
        np.concatenate([slots_of(base), slots_of(placed)]) if any_slots else None,
    )
