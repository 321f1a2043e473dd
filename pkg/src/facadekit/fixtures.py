"""Procedural fixture geometry: parameterized windows/doors and a test house.

The repo ships no real component dataset; this generator stands in for it.
Windows vary pane grid, proportions, frame width, and an arched top; doors
vary panel layout, glazing strip, and handle side. The fixture house has a
conforming window opening with known face ids so replacement tests can check
exact face removal and the analytic hole perimeter.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .asset_io import SceneAsset, TriangleMesh, write_glb
from .geometry import turntable_camera, rasterize_buffers
from .segmentation import ComponentMask, mask_to_image

_BOX_QUADS = (
    (0, 1, 3, 2), (4, 6, 7, 5),
    (0, 4, 5, 1), (2, 3, 7, 6),
    (0, 2, 6, 4), (1, 5, 7, 3),
)


class MeshBuilder:
    def __init__(self):
        self.positions: list[np.ndarray] = []
        self.indices: list[np.ndarray] = []
        self.slots: list[np.ndarray] = []
        self._offset = 0

    def add(self, verts: np.ndarray, tris: np.ndarray, slot: int) -> None:
        self.positions.append(verts)
        self.indices.append(tris + self._offset)
        self.slots.append(np.full(len(tris), slot, dtype=np.int32))
        self._offset += len(verts)

    def add_box(self, center, half, slot: int, axes: np.ndarray | None = None) -> None:
        center = np.asarray(center, dtype=np.float64)
        half = np.asarray(half, dtype=np.float64)
        corners = np.array([[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)],
                           dtype=np.float64) * half
        if axes is not None:
            corners = corners @ np.asarray(axes, dtype=np.float64).T
        verts = corners + center
        tris = []
        for a, b, c, d in _BOX_QUADS:
            tris.append([a, b, c])
            tris.append([a, c, d])
        self.add(verts, np.array(tris, dtype=np.int64), slot)

    def add_quad(self, corners, slot: int) -> None:
        verts = np.asarray(corners, dtype=np.float64)
        self.add(verts, np.array([[0, 1, 2], [0, 2, 3]], dtype=np.int64), slot)

    def build(self) -> TriangleMesh:
        return TriangleMesh(
            np.concatenate(self.positions) if self.positions else np.zeros((0, 3)),
            np.concatenate(self.indices) if self.indices else np.zeros((0, 3), dtype=np.int64),
            material_slot=np.concatenate(self.slots) if self.slots else None,
        )


def make_window(width: float = 1.2, height: float = 0.9, depth: float = 0.1,
                frame: float = 0.06, cols: int = 2, rows: int = 1,
                arch: bool = False, sill: bool = False) -> TriangleMesh:
    """Framed window with a cols x rows pane grid; slot 0 frame, slot 1 glass."""
    b = MeshBuilder()
    hw, hh, hd, hf = width / 2, height / 2, depth / 2, frame / 2
    top = hh
    rise = 0.0
    if arch:
        rise = min(0.25 * height, hw)

    # left / right / bottom frame bars
    b.add_box([-hw + hf, 0, 0], [hf, hh, hd], 0)
    b.add_box([hw - hf, 0, 0], [hf, hh, hd], 0)
    b.add_box([0, -hh + hf, 0], [hw - frame, hf, hd], 0)
    if arch:
        segments = 8
        radius = hw - hf
        angles = np.linspace(0.0, math.pi, segments + 1)
        pts = np.stack([radius * np.cos(angles), top + rise * np.sin(angles)], axis=1)
        for i in range(segments):
            a, c = pts[i], pts[i + 1]
            mid = (a + c) / 2
            d = c - a
            length = float(np.linalg.norm(d))
            t = d / length
            axes = np.array([[t[0], -t[1], 0.0], [t[1], t[0], 0.0], [0.0, 0.0, 1.0]]).T
            b.add_box([mid[0], mid[1], 0.0], [length / 2 + hf, hf, hd], 0, axes=axes)
    else:
        b.add_box([0, hh - hf, 0], [hw - frame, hf, hd], 0)

    # mullions between panes
    inner_w, inner_h = width - 2 * frame, height - 2 * frame
    x0, y0 = -hw + frame, -hh + frame
    for c in range(1, cols):
        x = x0 + inner_w * c / cols
        b.add_box([x, y0 + inner_h / 2, 0], [hf * 0.7, inner_h / 2, hd * 0.8], 0)
    for r in range(1, rows):
        y = y0 + inner_h * r / rows
        b.add_box([0, y, 0], [inner_w / 2, hf * 0.7, hd * 0.8], 0)

    # glass pane, slightly inset
    b.add_box([0, 0, 0], [inner_w / 2, inner_h / 2, hd * 0.2], 1)
    if sill:
        b.add_box([0, -hh - hf, hd * 0.4], [hw + frame, hf, hd * 1.4], 0)
    return b.build()


def make_door(width: float = 0.95, height: float = 2.05, depth: float = 0.08,
              frame: float = 0.07, panel_cols: int = 1, panel_rows: int = 2,
              handle_right: bool = True, top_window: bool = False) -> TriangleMesh:
    """Framed door slab with raised panels; slot 0 frame, 1 glazing, 2 slab."""
    b = MeshBuilder()
    hw, hh, hd, hf = width / 2, height / 2, depth / 2, frame / 2

    b.add_box([-hw + hf, 0, 0], [hf, hh, hd * 1.2], 0)
    b.add_box([hw - hf, 0, 0], [hf, hh, hd * 1.2], 0)
    b.add_box([0, hh - hf, 0], [hw, hf, hd * 1.2], 0)

    slab_top = hh - frame
    glass_h = 0.0
    if top_window:
        glass_h = 0.22 * height
        b.add_box([0, slab_top - glass_h / 2, 0],
                  [hw - frame, glass_h / 2, hd * 0.2], 1)
        b.add_box([0, slab_top - glass_h, 0], [hw - frame, hf * 0.8, hd * 1.1], 0)
    slab_h = (slab_top - glass_h) - (-hh)
    slab_c = (-hh + slab_top - glass_h) / 2
    b.add_box([0, slab_c, 0], [hw - frame, slab_h / 2, hd], 2)

    # raised panels on the slab
    if panel_cols > 0 and panel_rows > 0:
        margin = 0.1 * width
        pw = (width - 2 * frame - (panel_cols + 1) * margin) / panel_cols
        ph = (slab_h - (panel_rows + 1) * margin) / panel_rows
        if pw > 0.02 and ph > 0.02:
            for pc in range(panel_cols):
                for pr in range(panel_rows):
                    px = -hw + frame + margin + pw / 2 + pc * (pw + margin)
                    py = slab_c - slab_h / 2 + margin + ph / 2 + pr * (ph + margin)
                    b.add_box([px, py, hd * 0.8], [pw / 2, ph / 2, hd * 0.5], 2)

    side = 1.0 if handle_right else -1.0
    b.add_box([side * (hw - frame - 0.06), -0.05, hd * 1.2],
              [0.018, 0.07, hd * 0.6], 0)
    return b.build()


_COMPONENT_MATERIALS = [
    {"name": "frame", "pbrMetallicRoughness": {"baseColorFactor": [0.85, 0.85, 0.88, 1.0]}},
    {"name": "glass", "pbrMetallicRoughness": {"baseColorFactor": [0.45, 0.65, 0.8, 1.0]}},
    {"name": "slab", "pbrMetallicRoughness": {"baseColorFactor": [0.5, 0.33, 0.2, 1.0]}},
]


def _materials_blob(materials: list[dict]) -> bytes:
    return json.dumps(materials, sort_keys=True, separators=(",", ":")).encode()


def component_suite(count: int = 60, seed: int = 0) -> list[dict]:
    """Deterministic set of distinct window/door components."""
    rng = np.random.default_rng(seed)
    window_combos = [(c, r, arch) for arch in (False, True)
                     for c in (1, 2, 3, 4) for r in (1, 2, 3)]
    door_combos = [(pc, pr, tw, hr) for tw in (False, True)
                   for (pc, pr) in ((1, 2), (1, 3), (2, 2), (2, 3), (1, 1), (0, 0))
                   for hr in (True, False)]
    out = []
    wi = di = 0
    for i in range(count):
        if i % 5 < 3:  # 3 windows to every 2 doors
            cols, rows, arch = window_combos[wi % len(window_combos)]
            wi += 1
            width = float(rng.uniform(0.7, 1.9))
            height = float(rng.uniform(0.6, 1.5))
            mesh = make_window(width=width, height=height,
                               depth=float(rng.uniform(0.08, 0.16)),
                               frame=float(rng.uniform(0.04, 0.09)),
                               cols=cols, rows=rows, arch=arch,
                               sill=bool(rng.integers(0, 2)))
            out.append({
                "name": f"window_{wi - 1:03d}", "category": "window", "mesh": mesh,
                "tags": [f"panes_{cols}x{rows}"] + (["arched"] if arch else []),
            })
        else:
            pc, pr, tw, hr = door_combos[di % len(door_combos)]
            di += 1
            mesh = make_door(width=float(rng.uniform(0.85, 1.15)),
                             height=float(rng.uniform(1.95, 2.2)),
                             depth=float(rng.uniform(0.06, 0.1)),
                             panel_cols=pc, panel_rows=pr,
                             handle_right=hr, top_window=tw)
            out.append({
                "name": f"door_{di - 1:03d}", "category": "door", "mesh": mesh,
                "tags": [f"panels_{pc}x{pr}"] + (["glazed"] if tw else []),
            })
    return out


def write_component_suite(out_dir, count: int = 60, seed: int = 0) -> list[Path]:
    """Write the suite as GLBs plus a metadata.json sidecar; returns paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sidecar = {}
    paths = []
    for item in component_suite(count, seed):
        scene = SceneAsset(meshes=[(item["name"], item["mesh"])],
                           opaque_blobs={"materials": _materials_blob(_COMPONENT_MATERIALS)})
        path = out_dir / f"{item['name']}.glb"
        path.write_bytes(write_glb(scene))
        sidecar[path.name] = {"category": item["category"], "tags": item["tags"]}
        paths.append(path)
    (out_dir / "metadata.json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))
    return paths


# ---------------------------------------------------------------------------
# fixture house


def fixture_house() -> tuple[TriangleMesh, dict]:
    """Gabled house whose front wall has conforming window and door openings.

    Returns the mesh and metadata: the window/door face ids, opening
    dimensions, and the analytic count of shared hole-perimeter edges.
    """
    b = MeshBuilder()
    xs = [-3.0, -2.2, -1.2, 0.4, 1.6, 3.0]
    ys = [0.0, 1.2, 2.1, 3.0]
    z_front = 2.0
    window_cell = (3, 1)  # x 0.4..1.6, y 1.2..2.1
    door_cells = {(1, 0), (1, 1)}  # x -2.2..-1.2, y 0..2.1

    grid = np.array([[x, y, z_front] for y in ys for x in xs])
    b.add(grid, np.zeros((0, 3), dtype=np.int64), 0)

    def vid(col: int, row: int) -> int:
        return row * len(xs) + col

    def cell_tris(col: int, row: int) -> np.ndarray:
        a, bb = vid(col, row), vid(col + 1, row)
        c, d = vid(col + 1, row + 1), vid(col, row + 1)
        return np.array([[a, bb, c], [a, c, d]], dtype=np.int64)

    wall_tris, window_tris, door_tris = [], [], []
    for row in range(len(ys) - 1):
        for col in range(len(xs) - 1):
            if (col, row) == window_cell:
                window_tris.append(cell_tris(col, row))
            elif (col, row) in door_cells:
                door_tris.append(cell_tris(col, row))
            else:
                wall_tris.append(cell_tris(col, row))

    def add_tris(groups: list[np.ndarray], slot: int) -> list[int]:
        tris = np.concatenate(groups)
        start = sum(len(t) for t in b.indices)
        b.indices.append(tris)
        b.slots.append(np.full(len(tris), slot, dtype=np.int32))
        return list(range(start, start + len(tris)))

    add_tris(wall_tris, 0)
    window_face_ids = add_tris(window_tris, 1)
    door_face_ids = add_tris(door_tris, 2)

    # back / side walls and gable roof
    b.add_quad([[3, 0, -2], [-3, 0, -2], [-3, 3, -2], [3, 3, -2]], 0)
    b.add_quad([[-3, 0, 2], [-3, 0, -2], [-3, 3, -2], [-3, 3, 2]], 0)
    b.add_quad([[3, 0, -2], [3, 0, 2], [3, 3, 2], [3, 3, -2]], 0)
    ridge = 4.0
    b.add_quad([[-3, 3, 2], [3, 3, 2], [3, ridge, 0], [-3, ridge, 0]], 3)
    b.add_quad([[3, 3, -2], [-3, 3, -2], [-3, ridge, 0], [3, ridge, 0]], 3)
    b.add(np.array([[-3, 3, 2], [-3, ridge, 0], [-3, 3, -2],
                    [3, 3, 2], [3, 3, -2], [3, ridge, 0]], dtype=np.float64),
          np.array([[0, 1, 2], [3, 4, 5]], dtype=np.int64), 0)

    mesh = b.build()
    meta = {
        "window_face_ids": window_face_ids,
        "door_face_ids": door_face_ids,
        "window": {"center": [1.0, 1.65, z_front], "width": 1.2, "height": 0.9},
        "door": {"center": [-1.7, 1.05, z_front], "width": 1.0, "height": 2.1},
        "window_hole_perimeter_edges": 4,
        "door_hole_perimeter_edges": 5,
    }
    return mesh, meta


_HOUSE_MATERIALS = [
    {"name": "wall", "pbrMetallicRoughness": {"baseColorFactor": [0.92, 0.9, 0.86, 1.0]}},
    {"name": "window", "pbrMetallicRoughness": {"baseColorFactor": [0.5, 0.7, 0.85, 1.0]}},
    {"name": "door", "pbrMetallicRoughness": {"baseColorFactor": [0.45, 0.3, 0.2, 1.0]}},
    {"name": "roof", "pbrMetallicRoughness": {"baseColorFactor": [0.4, 0.25, 0.25, 1.0]}},
]


def house_scene() -> tuple[SceneAsset, dict]:
    mesh, meta = fixture_house()
    scene = SceneAsset(meshes=[("house", mesh)],
                       opaque_blobs={"materials": _materials_blob(_HOUSE_MATERIALS)})
    return scene, meta


def write_fixture_house(out_dir, size: int = 512) -> dict:
    """Write house.glb plus rendered window/door masks and a mask mapping.

    Masks come from the face-id buffer at the default front camera, so they
    align exactly with any later render at the same camera.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    scene, meta = house_scene()
    mesh = scene.meshes[0][1]
    (out_dir / "house.glb").write_bytes(write_glb(scene))

    camera = turntable_camera(mesh, 0.0, 0.0, 2.5, width=size, height=size)
    _, face = rasterize_buffers(mesh, camera)
    mapping = {}
    for label, ids in (("window", meta["window_face_ids"]),
                       ("door", meta["door_face_ids"])):
        bits = np.isin(face, np.asarray(ids))
        mask = ComponentMask(width=size, height=size, bits=bits, label=label)
        name = f"{label}.png"
        mask_to_image(mask).save(out_dir / name)
        mapping[label] = name
    (out_dir / "mapping.json").write_text(json.dumps(mapping, indent=2, sort_keys=True))

    from .geometry import camera_to_json

    meta_out = dict(meta)
    meta_out["camera"] = camera_to_json(camera)
    meta_out["render_size"] = size
    (out_dir / "meta.json").write_text(json.dumps(meta_out, indent=2, sort_keys=True))
    return meta_out
