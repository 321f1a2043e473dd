"""Independent oracles used by the test suite.

These deliberately avoid the library's rasterization/projection code paths:
depth comes from brute-force ray-triangle intersection and GLB fixtures are
assembled by hand from the public container layout.
"""

from __future__ import annotations

import json
import struct

import numpy as np

GLB_MAGIC = 0x46546C67
JSON_CHUNK = 0x4E4F534A
BIN_CHUNK = 0x004E4942


def build_glb(doc: dict, bin_chunk: bytes = b"") -> bytes:
    """Assemble GLB bytes directly with struct, independent of the writer."""
    payload = json.dumps(doc).encode("utf-8")
    payload += b" " * (-len(payload) % 4)
    bin_padded = bin_chunk + b"\x00" * (-len(bin_chunk) % 4)
    total = 12 + 8 + len(payload) + (8 + len(bin_padded) if bin_padded else 0)
    out = struct.pack("<III", GLB_MAGIC, 2, total)
    out += struct.pack("<II", len(payload), JSON_CHUNK) + payload
    if bin_padded:
        out += struct.pack("<II", len(bin_padded), BIN_CHUNK) + bin_padded
    return out


def minimal_triangle_glb() -> bytes:
    """Single float32 triangle with uint16 indices, one node, one scene."""
    positions = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], dtype="<f4")
    indices = np.array([0, 1, 2], dtype="<u2")
    pos_bytes = positions.tobytes()
    idx_bytes = indices.tobytes() + b"\x00\x00"  # pad to 4
    doc = {
        "asset": {"version": "2.0"},
        "buffers": [{"byteLength": len(pos_bytes) + len(idx_bytes)}],
        "bufferViews": [
            {"buffer": 0, "byteOffset": 0, "byteLength": len(pos_bytes)},
            {"buffer": 0, "byteOffset": len(pos_bytes), "byteLength": 6},
        ],
        "accessors": [
            {"bufferView": 0, "componentType": 5126, "count": 3, "type": "VEC3",
             "min": [0, 0, 0], "max": [1, 1, 0]},
            {"bufferView": 1, "componentType": 5123, "count": 3, "type": "SCALAR"},
        ],
        "meshes": [{"name": "tri", "primitives": [
            {"attributes": {"POSITION": 0}, "indices": 1}]}],
        "nodes": [{"mesh": 0}],
        "scenes": [{"nodes": [0]}],
        "scene": 0,
    }
    return build_glb(doc, pos_bytes + idx_bytes)


def raycast_depth(mesh, camera) -> np.ndarray:
    """Brute-force nearest ray-triangle depth at every pixel center."""
    h, w = camera.height, camera.width
    us, vs = np.meshgrid(np.arange(w) + 0.5, np.arange(h) + 0.5)
    dirs_cam = np.stack([
        (us - camera.cx) / camera.fx,
        (vs - camera.cy) / camera.fy,
        np.ones_like(us),
    ], axis=-1).reshape(-1, 3)
    dirs_world = dirs_cam @ camera.rotation  # R^T applied to rows
    origin = camera.center

    depth = np.full(h * w, np.inf)
    tri = mesh.positions[mesh.indices]
    for t in range(len(tri)):
        v0, v1, v2 = tri[t]
        e1, e2 = v1 - v0, v2 - v0
        pvec = np.cross(dirs_world, e2)
        det = pvec @ e1
        mask = np.abs(det) > 1e-14
        inv = np.zeros_like(det)
        inv[mask] = 1.0 / det[mask]
        tvec = origin - v0
        u = (pvec @ tvec) * inv
        qvec = np.cross(tvec, e1)
        v = (dirs_world @ qvec) * inv
        dist = (qvec @ e2) * inv
        hit = mask & (u >= 0) & (v >= 0) & (u + v <= 1) & (dist > 1e-9)
        depth = np.where(hit & (dist < depth), dist, depth)
    return depth.reshape(h, w)


def edge_distance_ok(mesh, camera, min_dist: float = 0.5) -> np.ndarray:
    """Pixels whose centers sit at least min_dist px from every projected edge."""
    h, w = camera.height, camera.width
    us, vs = np.meshgrid(np.arange(w) + 0.5, np.arange(h) + 0.5)
    pix = np.stack([us, vs], axis=-1).reshape(-1, 2)
    ok = np.ones(len(pix), dtype=bool)

    cam_pts = mesh.positions @ camera.rotation.T + camera.translation
    for t in mesh.indices:
        pts = cam_pts[t]
        if (pts[:, 2] <= 1e-6).any():
            # near-plane involvement: exclude the whole screen conservatively
            ok[:] = False
            break
        proj = np.stack([
            camera.fx * pts[:, 0] / pts[:, 2] + camera.cx,
            camera.fy * pts[:, 1] / pts[:, 2] + camera.cy,
        ], axis=1)
        for e in range(3):
            a, b = proj[e], proj[(e + 1) % 3]
            ab = b - a
            denom = float(ab @ ab)
            if denom == 0:
                d = np.linalg.norm(pix - a, axis=1)
            else:
                s = np.clip((pix - a) @ ab / denom, 0.0, 1.0)
                d = np.linalg.norm(pix - (a + s[:, None] * ab), axis=1)
            ok &= d >= min_dist
    return ok.reshape(h, w)


def random_front_mesh(rng: np.random.Generator, n_tris: int, spread: float = 2.0,
                      z_range: tuple[float, float] = (4.0, 9.0)):
    """Random triangle soup fully in front of an identity-pose camera."""
    from facadekit import TriangleMesh

    centers = np.stack([
        rng.uniform(-spread, spread, n_tris),
        rng.uniform(-spread, spread, n_tris),
        rng.uniform(*z_range, n_tris),
    ], axis=1)
    offsets = rng.uniform(-1.0, 1.0, (n_tris, 3, 3))
    verts = (centers[:, None, :] + offsets).reshape(-1, 3)
    faces = np.arange(n_tris * 3).reshape(-1, 3)
    return TriangleMesh(verts, faces)


def uv_sphere(radius: float = 1.0, rings: int = 24, segments: int = 48,
              center=(0.0, 0.0, 0.0)):
    """Finely tessellated UV sphere for silhouette tests."""
    from facadekit import TriangleMesh

    cx, cy, cz = center
    verts = []
    for i in range(rings + 1):
        phi = np.pi * i / rings
        for j in range(segments):
            theta = 2 * np.pi * j / segments
            verts.append([
                cx + radius * np.sin(phi) * np.cos(theta),
                cy + radius * np.cos(phi),
                cz + radius * np.sin(phi) * np.sin(theta),
            ])
    faces = []
    for i in range(rings):
        for j in range(segments):
            a = i * segments + j
            b = i * segments + (j + 1) % segments
            c = (i + 1) * segments + j
            d = (i + 1) * segments + (j + 1) % segments
            if i > 0:
                faces.append([a, b, c])
            if i < rings - 1:
                faces.append([b, d, c])
    return TriangleMesh(np.array(verts), np.array(faces))
