"""Pinhole camera, software depth rasterization, back-projection, and OBBs.

Camera convention: camera-from-world, ``x_cam = R @ x_world + t``; the camera
looks along +Z of camera space; image origin top-left, x right, y down. Depth
values are metric camera-space Z, not normalized device depth. Pixel (ix, iy)
has its center at continuous image coordinates (ix + 0.5, iy + 0.5).
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from itertools import permutations

import numpy as np

from .asset_io import TriangleMesh, mesh_aabb
from .errors import DegenerateCamera, DegenerateSource, EmptyCloud, EmptyMesh

_NEAR_PLANE = 1e-6
_ORTHO_TOL = 1e-9


@dataclass
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)

    def check_valid(self) -> None:
        r = self.rotation
        if (np.abs(r @ r.T - np.eye(3)).max() > _ORTHO_TOL
                or abs(np.linalg.det(r) - 1.0) > _ORTHO_TOL):
            raise DegenerateCamera("rotation is not orthonormal with det +1")
        if self.fx <= 0 or self.fy <= 0:
            raise DegenerateCamera("non-positive focal length")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise DegenerateCamera("principal point outside image")

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def camera_to_world(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self.translation) @ self.rotation

    def project(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """World points to continuous pixel coords and camera-space depth."""
        cam = self.world_to_camera(points)
        z = cam[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = self.fx * cam[:, 0] / z + self.cx
            v = self.fy * cam[:, 1] / z + self.cy
        return np.stack([u, v], axis=1), z

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation


def camera_to_json(camera: Camera) -> dict:
    return {
        "fx": camera.fx, "fy": camera.fy, "cx": camera.cx, "cy": camera.cy,
        "width": camera.width, "height": camera.height,
        "rotation": [float(v) for v in camera.rotation.reshape(9)],
        "translation": [float(v) for v in camera.translation],
    }


def camera_from_json(data: dict) -> Camera:
    return Camera(
        fx=float(data["fx"]), fy=float(data["fy"]),
        cx=float(data["cx"]), cy=float(data["cy"]),
        width=int(data["width"]), height=int(data["height"]),
        rotation=np.asarray(data["rotation"], dtype=np.float64).reshape(3, 3),
        translation=np.asarray(data["translation"], dtype=np.float64),
    )


def look_at_camera(eye, target, width: int, height: int, fov_deg: float = 45.0,
                   up=(0.0, 1.0, 0.0)) -> Camera:
    """Camera at `eye` looking at `target`, +Y-up world, y-down image."""
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    norm = np.linalg.norm(forward)
    if norm == 0:
        raise DegenerateCamera("eye coincides with target")
    forward = forward / norm
    up = np.asarray(up, dtype=np.float64)
    right = np.cross(forward, up)
    if np.linalg.norm(right) < 1e-9:
        right = np.cross(forward, np.array([0.0, 0.0, 1.0]))
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    rotation = np.stack([right, down, forward])
    focal = 0.5 * width / math.tan(math.radians(fov_deg) / 2)
    return Camera(fx=focal, fy=focal, cx=width / 2, cy=height / 2,
                  width=width, height=height,
                  rotation=rotation, translation=-rotation @ eye)


@dataclass
class DepthBuffer:
    width: int
    height: int
    values: np.ndarray  # (height, width) float64, +inf = background

    def finite_mask(self) -> np.ndarray:
        return np.isfinite(self.values)


def save_depth(depth: DepthBuffer) -> bytes:
    header = json.dumps({
        "width": depth.width, "height": depth.height,
        "dtype": "<f4", "sentinel": "0x7f800000",
    }, sort_keys=True).encode("utf-8")
    grid = np.ascontiguousarray(depth.values, dtype="<f4").tobytes()
    return struct.pack("<I", len(header)) + header + grid


def load_depth(data: bytes) -> DepthBuffer:
    (hlen,) = struct.unpack_from("<I", data, 0)
    header = json.loads(data[4 : 4 + hlen].decode("utf-8"))
    w, h = int(header["width"]), int(header["height"])
    grid = np.frombuffer(data, dtype="<f4", count=w * h, offset=4 + hlen)
    return DepthBuffer(width=w, height=h,
                       values=grid.reshape(h, w).astype(np.float64))


@dataclass
class PointCloud:
    points: np.ndarray
    source_pixels: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if self.source_pixels is not None:
            self.source_pixels = np.asarray(self.source_pixels, dtype=np.int64).reshape(-1, 2)

    def __len__(self) -> int:
        return len(self.points)


@dataclass
class OrientedBoundingBox:
    center: np.ndarray
    axes: np.ndarray  # columns are unit axes, det +1
    half_extents: np.ndarray  # sorted descending

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64).reshape(3)
        self.axes = np.asarray(self.axes, dtype=np.float64).reshape(3, 3)
        self.half_extents = np.asarray(self.half_extents, dtype=np.float64).reshape(3)


def obb_to_json(obb: OrientedBoundingBox) -> dict:
    return {
        "center": [float(v) for v in obb.center],
        "axes": [float(v) for v in obb.axes.reshape(9)],  # row-major
        "half_extents": [float(v) for v in obb.half_extents],
    }


def obb_from_json(data: dict) -> OrientedBoundingBox:
    return OrientedBoundingBox(
        center=np.asarray(data["center"], dtype=np.float64),
        axes=np.asarray(data["axes"], dtype=np.float64).reshape(3, 3),
        half_extents=np.asarray(data["half_extents"], dtype=np.float64),
    )


@dataclass
class AffinePlacement:
    linear: np.ndarray  # 3x3 rotation * scale
    translation: np.ndarray
    scaling_mode: str = "per_axis"  # or "uniform"

    def __post_init__(self):
        self.linear = np.asarray(self.linear, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)

    def apply(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.linear.T + self.translation

    def to_matrix34(self) -> list[float]:
        m = np.concatenate([self.linear, self.translation.reshape(3, 1)], axis=1)
        return [float(v) for v in m.reshape(12)]

    @classmethod
    def from_matrix34(cls, values, scaling_mode: str = "per_axis") -> "AffinePlacement":
        m = np.asarray(values, dtype=np.float64).reshape(3, 4)
        return cls(linear=m[:, :3], translation=m[:, 3], scaling_mode=scaling_mode)


# ---------------------------------------------------------------------------
# rasterization


def _clip_near(tri: np.ndarray, near: float) -> list[np.ndarray]:
    """Sutherland-Hodgman clip of one camera-space triangle against z=near."""
    inside = tri[:, 2] > near
    if inside.all():
        return [tri]
    if not inside.any():
        return []
    poly = []
    for i in range(3):
        a, b = tri[i], tri[(i + 1) % 3]
        if inside[i]:
            poly.append(a)
        if inside[i] != inside[(i + 1) % 3]:
            t = (near - a[2]) / (b[2] - a[2])
            poly.append(a + t * (b - a))
    return [np.stack([poly[0], poly[i], poly[i + 1]]) for i in range(1, len(poly) - 1)]


def _is_top_left(dx: float, dy: float) -> bool:
    return dy > 0 or (dy == 0 and dx < 0)


def rasterize_buffers(mesh: TriangleMesh, camera: Camera) -> tuple[DepthBuffer, np.ndarray]:
    """Nearest-depth and face-id buffers at pixel centers.

    Back faces are rasterized too (building shells are open); triangles
    behind the camera are clipped at a small positive near plane. Fill rule:
    top-left at pixel centers, no antialiasing.
    """
    camera.check_valid()
    w, h = camera.width, camera.height
    depth = np.full((h, w), np.inf)
    face = np.full((h, w), -1, dtype=np.int32)
    if mesh.triangle_count == 0:
        return DepthBuffer(width=w, height=h, values=depth), face

    cam_verts = camera.world_to_camera(mesh.positions)
    tri_cam = cam_verts[mesh.indices]  # (T, 3, 3)

    # only triangles at least partly in front of the near plane survive
    zmax = tri_cam[:, :, 2].max(axis=1)
    candidates = np.nonzero(zmax > _NEAR_PLANE)[0]

    for t in candidates:
        for tri in _clip_near(tri_cam[t], _NEAR_PLANE):
            z = tri[:, 2]
            px = camera.fx * tri[:, 0] / z + camera.cx
            py = camera.fy * tri[:, 1] / z + camera.cy
            _fill_triangle(depth, face, int(t), px, py, z, camera)
    return DepthBuffer(width=w, height=h, values=depth), face


def _fill_triangle(depth: np.ndarray, face: np.ndarray, tri_id: int,
                   px: np.ndarray, py: np.ndarray, z: np.ndarray,
                   camera: Camera) -> None:
    area2 = (px[1] - px[0]) * (py[2] - py[0]) - (py[1] - py[0]) * (px[2] - px[0])
    if area2 == 0:
        return
    order = (0, 1, 2) if area2 > 0 else (0, 2, 1)
    x = px[list(order)]
    y = py[list(order)]
    inv_z = 1.0 / z[list(order)]
    area2 = abs(area2)

    ix0 = max(0, int(math.ceil(x.min() - 0.5)))
    ix1 = min(camera.width - 1, int(math.floor(x.max() - 0.5)))
    iy0 = max(0, int(math.ceil(y.min() - 0.5)))
    iy1 = min(camera.height - 1, int(math.floor(y.max() - 0.5)))
    if ix0 > ix1 or iy0 > iy1:
        return

    pxs = np.arange(ix0, ix1 + 1) + 0.5
    pys = (np.arange(iy0, iy1 + 1) + 0.5)[:, None]

    inside = None
    weights = []
    for e in range(3):
        a, b = (e + 1) % 3, (e + 2) % 3
        we = (x[b] - x[a]) * (pys - y[a]) - (y[b] - y[a]) * (pxs - x[a])
        tl = _is_top_left(x[b] - x[a], y[b] - y[a])
        cond = (we > 0) | ((we == 0) & tl)
        inside = cond if inside is None else (inside & cond)
        weights.append(we)
    if not inside.any():
        return

    interp = (weights[0] * inv_z[0] + weights[1] * inv_z[1] + weights[2] * inv_z[2]) / area2
    with np.errstate(divide="ignore"):
        zpix = 1.0 / interp
    sub_d = depth[iy0 : iy1 + 1, ix0 : ix1 + 1]
    sub_f = face[iy0 : iy1 + 1, ix0 : ix1 + 1]
    win = inside & (zpix > 0) & (zpix < sub_d)
    sub_d[win] = zpix[win]
    sub_f[win] = tri_id


def render_depth(mesh: TriangleMesh, camera: Camera) -> DepthBuffer:
    """Per-pixel nearest metric depth of the mesh from the camera."""
    buffer, _ = rasterize_buffers(mesh, camera)
    return buffer


def bounding_sphere(mesh: TriangleMesh) -> tuple[np.ndarray, float]:
    if mesh.vertex_count == 0:
        raise EmptyMesh("bounding sphere of an empty mesh")
    lo, hi = mesh_aabb(mesh)
    center = (lo + hi) / 2
    radius = float(np.linalg.norm(mesh.positions - center, axis=1).max())
    return center, radius


def turntable_camera(mesh: TriangleMesh, yaw_deg: float, elevation_deg: float,
                     distance_factor: float, width: int = 256, height: int = 256,
                     fov_deg: float = 45.0) -> Camera:
    """Camera orbiting the mesh bounding-sphere center; yaw 0 looks along -Z."""
    center, radius = bounding_sphere(mesh)
    dist = distance_factor * max(radius, 1e-6)
    yaw = math.radians(yaw_deg)
    el = math.radians(elevation_deg)
    offset = np.array([
        math.sin(yaw) * math.cos(el),
        math.sin(el),
        math.cos(yaw) * math.cos(el),
    ])
    return look_at_camera(center + dist * offset, center, width, height, fov_deg)


def render_turntable(mesh: TriangleMesh, n_views: int, elevation_deg: float = 0.0,
                     distance_factor: float = 2.5, width: int = 256,
                     height: int = 256) -> list[tuple[Camera, DepthBuffer]]:
    """Evenly spaced yaw ring of depth renders around the mesh."""
    if n_views < 1:
        raise ValueError("n_views must be >= 1")
    if mesh.vertex_count == 0:
        raise EmptyMesh("cannot orbit an empty mesh")
    out = []
    for k in range(n_views):
        cam = turntable_camera(mesh, 360.0 * k / n_views, elevation_deg,
                               distance_factor, width, height)
        out.append((cam, render_depth(mesh, cam)))
    return out


def back_project(depth: DepthBuffer, pixels, camera: Camera) -> PointCloud:
    """Lift pixels with valid depth to world points at pixel centers."""
    pix = np.asarray(pixels, dtype=np.int64).reshape(-1, 2)
    if len(pix) == 0:
        return PointCloud(np.zeros((0, 3)), np.zeros((0, 2), dtype=np.int64))
    u, v = pix[:, 0], pix[:, 1]
    if ((u < 0) | (u >= depth.width) | (v < 0) | (v >= depth.height)).any():
        raise ValueError("pixel outside depth buffer")
    z = depth.values[v, u]
    keep = np.isfinite(z)
    pix = pix[keep]
    z = z[keep]
    x = (pix[:, 0] + 0.5 - camera.cx) / camera.fx * z
    y = (pix[:, 1] + 0.5 - camera.cy) / camera.fy * z
    cam_pts = np.stack([x, y, z], axis=1)
    return PointCloud(camera.camera_to_world(cam_pts), pix)


# ---------------------------------------------------------------------------
# oriented bounding boxes


def _align_degenerate_axes(axes: np.ndarray, eigenvalues: np.ndarray) -> np.ndarray:
    """Re-pick bases of near-equal-eigenvalue subspaces closest to world axes."""
    scale = max(float(eigenvalues.max()), 1e-30)
    groups = []
    start = 0
    for i in range(1, 4):
        if i == 3 or abs(eigenvalues[i] - eigenvalues[i - 1]) > 1e-9 * scale:
            groups.append((start, i))
            start = i
    out = axes.copy()
    for lo, hi in groups:
        m = hi - lo
        if m < 2:
            continue
        basis = axes[:, lo:hi]
        projector = basis @ basis.T
        chosen: list[np.ndarray] = []
        for _ in range(m):
            best_vec = None
            best_norm = -1.0
            for k in range(3):
                v = projector[:, k].copy()
                for c in chosen:
                    v -= (v @ c) * c
                n = float(np.linalg.norm(v))
                if n > best_norm + 1e-12:
                    best_norm, best_vec = n, v
            if best_vec is None or best_norm < 1e-12:
                # fall back to the original eigenbasis direction
                v = basis[:, len(chosen)].copy()
                for c in chosen:
                    v -= (v @ c) * c
                best_vec = v
            chosen.append(best_vec / np.linalg.norm(best_vec))
        out[:, lo:hi] = np.column_stack(chosen)
    return out


def fit_obb(cloud: PointCloud) -> OrientedBoundingBox:
    """PCA-aligned oriented bounding box of a point cloud.

    Axes follow the covariance eigenvectors; signs are fixed so each axis's
    largest-magnitude world component is positive, the third axis is forced
    to first x second (det +1), and axes are ordered by half-extent
    descending. Near-equal eigenvalue subspaces snap to world axes.
    """
    pts = cloud.points
    if len(pts) == 0:
        raise EmptyCloud("cannot fit an OBB to an empty cloud")

    mean = pts.mean(axis=0)
    centered = pts - mean
    cov = centered.T @ centered / len(pts)
    eigenvalues, eigenvectors = np.linalg.eigh(cov)
    order = np.argsort(eigenvalues)[::-1]
    eigenvalues = eigenvalues[order]
    axes = eigenvectors[:, order]
    axes = _align_degenerate_axes(axes, eigenvalues)

    proj = centered @ axes
    half = (proj.max(axis=0) - proj.min(axis=0)) / 2 if len(pts) > 1 else np.zeros(3)
    extent_order = np.argsort(-half, kind="stable")
    axes = axes[:, extent_order]

    for i in range(2):
        k = int(np.argmax(np.abs(axes[:, i])))
        if axes[k, i] < 0:
            axes[:, i] = -axes[:, i]
    axes[:, 2] = np.cross(axes[:, 0], axes[:, 1])

    proj = pts @ axes
    lo, hi = proj.min(axis=0), proj.max(axis=0)
    center = axes @ ((lo + hi) / 2)
    half = (hi - lo) / 2
    return OrientedBoundingBox(center=center, axes=axes, half_extents=half)


def obb_vertices(obb: OrientedBoundingBox) -> np.ndarray:
    """The 8 corners; corner k uses sign -1/+1 per axis i from bit (2-i) of k,
    so k counts (---, --+, -+-, -++, +--, +-+, ++-, +++)."""
    signs = np.array([[1 if (k >> (2 - i)) & 1 else -1 for i in range(3)]
                      for k in range(8)], dtype=np.float64)
    offsets = (signs * obb.half_extents) @ obb.axes.T
    return obb.center + offsets


def _tie_groups(values: np.ndarray, tol: float) -> list[list[int]]:
    groups: list[list[int]] = [[0]]
    for i in range(1, len(values)):
        if abs(values[i] - values[groups[-1][0]]) <= tol:
            groups[-1].append(i)
        else:
            groups.append([i])
    return groups


def compute_alignment(source: OrientedBoundingBox, target: OrientedBoundingBox,
                      mode: str = "per_axis") -> AffinePlacement:
    """Placement mapping the source OBB frame onto the target OBB frame.

    Axes correspond by half-extent rank; within tied source ranks the
    permutation maximizing absolute axis dot products wins. Scale is
    per-axis extent ratios or their minimum in uniform mode.
    """
    if mode not in ("per_axis", "uniform"):
        raise ValueError(f"unknown scaling mode {mode!r}")
    s_axes = source.axes.copy()
    s_half = source.half_extents.copy()
    t_axes = target.axes
    t_half = target.half_extents

    # resolve rank ties on the source side by best |dot| with matched targets
    tol = 1e-9 * max(float(s_half[0]), 1e-30)
    perm = list(range(3))
    for group in _tie_groups(s_half, tol):
        if len(group) < 2:
            continue
        best = None
        for cand in permutations(group):
            score = sum(abs(float(s_axes[:, cand[j]] @ t_axes[:, group[j]]))
                        for j in range(len(group)))
            if best is None or score > best[0] + 1e-12:
                best = (score, cand)
        for j, src_idx in enumerate(best[1]):
            perm[group[j]] = src_idx
    s_axes = s_axes[:, perm]
    s_half = s_half[perm]
    if np.linalg.det(s_axes) < 0:
        s_axes[:, 2] = -s_axes[:, 2]

    ratios = np.ones(3)
    defined = s_half > 1e-12
    for i in range(3):
        if defined[i]:
            ratios[i] = t_half[i] / s_half[i]
        elif t_half[i] > 1e-12:
            raise DegenerateSource(
                f"source extent {i} is zero but target extent is {t_half[i]:g}")
    if mode == "uniform":
        ratios[:] = ratios[defined].min() if defined.any() else 1.0

    linear = t_axes @ np.diag(ratios) @ s_axes.T
    translation = target.center - linear @ source.center
    return AffinePlacement(linear=linear, translation=translation, scaling_mode=mode)
