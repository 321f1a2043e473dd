"""Sketch-based component retrieval over line-art views.

Catalog components are rendered as line art (silhouette + crease strokes),
described by Gabor filter-bank responses pooled on a 4x4 grid around sampled
stroke keypoints, quantized against a k-means codebook, and indexed with
tf-idf weighted postings. Queries are user sketches scored by cosine
similarity through the inverted index; a component scores the max over its
views.

Descriptor regime: 4 orientations (0, 45, 90, 135 degrees), wavelength
0.1 x image diagonal, window 0.25 x diagonal, 4x4 pooling cells, 500 sampled
keypoints, canonical 256x256 raster (inputs resampled, aspect preserved by
padding), default vocabulary k = 256.
"""

from __future__ import annotations

import functools
import io
import json
import math
import struct
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.fft
from PIL import Image

from .asset_io import TriangleMesh
from .errors import (
    CatalogEmpty,
    CodebookReducedWarning,
    EmptyMesh,
    EmptyQuery,
    NoFeatures,
    UnsupportedFormat,
)
from .geometry import Camera, bounding_sphere, rasterize_buffers, turntable_camera
from .segmentation import MASK_THRESHOLD

CANONICAL_SIZE = 256
MIN_SKETCH_SIZE = 64
ORIENTATIONS_DEG = (0.0, 45.0, 90.0, 135.0)
WAVELENGTH_FACTOR = 0.1
WINDOW_FACTOR = 0.25
GRID_CELLS = 4
DEFAULT_SAMPLES = 500
DEFAULT_CODEBOOK_K = 256
KMEANS_MAX_ITER = 50
KMEANS_TOL = 1e-6
TRAIN_SUBSAMPLE = 60_000

# near-frontal rig: facade components are sketched from the front
VIEW_YAW_SPAN = 30.0
VIEW_ELEVATION_DEG = 10.0
VIEW_DISTANCE_FACTOR = 2.5

_INDEX_MAGIC = b"SKRIDX1\x00"


@dataclass
class SketchImage:
    width: int
    height: int
    bits: np.ndarray  # (height, width) bool, True = ink

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=bool).reshape(self.height, self.width)


@dataclass
class LocalFeature:
    vector: np.ndarray  # 64 non-negative reals, unit L2 norm
    keypoint: tuple[int, int]  # (u, v)


@dataclass
class Codebook:
    centroids: np.ndarray  # (k, 64)
    k: int
    training_seed: int


@dataclass
class DescriptorHistogram:
    weights: np.ndarray  # (k,)
    view_id: int = -1
    component_id: int = -1
    empty: bool = False


@dataclass
class RetrievalIndex:
    codebook: Codebook
    idf: np.ndarray  # (k,)
    postings: list[np.ndarray]  # per word: (n, 3) float32 [component, view, weight]
    view_counts: dict[int, int]
    params: dict = field(default_factory=dict)
    load_failures: list[tuple[int, str]] = field(default_factory=list)

    @property
    def component_ids(self) -> list[int]:
        return sorted(self.view_counts)

    def _accumulator(self):
        """Flattened postings (word, descriptor, weight) for vectorized scoring."""
        cached = getattr(self, "_acc", None)
        if cached is None:
            keys: dict[tuple[int, int], int] = {}
            words, descs, weights = [], [], []
            for w, p in enumerate(self.postings):
                for comp, view, value in p:
                    key = (int(comp), int(view))
                    idx = keys.setdefault(key, len(keys))
                    words.append(w)
                    descs.append(idx)
                    weights.append(float(value))
            desc_comp = np.empty(max(len(keys), 1), dtype=np.int64)
            for (comp, _view), i in keys.items():
                desc_comp[i] = comp
            cached = (np.asarray(words, dtype=np.int64),
                      np.asarray(descs, dtype=np.int64),
                      np.asarray(weights, dtype=np.float64),
                      desc_comp[: len(keys)])
            self._acc = cached
        return cached


def load_sketch(source) -> SketchImage:
    """Decode a 1-bit or 8-bit grayscale raster; ink iff value > 127."""
    from .segmentation import _decode_gray

    gray = _decode_gray(source)
    bits = gray > MASK_THRESHOLD
    h, w = bits.shape
    return SketchImage(width=w, height=h, bits=bits)


def sketch_to_image(sketch: SketchImage) -> Image.Image:
    return Image.fromarray(np.where(sketch.bits, 255, 0).astype(np.uint8), mode="L")


def sketch_to_png_bytes(sketch: SketchImage) -> bytes:
    buf = io.BytesIO()
    sketch_to_image(sketch).save(buf, format="PNG")
    return buf.getvalue()


def resample_sketch(sketch: SketchImage, size: int = CANONICAL_SIZE) -> SketchImage:
    """Fit onto a size x size canvas, aspect preserved by centered padding.

    Downsampling keeps a pixel inked when any source pixel in its box was
    inked, so thin strokes survive.
    """
    if sketch.width == size and sketch.height == size:
        return sketch
    scale = size / max(sketch.width, sketch.height)
    tw = max(1, round(sketch.width * scale))
    th = max(1, round(sketch.height * scale))
    img = Image.fromarray(sketch.bits.astype(np.float32), mode="F")
    resized = np.asarray(img.resize((tw, th), Image.Resampling.BOX))
    bits = np.zeros((size, size), dtype=bool)
    ox, oy = (size - tw) // 2, (size - th) // 2
    bits[oy : oy + th, ox : ox + tw] = resized > 1e-6
    return SketchImage(width=size, height=size, bits=bits)


# ---------------------------------------------------------------------------
# line-art rendering


def render_line_art(mesh: TriangleMesh, camera: Camera,
                    depth_threshold: float | None = None,
                    normal_threshold_deg: float = 30.0) -> SketchImage:
    """Contour drawing of a mesh: stroke where the 4-neighborhood depth range
    jumps (silhouette/occluding edge) or adjacent face normals disagree by
    more than the threshold (crease)."""
    if mesh.vertex_count == 0:
        raise EmptyMesh("cannot render line art of an empty mesh")
    if depth_threshold is None:
        _, radius = bounding_sphere(mesh)
        depth_threshold = 0.02 * max(radius, 1e-9)

    depth, face = rasterize_buffers(mesh, camera)
    z = depth.values
    fg = np.isfinite(z)

    tri = mesh.positions[mesh.indices]
    normals = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    lengths = np.linalg.norm(normals, axis=1, keepdims=True)
    lengths[lengths == 0] = 1.0
    normals /= lengths
    cos_limit = math.cos(math.radians(normal_threshold_deg))

    stroke = np.zeros_like(fg)
    shifts = ((0, 1), (0, -1), (1, 0), (-1, 0))
    for dy, dx in shifts:
        nz = np.roll(z, (dy, dx), axis=(0, 1))
        nf = np.roll(face, (dy, dx), axis=(0, 1))
        valid = np.ones_like(fg)
        if dy == 1:
            valid[0, :] = False
        elif dy == -1:
            valid[-1, :] = False
        if dx == 1:
            valid[:, 0] = False
        elif dx == -1:
            valid[:, -1] = False

        with np.errstate(invalid="ignore"):
            jump = fg & valid & (~np.isfinite(nz) | (np.abs(z - nz) > depth_threshold))
        stroke |= jump

        both = fg & valid & (nf >= 0) & (face >= 0) & (nf != face)
        if both.any():
            dots = np.einsum("ij,ij->i", normals[face[both]], normals[nf[both]])
            crease = np.zeros_like(fg)
            crease[both] = dots < cos_limit
            stroke |= crease

    return SketchImage(width=depth.width, height=depth.height, bits=stroke)


def component_view_cameras(mesh: TriangleMesh, n_views: int,
                           size: int = CANONICAL_SIZE) -> list[Camera]:
    """Near-frontal view rig used for catalog line art."""
    if n_views == 1:
        yaws = [0.0]
    else:
        yaws = list(np.linspace(-VIEW_YAW_SPAN, VIEW_YAW_SPAN, n_views))
    return [turntable_camera(mesh, yaw, VIEW_ELEVATION_DEG, VIEW_DISTANCE_FACTOR,
                             width=size, height=size) for yaw in yaws]


# ---------------------------------------------------------------------------
# Gabor features


@functools.lru_cache(maxsize=8)
def _gabor_kernel_ffts(width: int, height: int) -> tuple:
    """FFTs of the orientation bank at this raster size (circular conv)."""
    diag = math.hypot(width, height)
    wavelength = WAVELENGTH_FACTOR * diag
    sigma = 0.5 * wavelength
    radius = int(math.ceil(2.5 * sigma))
    radius = min(radius, min(width, height) // 2 - 1)
    coords = np.arange(-radius, radius + 1)
    xs, ys = np.meshgrid(coords, coords)

    ffts = []
    for theta_deg in ORIENTATIONS_DEG:
        # carrier runs perpendicular to the stroke direction the channel detects
        carrier = math.radians(theta_deg + 90.0)
        xr = xs * math.cos(carrier) + ys * math.sin(carrier)
        envelope = np.exp(-(xs**2 + ys**2) / (2 * sigma**2))
        even = envelope * np.cos(2 * np.pi * xr / wavelength)
        odd = envelope * np.sin(2 * np.pi * xr / wavelength)
        even -= even.mean()  # kill DC so blank regions respond with zero
        kernel = even + 1j * odd
        padded = np.zeros((height, width), dtype=np.complex64)
        padded[: 2 * radius + 1, : 2 * radius + 1] = kernel
        padded = np.roll(padded, (-radius, -radius), axis=(0, 1))
        ffts.append(padded)
    bank = np.stack([scipy.fft.fft2(k) for k in ffts])
    bank.setflags(write=False)
    return bank


def _orientation_energies(bits: np.ndarray) -> np.ndarray:
    h, w = bits.shape
    image_fft = scipy.fft.fft2(bits.astype(np.complex64))
    product = image_fft[None, :, :] * _gabor_kernel_ffts(w, h)
    return np.abs(scipy.fft.ifft2(product, axes=(-2, -1)))


def _feature_matrix_of_image(image: SketchImage, samples: int,
                             seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Internal fast path: (n, 64) normalized descriptor rows + keypoints."""
    if image.width < MIN_SKETCH_SIZE or image.height < MIN_SKETCH_SIZE:
        raise ValueError(f"sketch below minimum resolution "
                         f"{MIN_SKETCH_SIZE}x{MIN_SKETCH_SIZE}")
    ys, xs = np.nonzero(image.bits)
    if len(xs) == 0:
        return np.zeros((0, 64)), np.zeros((0, 2), dtype=np.int64)

    rng = np.random.default_rng(seed)
    if len(xs) > samples:
        pick = rng.choice(len(xs), size=samples, replace=False)
        pick.sort()
        xs, ys = xs[pick], ys[pick]

    # pooling runs on a 2x-decimated energy field: cells still sum >100
    # samples and the integral images cost a quarter as much
    energies = np.ascontiguousarray(_orientation_energies(image.bits)[:, ::2, ::2])
    hh, hw = energies.shape[1], energies.shape[2]
    integrals = np.zeros((len(ORIENTATIONS_DEG), hh + 1, hw + 1), dtype=np.float32)
    np.cumsum(energies, axis=1, out=energies)
    np.cumsum(energies, axis=2, out=energies)
    integrals[:, 1:, 1:] = energies

    diag = math.hypot(image.width, image.height)
    side = WINDOW_FACTOR * diag
    offsets = np.linspace(-side / 2, side / 2, GRID_CELLS + 1)

    gx = np.clip(np.rint((xs[:, None] + offsets[None, :]) / 2).astype(np.int64),
                 0, hw)
    gy = np.clip(np.rint((ys[:, None] + offsets[None, :]) / 2).astype(np.int64),
                 0, hh)

    n = len(xs)
    # one gather of all window corner sums: (orientations, n, 5, 5)
    corners = integrals[:, gy[:, :, None], gx[:, None, :]]
    cells = (corners[:, :, 1:, 1:] - corners[:, :, :-1, 1:]
             - corners[:, :, 1:, :-1] + corners[:, :, :-1, :-1])
    vectors = np.ascontiguousarray(cells.transpose(1, 0, 2, 3))

    flat = vectors.reshape(n, -1).astype(np.float64)
    # integral-image subtraction can go slightly negative in float32
    np.clip(flat, 0.0, None, out=flat)
    norms = np.linalg.norm(flat, axis=1)
    keep = norms >= 1e-12
    flat = flat[keep] / norms[keep, None]
    keypoints = np.stack([xs[keep], ys[keep]], axis=1).astype(np.int64)
    return flat, keypoints


def extract_features(image: SketchImage, samples: int = DEFAULT_SAMPLES,
                     seed: int = 0) -> list[LocalFeature]:
    """Gabor-bank local descriptors at seeded stroke keypoints.

    Each keypoint pools the 4 orientation energies over a 4x4 grid inside a
    window of side 0.25 x image diagonal, L2-normalized to 64 dims.
    Zero-energy windows are dropped; a blank image yields no features.
    """
    matrix, keypoints = _feature_matrix_of_image(image, samples, seed)
    return [LocalFeature(vector=matrix[i], keypoint=(int(u), int(v)))
            for i, (u, v) in enumerate(keypoints)]


# ---------------------------------------------------------------------------
# codebook and histograms


def _feature_matrix(features: list[LocalFeature]) -> np.ndarray:
    return np.stack([f.vector for f in features])


def build_codebook(features: list[LocalFeature], k: int, seed: int) -> Codebook:
    """Seeded spherical k-means (k-means++ init, 50-iteration cap, tol 1e-6).

    If fewer distinct features than k exist, k is reduced with a warning.
    """
    if not features:
        raise NoFeatures("cannot train a codebook without features")
    return _codebook_from_matrix(_feature_matrix(features), k, seed)


def _codebook_from_matrix(x: np.ndarray, k: int, seed: int) -> Codebook:
    n = len(x)
    rng = np.random.default_rng(seed)

    centroids = [x[int(rng.integers(n))]]
    d2 = ((x - centroids[0]) ** 2).sum(axis=1)
    while len(centroids) < min(k, n):
        total = float(d2.sum())
        if total <= 1e-24:
            break
        idx = int(rng.choice(n, p=d2 / total))
        centroids.append(x[idx])
        d2 = np.minimum(d2, ((x - centroids[-1]) ** 2).sum(axis=1))
    c = np.stack(centroids)
    if len(c) < k:
        warnings.warn(f"codebook reduced from k={k} to {len(c)} distinct features",
                      CodebookReducedWarning)

    x32 = x.astype(np.float32)
    sq_x = (x32 * x32).sum(axis=1)
    for _ in range(KMEANS_MAX_ITER):
        c32 = c.astype(np.float32)
        dist = sq_x[:, None] - 2.0 * (x32 @ c32.T) + (c32 * c32).sum(axis=1)[None, :]
        assign = dist.argmin(axis=1)
        new_c = np.zeros_like(c)
        counts = np.bincount(assign, minlength=len(c))
        np.add.at(new_c, assign, x)
        nonempty = counts > 0
        new_c[nonempty] /= counts[nonempty, None]
        if (~nonempty).any():
            # move each empty centroid to the currently farthest point
            far = dist[np.arange(n), assign].copy()
            for j in np.nonzero(~nonempty)[0]:
                p = int(far.argmax())
                new_c[j] = x[p]
                far[p] = -1.0
        norms = np.linalg.norm(new_c, axis=1, keepdims=True)
        new_c /= np.maximum(norms, 1e-12)
        shift = float(np.abs(new_c - c).max())
        c = new_c
        if shift < KMEANS_TOL:
            break
    # round through float32 so persisted and in-memory codebooks agree exactly
    c = c.astype(np.float32).astype(np.float64)
    return Codebook(centroids=c, k=len(c), training_seed=seed)


def _quantize_counts(x: np.ndarray, codebook: Codebook) -> np.ndarray:
    if len(x) == 0:
        return np.zeros(codebook.k)
    # float32 throughout: centroids are float32-exact and this path must give
    # identical assignments whether the index was just built or reloaded
    x32 = np.asarray(x, dtype=np.float32)
    c32 = np.asarray(codebook.centroids, dtype=np.float32)
    dist = ((x32 * x32).sum(axis=1)[:, None] - 2.0 * (x32 @ c32.T)
            + (c32 * c32).sum(axis=1)[None, :])
    return np.bincount(dist.argmin(axis=1), minlength=codebook.k).astype(np.float64)


def quantize(features: list[LocalFeature], codebook: Codebook,
             view_id: int = -1, component_id: int = -1) -> DescriptorHistogram:
    """Raw visual-word counts; ties go to the lowest word id."""
    if not features:
        return DescriptorHistogram(weights=np.zeros(codebook.k), view_id=view_id,
                                   component_id=component_id, empty=True)
    counts = _quantize_counts(_feature_matrix(features), codebook)
    return DescriptorHistogram(weights=counts, view_id=view_id,
                               component_id=component_id, empty=False)


# ---------------------------------------------------------------------------
# index build / query / persistence


def _rig_params(views_per_component: int, codebook_k: int, seed: int,
                samples: int) -> dict:
    return {
        "canonical_size": CANONICAL_SIZE,
        "views_per_component": views_per_component,
        "yaw_span": VIEW_YAW_SPAN,
        "elevation_deg": VIEW_ELEVATION_DEG,
        "distance_factor": VIEW_DISTANCE_FACTOR,
        "codebook_k": codebook_k,
        "samples": samples,
        "seed": seed,
        "wavelength_factor": WAVELENGTH_FACTOR,
        "window_factor": WINDOW_FACTOR,
    }


def build_index(catalog, views_per_component: int = 5,
                codebook_k: int = DEFAULT_CODEBOOK_K, seed: int = 0,
                samples: int = DEFAULT_SAMPLES,
                mesh_loader=None) -> RetrievalIndex:
    """Render the view rig per catalog component, train the vocabulary over
    all extracted features (seeded subsample past 60k), and build tf-idf
    postings. Per-component load failures are collected, not fatal."""
    records = list(catalog.records)
    if not records:
        raise CatalogEmpty("catalog has no components")
    if mesh_loader is None:
        from .catalog import load_component_mesh

        mesh_loader = functools.partial(load_component_mesh, catalog)

    per_view: list[tuple[int, int, np.ndarray]] = []
    load_failures: list[tuple[int, str]] = []
    for record in records:
        try:
            mesh = mesh_loader(record)
            cameras = component_view_cameras(mesh, views_per_component)
            for view_id, camera in enumerate(cameras):
                art = render_line_art(mesh, camera)
                matrix, _ = _feature_matrix_of_image(art, samples, seed)
                per_view.append((record.id, view_id, matrix))
        except Exception as exc:  # noqa: BLE001 - collected, never fatal
            load_failures.append((record.id, getattr(exc, "code", type(exc).__name__)))

    if not per_view or not any(len(m) for _, _, m in per_view):
        raise CatalogEmpty("no component produced any line-art features")
    all_features = np.concatenate([m for _, _, m in per_view if len(m)])
    if len(all_features) > TRAIN_SUBSAMPLE:
        rng = np.random.default_rng(seed)
        pick = rng.choice(len(all_features), size=TRAIN_SUBSAMPLE, replace=False)
        pick.sort()
        training = all_features[pick]
    else:
        training = all_features
    codebook = _codebook_from_matrix(training, codebook_k, seed)

    order = sorted(range(len(per_view)), key=lambda i: (per_view[i][0], per_view[i][1]))
    counts = np.stack([_quantize_counts(per_view[i][2], codebook) for i in order])
    n_views = len(per_view)
    df = (counts > 0).sum(axis=0)
    idf = np.log(n_views / (1.0 + df)).astype(np.float32).astype(np.float64)

    tfidf = counts * idf
    norms = np.linalg.norm(tfidf, axis=1, keepdims=True)
    tfidf = np.divide(tfidf, norms, out=np.zeros_like(tfidf), where=norms > 0)

    postings: list[np.ndarray] = []
    for w in range(codebook.k):
        rows = [(per_view[i][0], per_view[i][1], tfidf[rank, w])
                for rank, i in enumerate(order) if tfidf[rank, w] != 0.0]
        postings.append(np.asarray(rows, dtype=np.float32).reshape(-1, 3))

    view_counts: dict[int, int] = {}
    for comp_id, _view_id, _ in per_view:
        view_counts[comp_id] = view_counts.get(comp_id, 0) + 1

    return RetrievalIndex(
        codebook=codebook, idf=idf, postings=postings, view_counts=view_counts,
        params=_rig_params(views_per_component, codebook_k, seed, samples),
        load_failures=load_failures,
    )


def query(sketch: SketchImage, index: RetrievalIndex, top_k: int = 10,
          allowed_components: set[int] | None = None) -> list[tuple[int, float]]:
    """Ranked (component_id, score) by cosine similarity, max over views."""
    if not index.view_counts:
        raise CatalogEmpty("retrieval index is empty")
    canonical = resample_sketch(sketch, index.params.get("canonical_size",
                                                         CANONICAL_SIZE))
    matrix, _ = _feature_matrix_of_image(
        canonical, index.params.get("samples", DEFAULT_SAMPLES),
        index.params.get("seed", 0))
    if len(matrix) == 0:
        raise EmptyQuery("sketch produced no features")
    weights = _quantize_counts(matrix, index.codebook) * index.idf
    norm = float(np.linalg.norm(weights))
    entry_word, entry_desc, entry_w, desc_comp = index._accumulator()
    scores = np.zeros(len(desc_comp))
    if norm > 0 and len(entry_word):
        weights /= norm
        scores = np.bincount(entry_desc, weights=weights[entry_word] * entry_w,
                             minlength=len(desc_comp))

    best: dict[int, float] = {cid: 0.0 for cid in index.view_counts}
    for i in np.nonzero(scores > 0)[0]:
        comp = int(desc_comp[i])
        if scores[i] > best.get(comp, 0.0):
            best[comp] = float(scores[i])
    ranked = sorted(((cid, min(max(s, 0.0), 1.0)) for cid, s in best.items()),
                    key=lambda item: (-item[1], item[0]))
    if allowed_components is not None:
        ranked = [r for r in ranked if r[0] in allowed_components]
    return ranked[: min(top_k, len(ranked))]


def save_index_bytes(index: RetrievalIndex) -> bytes:
    header = {
        "dim": int(index.codebook.centroids.shape[1]),
        "k": int(index.codebook.k),
        "training_seed": int(index.codebook.training_seed),
        "params": index.params,
        "components": [[int(cid), int(index.view_counts[cid])]
                       for cid in sorted(index.view_counts)],
        "postings_counts": [int(len(p)) for p in index.postings],
        "load_failures": [[int(cid), str(code)] for cid, code in index.load_failures],
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    blocks = [
        np.ascontiguousarray(index.codebook.centroids, dtype="<f4").tobytes(),
        np.ascontiguousarray(index.idf, dtype="<f4").tobytes(),
    ]
    for p in index.postings:
        blocks.append(np.ascontiguousarray(p, dtype="<f4").tobytes())
    return (_INDEX_MAGIC + struct.pack("<I", len(header_bytes)) + header_bytes
            + b"".join(blocks))


def load_index_bytes(data: bytes) -> RetrievalIndex:
    if data[: len(_INDEX_MAGIC)] != _INDEX_MAGIC:
        raise UnsupportedFormat("not a retrieval index file")
    offset = len(_INDEX_MAGIC)
    (hlen,) = struct.unpack_from("<I", data, offset)
    offset += 4
    header = json.loads(data[offset : offset + hlen].decode("utf-8"))
    offset += hlen

    k, dim = header["k"], header["dim"]
    centroids = np.frombuffer(data, dtype="<f4", count=k * dim,
                              offset=offset).reshape(k, dim).astype(np.float64)
    offset += k * dim * 4
    idf = np.frombuffer(data, dtype="<f4", count=k, offset=offset).astype(np.float64)
    offset += k * 4
    postings = []
    for count in header["postings_counts"]:
        arr = np.frombuffer(data, dtype="<f4", count=count * 3,
                            offset=offset).reshape(count, 3).copy()
        postings.append(arr)
        offset += count * 3 * 4
    return RetrievalIndex(
        codebook=Codebook(centroids=centroids, k=k,
                          training_seed=header["training_seed"]),
        idf=idf, postings=postings,
        view_counts={int(cid): int(n) for cid, n in header["components"]},
        params=header["params"],
        load_failures=[(int(c), str(s)) for c, s in header["load_failures"]],
    )
