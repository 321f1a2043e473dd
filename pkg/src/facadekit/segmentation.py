"""Component masks and masked-depth point cloud extraction.

Masks come from files or an external open-vocabulary segmentation provider;
the provider itself is out of scope and reached through a config boundary
(file map, external command, or HTTP endpoint).
"""

from __future__ import annotations

import base64
import io
import json
import subprocess
import tempfile
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import (
    NoDepthInMask,
    NoForegroundWarning,
    PreconditionFailed,
    ProviderFailure,
    UndecodableImage,
)
from .geometry import Camera, DepthBuffer, PointCloud, back_project

# grayscale value above this is foreground; midpoint rule shared with sketches
MASK_THRESHOLD = 127


@dataclass
class ComponentMask:
    width: int
    height: int
    bits: np.ndarray  # (height, width) bool
    label: str = ""
    prompt: str = ""

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=bool).reshape(self.height, self.width)


@dataclass
class MaskProviderConfig:
    kind: str  # file_map | external_command | http_endpoint
    parameters: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("file_map", "external_command", "http_endpoint"):
            raise ValueError(f"unknown mask provider kind {self.kind!r}")


def _decode_gray(data_or_path) -> np.ndarray:
    try:
        if isinstance(data_or_path, (bytes, bytearray)):
            img = Image.open(io.BytesIO(data_or_path))
        else:
            img = Image.open(data_or_path)
        return np.asarray(img.convert("L"))
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise UndecodableImage(f"cannot decode mask image: {exc}") from exc


def load_mask(source, label: str = "", prompt: str = "") -> ComponentMask:
    """Load a grayscale raster as a mask; foreground iff value > 127."""
    gray = _decode_gray(source)
    bits = gray > MASK_THRESHOLD
    if not bits.any():
        warnings.warn("mask has no foreground pixels", NoForegroundWarning)
    h, w = bits.shape
    return ComponentMask(width=w, height=h, bits=bits, label=label, prompt=prompt)


def mask_to_image(mask: ComponentMask) -> Image.Image:
    return Image.fromarray(np.where(mask.bits, 255, 0).astype(np.uint8), mode="L")


def _file_map_masks(prompt: str, params: dict) -> list[ComponentMask]:
    mapping = params.get("mapping")
    root = Path(params.get("root", "."))
    if mapping is None:
        mapping_file = params.get("mapping_file")
        if mapping_file is None:
            raise ProviderFailure("file_map provider needs 'mapping' or 'mapping_file'")
        try:
            mapping = json.loads(Path(mapping_file).read_text())
        except (OSError, ValueError) as exc:
            raise ProviderFailure(f"cannot read mask mapping: {exc}") from exc
        root = Path(params.get("root", Path(mapping_file).parent))
    entry = mapping.get(prompt)
    if entry is None:
        return []
    paths = entry if isinstance(entry, list) else [entry]
    masks = []
    for rel in paths:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", NoForegroundWarning)
            masks.append(load_mask(root / rel, label=prompt, prompt=prompt))
    return masks


def _command_masks(prompt: str, view, params: dict) -> list[ComponentMask]:
    command = params.get("command")
    if not command:
        raise ProviderFailure("external_command provider needs 'command'")
    if isinstance(command, str):
        command = command.split()
    with tempfile.TemporaryDirectory(prefix="facadekit-masks-") as out_dir:
        argv = list(command) + ["--image", str(view), "--prompt", prompt,
                                "--out", out_dir]
        try:
            proc = subprocess.run(argv, capture_output=True, text=True,
                                  timeout=params.get("timeout", 300))
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise ProviderFailure(f"segmentation command failed to run: {exc}") from exc
        if proc.returncode != 0:
            raise ProviderFailure(
                f"segmentation command exited {proc.returncode}",
                detail={"stdout": proc.stdout, "stderr": proc.stderr})
        manifest_path = Path(out_dir) / "manifest.json"
        try:
            manifest = json.loads(manifest_path.read_text())
        except (OSError, ValueError) as exc:
            raise ProviderFailure(f"provider wrote no usable manifest: {exc}") from exc
        masks = []
        for name in manifest.get("masks", []):
            masks.append(load_mask(Path(out_dir) / name, label=prompt, prompt=prompt))
        return masks


def _http_masks(prompt: str, view, params: dict) -> list[ComponentMask]:
    import requests

    url = params.get("url")
    if not url:
        raise ProviderFailure("http_endpoint provider needs 'url'")
    try:
        image_bytes = Path(view).read_bytes()
    except OSError as exc:
        raise ProviderFailure(f"cannot read view image: {exc}") from exc
    try:
        resp = requests.post(url, files={"image": image_bytes},
                             data={"prompt": prompt},
                             timeout=params.get("timeout", 300))
    except requests.RequestException as exc:
        raise ProviderFailure(f"segmentation endpoint unreachable: {exc}") from exc
    if resp.status_code != 200:
        raise ProviderFailure(f"segmentation endpoint returned {resp.status_code}",
                              detail=resp.text[:2000])
    try:
        payload = resp.json()
        encoded = payload["masks"]
    except (ValueError, KeyError) as exc:
        raise ProviderFailure(f"malformed segmentation response: {exc}") from exc
    return [load_mask(base64.b64decode(item), label=prompt, prompt=prompt)
            for item in encoded]


def request_masks(prompt: str, view, config: MaskProviderConfig) -> list[ComponentMask]:
    """Obtain zero or more masks for a prompt from the configured provider."""
    if config.kind == "file_map":
        return _file_map_masks(prompt, config.parameters)
    if config.kind == "external_command":
        return _command_masks(prompt, view, config.parameters)
    return _http_masks(prompt, view, config.parameters)


def extract_foreground(mask: ComponentMask, depth: DepthBuffer, camera: Camera,
                       band: tuple[float, float] = (2.0, 98.0)) -> PointCloud:
    """Back-project masked pixels with valid depth, filtered to a depth band.

    Pixels whose depth lies outside the [p_lo, p_hi] percentile band of the
    masked depths are discarded; this rejects silhouette-edge leakage onto
    background or far walls. Band (0, 100) disables the filter.
    """
    if (mask.width, mask.height) != (depth.width, depth.height):
        raise PreconditionFailed(
            f"mask {mask.width}x{mask.height} does not match "
            f"depth {depth.width}x{depth.height}")
    ys, xs = np.nonzero(mask.bits)
    z = depth.values[ys, xs]
    finite = np.isfinite(z)
    if not finite.any():
        raise NoDepthInMask(f"no depth under mask {mask.label or mask.prompt!r}")
    xs, ys, z = xs[finite], ys[finite], z[finite]
    lo, hi = np.percentile(z, [band[0], band[1]])
    keep = (z >= lo) & (z <= hi)
    pixels = np.stack([xs[keep], ys[keep]], axis=1)
    return back_project(depth, pixels, camera)
