"""facadekit: component-editable building meshes.

Localizes facade components (doors, windows) from 2D masks via depth
back-projection and OBB fitting, retrieves replacement components from a
catalog by sketch similarity, and splices the chosen component into the mesh.
"""

from .asset_io import (
    SceneAsset,
    SceneNode,
    TriangleMesh,
    ValidationReport,
    flatten_scene,
    parse_glb,
    validate_mesh,
    write_glb,
)
from .geometry import (
    AffinePlacement,
    Camera,
    DepthBuffer,
    OrientedBoundingBox,
    PointCloud,
    back_project,
    compute_alignment,
    fit_obb,
    look_at_camera,
    obb_vertices,
    render_depth,
    render_turntable,
)

__version__ = "0.1.0"

__all__ = [
    "AffinePlacement",
    "Camera",
    "DepthBuffer",
    "OrientedBoundingBox",
    "PointCloud",
    "SceneAsset",
    "SceneNode",
    "TriangleMesh",
    "ValidationReport",
    "back_project",
    "compute_alignment",
    "fit_obb",
    "flatten_scene",
    "look_at_camera",
    "obb_vertices",
    "parse_glb",
    "render_depth",
    "render_turntable",
    "validate_mesh",
    "write_glb",
]
