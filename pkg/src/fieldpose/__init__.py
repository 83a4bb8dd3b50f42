"""Camera pose estimation against explicit radiance fields.

Render a view of a scene field, match it to a target image, lift matches to
2D-3D correspondences with rendered depth, mine 3D-consistent points, solve
PnP+RANSAC, and optionally refine the pose with a masked photometric loss.
"""

from .geometry import (
    Intrinsics,
    Ray,
    Se3Pose,
    Twist,
    backproject,
    exp_twist,
    log_pose,
    pixel_ray,
    project,
    rotation_geodesic_deg,
    translation_error,
)
from .fields import (
    Bounds,
    FieldSample,
    SolidSphere,
    SphereCluster,
    TexturedBox,
    UniformSlab,
    VoxelGridField,
    bake_analytic,
    load_field,
    query,
    save_field,
)
from .renderer import RenderConfig, RenderedView, render_pixels, render_ray, render_view

__version__ = "0.1.0"

__all__ = [
    "Intrinsics",
    "Ray",
    "Se3Pose",
    "Twist",
    "backproject",
    "exp_twist",
    "log_pose",
    "pixel_ray",
    "project",
    "rotation_geodesic_deg",
    "translation_error",
    "Bounds",
    "FieldSample",
    "SolidSphere",
    "SphereCluster",
    "TexturedBox",
    "UniformSlab",
    "VoxelGridField",
    "bake_analytic",
    "load_field",
    "query",
    "save_field",
    "RenderConfig",
    "RenderedView",
    "render_pixels",
    "render_ray",
    "render_view",
]
