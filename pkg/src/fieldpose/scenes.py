"""Built-in desk-scale benchmark scenes and camera placement helpers.

Three standard scenes, all roughly unit scale:

- "textured-box": opaque box with a high-contrast procedural pattern; the
  friendliest scene for photometric and patch-correlation methods.
- "sphere-cluster": several colored spheres; silhouette-rich, used for the
  mining experiments.
- "fortress": a walled square keep with corner towers, stamped into a
  voxel grid; exercises the grid field path with concave geometry.

Baked variants ("baked-<name>") run any analytic scene through a moderate-
resolution voxel grid, which smooths boundaries the way an imperfectly
trained field would.
"""

from __future__ import annotations

import numpy as np

from .fields import (
    Bounds,
    SphereCluster,
    TexturedBox,
    UniformSlab,
    VoxelGridField,
    bake_analytic,
)
from .geometry import Intrinsics, Se3Pose, look_at

SCENE_NAMES = ("textured-box", "sphere-cluster", "fortress")


def _fortress_grid(resolution: int = 96) -> VoxelGridField:
    """Square outer wall, four corner towers, and a central keep."""
    n = resolution
    bounds = Bounds([-1.0, -1.0, -1.0], [1.0, 1.0, 1.0])
    axes = np.linspace(-1.0, 1.0, n)
    gx, gy, gz = np.meshgrid(axes, axes, axes, indexing="ij")

    occupied = np.zeros((n, n, n), dtype=bool)
    ground = gy > 0.55
    occupied |= ground
    # outer walls: a square ring in (x, z), limited height
    ring = (np.maximum(np.abs(gx), np.abs(gz)) > 0.62) & (
        np.maximum(np.abs(gx), np.abs(gz)) < 0.78
    )
    occupied |= ring & (gy > -0.1)
    # corner towers: taller cylinders
    for sx in (-0.7, 0.7):
        for sz in (-0.7, 0.7):
            tower = (gx - sx) ** 2 + (gz - sz) ** 2 < 0.18**2
            occupied |= tower & (gy > -0.55)
    # central keep
    keep = (np.abs(gx) < 0.28) & (np.abs(gz) < 0.28) & (gy > -0.4)
    occupied |= keep

    densities = np.where(occupied, 60.0, 0.0)
    # stone-like banded coloring with hashed variation
    band = 0.5 + 0.5 * np.sin(14.0 * gy + 5.0 * gx * gz)
    cell = (np.floor((gx + 1) * 10) + np.floor((gy + 1) * 10) * 3 + np.floor((gz + 1) * 10) * 7)
    tint = (np.sin(cell * 12.9898) * 43758.5453) % 1.0
    r = 0.35 + 0.35 * band + 0.2 * tint
    g = 0.32 + 0.3 * band + 0.2 * (1.0 - tint)
    b = 0.3 + 0.25 * band
    colors = np.clip(np.stack([r, g, b], axis=-1), 0.0, 1.0)
    colors[~occupied] = 0.0
    return VoxelGridField(bounds, densities, colors)


def builtin_scene(name: str):
    """Instantiate a named scene; raises KeyError for unknown names."""
    if name == "textured-box":
        return TexturedBox(Bounds([-0.8, -0.8, -0.8], [0.8, 0.8, 0.8]), density=60.0)
    if name == "sphere-cluster":
        rng = np.random.default_rng(1234)
        centers = rng.uniform(-0.65, 0.65, size=(7, 3))
        radii = rng.uniform(0.22, 0.42, size=7)
        return SphereCluster(centers, radii, density=60.0)
    if name == "fortress":
        return _fortress_grid()
    if name.startswith("baked-"):
        return bake_analytic(builtin_scene(name[len("baked-"):]), (72, 72, 72))
    if name == "slab":
        return UniformSlab(Bounds([-0.8, -0.8, -0.2], [0.8, 0.8, 0.2]), density=40.0)
    raise KeyError(f"unknown scene {name!r}; built-ins: {', '.join(SCENE_NAMES)}")


def default_intrinsics(size: int = 200) -> Intrinsics:
    return Intrinsics(
        fx=0.9 * size, fy=0.9 * size, cx=(size - 1) / 2.0, cy=(size - 1) / 2.0,
        width=size, height=size,
    )


def orbit_pose(field, azimuth_deg: float, elevation_deg: float, radius_scale: float = 1.4) -> Se3Pose:
    """Camera on a sphere around the field bounds, aimed at their center."""
    b = field.bounds
    r = radius_scale * b.diagonal
    az = np.radians(azimuth_deg)
    el = np.radians(elevation_deg)
    offset = r * np.array([np.cos(el) * np.cos(az), np.sin(el), np.cos(el) * np.sin(az)])
    return look_at(b.center + offset, b.center)


def sample_view_pose(field, rng: np.random.Generator, radius_scale: float = 1.4) -> Se3Pose:
    """Random orbit pose with elevation limited to +/- 55 degrees."""
    az = rng.uniform(0.0, 360.0)
    el = rng.uniform(-55.0, 55.0)
    return orbit_pose(field, az, el, radius_scale)
