"""Ray-marched volume rendering of color, depth, and opacity.

Per ray with sample points t_i and constant step h = (far - near) / N:

    T_i   = exp(-sum_{j<i} sigma_j * h)        accumulated transmittance
    w_i   = T_i * (1 - exp(-sigma_i * h))      per-sample weight
    color = sum_i w_i * c_i
    depth = sum_i w_i * t_i                    (along-ray expectation)
    opacity = sum_i w_i

Sample t_i lies in bin i of [near, far]: at the bin center when
config.stratified is off, else jittered by a per-(ray, sample) hash of the
seed. Jitter depends only on (seed, ray key, sample index), never on
evaluation order, so rendering any subset of pixels reproduces the full
render exactly and results are independent of chunking or thread count.

Rays that miss the field bounds return color (0,0,0), depth 0, opacity 0.
Depth of near-empty rays (opacity < 0.05) is not meaningful; RenderedView
exposes a validity mask for downstream lifting.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import OutOfBoundsError
from .geometry import Intrinsics, Ray, Se3Pose, rays_for_pixels

MIN_VALID_OPACITY = 0.05
_CHUNK_RAYS = 8192


@dataclass(frozen=True)
class RenderConfig:
    """Ray-march settings. near/far of None are taken from the field bounds
    (per-ray box intersection padded by 5% of its span)."""

    near: float | None = None
    far: float | None = None
    samples_per_ray: int = 128
    stratified: bool = True
    rng_seed: int = 0

    def __post_init__(self):
        if self.samples_per_ray < 2:
            raise ValueError("samples_per_ray must be >= 2")
        if self.near is not None and self.far is not None:
            if not (0 <= self.near < self.far):
                raise ValueError("need 0 <= near < far")

    def with_samples(self, n: int) -> "RenderConfig":
        return replace(self, samples_per_ray=n)


@dataclass(frozen=True, eq=False)
class RenderedView:
    """Full-frame render: color (H,W,3) in [0,1], along-ray depth (H,W),
    accumulated opacity (H,W)."""

    color: np.ndarray
    depth: np.ndarray
    opacity: np.ndarray

    @property
    def height(self) -> int:
        return self.color.shape[0]

    @property
    def width(self) -> int:
        return self.color.shape[1]

    @property
    def valid_depth(self) -> np.ndarray:
        """Pixels whose depth is meaningful for lifting."""
        return self.opacity >= MIN_VALID_OPACITY


def _hash_unit(seed: int, keys: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """Order-independent uniforms in [0,1) from (seed, ray key, sample index)."""
    h = keys.astype(np.uint64) * np.uint64(0x9E3779B97F4A7C15)
    h = h ^ (idx.astype(np.uint64) * np.uint64(0xC2B2AE3D27D4EB4F))
    h = h ^ np.uint64((seed * 0xD6E8FEB86659FD93) & 0xFFFFFFFFFFFFFFFF)
    h = h ^ (h >> np.uint64(30))
    h = h * np.uint64(0xBF58476D1CE4E5B9)
    h = h ^ (h >> np.uint64(27))
    h = h * np.uint64(0x94D049BB133111EB)
    h = h ^ (h >> np.uint64(31))
    return (h >> np.uint64(11)).astype(np.float64) * 2.0**-53


def _ray_spans(field, origins, directions, config) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if config.near is not None and config.far is not None:
        n = len(origins)
        return (
            np.full(n, float(config.near)),
            np.full(n, float(config.far)),
            np.ones(n, dtype=bool),
        )
    t0, t1, hit = field.bounds.intersect_rays(origins, directions)
    pad = 0.05 * (t1 - t0)
    near = np.maximum(t0 - pad, 1e-9)
    far = t1 + pad
    return near, far, hit


def render_rays(
    field,
    origins: np.ndarray,
    directions: np.ndarray,
    config: RenderConfig,
    ray_keys: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Batch volume rendering. Returns (color (M,3), depth (M,), opacity (M,)).

    ray_keys seed the per-ray jitter; pixel renders use the flat pixel index
    so that subsets match full frames.
    """
    origins = np.asarray(origins, dtype=float).reshape(-1, 3)
    directions = np.asarray(directions, dtype=float).reshape(-1, 3)
    m = len(origins)
    if ray_keys is None:
        ray_keys = np.arange(m, dtype=np.int64)
    else:
        ray_keys = np.asarray(ray_keys, dtype=np.int64).reshape(-1)

    color = np.zeros((m, 3))
    depth = np.zeros(m)
    opacity = np.zeros(m)
    n = config.samples_per_ray

    near, far, hit = _ray_spans(field, origins, directions, config)
    live = np.flatnonzero(hit)
    for start in range(0, len(live), _CHUNK_RAYS):
        sel = live[start : start + _CHUNK_RAYS]
        h = ((far[sel] - near[sel]) / n)[:, None]
        idx = np.arange(n, dtype=np.int64)[None, :]
        if config.stratified:
            u = _hash_unit(config.rng_seed, ray_keys[sel][:, None], idx)
        else:
            u = 0.5
        ts = near[sel][:, None] + (idx + u) * h
        pts = origins[sel][:, None, :] + ts[..., None] * directions[sel][:, None, :]
        sigma, rgb = field.sample_many(pts.reshape(-1, 3))
        sigma = sigma.reshape(len(sel), n)
        rgb = rgb.reshape(len(sel), n, 3)

        tau = sigma * h
        alpha = -np.expm1(-tau)
        accum = np.cumsum(tau, axis=1)
        trans = np.exp(-(accum - tau))  # T_i excludes the sample's own bin
        w = trans * alpha
        color[sel] = np.einsum("ij,ijk->ik", w, rgb)
        depth[sel] = np.einsum("ij,ij->i", w, ts)
        opacity[sel] = w.sum(axis=1)
    return color, depth, opacity


def render_ray(field, ray: Ray, config: RenderConfig, ray_key: int = 0):
    """Render a single ray; returns (color (3,), depth, opacity)."""
    c, d, o = render_rays(
        field,
        ray.origin[None, :],
        ray.direction[None, :],
        config,
        np.array([ray_key]),
    )
    return c[0], float(d[0]), float(o[0])


def render_view(
    field, intrinsics: Intrinsics, pose_cam_to_world: Se3Pose, config: RenderConfig
) -> RenderedView:
    """Render the full frame seen from a camera-to-world pose."""
    w, h = intrinsics.width, intrinsics.height
    xs, ys = np.meshgrid(np.arange(w), np.arange(h))
    pixels = np.stack([xs.reshape(-1), ys.reshape(-1)], axis=1)
    origins, dirs = rays_for_pixels(intrinsics, pose_cam_to_world, pixels)
    keys = pixels[:, 1] * w + pixels[:, 0]
    color, depth, opacity = render_rays(field, origins, dirs, config, keys)
    return RenderedView(
        color=color.reshape(h, w, 3),
        depth=depth.reshape(h, w),
        opacity=opacity.reshape(h, w),
    )


def render_pixels(
    field,
    intrinsics: Intrinsics,
    pose_cam_to_world: Se3Pose,
    pixels,
    config: RenderConfig,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Render only the listed integer pixels; matches render_view exactly
    at those pixels. Returns (color (M,3), depth (M,), opacity (M,))."""
    px = np.asarray(pixels, dtype=np.int64).reshape(-1, 2)
    if len(px) == 0:
        return np.zeros((0, 3)), np.zeros(0), np.zeros(0)
    bad = (
        (px[:, 0] < 0)
        | (px[:, 0] >= intrinsics.width)
        | (px[:, 1] < 0)
        | (px[:, 1] >= intrinsics.height)
    )
    if bad.any():
        raise OutOfBoundsError(f"{int(bad.sum())} pixel(s) outside the image")
    origins, dirs = rays_for_pixels(intrinsics, pose_cam_to_world, px.astype(float))
    keys = px[:, 1] * intrinsics.width + px[:, 0]
    return render_rays(field, origins, dirs, config, keys)
