"""Lift 2D-2D matches to 2D-3D correspondences and mine 3D-consistent points.

Lifting backprojects the rendered-image pixel of each match through the
rendered depth map (bilinear at subpixel coordinates, along-ray convention).
Mining re-estimates each lifted point from k nearby views: cast the ray from
each nearby camera center through the point, read the rendered depth of that
ray, and score the point by the mean squared distance between the
re-estimates and the point. Points whose score exceeds gamma are discarded;
the default gamma is (1% of the scene diagonal) squared.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import TooFewPointsError
from .geometry import Intrinsics, Se3Pose, look_at, rays_for_pixels, rotation_about_axis
from .matching import Match2D
from .renderer import RenderConfig, render_rays


@dataclass(frozen=True, eq=False)
class Correspondence:
    """Target pixel q paired with a world point x and a consistency score m."""

    q: np.ndarray
    x: np.ndarray
    m: float = 0.0
    source_confidence: float = 1.0

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float).reshape(2)
        x = np.asarray(self.x, dtype=float).reshape(3)
        if self.m < 0 or not np.isfinite(x).all():
            raise ValueError("m must be >= 0 and x finite")
        q.flags.writeable = False
        x.flags.writeable = False
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "x", x)


@dataclass(frozen=True)
class MiningConfig:
    """3D-consistent point mining parameters.

    gamma of None resolves to (0.01 * scene_diagonal)^2 at mining time.
    """

    k: int = 4
    view_angle_deg: float = 5.0
    gamma: float | None = None
    min_opacity: float = 0.5
    rng_seed: int = 0

    def __post_init__(self):
        if self.k < 1 or self.view_angle_deg <= 0:
            raise ValueError("need k >= 1 and view_angle_deg > 0")
        if self.gamma is not None and self.gamma <= 0:
            raise ValueError("gamma must be positive")


def bilinear(img: np.ndarray, xy: np.ndarray) -> np.ndarray:
    """Bilinear sampling of a (H, W) map at subpixel (x, y) coordinates."""
    img = np.asarray(img, dtype=float)
    xy = np.asarray(xy, dtype=float).reshape(-1, 2)
    h, w = img.shape
    x = np.clip(xy[:, 0], 0.0, w - 1.0)
    y = np.clip(xy[:, 1], 0.0, h - 1.0)
    x0 = np.clip(np.floor(x).astype(int), 0, w - 2)
    y0 = np.clip(np.floor(y).astype(int), 0, h - 2)
    fx = x - x0
    fy = y - y0
    return (
        img[y0, x0] * (1 - fx) * (1 - fy)
        + img[y0, x0 + 1] * fx * (1 - fy)
        + img[y0 + 1, x0] * (1 - fx) * fy
        + img[y0 + 1, x0 + 1] * fx * fy
    )


def lift(
    matches: list[Match2D],
    depth: np.ndarray,
    opacity: np.ndarray,
    intrinsics: Intrinsics,
    pose_render: Se3Pose,
    min_opacity: float = 0.5,
) -> list[Correspondence]:
    """Backproject matched render pixels through the rendered depth map.

    Matches landing on pixels with interpolated opacity below min_opacity
    (background, silhouette fringe) are dropped. Empty input gives empty
    output.
    """
    if not matches:
        return []
    p = np.array([m.p for m in matches])
    opac = bilinear(opacity, p)
    keep = opac >= min_opacity
    if not keep.any():
        return []
    p_keep = p[keep]
    z = bilinear(depth, p_keep)
    origins, dirs = rays_for_pixels(intrinsics, pose_render, p_keep)
    xs = origins + z[:, None] * dirs
    out = []
    for (idx, x) in zip(np.flatnonzero(keep), xs):
        m = matches[idx]
        out.append(Correspondence(q=m.q, x=x, m=0.0, source_confidence=m.confidence))
    return out


def sample_nearby_views(
    pose: Se3Pose, pivot, k: int, view_angle_deg: float, rng_seed: int = 0
) -> list[Se3Pose]:
    """Orbit the camera about the pivot around k evenly-spread axes.

    Axes lie in the plane perpendicular to the camera-to-pivot direction,
    at a seed-dependent phase; each view is re-aimed at the pivot, which
    preserves the camera-to-pivot distance exactly.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    pivot = np.asarray(pivot, dtype=float).reshape(3)
    center = pose.translation
    toward = pivot - center
    dist = np.linalg.norm(toward)
    if dist < 1e-12:
        raise ValueError("camera center coincides with the pivot")
    wdir = toward / dist
    # orthonormal basis of the plane perpendicular to the view direction
    helper = np.array([1.0, 0.0, 0.0]) if abs(wdir[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(wdir, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(wdir, e1)
    phase = np.random.default_rng(rng_seed).uniform(0.0, 2.0 * np.pi)
    up_hint = -pose.rotation[:, 1]  # preserve roll: camera y points down
    views = []
    for i in range(k):
        phi = phase + 2.0 * np.pi * i / k
        axis = np.cos(phi) * e1 + np.sin(phi) * e2
        rot = rotation_about_axis(axis, np.radians(view_angle_deg))
        new_center = pivot + rot @ (center - pivot)
        views.append(look_at(new_center, pivot, up_hint=up_hint))
    return views


def consistency_scores(
    field, xs: np.ndarray, views: list[Se3Pose], render_config: RenderConfig
) -> np.ndarray:
    """Mean squared distance between each point and its per-view re-estimates.

    For view i with camera center o_i, the ray toward x is rendered and the
    re-estimate is o_i + depth * direction. A ray that misses (opacity ~ 0)
    re-estimates at the camera center, which correctly scores as
    inconsistent.
    """
    xs = np.asarray(xs, dtype=float).reshape(-1, 3)
    n = len(xs)
    if n == 0:
        return np.zeros(0)
    total = np.zeros(n)
    # jitter keys depend on the point only, so the score is invariant to
    # permutation of the view list
    keys = np.arange(n, dtype=np.int64)
    for view in views:
        o = view.translation
        d = xs - o
        dist = np.linalg.norm(d, axis=1)
        d = d / dist[:, None]
        _, z, _ = render_rays(field, np.tile(o, (n, 1)), d, render_config, keys)
        re_est = o + z[:, None] * d
        total += np.einsum("ij,ij->i", re_est - xs, re_est - xs)
    return total / len(views)


def consistency_score(field, x, views: list[Se3Pose], render_config: RenderConfig) -> float:
    return float(consistency_scores(field, np.asarray(x).reshape(1, 3), views, render_config)[0])


def resolve_gamma(config: MiningConfig, field) -> float:
    if config.gamma is not None:
        return config.gamma
    return (0.01 * field.bounds.diagonal) ** 2


def score_correspondences(
    correspondences: list[Correspondence],
    field,
    config: MiningConfig,
    render_config: RenderConfig,
    pose: Se3Pose,
) -> list[Correspondence]:
    """Return the input correspondences with their m scores populated."""
    if not correspondences:
        return []
    views = sample_nearby_views(
        pose, field.bounds.center, config.k, config.view_angle_deg, config.rng_seed
    )
    xs = np.array([c.x for c in correspondences])
    ms = consistency_scores(field, xs, views, render_config)
    return [
        Correspondence(q=c.q, x=c.x, m=float(m), source_confidence=c.source_confidence)
        for c, m in zip(correspondences, ms)
    ]


def mine(
    correspondences: list[Correspondence],
    field,
    config: MiningConfig,
    render_config: RenderConfig,
    pose: Se3Pose,
) -> list[Correspondence]:
    """Keep correspondences whose consistency score is at most gamma.

    Survivor order is preserved. Raises TooFewPointsError when fewer than 4
    survive (PnP would be underdetermined).
    """
    scored = score_correspondences(correspondences, field, config, render_config, pose)
    gamma = resolve_gamma(config, field)
    survivors = [c for c in scored if c.m <= gamma]
    if len(survivors) < 4:
        raise TooFewPointsError(
            f"mining left {len(survivors)} of {len(correspondences)} points (gamma={gamma:.3e})"
        )
    return survivors


def save_correspondences_csv(correspondences: list[Correspondence], path) -> None:
    with open(Path(path), "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["qx", "qy", "X", "Y", "Z", "m", "confidence"])
        for c in correspondences:
            writer.writerow(
                [
                    repr(float(v))
                    for v in (c.q[0], c.q[1], c.x[0], c.x[1], c.x[2], c.m, c.source_confidence)
                ]
            )


def load_correspondences_csv(path) -> list[Correspondence]:
    out = []
    with open(Path(path), newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        if header[:5] != ["qx", "qy", "X", "Y", "Z"]:
            raise ValueError(f"{path}: not a correspondences CSV")
        for row in reader:
            out.append(
                Correspondence(
                    q=np.array([float(row[0]), float(row[1])]),
                    x=np.array([float(row[2]), float(row[3]), float(row[4])]),
                    m=float(row[5]),
                    source_confidence=float(row[6]),
                )
            )
    return out
