"""2D-2D matching between a rendered view and a target image.

Two interchangeable matchers sit behind the same Match2D output:

- oracle_match: samples surface points via rendered depth, projects them
  into both views, and degrades the target pixels with configurable
  Gaussian noise and gross outliers. It isolates pipeline correctness from
  matcher quality; outliers get the same confidence as inliers so the
  robust solver cannot cheat.
- zncc_match: a real matcher; zero-normalized cross-correlation of patches
  on a regular keypoint grid with subpixel refinement by quadratic fit.

Both are stateless and deterministic per seed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InsufficientCovisibilityError
from .geometry import Intrinsics, Se3Pose, project_points, rays_for_pixels
from .renderer import RenderConfig, render_pixels

VISIBLE_OPACITY = 0.5


@dataclass(frozen=True, eq=False)
class Match2D:
    """q: pixel in the target image, p: pixel in the rendered image."""

    q: np.ndarray
    p: np.ndarray
    confidence: float

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float).reshape(2)
        p = np.asarray(self.p, dtype=float).reshape(2)
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError("confidence must lie in [0, 1]")
        q.flags.writeable = False
        p.flags.writeable = False
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "p", p)


@dataclass(frozen=True)
class OracleNoiseSpec:
    """Controlled degradation of oracle matches."""

    pixel_sigma: float = 0.0
    outlier_fraction: float = 0.0
    outlier_radius: float = 20.0
    rng_seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.outlier_fraction < 1.0:
            raise ValueError("outlier_fraction must lie in [0, 1)")
        if self.pixel_sigma < 0 or self.outlier_radius <= 0:
            raise ValueError("pixel_sigma must be >= 0 and outlier_radius > 0")


def _displace_outlier(rng, q, radius, width, height):
    """Offset q by at least `radius`, keeping the result on the image."""
    for _ in range(64):
        ang = rng.uniform(0.0, 2.0 * np.pi)
        mag = radius * rng.uniform(1.0, 2.0)
        cand = q + mag * np.array([np.cos(ang), np.sin(ang)])
        if 0.0 <= cand[0] <= width - 1 and 0.0 <= cand[1] <= height - 1:
            return cand
    # push toward the farthest corner, which is at least half a diagonal away
    corners = np.array([[0, 0], [width - 1, 0], [0, height - 1], [width - 1, height - 1]], dtype=float)
    far = corners[np.argmax(np.linalg.norm(corners - q, axis=1))]
    d = far - q
    return q + d / np.linalg.norm(d) * min(radius, np.linalg.norm(d))


def oracle_match(
    field,
    intrinsics: Intrinsics,
    pose_render: Se3Pose,
    pose_target: Se3Pose,
    count: int,
    noise: OracleNoiseSpec,
    render_config: RenderConfig | None = None,
) -> list[Match2D]:
    """Geometric ground-truth matches between two views of the field.

    Surface points come from rendered depth at random pixels of the render
    view (using render_config, so they agree exactly with a depth map
    rendered under the same config); pairs must be visible in both views
    (opacity above 0.5, in bounds). Raises InsufficientCovisibilityError
    when fewer than 4 covisible points exist.
    """
    cfg = render_config or RenderConfig()
    rng = np.random.default_rng(noise.rng_seed)
    w, h = intrinsics.width, intrinsics.height
    w2c_target = pose_target.inverse()

    perm = rng.permutation(w * h)
    p_list: list[np.ndarray] = []
    q_list: list[np.ndarray] = []
    chunk = max(4 * count, 256)
    for start in range(0, len(perm), chunk):
        flat = perm[start : start + chunk]
        px = np.stack([flat % w, flat // w], axis=1)
        _, depth, opacity = render_pixels(field, intrinsics, pose_render, px, cfg)
        vis = opacity >= VISIBLE_OPACITY
        if not vis.any():
            continue
        px = px[vis]
        depth = depth[vis]
        origins, dirs = rays_for_pixels(intrinsics, pose_render, px.astype(float))
        x = origins + depth[:, None] * dirs
        q, z = project_points(intrinsics, w2c_target, x)
        ok = (z > 1e-9) & (q[:, 0] >= 0) & (q[:, 0] <= w - 1) & (q[:, 1] >= 0) & (q[:, 1] <= h - 1)
        if ok.any():
            q_px = np.rint(q[ok]).astype(np.int64)
            _, _, opac_t = render_pixels(field, intrinsics, pose_target, q_px, cfg)
            covis = opac_t >= VISIBLE_OPACITY
            for pp, qq in zip(px[ok][covis], q[ok][covis]):
                p_list.append(pp.astype(float))
                q_list.append(qq)
        if len(p_list) >= count:
            break

    if len(p_list) < 4:
        raise InsufficientCovisibilityError(
            f"only {len(p_list)} covisible points between the two views"
        )
    p_arr = np.array(p_list[:count])
    q_arr = np.array(q_list[:count])
    n = len(p_arr)

    if noise.pixel_sigma > 0:
        q_arr = q_arr + rng.normal(0.0, noise.pixel_sigma, size=q_arr.shape)
        q_arr[:, 0] = np.clip(q_arr[:, 0], 0.0, w - 1)
        q_arr[:, 1] = np.clip(q_arr[:, 1], 0.0, h - 1)

    n_out = int(round(noise.outlier_fraction * n))
    if n_out > 0:
        out_idx = rng.choice(n, size=n_out, replace=False)
        for i in out_idx:
            q_arr[i] = _displace_outlier(rng, q_arr[i], noise.outlier_radius, w, h)

    return [Match2D(q=q, p=p, confidence=1.0) for q, p in zip(q_arr, p_arr)]


def _to_gray(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=float)
    return img.mean(axis=2) if img.ndim == 3 else img


def _subpixel_peak(scores: np.ndarray, iy: int, ix: int) -> tuple[float, float]:
    """Quadratic fit of the 3x3 neighborhood around a score peak."""
    def fit(sm, s0, sp):
        denom = sm - 2.0 * s0 + sp
        if denom >= -1e-12:  # not a proper maximum along this axis
            return 0.0
        return float(np.clip(0.5 * (sm - sp) / denom, -0.5, 0.5))

    h, w = scores.shape
    dx = dy = 0.0
    if 0 < ix < w - 1:
        dx = fit(scores[iy, ix - 1], scores[iy, ix], scores[iy, ix + 1])
    if 0 < iy < h - 1:
        dy = fit(scores[iy - 1, ix], scores[iy, ix], scores[iy + 1, ix])
    return dx, dy


def zncc_match(
    target: np.ndarray,
    rendered: np.ndarray,
    grid_step: int = 8,
    patch: int = 11,
    search_radius: int = 48,
    min_score: float = 0.6,
    contrast_floor: float = 0.01,
) -> list[Match2D]:
    """ZNCC template matching on a keypoint grid of the rendered image.

    For each grid keypoint with patch contrast above `contrast_floor`, the
    target patch maximizing zero-normalized cross-correlation within
    `search_radius` is found; scores below `min_score` are dropped and the
    peak is refined to subpixel accuracy. Zero-variance patches are
    skipped, not errors.
    """
    if patch % 2 != 1 or patch < 3:
        raise ValueError("patch size must be odd and >= 3")
    tgt = _to_gray(target)
    ren = _to_gray(rendered)
    if tgt.shape != ren.shape:
        raise ValueError("target and rendered images must have the same size")
    h, w = ren.shape
    hp = patch // 2
    margin = hp + search_radius
    if 2 * margin >= min(h, w):
        raise ValueError("patch plus search window does not fit in the image")

    n_patch = patch * patch
    matches: list[Match2D] = []
    for gy in range(margin, h - margin, grid_step):
        for gx in range(margin, w - margin, grid_step):
            tpl = ren[gy - hp : gy + hp + 1, gx - hp : gx + hp + 1]
            tpl0 = tpl - tpl.mean()
            tpl_ss = float((tpl0 * tpl0).sum())
            if tpl_ss < contrast_floor**2 * n_patch:
                continue
            window = tgt[
                gy - margin : gy + margin + 1, gx - margin : gx + margin + 1
            ]
            wins = np.lib.stride_tricks.sliding_window_view(window, (patch, patch))
            cross = np.einsum("ijkl,kl->ij", wins, tpl0)
            wsum = np.einsum("ijkl->ij", wins)
            wss = np.einsum("ijkl,ijkl->ij", wins, wins)
            wvar = np.maximum(wss - wsum * wsum / n_patch, 0.0)
            denom = np.sqrt(wvar * tpl_ss)
            with np.errstate(divide="ignore", invalid="ignore"):
                scores = np.where(denom > 1e-12, cross / denom, 0.0)
            iy, ix = np.unravel_index(np.argmax(scores), scores.shape)
            score = float(scores[iy, ix])
            if score < min_score:
                continue
            if score > 1.0 - 1e-9:
                # numerically perfect correlation: the displacement is exactly
                # the integer peak; a parabola vertex would only add noise
                dx = dy = 0.0
            else:
                dx, dy = _subpixel_peak(scores, iy, ix)
            q = np.array(
                [gx + (ix - search_radius) + dx, gy + (iy - search_radius) + dy]
            )
            confidence = min(1.0, (score - min_score) / max(1.0 - min_score, 1e-12))
            matches.append(Match2D(q=q, p=np.array([gx, gy], dtype=float), confidence=confidence))
    return matches


def save_matches_csv(matches: list[Match2D], path) -> None:
    with open(Path(path), "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["qx", "qy", "px", "py", "confidence"])
        for m in matches:
            writer.writerow(
                [repr(float(v)) for v in (m.q[0], m.q[1], m.p[0], m.p[1], m.confidence)]
            )


def load_matches_csv(path) -> list[Match2D]:
    out = []
    with open(Path(path), newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        if header[:4] != ["qx", "qy", "px", "py"]:
            raise ValueError(f"{path}: not a matches CSV")
        for row in reader:
            out.append(
                Match2D(
                    q=np.array([float(row[0]), float(row[1])]),
                    p=np.array([float(row[2]), float(row[3])]),
                    confidence=float(row[4]),
                )
            )
    return out
