"""Photometric pose refinement on SE(3) with occlusion-robust sampling.

The loss is the mean squared RGB error between the target image and pixels
re-rendered from the candidate pose, restricted to a sample mask. Three
mask strategies are provided:

- "kor": keypoint-guided occlusion-robust region, grown by iterated 5x5
  morphological dilation around the matched target keypoints. Matches mark
  unoccluded image content, so the mask avoids occluders.
- "full-image": every pixel.
- "interest-region": pixels in the top 20% of target gradient magnitude.

The optimizer is plain descent on the 6-dim twist about the current pose:
the gradient comes from central finite differences (12 loss evaluations per
step, per-block epsilons for rotation and translation), the update uses
per-block step sizes, and a step that increases the loss is rejected while
that block's step size is halved, so the recorded loss trace never
increases.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import EmptyMaskError
from .geometry import Intrinsics, Se3Pose, Twist, exp_twist, rotation_geodesic_deg, translation_error
from .matching import Match2D
from .renderer import RenderConfig, render_pixels

_DILATION_STRUCTURE = np.ones((5, 5), dtype=bool)


@dataclass(frozen=True, eq=False)
class SampleMask:
    """Integer target pixels used for loss sampling, stored sorted."""

    pixels: np.ndarray  # (N, 2) int, columns (x, y)

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.int64).reshape(-1, 2)
        order = np.lexsort((px[:, 0], px[:, 1]))
        px = np.ascontiguousarray(px[order])
        px.flags.writeable = False
        object.__setattr__(self, "pixels", px)

    def __len__(self) -> int:
        return len(self.pixels)

    def as_bool(self, image_size: tuple[int, int]) -> np.ndarray:
        """(H, W) boolean image; image_size is (width, height)."""
        w, h = image_size
        out = np.zeros((h, w), dtype=bool)
        out[self.pixels[:, 1], self.pixels[:, 0]] = True
        return out

    @classmethod
    def from_bool(cls, mask: np.ndarray) -> "SampleMask":
        ys, xs = np.nonzero(mask)
        return cls(np.stack([xs, ys], axis=1))


@dataclass(frozen=True)
class RefineConfig:
    steps: int = 40
    step_size_rotation: float = 5e-3
    step_size_translation: float = 5e-3
    fd_epsilon_rotation: float = 1e-3
    fd_epsilon_translation: float = 1e-3
    sampling: str = "kor"  # kor | full-image | interest-region
    dilation_n: int = 4
    max_samples: int = 2048
    rng_seed: int = 0

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.fd_epsilon_rotation <= 0 or self.fd_epsilon_translation <= 0:
            raise ValueError("finite-difference epsilons must be positive")
        if self.sampling not in ("kor", "full-image", "interest-region"):
            raise ValueError(f"unknown sampling strategy {self.sampling!r}")


def kor_mask(matched_target_pixels, image_size: tuple[int, int], dilation_n: int) -> SampleMask:
    """Keypoint seeds dilated n times with a 5x5 square structuring element.

    image_size is (width, height). Raises EmptyMaskError for no keypoints.
    """
    pts = np.asarray(matched_target_pixels, dtype=float).reshape(-1, 2)
    if len(pts) == 0:
        raise EmptyMaskError("KOR mask needs at least one keypoint")
    w, h = image_size
    seeds = np.rint(pts).astype(np.int64)
    seeds[:, 0] = np.clip(seeds[:, 0], 0, w - 1)
    seeds[:, 1] = np.clip(seeds[:, 1], 0, h - 1)
    mask = np.zeros((h, w), dtype=bool)
    mask[seeds[:, 1], seeds[:, 0]] = True
    if dilation_n > 0:
        mask = ndimage.binary_dilation(mask, structure=_DILATION_STRUCTURE, iterations=dilation_n)
    return SampleMask.from_bool(mask)


def full_image_mask(image_size: tuple[int, int]) -> SampleMask:
    w, h = image_size
    xs, ys = np.meshgrid(np.arange(w), np.arange(h))
    return SampleMask(np.stack([xs.ravel(), ys.ravel()], axis=1))


def interest_region_mask(target: np.ndarray, fraction: float = 0.2) -> SampleMask:
    """Pixels whose gradient magnitude is in the top `fraction` of the image."""
    gray = target.mean(axis=2) if target.ndim == 3 else target
    gy, gx = np.gradient(gray)
    mag = np.hypot(gx, gy)
    cut = np.quantile(mag, 1.0 - fraction)
    mask = (mag >= cut) & (mag > 0)
    if not mask.any():
        raise EmptyMaskError("target image has no gradient structure")
    return SampleMask.from_bool(mask)


def _select_pixels(mask: SampleMask, max_samples: int, rng_seed: int) -> np.ndarray:
    if len(mask) == 0:
        raise EmptyMaskError("sampling from an empty mask")
    if len(mask) <= max_samples:
        return mask.pixels
    rng = np.random.default_rng(rng_seed)
    sel = rng.choice(len(mask), size=max_samples, replace=False)
    return mask.pixels[np.sort(sel)]


def photometric_loss(
    field,
    intrinsics: Intrinsics,
    pose: Se3Pose,
    target: np.ndarray,
    mask: SampleMask,
    max_samples: int,
    render_config: RenderConfig,
    rng_seed: int = 0,
) -> float:
    """Mean squared RGB error over a deterministic subset of mask pixels."""
    px = _select_pixels(mask, max_samples, rng_seed)
    rendered, _, _ = render_pixels(field, intrinsics, pose, px, render_config)
    ref = np.asarray(target, dtype=float)[px[:, 1], px[:, 0]]
    diff = rendered - ref
    return float(np.mean(diff * diff))


def build_mask(
    config: RefineConfig,
    target: np.ndarray,
    intrinsics: Intrinsics,
    matches: list[Match2D] | None,
) -> SampleMask:
    size = (intrinsics.width, intrinsics.height)
    if config.sampling == "kor":
        if not matches:
            raise EmptyMaskError("KOR sampling requires matches")
        return kor_mask([m.q for m in matches], size, config.dilation_n)
    if config.sampling == "full-image":
        return full_image_mask(size)
    return interest_region_mask(target)


def refine(
    field,
    intrinsics: Intrinsics,
    pose_init: Se3Pose,
    target: np.ndarray,
    matches: list[Match2D] | None,
    config: RefineConfig,
    render_config: RenderConfig,
) -> tuple[Se3Pose, list[float]]:
    """Masked photometric descent from pose_init; returns (pose, loss trace).

    The trace holds the loss before any step followed by the loss after
    each of config.steps steps; it is non-increasing by construction.
    """
    mask = build_mask(config, target, intrinsics, matches)
    px = _select_pixels(mask, config.max_samples, config.rng_seed)
    fixed_mask = SampleMask(px)
    ref = np.asarray(target, dtype=float)[px[:, 1], px[:, 0]]

    def loss_at(p: Se3Pose) -> float:
        rendered, _, _ = render_pixels(field, intrinsics, p, px, render_config)
        diff = rendered - ref
        return float(np.mean(diff * diff))

    pose = pose_init
    current = loss_at(pose)
    trace = [current]
    step_rot = config.step_size_rotation
    step_trans = config.step_size_translation
    eps = np.array(
        [config.fd_epsilon_rotation] * 3 + [config.fd_epsilon_translation] * 3
    )
    for _ in range(config.steps):
        grad = np.zeros(6)
        for i in range(6):
            xi = np.zeros(6)
            xi[i] = eps[i]
            plus = loss_at(exp_twist(Twist(xi[:3], xi[3:])) @ pose)
            minus = loss_at(exp_twist(Twist(-xi[:3], -xi[3:])) @ pose)
            grad[i] = (plus - minus) / (2.0 * eps[i])
        # steepest descent under the metric diag(1/step_rot^2, 1/step_trans^2):
        # blocks move in proportion to their gradients, the stronger block
        # capped at its step size (prevents weak-gradient blocks drifting)
        scaled = np.concatenate([step_rot * grad[:3], step_trans * grad[3:]])
        norm = np.linalg.norm(scaled)
        if norm < 1e-300:
            trace.append(current)
            continue
        delta = -np.concatenate(
            [step_rot**2 * grad[:3], step_trans**2 * grad[3:]]
        ) / norm
        accepted = False
        scale = 1.0
        for _ in range(6):
            candidate = exp_twist(Twist(scale * delta[:3], scale * delta[3:])) @ pose
            cand_loss = loss_at(candidate)
            if cand_loss < current:
                pose = candidate
                current = cand_loss
                accepted = True
                break
            scale *= 0.5
        if not accepted:
            # halve persistently so later steps probe a finer neighborhood
            step_rot *= 0.5
            step_trans *= 0.5
        trace.append(current)
    return pose, trace


def write_trace_csv(
    trace: list[float],
    path,
    poses: list[Se3Pose] | None = None,
    pose_gt: Se3Pose | None = None,
) -> None:
    """CSV of (step, loss[, rotation_error_deg, translation_error])."""
    with open(Path(path), "w", newline="") as f:
        writer = csv.writer(f)
        if pose_gt is not None and poses is not None:
            writer.writerow(["step", "loss", "rotation_error_deg", "translation_error"])
            for i, (lo, p) in enumerate(zip(trace, poses)):
                writer.writerow(
                    [i, repr(float(lo)),
                     repr(rotation_geodesic_deg(p, pose_gt)),
                     repr(translation_error(p, pose_gt))]
                )
        else:
            writer.writerow(["step", "loss"])
            for i, lo in enumerate(trace):
                writer.writerow([i, repr(float(lo))])
