"""One-step pose estimation and the full method with refinement.

estimate_one_step renders a single view from the initial pose, matches it
against the target, lifts matches through the rendered depth, optionally
mines 3D-consistent points, and solves PnP+RANSAC. estimate_full continues
with KOR-masked photometric refinement seeded by the one-step matches.
Stage timings and per-stage counts are recorded on the result; failures are
re-raised as StageError carrying the failing stage name.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field as dataclass_field

import numpy as np

from .correspond import MiningConfig, lift, mine, score_correspondences
from .errors import FieldposeError, StageError
from .geometry import Intrinsics, Se3Pose
from .matching import Match2D, OracleNoiseSpec, oracle_match, zncc_match
from .pnp import PnpResult, RansacConfig, ransac_pnp
from .refine import RefineConfig, refine
from .renderer import RenderConfig, RenderedView, render_view

_STAGES = ("render", "match", "lift", "mine", "pnp", "refine")


@dataclass(frozen=True)
class ZnccParams:
    grid_step: int = 8
    patch: int = 11
    search_radius: int = 48
    min_score: float = 0.6


@dataclass(frozen=True)
class PipelineConfig:
    matcher: str = "oracle"  # oracle | zncc
    oracle_noise: OracleNoiseSpec = dataclass_field(default_factory=OracleNoiseSpec)
    zncc: ZnccParams = dataclass_field(default_factory=ZnccParams)
    mining: MiningConfig = dataclass_field(default_factory=MiningConfig)
    ransac: RansacConfig = dataclass_field(default_factory=RansacConfig)
    render: RenderConfig = dataclass_field(default_factory=RenderConfig)
    refine: RefineConfig = dataclass_field(default_factory=RefineConfig)
    oracle_match_count: int = 150
    enable_mining: bool = True
    enable_refinement: bool = True

    def __post_init__(self):
        if self.matcher not in ("oracle", "zncc"):
            raise ValueError(f"unknown matcher {self.matcher!r}")


@dataclass(eq=False)
class PoseEstimate:
    pose: Se3Pose
    stage_timings_ms: dict
    counts: dict
    diagnostics: dict

    def summary(self) -> str:
        timing = " ".join(f"{k}={v:.1f}ms" for k, v in self.stage_timings_ms.items())
        count = " ".join(f"{k}={v}" for k, v in self.counts.items())
        return f"pose solved | {count} | {timing}"

    def to_json(self) -> str:
        def primitive(v):
            if isinstance(v, (bool, int, float, str)):
                return True
            if isinstance(v, list):
                return all(isinstance(x, (bool, int, float, str)) for x in v)
            return False

        diag = {k: v for k, v in self.diagnostics.items() if primitive(v)}
        return json.dumps(
            {
                "pose": json.loads(self.pose.to_json()),
                "stage_timings_ms": self.stage_timings_ms,
                "counts": self.counts,
                "diagnostics": diag,
            },
            indent=2,
        )


class _StageClock:
    def __init__(self):
        self.timings_ms: dict = {}

    def run(self, stage: str, fn):
        start = time.perf_counter()
        try:
            result = fn()
        except FieldposeError as exc:
            raise StageError(stage, exc) from exc
        self.timings_ms[stage] = (time.perf_counter() - start) * 1e3
        return result


def _run_matcher(
    field,
    intrinsics: Intrinsics,
    pose_init: Se3Pose,
    target: np.ndarray,
    rendered: RenderedView,
    config: PipelineConfig,
    target_pose_gt: Se3Pose | None,
) -> list[Match2D]:
    if config.matcher == "oracle":
        if target_pose_gt is None:
            raise ValueError("the oracle matcher needs target_pose_gt")
        return oracle_match(
            field,
            intrinsics,
            pose_init,
            target_pose_gt,
            config.oracle_match_count,
            config.oracle_noise,
            config.render,
        )
    z = config.zncc
    matches = zncc_match(
        target,
        rendered.color,
        grid_step=z.grid_step,
        patch=z.patch,
        search_radius=z.search_radius,
        min_score=z.min_score,
    )
    if len(matches) < 4:
        from .errors import InsufficientCovisibilityError

        raise InsufficientCovisibilityError(
            f"ZNCC produced only {len(matches)} matches"
        )
    return matches


def estimate_one_step(
    field,
    intrinsics: Intrinsics,
    pose_init: Se3Pose,
    target: np.ndarray,
    config: PipelineConfig,
    target_pose_gt: Se3Pose | None = None,
) -> PoseEstimate:
    """Render once, match, lift, mine, solve. Returns the estimated
    camera-to-world pose with timings and counts.

    target_pose_gt is consumed only by the oracle matcher (it replaces a
    learned matcher with ground-truth geometry plus controlled noise).
    """
    clock = _StageClock()
    view = clock.run("render", lambda: render_view(field, intrinsics, pose_init, config.render))
    matches = clock.run(
        "match",
        lambda: _run_matcher(field, intrinsics, pose_init, target, view, config, target_pose_gt),
    )
    lifted = clock.run(
        "lift",
        lambda: lift(
            matches, view.depth, view.opacity, intrinsics, pose_init,
            config.mining.min_opacity,
        ),
    )
    if config.enable_mining:
        # mining casts only k rays per point, so doubled sampling is cheap
        # and keeps faithful points clear of the consistency threshold
        mine_render = config.render.with_samples(2 * config.render.samples_per_ray)
        survivors = clock.run(
            "mine",
            lambda: mine(lifted, field, config.mining, mine_render, pose_init),
        )
    else:
        survivors = lifted
        clock.timings_ms["mine"] = 0.0
    result: PnpResult = clock.run(
        "pnp", lambda: ransac_pnp(survivors, intrinsics, config.ransac)
    )
    pose = result.pose_world_to_cam.inverse()
    counts = {
        "matches": len(matches),
        "lifted": len(lifted),
        "mined_survivors": len(survivors),
        "inliers": int(result.inlier_mask.sum()),
    }
    diagnostics = {
        "rendered_view": view,
        "matches": matches,
        "mean_inlier_reprojection_px": result.mean_inlier_reprojection_px,
        "ransac_iterations": result.iterations_used,
        "refine_applied": False,
    }
    return PoseEstimate(
        pose=pose,
        stage_timings_ms=clock.timings_ms,
        counts=counts,
        diagnostics=diagnostics,
    )


def estimate_full(
    field,
    intrinsics: Intrinsics,
    pose_init: Se3Pose,
    target: np.ndarray,
    config: PipelineConfig,
    target_pose_gt: Se3Pose | None = None,
) -> PoseEstimate:
    """One-step estimation followed by masked photometric refinement.

    Refinement failure is not fatal: the one-step pose is returned with
    diagnostics["refine_failed"] set.
    """
    estimate = estimate_one_step(
        field, intrinsics, pose_init, target, config, target_pose_gt
    )
    estimate.diagnostics["pose_one_step"] = estimate.pose
    if not config.enable_refinement:
        return estimate
    start = time.perf_counter()
    try:
        refined, trace = refine(
            field,
            intrinsics,
            estimate.pose,
            target,
            estimate.diagnostics["matches"],
            config.refine,
            config.render,
        )
        estimate.pose = refined
        estimate.diagnostics["refine_applied"] = True
        estimate.diagnostics["loss_trace"] = trace
    except FieldposeError as exc:
        estimate.diagnostics["refine_failed"] = str(exc)
    estimate.stage_timings_ms["refine"] = (time.perf_counter() - start) * 1e3
    return estimate
