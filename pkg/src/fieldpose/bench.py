"""Benchmark harness: perturbation protocol, occlusion synthesis, metrics.

A benchmark run renders ground-truth targets at held-out orbit poses,
perturbs each by a rotation about a random axis (angle uniform in a range)
plus a translation along a random direction (length uniform up to a cap),
runs the pipeline from the perturbed pose, and records rotation/translation
errors with success flags. Trial errors never abort a run: failed trials
are recorded as unsuccessful with the initialization error, and failure
counts are reported separately.

Reports are emitted as JSON (full, including timings), CSV (deterministic
per-trial rows; wall-clock timings are deliberately excluded so fixed seeds
give byte-identical files), and a markdown table with the column layout
Method | RE<5deg | TE<0.05 | mRE | mTE.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dataclass_field, replace
from pathlib import Path

import numpy as np

from .errors import InfeasibleOcclusionError, StageError
from .geometry import Se3Pose, rotation_about_axis, rotation_geodesic_deg, translation_error
from .pipeline import PipelineConfig, estimate_full, estimate_one_step
from .renderer import render_view
from .scenes import builtin_scene, default_intrinsics, sample_view_pose

ROTATION_SUCCESS_DEG = 5.0
TRANSLATION_SUCCESS = 0.05


@dataclass(frozen=True)
class PerturbationSpec:
    rotation_deg_range: tuple[float, float] = (10.0, 40.0)
    translation_max: float = 0.2
    trials_per_target: int = 5
    targets: int = 5
    rng_seed: int = 0

    def __post_init__(self):
        lo, hi = self.rotation_deg_range
        if not (0 <= lo <= hi):
            raise ValueError("rotation range must satisfy 0 <= lo <= hi")
        if self.translation_max < 0:
            raise ValueError("translation_max must be >= 0")


@dataclass(frozen=True)
class OcclusionSpec:
    kind: str = "textured-rectangle"  # textured-rectangle | second-field-paste
    coverage_fraction: float = 0.3
    rng_seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.coverage_fraction < 1.0:
            raise ValueError("coverage_fraction must lie in [0, 1)")
        if self.kind not in ("textured-rectangle", "second-field-paste"):
            raise ValueError(f"unknown occluder kind {self.kind!r}")


@dataclass
class TrialRecord:
    scene: str
    target_index: int
    trial_index: int
    init_re_deg: float
    init_te: float
    final_re_deg: float
    final_te: float
    success_re: bool
    success_te: bool
    failed_stage: str = ""
    counts: dict = dataclass_field(default_factory=dict)
    timings_ms: dict = dataclass_field(default_factory=dict)


@dataclass
class BenchmarkReport:
    records: list[TrialRecord]
    te_threshold: float
    method: str = "fieldpose"

    def aggregates(self) -> dict:
        n = len(self.records)
        if n == 0:
            return {"trials": 0}
        re = np.array([r.final_re_deg for r in self.records])
        te = np.array([r.final_te for r in self.records])
        return {
            "trials": n,
            "rate_re_lt_5deg": float(np.mean([r.success_re for r in self.records])),
            "rate_te_lt_thresh": float(np.mean([r.success_te for r in self.records])),
            "mRE_deg": float(re.mean()),
            "mTE": float(te.mean()),
            "failures": int(sum(1 for r in self.records if r.failed_stage)),
            "te_threshold": self.te_threshold,
        }


def sample_perturbed_pose(
    pose_gt: Se3Pose, spec: PerturbationSpec, trial_index: int
) -> Se3Pose:
    """Rotate about a random axis, then offset the camera center.

    The rotation is applied about the camera center so the translation
    offset is exactly the sampled length. Deterministic per
    (spec.rng_seed, trial_index).
    """
    rng = np.random.default_rng([spec.rng_seed, trial_index])
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = np.radians(rng.uniform(*spec.rotation_deg_range))
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    length = rng.uniform(0.0, spec.translation_max)
    r = rotation_about_axis(axis, angle)
    return Se3Pose(r @ pose_gt.rotation, pose_gt.translation + length * direction)


def _occluder_texture(rng, h: int, w: int) -> np.ndarray:
    """High-contrast blocky texture, unlike any scene surface."""
    blocks = rng.uniform(0.0, 1.0, size=(max(2, h // 6), max(2, w // 6), 3))
    reps = (h + blocks.shape[0] - 1) // blocks.shape[0], (w + blocks.shape[1] - 1) // blocks.shape[1]
    tiled = np.tile(blocks, (reps[0], reps[1], 1))[:h, :w]
    return tiled


def composite_occlusion(
    target: np.ndarray, spec: OcclusionSpec, opacity: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Paste an opaque occluder over part of the object's bounding box.

    The object is the set of pixels with opacity > 0.5; the occluder covers
    coverage_fraction of that bounding box (within rounding). Returns the
    composited image and the exact occluder mask; pixels outside the mask
    are untouched.
    """
    img = np.asarray(target, dtype=float).copy()
    h, w = img.shape[:2]
    mask = np.zeros((h, w), dtype=bool)
    if spec.coverage_fraction == 0.0:
        return img, mask
    obj = np.asarray(opacity) > 0.5
    if not obj.any():
        raise InfeasibleOcclusionError("no object pixels (opacity > 0.5) to occlude")
    ys, xs = np.nonzero(obj)
    y0, y1 = ys.min(), ys.max() + 1
    x0, x1 = xs.min(), xs.max() + 1
    bh, bw = y1 - y0, x1 - x0
    area = spec.coverage_fraction * bh * bw
    rng = np.random.default_rng(spec.rng_seed)
    aspect = rng.uniform(0.6, 1.6)
    rh = int(round(np.sqrt(area * aspect)))
    rw = int(round(area / max(rh, 1)))
    rh, rw = min(max(rh, 1), bh), min(max(rw, 1), bw)
    # fix up the area after clamping
    if rh * rw < area and rh == bh:
        rw = min(int(round(area / rh)), bw)
    if rh * rw < area and rw == bw:
        rh = min(int(round(area / rw)), bh)
    if abs(rh * rw - area) / area > 0.12:
        raise InfeasibleOcclusionError(
            f"cannot place a {spec.coverage_fraction:.0%} occluder in a {bh}x{bw} box"
        )
    oy = y0 + int(rng.integers(0, bh - rh + 1))
    ox = x0 + int(rng.integers(0, bw - rw + 1))
    mask[oy : oy + rh, ox : ox + rw] = True

    if spec.kind == "textured-rectangle":
        patch = _occluder_texture(rng, rh, rw)
    else:
        patch = _second_field_patch(rng, rh, rw)
    if img.ndim == 3:
        img[mask] = patch.reshape(-1, 3)
    else:
        img[mask] = patch.mean(axis=2).reshape(-1)
    return img, mask


def _second_field_patch(rng, h: int, w: int) -> np.ndarray:
    """Rendered view of a small foreign scene, scaled to the occluder box."""
    from .fields import Bounds, TexturedBox
    from .geometry import look_at
    from .renderer import RenderConfig
    from .scenes import default_intrinsics as _intr

    foreign = TexturedBox(Bounds([-0.5, -0.5, -0.5], [0.5, 0.5, 0.5]), density=80.0,
                          octaves=(2, 5))
    size = max(16, min(64, max(h, w)))
    intr = _intr(size)
    pose = look_at(np.array([1.2, -0.9, -1.5]), np.zeros(3))
    view = render_view(foreign, intr, pose, RenderConfig(samples_per_ray=48, rng_seed=int(rng.integers(1 << 31))))
    # nearest-neighbor scale to the occluder rectangle; fill holes with texture
    yy = np.clip((np.arange(h) * size) // max(h, 1), 0, size - 1)
    xx = np.clip((np.arange(w) * size) // max(w, 1), 0, size - 1)
    patch = view.color[np.ix_(yy, xx)]
    background = _occluder_texture(rng, h, w)
    opaque = view.opacity[np.ix_(yy, xx)] > 0.5
    return np.where(opaque[..., None], patch, background)


def _run_trial(
    scene_name: str,
    field,
    intrinsics,
    pose_gt: Se3Pose,
    target: np.ndarray,
    target_index: int,
    trial_index: int,
    spec: PerturbationSpec,
    pipeline_config: PipelineConfig,
) -> TrialRecord:
    trial_key = (spec.rng_seed * 1_000_003 + target_index) * 1_000 + trial_index
    pose_init = sample_perturbed_pose(pose_gt, replace(spec, rng_seed=trial_key), trial_index)
    init_re = rotation_geodesic_deg(pose_init, pose_gt)
    init_te = translation_error(pose_init, pose_gt)
    cfg = replace(
        pipeline_config,
        render=replace(pipeline_config.render, rng_seed=trial_key),
        oracle_noise=replace(pipeline_config.oracle_noise, rng_seed=trial_key),
        mining=replace(pipeline_config.mining, rng_seed=trial_key),
        ransac=replace(pipeline_config.ransac, rng_seed=trial_key),
        refine=replace(pipeline_config.refine, rng_seed=trial_key),
    )
    estimator = estimate_full if cfg.enable_refinement else estimate_one_step
    try:
        est = estimator(field, intrinsics, pose_init, target, cfg, target_pose_gt=pose_gt)
        final_re = rotation_geodesic_deg(est.pose, pose_gt)
        final_te = translation_error(est.pose, pose_gt)
        counts = est.counts
        timings = est.stage_timings_ms
        failed = ""
    except StageError as exc:
        final_re, final_te = init_re, init_te
        counts, timings = {}, {}
        failed = exc.stage
    return TrialRecord(
        scene=scene_name,
        target_index=target_index,
        trial_index=trial_index,
        init_re_deg=init_re,
        init_te=init_te,
        final_re_deg=final_re,
        final_te=final_te,
        success_re=final_re < ROTATION_SUCCESS_DEG,
        success_te=False,  # filled in by run_benchmark once the threshold is known
        failed_stage=failed,
        counts=counts,
        timings_ms=timings,
    )


def run_benchmark(
    scenes,
    pipeline_config: PipelineConfig,
    spec: PerturbationSpec,
    occlusion: OcclusionSpec | None = None,
    image_size: int = 200,
    te_threshold: float = TRANSLATION_SUCCESS,
    threads: int = 1,
) -> BenchmarkReport:
    """Run the full protocol over the named scenes.

    scenes: scene names (str) or (name, field) pairs. Record order is
    canonical (scene, target, trial) regardless of thread count.
    """
    intrinsics = default_intrinsics(image_size)
    jobs = []
    for si, entry in enumerate(scenes):
        name, field = (entry, builtin_scene(entry)) if isinstance(entry, str) else entry
        scene_rng = np.random.default_rng([spec.rng_seed, si, 7])
        for ti in range(spec.targets):
            pose_gt = sample_view_pose(field, scene_rng)
            view = render_view(field, intrinsics, pose_gt, pipeline_config.render)
            target = view.color
            if occlusion is not None:
                occ_spec = replace(occlusion, rng_seed=occlusion.rng_seed + 131 * ti + 7919 * si)
                target, _ = composite_occlusion(target, occ_spec, view.opacity)
            for ki in range(spec.trials_per_target):
                jobs.append((name, field, pose_gt, target, ti, ki))

    def run(job):
        name, field, pose_gt, target, ti, ki = job
        return _run_trial(
            name, field, intrinsics, pose_gt, target, ti, ki, spec, pipeline_config
        )

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(run, jobs))
    else:
        records = [run(j) for j in jobs]
    records.sort(key=lambda r: (r.scene, r.target_index, r.trial_index))
    for r in records:
        r.success_te = r.final_te < te_threshold
    return BenchmarkReport(records=records, te_threshold=te_threshold)


def _csv_rows(report: BenchmarkReport) -> list[str]:
    # wall timings are excluded: rows must be byte-identical across runs
    header = (
        "scene,target_index,trial_index,init_re_deg,init_te,final_re_deg,"
        "final_te,success_re,success_te,failed_stage"
    )
    rows = [header]
    for r in report.records:
        rows.append(
            f"{r.scene},{r.target_index},{r.trial_index},{r.init_re_deg!r},"
            f"{r.init_te!r},{r.final_re_deg!r},{r.final_te!r},"
            f"{int(r.success_re)},{int(r.success_te)},{r.failed_stage}"
        )
    return rows


def emit_report(report: BenchmarkReport, fmt: str, path) -> Path:
    """Write the report as json, csv, or markdown-table. Returns the path."""
    path = Path(path)
    agg = report.aggregates()
    if fmt == "json":
        payload = {
            "method": report.method,
            "aggregates": agg,
            "records": [
                {
                    "scene": r.scene,
                    "target_index": r.target_index,
                    "trial_index": r.trial_index,
                    "init_re_deg": r.init_re_deg,
                    "init_te": r.init_te,
                    "final_re_deg": r.final_re_deg,
                    "final_te": r.final_te,
                    "success_re": r.success_re,
                    "success_te": r.success_te,
                    "failed_stage": r.failed_stage,
                    "counts": r.counts,
                    "timings_ms": r.timings_ms,
                }
                for r in report.records
            ],
        }
        path.write_text(json.dumps(payload, indent=2))
    elif fmt == "csv":
        path.write_text("\n".join(_csv_rows(report)) + "\n")
    elif fmt == "markdown-table":
        lines = [
            "| Method | RE<5° | TE<0.05 | mRE | mTE |",
            "|---|---|---|---|---|",
            "| {m} | {r:.3f} | {t:.3f} | {mre:.3f} | {mte:.4f} |".format(
                m=report.method,
                r=agg["rate_re_lt_5deg"],
                t=agg["rate_te_lt_thresh"],
                mre=agg["mRE_deg"],
                mte=agg["mTE"],
            ),
        ]
        path.write_text("\n".join(lines) + "\n")
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    return path


def load_report_json(path) -> BenchmarkReport:
    d = json.loads(Path(path).read_text())
    records = [
        TrialRecord(
            scene=r["scene"],
            target_index=r["target_index"],
            trial_index=r["trial_index"],
            init_re_deg=r["init_re_deg"],
            init_te=r["init_te"],
            final_re_deg=r["final_re_deg"],
            final_te=r["final_te"],
            success_re=r["success_re"],
            success_te=r["success_te"],
            failed_stage=r.get("failed_stage", ""),
            counts=r.get("counts", {}),
            timings_ms=r.get("timings_ms", {}),
        )
        for r in d["records"]
    ]
    return BenchmarkReport(records=records, te_threshold=d["aggregates"]["te_threshold"], method=d["method"])
