"""Command-line entry points: render, estimate, bench, bake, mask.

All randomness honors --seed; --threads only parallelizes independent
benchmark trials and never changes output content. Experiment files are
JSON with unknown keys rejected, so a typo fails before any trial runs.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .bench import (
    OcclusionSpec,
    PerturbationSpec,
    emit_report,
    run_benchmark,
)
from .correspond import MiningConfig
from .errors import FieldposeError, StageError
from .fields import bake_analytic, load_field, save_field, VoxelGridField
from .geometry import Intrinsics, Se3Pose, rotation_geodesic_deg, translation_error
from .imgio import read_png, read_raw, write_png, write_raw
from .matching import OracleNoiseSpec, load_matches_csv
from .pipeline import PipelineConfig, ZnccParams, estimate_full, estimate_one_step
from .pnp import RansacConfig
from .refine import RefineConfig, kor_mask
from .renderer import RenderConfig, render_view
from .scenes import SCENE_NAMES, builtin_scene, default_intrinsics, orbit_pose


def _load_scene(spec: str):
    p = Path(spec)
    if p.suffix == ".vgf" or p.exists():
        if not p.exists():
            raise FileNotFoundError(f"scene file not found: {spec}")
        return load_field(p)
    try:
        return builtin_scene(spec)
    except KeyError:
        raise FileNotFoundError(
            f"scene file not found: {spec} (and it is not a built-in scene)"
        ) from None


def _strict_fields(cls, data: dict, where: str) -> dict:
    allowed = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - allowed
    if unknown:
        raise ValueError(f"{where}: unknown keys {sorted(unknown)}")
    return data


def _pipeline_config_from_dict(data: dict) -> PipelineConfig:
    data = dict(data)
    sub = {
        "oracle_noise": OracleNoiseSpec,
        "zncc": ZnccParams,
        "mining": MiningConfig,
        "ransac": RansacConfig,
        "render": RenderConfig,
        "refine": RefineConfig,
    }
    kwargs: dict = {}
    for key, cls in sub.items():
        if key in data:
            kwargs[key] = cls(**_strict_fields(cls, data.pop(key), f"pipeline.{key}"))
    kwargs.update(_strict_fields(PipelineConfig, data, "pipeline"))
    return PipelineConfig(**kwargs)


def load_experiment(path) -> dict:
    """Parse an experiment file into ready-to-run objects."""
    raw = json.loads(Path(path).read_text())
    allowed = {
        "scenes", "image_size", "te_threshold", "pipeline", "perturbation",
        "occlusion", "output_dir", "method_name",
    }
    unknown = set(raw) - allowed
    if unknown:
        raise ValueError(f"{path}: unknown keys {sorted(unknown)}")
    if "scenes" not in raw or "output_dir" not in raw:
        raise ValueError(f"{path}: 'scenes' and 'output_dir' are required")
    perturb_raw = dict(raw.get("perturbation", {}))
    if "rotation_deg_range" in perturb_raw:
        perturb_raw["rotation_deg_range"] = tuple(perturb_raw["rotation_deg_range"])
    exp = {
        "scenes": list(raw["scenes"]),
        "image_size": int(raw.get("image_size", 200)),
        "te_threshold": float(raw.get("te_threshold", 0.05)),
        "pipeline": _pipeline_config_from_dict(raw.get("pipeline", {})),
        "perturbation": PerturbationSpec(
            **_strict_fields(PerturbationSpec, perturb_raw, "perturbation")
        ),
        "occlusion": None,
        "output_dir": Path(raw["output_dir"]),
        "method_name": raw.get("method_name", "fieldpose"),
    }
    if "occlusion" in raw and raw["occlusion"] is not None:
        exp["occlusion"] = OcclusionSpec(
            **_strict_fields(OcclusionSpec, raw["occlusion"], "occlusion")
        )
    return exp


def _read_pose(path) -> Se3Pose:
    return Se3Pose.from_json(Path(path).read_text())


def _read_image(path) -> np.ndarray:
    p = Path(path)
    return read_png(p) if p.suffix.lower() == ".png" else read_raw(p)


def _intrinsics_from_args(args) -> Intrinsics:
    if args.intrinsics:
        return Intrinsics.from_json(Path(args.intrinsics).read_text())
    return default_intrinsics(args.size)


def cmd_render(args) -> int:
    field = _load_scene(args.scene)
    intr = _intrinsics_from_args(args)
    if args.pose:
        pose = _read_pose(args.pose)
    else:
        az, el = (float(v) for v in args.orbit.split(","))
        pose = orbit_pose(field, az, el)
    cfg = RenderConfig(samples_per_ray=args.samples, rng_seed=args.seed)
    view = render_view(field, intr, pose, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_png(view.color, out / "color.png")
    write_raw(view.color, out / "color.raw")
    write_raw(view.depth, out / "depth.raw")
    write_raw(view.opacity, out / "opacity.raw")
    print(f"rendered {intr.width}x{intr.height} view to {out}")
    return 0


def cmd_estimate(args) -> int:
    field = _load_scene(args.scene)
    intr = _intrinsics_from_args(args)
    target = _read_image(args.target)
    pose_init = _read_pose(args.init_pose)
    if args.config:
        pipeline = load_experiment(args.config)["pipeline"]
    else:
        pipeline = PipelineConfig()
    overrides: dict = {}
    if args.matcher:
        overrides["matcher"] = args.matcher
    if args.no_mining:
        overrides["enable_mining"] = False
    if args.no_refine:
        overrides["enable_refinement"] = False
    pipeline = dataclasses.replace(pipeline, **overrides) if overrides else pipeline
    pipeline = dataclasses.replace(
        pipeline, render=dataclasses.replace(pipeline.render, rng_seed=args.seed)
    )
    gt = _read_pose(args.gt_pose) if args.gt_pose else None
    estimator = estimate_full if pipeline.enable_refinement else estimate_one_step
    est = estimator(field, intr, pose_init, target, pipeline, target_pose_gt=gt)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "estimate.json").write_text(est.to_json())
    line = est.summary()
    if gt is not None:
        line += (
            f" | RE={rotation_geodesic_deg(est.pose, gt):.4f}deg"
            f" TE={translation_error(est.pose, gt):.5f}"
        )
    print(line)
    return 0


def cmd_bench(args) -> int:
    exp = load_experiment(args.experiment)
    report = run_benchmark(
        exp["scenes"],
        exp["pipeline"],
        exp["perturbation"],
        occlusion=exp["occlusion"],
        image_size=exp["image_size"],
        te_threshold=exp["te_threshold"],
        threads=args.threads,
    )
    report.method = exp["method_name"]
    out = exp["output_dir"]
    out.mkdir(parents=True, exist_ok=True)
    for fmt, name in (("json", "report.json"), ("csv", "report.csv"),
                      ("markdown-table", "report.md")):
        emit_report(report, fmt, out / name)
    manifest = {
        "experiment": str(Path(args.experiment).resolve()),
        "outputs": ["report.json", "report.csv", "report.md"],
        "aggregates": report.aggregates(),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    agg = report.aggregates()
    print(
        f"{agg['trials']} trials | RE<5deg {agg['rate_re_lt_5deg']:.3f} | "
        f"TE<{report.te_threshold} {agg['rate_te_lt_thresh']:.3f} | "
        f"mRE {agg['mRE_deg']:.3f} | mTE {agg['mTE']:.4f} | failures {agg['failures']}"
    )
    return 0


def cmd_bake(args) -> int:
    field = _load_scene(args.scene)
    if isinstance(field, VoxelGridField):
        print("scene is already a voxel grid", file=sys.stderr)
        return 2
    res = [int(v) for v in args.resolution.split(",")]
    if len(res) == 1:
        res = res * 3
    grid = bake_analytic(field, res)
    save_field(grid, args.out, manifest=True)
    print(f"baked {args.scene} at {'x'.join(str(r) for r in res)} to {args.out}")
    return 0


def cmd_mask(args) -> int:
    matches = load_matches_csv(args.matches)
    w, h = (int(v) for v in args.size.split("x"))
    mask = kor_mask([m.q for m in matches], (w, h), args.dilation)
    write_png(mask.as_bool((w, h)).astype(float), args.out)
    print(f"KOR mask: {len(mask)} pixels ({len(matches)} keypoints, n={args.dilation})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fieldpose",
        description="Pose estimation against explicit radiance fields",
    )
    parser.add_argument("--seed", type=int, default=0, help="global RNG seed")
    parser.add_argument(
        "--threads", type=int, default=1,
        help="parallel benchmark trials (output is independent of this)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("render", help="render color/depth/opacity from a pose")
    p.add_argument("--scene", required=True, help=f"built-in ({', '.join(SCENE_NAMES)}) or .vgf path")
    p.add_argument("--pose", help="camera-to-world pose JSON file")
    p.add_argument("--orbit", default="30,20", help="azimuth,elevation degrees (if no --pose)")
    p.add_argument("--intrinsics", help="intrinsics JSON file")
    p.add_argument("--size", type=int, default=200, help="square image size (if no --intrinsics)")
    p.add_argument("--samples", type=int, default=128)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("estimate", help="estimate the target pose from an initial guess")
    p.add_argument("--scene", required=True)
    p.add_argument("--target", required=True, help="target image (.png or .raw)")
    p.add_argument("--init-pose", required=True)
    p.add_argument("--gt-pose", help="ground truth pose (enables RE/TE report and the oracle matcher)")
    p.add_argument("--intrinsics")
    p.add_argument("--size", type=int, default=200)
    p.add_argument("--config", help="experiment JSON supplying the pipeline section")
    p.add_argument("--matcher", choices=["oracle", "zncc"])
    p.add_argument("--no-mining", action="store_true")
    p.add_argument("--no-refine", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("bench", help="run a benchmark experiment file")
    p.add_argument("experiment")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("bake", help="bake an analytic scene into a voxel grid")
    p.add_argument("--scene", required=True)
    p.add_argument("--resolution", default="64", help="n or nx,ny,nz")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bake)

    p = sub.add_parser("mask", help="write a KOR mask image from a matches CSV")
    p.add_argument("--matches", required=True)
    p.add_argument("--size", required=True, help="WxH")
    p.add_argument("--dilation", type=int, default=4)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_mask)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except StageError as exc:
        print(f"error in stage '{exc.stage}': {exc.cause}", file=sys.stderr)
        return 3
    except (FieldposeError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
