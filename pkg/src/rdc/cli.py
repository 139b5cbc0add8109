"""Command line interface.

Exit codes: 0 success, 2 validation/input error, 3 stage or runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import evaluation, io, pipeline, registration, render, sampling
from . import synth as synth_mod
from . import trajfilter
from .geometry import apply_similarity


def _cmd_sample(args):
    traj = io.read_tum(args.traj)
    ids = sampling.select_optimal_subset(
        traj, k=args.k, orientation_weight=args.orientation_weight,
        seed=args.seed)
    io.write_frame_list(args.out, ids)
    print(f"selected {len(ids)} of {len(traj)} frames -> {args.out}")


def _cmd_filter_traj(args):
    traj = io.read_tum(args.input)
    threshold = args.threshold if args.threshold == "auto" else float(args.threshold)
    report = trajfilter.filter_trajectory(
        traj, window=args.window, polyorder=args.polyorder,
        orientation_weight=args.orientation_weight, threshold=threshold)
    io.write_tum(args.out, report.smoothed)
    if args.report:
        with open(args.report, "w") as f:
            json.dump({"outlier_ids": report.outlier_ids,
                       "residuals": report.residuals.tolist(),
                       "params": report.params}, f, indent=2, sort_keys=True)
            f.write("\n")
    print(f"smoothed {len(traj)} poses, {len(report.outlier_ids)} outliers "
          f"-> {args.out}")


def _cmd_register(args):
    src = io.read_ply_cloud(args.src)
    dst = io.read_ply_cloud(args.dst)
    pairs = np.loadtxt(args.pairs, ndmin=2)
    if pairs.shape[1] != 6:
        raise ValueError(f"{args.pairs}: expected 6 columns (sx sy sz dx dy dz)")
    estimate_scale = not args.no_scale
    init = registration.umeyama_align(pairs[:, :3], pairs[:, 3:],
                                      estimate_scale=estimate_scale)
    params = registration.IcpParams(
        variant=args.variant, max_iterations=args.max_iterations,
        convergence_eps=args.convergence_eps,
        rejection_multiplier=args.rejection_multiplier,
        estimate_scale=estimate_scale)
    result = registration.icp(src, dst, init=init, params=params)
    w, x, y, z = result.transform.rotation
    with open(args.out, "w") as f:
        json.dump({"scale": result.transform.scale,
                   "quaternion_wxyz": [w, x, y, z],
                   "translation": result.transform.translation.tolist(),
                   "rmse_history": result.rmse_history,
                   "iterations_used": result.iterations_used,
                   "inlier_fraction": result.inlier_fraction},
                  f, indent=2, sort_keys=True)
        f.write("\n")
    if args.overlay:
        registered = apply_similarity(result.transform, src)
        io.write_ply(args.overlay, pipeline._overlay_cloud(registered, dst))
    print(f"icp converged in {result.iterations_used} iterations, "
          f"rmse {result.rmse_history[-1]:.3e} -> {args.out}")


def _cmd_render(args):
    cloud = io.read_ply_cloud(args.cloud)
    mesh = io.read_ply_mesh(args.mesh) if args.mesh else None
    traj = io.read_tum(args.traj)
    K = io.read_intrinsics(args.intrinsics)
    half_size = args.half_size if args.half_size == "auto" else float(args.half_size)
    splats = render.create_splats(cloud, mesh,
                                  isolation_radius=args.isolation_radius,
                                  half_size=half_size)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for pose in traj:
        occ = render.render_occlusion(mesh, splats, pose, K)
        gt = render.render_gt_depth(cloud, occ, pose, K, tolerance=args.tolerance)
        io.write_depth_png16(out / f"{pose.frame_id:06d}.png", gt)
    print(f"rendered {len(traj)} depth maps ({len(splats)} splats) -> {out}")


def _cmd_evaluate(args):
    K = io.read_intrinsics(args.intrinsics)
    gt_maps = {int(p.stem): io.read_depth_png16(p)
               for p in sorted(Path(args.gt).glob("*.png"))}
    est_maps = {int(p.stem): io.read_depth_png16(p)
                for p in sorted(Path(args.pred).glob("*.png"))}
    gt_traj = io.read_tum(args.traj)
    est_traj = io.read_tum(args.pred_traj)
    exclude = []
    if args.filter_report:
        with open(args.filter_report) as f:
            exclude = json.load(f)["outlier_ids"]
    scales = evaluation.recover_scale(est_traj, gt_traj, mode=args.scale)
    scaled = {fid: render.DepthMap(m.width, m.height, m.values * scales[fid])
              for fid, m in est_maps.items()
              if fid < len(scales) and np.isfinite(scales[fid])}
    common = sorted(set(gt_maps) & set(scaled))
    samples = evaluation.pool_samples({f: gt_maps[f] for f in common},
                                      {f: scaled[f] for f in common},
                                      gt_traj, K, exclude_ids=exclude)
    report = evaluation.build_report(samples, fpv_units=args.fpv_units,
                                     error=args.error, scale_mode=args.scale,
                                     scales=scales)
    with open(args.out, "w") as f:
        json.dump(report, f, indent=2, sort_keys=True)
        f.write("\n")
    if args.plots:
        evaluation.write_plots(report, args.plots)
    m = report["metrics"]
    print(f"evaluated {m['sample_count']} samples: MAE {m['MAE']:.4f} m, "
          f"MRE {m['MRE']:.4f}, P_1.25 {m['P_1.25']:.4f} -> {args.out}")


def _cmd_synth(args):
    scene = None
    if args.scene:
        with open(args.scene) as f:
            scene = synth_mod.SceneSpec.from_dict(json.load(f))
    out = synth_mod.generate_dataset(
        args.out, scene=scene, traj_kind=args.traj_kind,
        n_frames=args.frames, n_points=args.points,
        noise_sigma=args.noise, traj_noise=args.traj_noise, seed=args.seed,
        width=args.width, height=args.height)
    print(f"synthetic dataset ({args.frames} frames, {args.points} points) "
          f"-> {out}")


def _cmd_run(args):
    config = pipeline.PipelineConfig.load(args.config)
    report = pipeline.run_pipeline(config, force=args.force,
                                   require_review=args.require_review)
    done = sum(1 for s in report["stages"] if not s.get("skipped"))
    skipped = sum(1 for s in report["stages"] if s.get("skipped"))
    print(f"pipeline finished: {done} stages run, {skipped} skipped "
          f"-> {config.output_root / 'run_report.json'}")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="rdc",
        description="Construct and evaluate ground-truth depth maps for "
                    "videos in rigid scenes")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="select a photogrammetry frame subset")
    p.add_argument("--traj", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--orientation-weight", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_sample)

    p = sub.add_parser("filter-traj", help="smooth a trajectory and repair outliers")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    p.add_argument("--window", type=int, default=9)
    p.add_argument("--polyorder", type=int, default=3)
    p.add_argument("--orientation-weight", type=float, default=1.0)
    p.add_argument("--threshold", default="auto")
    p.set_defaults(func=_cmd_filter_traj)

    p = sub.add_parser("register", help="align a cloud to a reference cloud")
    p.add_argument("--src", required=True)
    p.add_argument("--dst", required=True)
    p.add_argument("--pairs", required=True,
                   help="picked point pairs: lines 'sx sy sz dx dy dz'")
    p.add_argument("--variant", default="point-to-plane",
                   choices=["point-to-point", "point-to-plane"])
    p.add_argument("--max-iterations", type=int, default=50)
    p.add_argument("--convergence-eps", type=float, default=1e-6)
    p.add_argument("--rejection-multiplier", type=float, default=3.0)
    p.add_argument("--no-scale", action="store_true",
                   help="freeze scale at 1 (rigid alignment)")
    p.add_argument("--out", required=True)
    p.add_argument("--overlay")
    p.set_defaults(func=_cmd_register)

    p = sub.add_parser("render", help="render ground-truth depth maps")
    p.add_argument("--cloud", required=True)
    p.add_argument("--mesh")
    p.add_argument("--traj", required=True)
    p.add_argument("--intrinsics", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--tolerance", type=float, default=0.02)
    p.add_argument("--isolation-radius", type=float, default=0.5)
    p.add_argument("--half-size", default="auto")
    p.set_defaults(func=_cmd_render)

    p = sub.add_parser("evaluate", help="score predicted depth maps")
    p.add_argument("--gt", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--traj", required=True)
    p.add_argument("--pred-traj", required=True)
    p.add_argument("--intrinsics", required=True)
    p.add_argument("--scale", default="per-frame",
                   choices=["per-frame", "global"])
    p.add_argument("--fpv-units", default="pixels",
                   choices=["pixels", "radians"])
    p.add_argument("--error", default="log",
                   choices=sorted(evaluation.ERROR_FUNCTIONS))
    p.add_argument("--filter-report",
                   help="filter-traj report JSON; its outliers are excluded")
    p.add_argument("--out", required=True)
    p.add_argument("--plots")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--scene", help="scene JSON (default: built-in two-plane scene)")
    p.add_argument("--traj-kind", default="orbit",
                   choices=["orbit", "dolly", "grid"])
    p.add_argument("--frames", type=int, default=60)
    p.add_argument("--points", type=int, default=50000)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--traj-noise", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--width", type=int, default=640)
    p.add_argument("--height", type=int, default=480)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("run", help="run the configured pipeline stages")
    p.add_argument("--config", required=True)
    p.add_argument("--force", action="store_true",
                   help="rerun stages even when already completed")
    p.add_argument("--require-review", action="store_true",
                   help="halt after registration until the approval marker exists")
    p.set_defaults(func=_cmd_run)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except pipeline.PipelineValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except pipeline.ReviewPending as e:
        print(f"halted: {e}", file=sys.stderr)
        return 3
    except pipeline.StageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
