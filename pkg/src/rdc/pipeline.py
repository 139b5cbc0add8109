"""Pipeline orchestration: the full workflow as resumable stages driven by
one JSON config (sample -> register -> filter-traj -> render -> evaluate).

Each stage persists its artifacts under the output root and drops a
`stage.json` marker; completed stages are skipped on rerun unless forced.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import evaluation, io, registration, render, sampling, trajfilter
from .geometry import apply_similarity

STAGE_ORDER = ("sample", "register", "filter-traj", "render", "evaluate")


class PipelineValidationError(ValueError):
    """Bad configuration or missing dependency, detected before execution."""


class StageError(RuntimeError):
    """A stage failed while executing."""


class ReviewPending(RuntimeError):
    """Registration awaits its approval marker (--require-review)."""


@dataclass
class PipelineConfig:
    output_root: Path
    stages: list
    inputs: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)

    @classmethod
    def load(cls, path):
        path = Path(path)
        with open(path) as f:
            doc = json.load(f)
        root = path.parent
        inputs = {k: (root / v if v is not None else None)
                  for k, v in doc.get("inputs", {}).items()}
        out = Path(doc.get("output_root", "out"))
        if not out.is_absolute():
            out = root / out
        stages = doc.get("stages", list(STAGE_ORDER))
        return cls(output_root=out, stages=stages, inputs=inputs,
                   params=doc.get("params", {}))

    def stage_params(self, stage):
        return dict(self.params.get(stage, {}))

    def input_path(self, name):
        return self.inputs.get(name)


def _require_input(config, stage, name):
    p = config.input_path(name)
    if p is None:
        raise PipelineValidationError(
            f"stage '{stage}' requires input '{name}' which is not configured")
    if not Path(p).exists():
        raise PipelineValidationError(
            f"stage '{stage}' requires input '{name}' at {p}, which does not exist")
    return Path(p)


def _artifact(config, stage, *parts):
    return config.output_root / stage / Path(*parts)


def validate(config: PipelineConfig):
    """Check stage ordering and every dependency before running anything."""
    unknown = [s for s in config.stages if s not in STAGE_ORDER]
    if unknown:
        raise PipelineValidationError(f"unknown stages: {unknown}")
    order = [STAGE_ORDER.index(s) for s in config.stages]
    if order != sorted(order):
        raise PipelineValidationError(
            f"stages must follow the order {list(STAGE_ORDER)}")

    scheduled = set(config.stages)
    for stage in config.stages:
        if stage == "sample":
            _require_input(config, stage, "raw_trajectory")
        elif stage == "register":
            _require_input(config, stage, "lidar_cloud")
            _require_input(config, stage, "dense_cloud")
            _require_input(config, stage, "pairs")
        elif stage == "filter-traj":
            _require_input(config, stage, "raw_trajectory")
        elif stage == "render":
            _require_input(config, stage, "intrinsics")
            if "register" not in scheduled \
                    and not _artifact(config, "register", "registered.ply").exists():
                _require_input(config, stage, "lidar_cloud")
            if "filter-traj" not in scheduled \
                    and not _artifact(config, "filter-traj", "smooth.tum").exists():
                _require_input(config, stage, "raw_trajectory")
        elif stage == "evaluate":
            _require_input(config, stage, "pred_depth")
            _require_input(config, stage, "pred_trajectory")
            _require_input(config, stage, "intrinsics")
            if "render" not in scheduled \
                    and not _artifact(config, "render", "depth").exists():
                raise PipelineValidationError(
                    "stage 'evaluate' needs ground-truth depth from stage "
                    "'render', which is neither scheduled nor already produced")


def _read_pairs(path):
    pairs = np.loadtxt(path, ndmin=2)
    if pairs.shape[1] != 6:
        raise ValueError(f"{path}: expected 6 columns (sx sy sz dx dy dz)")
    return pairs[:, :3], pairs[:, 3:]


def _stage_sample(config):
    traj = io.read_tum(_require_input(config, "sample", "raw_trajectory"))
    p = config.stage_params("sample")
    ids = sampling.select_optimal_subset(
        traj, k=int(p.get("k", 100)),
        orientation_weight=float(p.get("orientation_weight", 1.0)),
        seed=int(p.get("seed", 0)))
    io.write_frame_list(_artifact(config, "sample", "subset.txt"), ids)
    return {"selected": len(ids)}


def _stage_register(config):
    p = config.stage_params("register")
    src = io.read_ply_cloud(_require_input(config, "register", "lidar_cloud"))
    dst = io.read_ply_cloud(_require_input(config, "register", "dense_cloud"))
    pairs_src, pairs_dst = _read_pairs(_require_input(config, "register", "pairs"))
    estimate_scale = bool(p.get("estimate_scale", True))
    init = registration.umeyama_align(pairs_src, pairs_dst,
                                      estimate_scale=estimate_scale)
    params = registration.IcpParams(
        variant=p.get("variant", "point-to-point"),
        max_iterations=int(p.get("max_iterations", 50)),
        convergence_eps=float(p.get("convergence_eps", 1e-6)),
        rejection_multiplier=float(p.get("rejection_multiplier", 3.0)),
        estimate_scale=estimate_scale)
    result = registration.icp(src, dst, init=init, params=params)

    registered = apply_similarity(result.transform, src)
    io.write_ply(_artifact(config, "register", "registered.ply"), registered)
    w, x, y, z = result.transform.rotation
    with open(_artifact(config, "register", "transform.json"), "w") as f:
        json.dump({"scale": result.transform.scale,
                   "quaternion_wxyz": [w, x, y, z],
                   "translation": result.transform.translation.tolist(),
                   "rmse_history": result.rmse_history,
                   "iterations_used": result.iterations_used,
                   "inlier_fraction": result.inlier_fraction},
                  f, indent=2, sort_keys=True)
        f.write("\n")
    overlay = _overlay_cloud(registered, dst)
    io.write_ply(_artifact(config, "register", "overlay.ply"), overlay)
    return {"rmse": result.rmse_history[-1],
            "iterations": result.iterations_used}


def _overlay_cloud(src_registered, dst):
    """Red source + white destination, for visual registration review."""
    from .geometry import PointCloud
    pts = np.concatenate([src_registered.points, dst.points])
    colors = np.concatenate([
        np.tile(np.array([[255, 0, 0]], dtype=np.uint8), (len(src_registered), 1)),
        np.tile(np.array([[255, 255, 255]], dtype=np.uint8), (len(dst), 1))])
    return PointCloud(pts, colors=colors)


def _stage_filter_traj(config):
    p = config.stage_params("filter-traj")
    traj = io.read_tum(_require_input(config, "filter-traj", "raw_trajectory"))
    threshold = p.get("threshold", "auto")
    if threshold != "auto":
        threshold = float(threshold)
    report = trajfilter.filter_trajectory(
        traj, window=int(p.get("window", 9)),
        polyorder=int(p.get("polyorder", 3)),
        orientation_weight=float(p.get("orientation_weight", 1.0)),
        threshold=threshold)
    io.write_tum(_artifact(config, "filter-traj", "smooth.tum"), report.smoothed)
    with open(_artifact(config, "filter-traj", "filter_report.json"), "w") as f:
        json.dump({"outlier_ids": report.outlier_ids,
                   "residuals": report.residuals.tolist(),
                   "params": report.params}, f, indent=2, sort_keys=True)
        f.write("\n")
    return {"outliers": len(report.outlier_ids)}


def _render_trajectory_inputs(config):
    reg = _artifact(config, "register", "registered.ply")
    if reg.exists():
        cloud = io.read_ply_cloud(reg)
    else:
        cloud = io.read_ply_cloud(_require_input(config, "render", "lidar_cloud"))
    smooth = _artifact(config, "filter-traj", "smooth.tum")
    if smooth.exists():
        traj = io.read_tum(smooth)
    else:
        traj = io.read_tum(_require_input(config, "render", "raw_trajectory"))
    return cloud, traj


def _stage_render(config):
    p = config.stage_params("render")
    cloud, traj = _render_trajectory_inputs(config)
    K = io.read_intrinsics(_require_input(config, "render", "intrinsics"))
    mesh = None
    mesh_path = config.input_path("mesh")
    if mesh_path is not None and Path(mesh_path).exists():
        mesh = io.read_ply_mesh(mesh_path)
    half_size = p.get("half_size", "auto")
    if half_size != "auto":
        half_size = float(half_size)
    splats = render.create_splats(
        cloud, mesh, isolation_radius=float(p.get("isolation_radius", 0.5)),
        half_size=half_size)
    depth_dir = _artifact(config, "render", "depth")
    depth_dir.mkdir(parents=True, exist_ok=True)
    tolerance = float(p.get("tolerance", 0.02))
    for pose in traj:
        occ = render.render_occlusion(mesh, splats, pose, K)
        gt = render.render_gt_depth(cloud, occ, pose, K, tolerance=tolerance)
        io.write_depth_png16(depth_dir / f"{pose.frame_id:06d}.png", gt)
    return {"frames": len(traj), "splats": len(splats)}


def _load_depth_dir(path):
    maps = {}
    for png in sorted(Path(path).glob("*.png")):
        maps[int(png.stem)] = io.read_depth_png16(png)
    if not maps:
        raise StageError(f"no depth maps found in {path}")
    return maps


def _stage_evaluate(config):
    p = config.stage_params("evaluate")
    K = io.read_intrinsics(_require_input(config, "evaluate", "intrinsics"))
    gt_maps = _load_depth_dir(_artifact(config, "render", "depth"))
    est_maps = _load_depth_dir(_require_input(config, "evaluate", "pred_depth"))
    est_traj = io.read_tum(_require_input(config, "evaluate", "pred_trajectory"))

    smooth = _artifact(config, "filter-traj", "smooth.tum")
    if smooth.exists():
        gt_traj = io.read_tum(smooth)
    else:
        gt_traj = io.read_tum(_require_input(config, "evaluate", "pred_trajectory"))

    exclude = []
    filt_report = _artifact(config, "filter-traj", "filter_report.json")
    if filt_report.exists():
        with open(filt_report) as f:
            exclude = json.load(f)["outlier_ids"]

    scale_mode = p.get("scale_mode", "per-frame")
    scales = evaluation.recover_scale(est_traj, gt_traj, mode=scale_mode)
    scaled = {}
    for fid, est in est_maps.items():
        if fid >= len(scales) or not np.isfinite(scales[fid]):
            continue
        scaled[fid] = render.DepthMap(est.width, est.height,
                                      est.values * scales[fid])
    common = sorted(set(gt_maps) & set(scaled))
    samples = evaluation.pool_samples({f: gt_maps[f] for f in common},
                                      {f: scaled[f] for f in common},
                                      gt_traj, K, exclude_ids=exclude)
    report = evaluation.build_report(
        samples, fpv_units=p.get("fpv_units", "pixels"),
        error=p.get("error", "log"), scale_mode=scale_mode, scales=scales)
    with open(_artifact(config, "evaluate", "report.json"), "w") as f:
        json.dump(report, f, indent=2, sort_keys=True)
        f.write("\n")
    if p.get("plots"):
        evaluation.write_plots(report, _artifact(config, "evaluate", "plots"))
    return {"samples": len(samples),
            "MAE": report["metrics"]["MAE"]}


_STAGE_FUNCS = {
    "sample": _stage_sample,
    "register": _stage_register,
    "filter-traj": _stage_filter_traj,
    "render": _stage_render,
    "evaluate": _stage_evaluate,
}


def run_pipeline(config: PipelineConfig, force: bool = False,
                 require_review: bool = False) -> dict:
    """Execute the configured stages in order; returns the run report.

    Completed stages (marker file present) are skipped unless `force`.
    With `require_review`, execution halts after registration until the
    marker file `registration_approved` exists under the output root.
    """
    validate(config)
    config.output_root.mkdir(parents=True, exist_ok=True)
    report = {"output_root": str(config.output_root), "stages": []}

    for stage in config.stages:
        stage_dir = config.output_root / stage
        marker = stage_dir / "stage.json"
        entry = {"name": stage, "params": config.stage_params(stage)}
        if marker.exists() and not force:
            entry["skipped"] = True
            report["stages"].append(entry)
        else:
            stage_dir.mkdir(parents=True, exist_ok=True)
            start = time.perf_counter()
            try:
                summary = _STAGE_FUNCS[stage](config)
            except (PipelineValidationError, ReviewPending):
                raise
            except Exception as e:
                raise StageError(f"stage '{stage}' failed: {e}") from e
            entry["skipped"] = False
            entry["seconds"] = time.perf_counter() - start
            entry["summary"] = summary
            report["stages"].append(entry)
            with open(marker, "w") as f:
                json.dump({"stage": stage, "params": entry["params"],
                           "seconds": entry["seconds"]}, f, indent=2)
                f.write("\n")
        if stage == "register" and require_review:
            approval = config.output_root / "registration_approved"
            if not approval.exists():
                raise ReviewPending(
                    f"registration awaits review: inspect "
                    f"{stage_dir / 'overlay.ply'} and create {approval} to proceed")

    with open(config.output_root / "run_report.json", "w") as f:
        json.dump(report, f, indent=2, sort_keys=True)
        f.write("\n")
    return report
