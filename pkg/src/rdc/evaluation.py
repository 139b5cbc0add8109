"""Depth evaluation: globally pooled samples, scalar metrics, depth-wise
and log-ratio histograms, flight-path-vector distance metric and
odometry-based scale recovery.

Log conventions: MLE/SLE use the natural log; the log-ratio histogram axis
is log10. Report headers restate this.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .geometry import CameraIntrinsics, Pose, quat_to_matrix
from .render import DepthMap

DELTAS = (1.25, 1.25 ** 2, 1.25 ** 3)

ERROR_FUNCTIONS = {
    "absolute": lambda gt, est: np.abs(est - gt),
    "relative": lambda gt, est: np.abs(est - gt) / gt,
    "log": lambda gt, est: np.abs(np.log(est) - np.log(gt)),
    "square": lambda gt, est: (est - gt) ** 2,
    "log_square": lambda gt, est: (np.log(est) - np.log(gt)) ** 2,
}


@dataclass(frozen=True)
class EvaluationSample:
    gt: float
    est: float
    frame_id: int
    pixel: tuple
    fpv_px: float  # NaN when the frame's FPV is undefined
    fpv_rad: float


class SampleSet:
    """Unordered pool of per-pixel (ground truth, estimate) samples.

    Stored as parallel arrays; metrics treat the pool globally, never
    image-wise.
    """

    def __init__(self, gt, est, frame_id=None, u=None, v=None,
                 fpv_px=None, fpv_rad=None):
        self.gt = np.asarray(gt, dtype=np.float64)
        self.est = np.asarray(est, dtype=np.float64)
        n = len(self.gt)
        if len(self.est) != n:
            raise ValueError("gt and est must have equal length")
        self.frame_id = (np.asarray(frame_id, dtype=np.int64)
                         if frame_id is not None else np.zeros(n, dtype=np.int64))
        self.u = np.asarray(u, dtype=np.int64) if u is not None else np.zeros(n, dtype=np.int64)
        self.v = np.asarray(v, dtype=np.int64) if v is not None else np.zeros(n, dtype=np.int64)
        self.fpv_px = (np.asarray(fpv_px, dtype=np.float64)
                       if fpv_px is not None else np.full(n, np.nan))
        self.fpv_rad = (np.asarray(fpv_rad, dtype=np.float64)
                        if fpv_rad is not None else np.full(n, np.nan))

    def __len__(self):
        return len(self.gt)

    def __getitem__(self, i) -> EvaluationSample:
        return EvaluationSample(float(self.gt[i]), float(self.est[i]),
                                int(self.frame_id[i]),
                                (int(self.u[i]), int(self.v[i])),
                                float(self.fpv_px[i]), float(self.fpv_rad[i]))

    @classmethod
    def concatenate(cls, sets):
        sets = [s for s in sets if len(s)]
        if not sets:
            return cls([], [])
        return cls(*(np.concatenate([getattr(s, a) for s in sets])
                     for a in ("gt", "est", "frame_id", "u", "v",
                               "fpv_px", "fpv_rad")))


@dataclass(frozen=True)
class MetricRecord:
    mae: float
    mre: float
    mle: float
    sae: float
    sle: float
    a1: float  # P_1.25
    a2: float  # P_1.25^2
    a3: float  # P_1.25^3
    sample_count: int

    def to_dict(self):
        return {"MAE": self.mae, "MRE": self.mre, "MLE": self.mle,
                "SAE": self.sae, "SLE": self.sle,
                "P_1.25": self.a1, "P_1.25^2": self.a2, "P_1.25^3": self.a3,
                "sample_count": self.sample_count}


def scalar_metrics(samples: SampleSet) -> MetricRecord:
    """Globally pooled error statistics (natural log for MLE/SLE)."""
    if len(samples) == 0:
        raise ValueError("cannot compute metrics over an empty sample set")
    gt, est = samples.gt, samples.est
    diff = est - gt
    log_diff = np.log(est) - np.log(gt)
    abs_log = np.abs(log_diff)
    return MetricRecord(
        mae=float(np.mean(np.abs(diff))),
        mre=float(np.mean(np.abs(diff) / gt)),
        mle=float(np.mean(abs_log)),
        sae=float(np.sqrt(np.mean(diff ** 2))),
        sle=float(np.sqrt(np.mean(log_diff ** 2))),
        a1=float(np.mean(abs_log <= np.log(DELTAS[0]))),
        a2=float(np.mean(abs_log <= np.log(DELTAS[1]))),
        a3=float(np.mean(abs_log <= np.log(DELTAS[2]))),
        sample_count=len(samples))


# ---------------------------------------------------------------------------
# flight path vector
# ---------------------------------------------------------------------------

def compute_fpv(pose_t: Pose, pose_next: Pose, K: CameraIntrinsics):
    """Pixel the camera moves toward between two poses.

    Returns ((u, v), defined). Undefined when the displacement is
    (near-)zero or has no forward component.
    """
    motion_world = pose_next.translation - pose_t.translation
    if np.linalg.norm(motion_world) < 1e-9:
        return (0.0, 0.0), False
    d = quat_to_matrix(pose_t.rotation).T @ motion_world
    if d[2] <= 0:
        return (0.0, 0.0), False
    return (K.fx * d[0] / d[2] + K.cx, K.fy * d[1] / d[2] + K.cy), True


def _fpv_distances(u, v, fpv_uv, K):
    """Per-pixel distance to the FPV in pixels and in radians."""
    du = u - fpv_uv[0]
    dv = v - fpv_uv[1]
    px = np.sqrt(du * du + dv * dv)
    ray = np.stack([(u - K.cx) / K.fx, (v - K.cy) / K.fy, np.ones_like(u, dtype=np.float64)], axis=1)
    fpv_ray = np.array([(fpv_uv[0] - K.cx) / K.fx, (fpv_uv[1] - K.cy) / K.fy, 1.0])
    cosang = (ray @ fpv_ray) / (np.linalg.norm(ray, axis=1) * np.linalg.norm(fpv_ray))
    rad = np.arccos(np.clip(cosang, -1.0, 1.0))
    return px, rad


# ---------------------------------------------------------------------------
# pooling and scale recovery
# ---------------------------------------------------------------------------

def pool_samples(gt_maps: dict, est_maps: dict, trajectory: list,
                 K: CameraIntrinsics, exclude_ids=()) -> SampleSet:
    """One sample per pixel valid in both maps, FPV distances attached.

    gt_maps/est_maps map frame id -> DepthMap; trajectory supplies the FPV
    (motion toward the next frame). Frames in exclude_ids (interpolated
    outliers) contribute nothing.
    """
    exclude = set(exclude_ids)
    by_id = {p.frame_id: i for i, p in enumerate(trajectory)}
    parts = []
    for fid in sorted(gt_maps):
        if fid in exclude:
            continue
        if fid not in est_maps:
            raise ValueError(f"frame {fid} missing from estimated maps")
        gt, est = gt_maps[fid], est_maps[fid]
        if (gt.width, gt.height) != (est.width, est.height):
            raise ValueError(f"frame {fid}: map dimensions differ")
        mask = gt.valid_mask & est.valid_mask
        if not mask.any():
            continue
        vv, uu = np.nonzero(mask)
        fpv = None
        if fid in by_id:
            i = by_id[fid]
            if i + 1 < len(trajectory):
                fpv_uv, defined = compute_fpv(trajectory[i], trajectory[i + 1], K)
                if defined:
                    fpv = fpv_uv
        if fpv is not None:
            px, rad = _fpv_distances(uu.astype(np.float64), vv.astype(np.float64), fpv, K)
        else:
            px = np.full(len(uu), np.nan)
            rad = np.full(len(uu), np.nan)
        parts.append(SampleSet(gt.values[mask], est.values[mask],
                               np.full(len(uu), fid), uu, vv, px, rad))
    return SampleSet.concatenate(parts)


def recover_scale(est_traj: list, gt_traj: list, mode: str = "per-frame") -> np.ndarray:
    """Per-frame depth scale factors from consecutive displacement magnitudes.

    scale_i = |gt displacement| / |est displacement| for the pair (i, i+1);
    the last frame inherits the last pair's scale. Frames with near-zero
    estimated displacement get NaN (skipped with a warning). mode='global'
    broadcasts the median of the valid per-frame scales.
    """
    if len(est_traj) != len(gt_traj):
        raise ValueError("trajectories must have matching length")
    if len(est_traj) < 2:
        raise ValueError("need at least two poses to recover scale")
    if mode not in ("per-frame", "global"):
        raise ValueError(f"unknown scale mode: {mode!r}")
    n = len(est_traj)
    scales = np.full(n, np.nan)
    for i in range(n - 1):
        d_est = np.linalg.norm(est_traj[i + 1].translation - est_traj[i].translation)
        d_gt = np.linalg.norm(gt_traj[i + 1].translation - gt_traj[i].translation)
        if d_est <= 1e-9:
            warnings.warn(f"frame {i}: estimated displacement is near zero; "
                          "scale recovery skipped")
            continue
        scales[i] = d_gt / d_est
    scales[n - 1] = scales[n - 2]
    if mode == "global":
        valid = scales[np.isfinite(scales)]
        if len(valid) == 0:
            raise ValueError("no frame had a usable displacement")
        scales[:] = float(np.median(valid))
    return scales


# ---------------------------------------------------------------------------
# histograms
# ---------------------------------------------------------------------------

def default_depth_bins(samples: SampleSet, n_bins: int = 40) -> np.ndarray:
    """Log-spaced bins between the 1st and 99th percentile of GT depth."""
    lo, hi = np.percentile(samples.gt, [1, 99])
    if hi <= lo:
        hi = lo * (1 + 1e-6) + 1e-12
    return np.geomspace(lo, hi, n_bins + 1)


def depth_wise_histogram(samples: SampleSet, bin_edges,
                         error: str = "log"):
    """Mean error per ground-truth depth bin; empty bins are NaN (absent)."""
    bin_edges = np.asarray(bin_edges, dtype=np.float64)
    if np.any(np.diff(bin_edges) <= 0):
        raise ValueError("bin edges must be strictly increasing")
    err = ERROR_FUNCTIONS[error](samples.gt, samples.est)
    idx = np.digitize(samples.gt, bin_edges) - 1
    n_bins = len(bin_edges) - 1
    inside = (idx >= 0) & (idx < n_bins)
    sums = np.bincount(idx[inside], weights=err[inside], minlength=n_bins)
    counts = np.bincount(idx[inside], minlength=n_bins)
    with np.errstate(invalid="ignore"):
        values = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    return bin_edges, values


def log_ratio_histogram(samples: SampleSet, bin_edges=None, n_bins: int = 81):
    """Distribution of log10(est / gt), normalized to sum to one.

    Also reports the 2.5/25/50/75/97.5 % quantiles of the log ratio for
    safety-interval readout.
    """
    ratios = np.log10(samples.est) - np.log10(samples.gt)
    if bin_edges is None:
        span = max(float(np.max(np.abs(ratios))), 1e-6) * 1.0001
        bin_edges = np.linspace(-span, span, n_bins + 1)
    else:
        bin_edges = np.asarray(bin_edges, dtype=np.float64)
        if ratios.min() < bin_edges[0] or ratios.max() > bin_edges[-1]:
            raise ValueError("bins do not cover the observed log-ratio range")
    counts, _ = np.histogram(ratios, bins=bin_edges)
    values = counts / counts.sum()
    q = np.percentile(ratios, [2.5, 25, 50, 75, 97.5])
    quantiles = dict(zip(("2.5", "25", "50", "75", "97.5"), map(float, q)))
    return bin_edges, values, quantiles


def fpv_metric(samples: SampleSet, bin_edges, units: str = "pixels",
               error: str = "log"):
    """Mean error per FPV-distance bin; FPV-undefined samples are skipped."""
    if units == "pixels":
        alpha = samples.fpv_px
    elif units == "radians":
        alpha = samples.fpv_rad
    else:
        raise ValueError(f"unknown FPV distance units: {units!r}")
    defined = np.isfinite(alpha)
    sub = SampleSet(samples.gt[defined], samples.est[defined])
    bin_edges = np.asarray(bin_edges, dtype=np.float64)
    err = ERROR_FUNCTIONS[error](sub.gt, sub.est)
    idx = np.digitize(alpha[defined], bin_edges) - 1
    n_bins = len(bin_edges) - 1
    inside = (idx >= 0) & (idx < n_bins)
    sums = np.bincount(idx[inside], weights=err[inside], minlength=n_bins)
    counts = np.bincount(idx[inside], minlength=n_bins)
    values = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    return bin_edges, values


# ---------------------------------------------------------------------------
# report assembly and plots
# ---------------------------------------------------------------------------

def build_report(samples: SampleSet, fpv_units: str = "pixels",
                 error: str = "log", scale_mode: str = "per-frame",
                 scales=None) -> dict:
    metrics = scalar_metrics(samples)
    d_edges, d_values = depth_wise_histogram(samples, default_depth_bins(samples), error)
    r_edges, r_values, quantiles = log_ratio_histogram(samples)
    have_fpv = np.isfinite(samples.fpv_px).any()
    if have_fpv:
        alpha = samples.fpv_px[np.isfinite(samples.fpv_px)]
        f_edges = np.linspace(0.0, float(alpha.max()) + 1e-9, 21)
        f_edges, f_values = fpv_metric(samples, f_edges, fpv_units, error)
    report = {
        "conventions": {"MLE_SLE_log": "natural",
                        "ratio_histogram_log": "log10",
                        "error_function": error},
        "metrics": metrics.to_dict(),
        "depth_histogram": {"edges": d_edges.tolist(),
                            "values": _nan_to_none(d_values)},
        "log_ratio_histogram": {"edges": r_edges.tolist(),
                                "values": r_values.tolist(),
                                "quantiles": quantiles},
        "scale_recovery": {"mode": scale_mode},
    }
    if scales is not None:
        valid = np.asarray(scales)[np.isfinite(scales)]
        report["scale_recovery"]["median"] = float(np.median(valid)) if len(valid) else None
    if have_fpv:
        report["fpv_histogram"] = {"edges": f_edges.tolist(),
                                   "values": _nan_to_none(f_values),
                                   "units": fpv_units}
    return report


def _nan_to_none(values):
    return [None if not np.isfinite(v) else float(v) for v in values]


def write_plots(report: dict, plots_dir):
    """Static png plots of the report histograms."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    from pathlib import Path

    plots = Path(plots_dir)
    plots.mkdir(parents=True, exist_ok=True)

    h = report["log_ratio_histogram"]
    centers = 0.5 * (np.asarray(h["edges"][:-1]) + np.asarray(h["edges"][1:]))
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(centers, h["values"], width=np.diff(h["edges"]))
    ax.set_xlabel("log10(estimate / ground truth)")
    ax.set_ylabel("fraction of samples")
    fig.savefig(plots / "log_ratio_histogram.png", dpi=120)
    plt.close(fig)

    h = report["depth_histogram"]
    centers = 0.5 * (np.asarray(h["edges"][:-1]) + np.asarray(h["edges"][1:]))
    vals = np.array([np.nan if v is None else v for v in h["values"]])
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(centers, vals, marker="o")
    ax.set_xscale("log")
    ax.set_xlabel("ground-truth depth [m]")
    ax.set_ylabel(f"mean {report['conventions']['error_function']} error")
    fig.savefig(plots / "depth_wise_error.png", dpi=120)
    plt.close(fig)

    if "fpv_histogram" in report:
        h = report["fpv_histogram"]
        centers = 0.5 * (np.asarray(h["edges"][:-1]) + np.asarray(h["edges"][1:]))
        vals = np.array([np.nan if v is None else v for v in h["values"]])
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.plot(centers, vals, marker="o")
        ax.set_xlabel(f"distance to flight path vector [{h['units']}]")
        ax.set_ylabel(f"mean {report['conventions']['error_function']} error")
        fig.savefig(plots / "fpv_error.png", dpi=120)
        plt.close(fig)
