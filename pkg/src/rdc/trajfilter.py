"""Trajectory smoothing, outlier detection and interpolation.

Smoothing is Savitzky-Golay per dimension (positions as 3-vectors,
orientations as sign-continuous quaternion components, renormalized).
Outliers are detected greedily: the worst residual frame is flagged,
patched in the working series, and the series re-smoothed, until every
remaining residual is below threshold. One badly-localized frame therefore
cannot drag its neighbors over the threshold.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import savgol_filter

from .geometry import Pose, interpolate_pose, quat_angle, quat_slerp

AUTO_THRESHOLD_FLOOR = 1e-6  # meter-equivalents; keeps 'auto' sane on noiseless input


def savgol_smooth(series, window: int, polyorder: int) -> np.ndarray:
    """Least-squares polynomial smoothing of an (N, d) series.

    Interior points evaluate the window's fitted polynomial at its center;
    boundary points evaluate the first/last full window's fit at their own
    offset, so polynomials of degree <= polyorder pass through unchanged.
    """
    series = np.asarray(series, dtype=np.float64)
    if series.ndim == 1:
        series = series[:, None]
    if window % 2 == 0:
        raise ValueError(f"window must be odd, got {window}")
    if window <= polyorder:
        raise ValueError(f"window ({window}) must exceed polyorder ({polyorder})")
    if len(series) < window:
        raise ValueError(f"series of length {len(series)} is shorter than "
                         f"window {window}")
    return savgol_filter(series, window, polyorder, axis=0, mode="interp")


@dataclass
class FilterReport:
    smoothed: list
    outlier_ids: list
    residuals: np.ndarray
    params: dict = field(default_factory=dict)


def _continuous_quats(traj):
    """Stack quaternion components with sign flips removed."""
    q = np.stack([p.rotation for p in traj])
    for i in range(1, len(q)):
        if np.dot(q[i], q[i - 1]) < 0:
            q[i] = -q[i]
    return q


def _smooth_arrays(pos, quats, window, polyorder):
    sp = savgol_smooth(pos, window, polyorder)
    sq = savgol_smooth(quats, window, polyorder)
    sq = sq / np.linalg.norm(sq, axis=1, keepdims=True)
    return sp, sq


def _residuals(pos, quats, sp, sq, orientation_weight):
    dp = np.linalg.norm(pos - sp, axis=1)
    da = np.array([quat_angle(a, b) for a, b in zip(quats, sq)])
    return dp + orientation_weight * da


def _interp_raw(pos, quats, i, anchors):
    """Patch index i from the nearest anchors on each side (raw arrays)."""
    left = [a for a in anchors if a < i]
    right = [a for a in anchors if a > i]
    if not left and not right:
        raise ValueError("trajectory has no inlier frames left")
    if not left:
        j = min(right)
        return pos[j], quats[j]
    if not right:
        j = max(left)
        return pos[j], quats[j]
    a, b = max(left), min(right)
    t = (i - a) / (b - a)
    q = quat_slerp(quats[a], quats[b], t)
    if np.dot(q, quats[a]) < 0:
        q = -q
    return (1 - t) * pos[a] + t * pos[b], q


def filter_trajectory(traj: list, window: int = 9, polyorder: int = 3,
                      orientation_weight: float = 1.0,
                      threshold="auto") -> FilterReport:
    """Smooth a time-sorted trajectory and repair badly-localized frames.

    Residual per frame is ||p - p_smooth|| + orientation_weight * relative
    rotation angle. Frames above threshold become outliers; their output
    poses are interpolated (linear position, slerp orientation) between the
    nearest inlier neighbors. threshold='auto' resolves to
    5 x median(initial residuals), floored at 1e-6.
    """
    n = len(traj)
    if n < window:
        raise ValueError(f"trajectory of {n} frames is shorter than window {window}")
    pos = np.stack([p.translation for p in traj])
    quats = _continuous_quats(traj)

    work_pos = pos.copy()
    work_quats = quats.copy()
    sp, sq = _smooth_arrays(work_pos, work_quats, window, polyorder)
    res0 = _residuals(pos, quats, sp, sq, orientation_weight)
    if threshold == "auto":
        thr = max(5.0 * float(np.median(res0)), AUTO_THRESHOLD_FLOOR)
    else:
        thr = float(threshold)

    outliers: list[int] = []
    res = res0
    while True:
        candidates = [i for i in range(n) if i not in outliers]
        if not candidates:
            raise ValueError("every frame exceeded the outlier threshold")
        worst = max(candidates, key=lambda i: res[i])
        if res[worst] <= thr:
            break
        outliers.append(worst)
        anchors = [i for i in range(n) if i not in outliers]
        if not anchors:
            raise ValueError("every frame exceeded the outlier threshold")
        work_pos[worst], work_quats[worst] = _interp_raw(
            work_pos, work_quats, worst, anchors)
        sp, sq = _smooth_arrays(work_pos, work_quats, window, polyorder)
        res = _residuals(pos, quats, sp, sq, orientation_weight)

    inliers = [i for i in range(n) if i not in outliers]
    smoothed = [Pose(sq[i], sp[i], timestamp=traj[i].timestamp,
                     frame_id=traj[i].frame_id) for i in range(n)]
    for i in outliers:
        left = [a for a in inliers if a < i]
        right = [a for a in inliers if a > i]
        if left and right:
            a, b = max(left), min(right)
            smoothed[i] = interpolate_pose(smoothed[a], smoothed[b],
                                           (i - a) / (b - a),
                                           timestamp=traj[i].timestamp,
                                           frame_id=traj[i].frame_id)
        else:
            j = min(right) if right else max(left)
            smoothed[i] = Pose(smoothed[j].rotation, smoothed[j].translation,
                               timestamp=traj[i].timestamp,
                               frame_id=traj[i].frame_id)

    final_res = _residuals(
        pos, quats,
        np.stack([p.translation for p in smoothed]),
        np.stack([p.rotation for p in smoothed]),
        orientation_weight)
    outlier_frame_ids = sorted(
        traj[i].frame_id if traj[i].frame_id is not None else i for i in outliers)
    return FilterReport(
        smoothed=smoothed,
        outlier_ids=outlier_frame_ids,
        residuals=final_res,
        params={"window": window, "polyorder": polyorder,
                "orientation_weight": orientation_weight,
                "threshold": threshold, "threshold_value": thr})
