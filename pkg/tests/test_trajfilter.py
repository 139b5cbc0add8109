import numpy as np
import pytest

from rdc.geometry import Pose, quat_angle, quat_from_rotvec, quat_slerp
from rdc.trajfilter import filter_trajectory, savgol_smooth


def sliding_lsq_oracle(series, window, polyorder):
    """Direct normal-equations solve per window, boundary fit at own offset."""
    series = np.asarray(series, dtype=np.float64)
    n = len(series)
    h = window // 2
    out = np.empty_like(series)
    x = np.arange(window) - h
    A = np.vander(x, polyorder + 1, increasing=True)
    AtA_inv_At = np.linalg.solve(A.T @ A, A.T)
    for i in range(n):
        if i < h:
            idx, t = np.arange(window), i - h
        elif i >= n - h:
            idx, t = np.arange(n - window, n), i - (n - window) - h
        else:
            idx, t = np.arange(i - h, i + h + 1), 0
        coeffs = AtA_inv_At @ series[idx]
        out[i] = np.polynomial.polynomial.polyval(t, coeffs)
    return out


def test_constant_series_unchanged():
    series = np.full((30, 3), 7.5)
    np.testing.assert_allclose(savgol_smooth(series, 5, 2), series, atol=1e-12)


def test_quadratic_reproduced_exactly():
    t = np.arange(40, dtype=np.float64)
    series = np.stack([t ** 2, 3 * t ** 2 - t, np.full_like(t, 2.0)], axis=1)
    out = savgol_smooth(series, 5, 2)
    np.testing.assert_allclose(out, series, atol=1e-9)


def test_noisy_sine_matches_lsq_oracle():
    rng = np.random.default_rng(0)
    t = np.linspace(0, 4 * np.pi, 100)
    series = np.sin(t)[:, None] + rng.normal(0, 0.1, (100, 1))
    out = savgol_smooth(series, 9, 3)
    oracle = sliding_lsq_oracle(series, 9, 3)
    np.testing.assert_allclose(out, oracle, atol=1e-9)


def test_savgol_validation():
    series = np.zeros((20, 2))
    with pytest.raises(ValueError):
        savgol_smooth(series, 4, 2)  # even window
    with pytest.raises(ValueError):
        savgol_smooth(series, 5, 5)  # window <= polyorder
    with pytest.raises(ValueError):
        savgol_smooth(np.zeros((3, 2)), 5, 2)  # too short


# ---------------------------------------------------------------------------
# trajectory filtering
# ---------------------------------------------------------------------------

def polynomial_trajectory(n=60):
    t = np.arange(n, dtype=np.float64)
    pos = np.stack([0.1 * t + 0.002 * t ** 2,
                    1.0 - 0.05 * t,
                    0.003 * t ** 2], axis=1)
    return [Pose(np.array([1.0, 0, 0, 0]), pos[i], timestamp=i / 30.0, frame_id=i)
            for i in range(n)]


def smooth_arc_trajectory(n=300, rotate=True):
    t = np.linspace(0, 2 * np.pi, n)
    pos = np.stack([5 * np.cos(t), 5 * np.sin(t), 0.2 * t], axis=1)
    poses = []
    for i in range(n):
        rv = [0, 0, t[i] * 0.3] if rotate else [0, 0, 0]
        poses.append(Pose(quat_from_rotvec(rv), pos[i], timestamp=i / 30.0,
                          frame_id=i))
    return poses


def test_polynomial_trajectory_no_outliers_exact():
    traj = polynomial_trajectory()
    report = filter_trajectory(traj, window=9, polyorder=3, threshold="auto")
    assert report.outlier_ids == []
    for raw, smooth in zip(traj, report.smoothed):
        np.testing.assert_allclose(smooth.translation, raw.translation, atol=1e-9)
        assert quat_angle(smooth.rotation, raw.rotation) < 1e-9


def test_teleport_outlier_detected_alone():
    traj = smooth_arc_trajectory()
    j = 137
    bad = traj[j]
    traj[j] = Pose(bad.rotation, bad.translation + np.array([10.0, 0, 0]),
                   timestamp=bad.timestamp, frame_id=bad.frame_id)
    report = filter_trajectory(traj, threshold=1.0)
    assert report.outlier_ids == [j]
    # replacement lies between (and close to) the true neighbors
    a = report.smoothed[j - 1].translation
    b = report.smoothed[j + 1].translation
    r = report.smoothed[j].translation
    seg = b - a
    t = np.dot(r - a, seg) / np.dot(seg, seg)
    assert 0.0 <= t <= 1.0
    off_segment = np.linalg.norm(r - (a + t * seg))
    assert off_segment < 1e-9


def test_infinite_threshold_no_outliers():
    traj = smooth_arc_trajectory(100)
    traj[40] = Pose(traj[40].rotation, traj[40].translation + 50.0,
                    timestamp=traj[40].timestamp, frame_id=40)
    report = filter_trajectory(traj, threshold=np.inf)
    assert report.outlier_ids == []


def test_outlier_count_monotone_in_threshold():
    rng = np.random.default_rng(1)
    traj = smooth_arc_trajectory(200)
    for j in (30, 77, 140):
        traj[j] = Pose(traj[j].rotation,
                       traj[j].translation + rng.normal(size=3) * rng.uniform(2, 12),
                       timestamp=traj[j].timestamp, frame_id=j)
    counts = [len(filter_trajectory(traj, threshold=thr).outlier_ids)
              for thr in (0.2, 0.5, 1.0, 3.0, 20.0)]
    assert counts == sorted(counts, reverse=True)


def test_smoothed_quaternions_unit():
    traj = smooth_arc_trajectory(80)
    report = filter_trajectory(traj, threshold="auto")
    for p in report.smoothed:
        assert abs(np.linalg.norm(p.rotation) - 1) < 1e-9


def test_interpolated_pose_on_slerp_arc():
    traj = smooth_arc_trajectory(120)
    j = 60
    traj[j] = Pose(quat_from_rotvec([1.2, 0, 0]),
                   traj[j].translation + np.array([0, 20.0, 0]),
                   timestamp=traj[j].timestamp, frame_id=j)
    report = filter_trajectory(traj, threshold=1.0)
    assert j in report.outlier_ids
    a, b, r = report.smoothed[j - 1], report.smoothed[j + 1], report.smoothed[j]
    assert quat_angle(r.rotation, quat_slerp(a.rotation, b.rotation, 0.5)) < 1e-9


def test_residuals_nonnegative_and_sized():
    traj = smooth_arc_trajectory(90)
    report = filter_trajectory(traj)
    assert len(report.residuals) == 90
    assert np.all(report.residuals >= 0)


def test_rejects_short_trajectory():
    with pytest.raises(ValueError):
        filter_trajectory(polynomial_trajectory(5), window=9)


def test_all_outliers_is_error():
    rng = np.random.default_rng(2)
    traj = [Pose(np.array([1.0, 0, 0, 0]), rng.normal(size=3) * 100, frame_id=i)
            for i in range(20)]
    with pytest.raises(ValueError):
        filter_trajectory(traj, window=9, threshold=1e-12)


def test_position_only_residual_with_zero_weight():
    # pure orientation glitch is invisible at orientation_weight=0
    traj = smooth_arc_trajectory(100, rotate=False)
    j = 50
    traj[j] = Pose(quat_from_rotvec([0, 1.5, 0]), traj[j].translation,
                   timestamp=traj[j].timestamp, frame_id=j)
    report = filter_trajectory(traj, orientation_weight=0.0, threshold=0.5)
    assert report.outlier_ids == []
    report = filter_trajectory(traj, orientation_weight=1.0, threshold=0.5)
    assert report.outlier_ids == [j]
