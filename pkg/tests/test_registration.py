import numpy as np
import pytest

from rdc.geometry import (PointCloud, SimilarityTransform, apply_similarity,
                          quat_angle, quat_from_rotvec)
from rdc.registration import (IcpParams, IcpResult, icp, transfer_attributes,
                              umeyama_align)
from rdc.synth import Plane, SceneSpec, Sphere, sample_cloud


def random_sim3(rng, scale_range=(0.5, 2.0), angle_max=np.pi * 0.9, t_scale=3.0):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return SimilarityTransform(rng.uniform(*scale_range),
                               quat_from_rotvec(rng.uniform(0, angle_max) * axis),
                               rng.normal(size=3) * t_scale)


def assert_transform_close(a, b, tol):
    assert abs(a.scale - b.scale) / b.scale < tol
    assert quat_angle(a.rotation, b.rotation) < tol
    assert np.linalg.norm(a.translation - b.translation) < tol


PLANE_SCENE = SceneSpec((
    Plane(center=(0, 0, 0), normal=(0, 0, 1), size=(10, 8)),
    Plane(center=(5, 0, 3), normal=(1, 0, 0.2), size=(6, 5)),
    Plane(center=(0, 4, 2), normal=(0, 1, 0.1), size=(7, 4)),
    Sphere(center=(-2, -1, 1.5), radius=1.2),
))


# ---------------------------------------------------------------------------
# umeyama
# ---------------------------------------------------------------------------

def test_umeyama_identity():
    rng = np.random.default_rng(0)
    pts = rng.normal(size=(20, 3))
    T = umeyama_align(pts, pts)
    assert_transform_close(T, SimilarityTransform.identity(), 1e-12)


def test_umeyama_pure_scale():
    rng = np.random.default_rng(1)
    pts = rng.normal(size=(15, 3))
    T = umeyama_align(pts, 2.0 * pts)
    assert abs(T.scale - 2.0) < 1e-12
    assert quat_angle(T.rotation, [1, 0, 0, 0]) < 1e-12
    assert np.linalg.norm(T.translation) < 1e-12


def test_umeyama_recovers_random_sim3():
    rng = np.random.default_rng(2)
    for _ in range(10):
        truth = random_sim3(rng)
        src = rng.normal(size=(50, 3)) * 4
        T = umeyama_align(src, truth.apply(src))
        assert_transform_close(T, truth, 1e-9)


def test_umeyama_rigid_mode_freezes_scale():
    rng = np.random.default_rng(3)
    src = rng.normal(size=(30, 3))
    truth = random_sim3(rng, scale_range=(1.0, 1.0))
    T = umeyama_align(src, truth.apply(src), estimate_scale=False)
    assert T.scale == 1.0
    assert_transform_close(T, truth, 1e-9)


def test_umeyama_rejects_too_few_and_degenerate():
    with pytest.raises(ValueError):
        umeyama_align(np.zeros((2, 3)), np.zeros((2, 3)))
    line = np.outer(np.arange(10.0), [1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        umeyama_align(line, line + 1.0)
    coincident = np.ones((5, 3))
    with pytest.raises(ValueError):
        umeyama_align(coincident, coincident)


def test_umeyama_reflection_guard():
    # a planar configuration where the best orthogonal map would reflect
    rng = np.random.default_rng(4)
    src = rng.normal(size=(40, 3))
    src[:, 2] = 0.0
    dst = src.copy()
    dst[:, 1] *= -1.0  # mirrored targets
    T = umeyama_align(src, dst)
    r = np.linalg.det(np.asarray([[1, 0, 0], [0, -1, 0], [0, 0, -1]], dtype=float))
    assert r == 1.0  # sanity of the test itself
    rot = T.matrix()[:3, :3] / T.scale
    assert np.linalg.det(rot) > 0.0


def test_umeyama_equivariance():
    rng = np.random.default_rng(5)
    src = rng.normal(size=(60, 3)) * 2
    dst = random_sim3(rng).apply(src) + rng.normal(size=(60, 3)) * 0.01
    g = random_sim3(rng, scale_range=(1.0, 1.0))  # rigid pre-transform
    base = umeyama_align(src, dst)
    moved = umeyama_align(g.apply(src), dst)
    assert_transform_close(moved, base.compose(g.inverse()), 1e-9)


# ---------------------------------------------------------------------------
# icp
# ---------------------------------------------------------------------------

def test_icp_identity_converges_first_iteration():
    cloud = sample_cloud(PLANE_SCENE, 500, 0.0, seed=0)
    result = icp(cloud, cloud)
    assert isinstance(result, IcpResult)
    assert result.iterations_used == 1
    assert result.rmse_history == [0.0]
    assert_transform_close(result.transform, SimilarityTransform.identity(), 1e-9)


def test_icp_recovers_known_se3():
    src = sample_cloud(PLANE_SCENE, 2000, 0.0, seed=1)
    truth = SimilarityTransform(1.0, quat_from_rotvec([0.05, -0.1, 0.13]),
                                np.array([0.1, 0.05, -0.08]))
    dst = apply_similarity(truth, src)
    result = icp(src, dst, params=IcpParams(max_iterations=100))
    assert quat_angle(result.transform.rotation, truth.rotation) < 1e-6
    assert np.linalg.norm(result.transform.translation - truth.translation) < 1e-6


def test_icp_point_to_plane_requires_normals():
    pts = PointCloud(np.random.default_rng(0).normal(size=(100, 3)))
    with pytest.raises(ValueError):
        icp(pts, pts, params=IcpParams(variant="point-to-plane"))


def test_icp_rejects_empty():
    empty = PointCloud(np.empty((0, 3)))
    full = PointCloud(np.zeros((5, 3)))
    with pytest.raises(ValueError):
        icp(empty, full)


def test_icp_with_outliers():
    rng = np.random.default_rng(2)
    base = sample_cloud(PLANE_SCENE, 1500, 0.0, seed=3)
    truth = SimilarityTransform(1.0, quat_from_rotvec([0.03, 0.08, -0.05]),
                                np.array([0.1, -0.05, 0.08]))
    dst = apply_similarity(truth, base)
    n_out = int(0.3 * len(base))
    src = PointCloud(np.concatenate([base.points, rng.uniform(-15, 15, (n_out, 3))]))
    result = icp(src, dst, params=IcpParams(rejection_multiplier=3.0,
                                            max_iterations=100))
    assert result.inlier_fraction < 1.0
    assert quat_angle(result.transform.rotation, truth.rotation) < 1e-3
    assert np.linalg.norm(result.transform.translation - truth.translation) < 1e-3


def test_icp_rmse_history_non_increasing():
    rng = np.random.default_rng(3)
    for seed in range(20):
        r = np.random.default_rng(seed)
        pts = r.uniform(-5, 5, (300, 3))
        truth = random_sim3(r, scale_range=(1, 1), angle_max=0.3, t_scale=0.2)
        result = icp(PointCloud(pts), PointCloud(truth.apply(pts)),
                     params=IcpParams(max_iterations=30))
        h = result.rmse_history
        assert all(b <= a for a, b in zip(h, h[1:]))
        assert result.iterations_used <= 30


def test_point_to_plane_converges_faster_than_point_to_point():
    src = sample_cloud(PLANE_SCENE, 2000, 0.0, seed=5)
    truth = SimilarityTransform(1.0, quat_from_rotvec([0.1, -0.05, 0.15]),
                                np.array([0.2, -0.1, 0.15]))
    dst = apply_similarity(truth, src)
    results = {}
    for variant in ("point-to-point", "point-to-plane"):
        res = icp(src, dst, params=IcpParams(variant=variant, max_iterations=100))
        assert quat_angle(res.transform.rotation, truth.rotation) < 1e-6
        results[variant] = res.iterations_used
    assert results["point-to-plane"] < results["point-to-point"]


def test_icp_composes_with_init():
    src = sample_cloud(PLANE_SCENE, 800, 0.0, seed=6)
    truth = SimilarityTransform(1.3, quat_from_rotvec([0.4, 0.2, -0.3]),
                                np.array([2.0, -1.0, 0.5]))
    dst = apply_similarity(truth, src)
    # an init close to the truth: the result must include it, not discard it
    init = SimilarityTransform(1.28, quat_from_rotvec([0.42, 0.21, -0.28]),
                               np.array([1.9, -1.05, 0.55]))
    result = icp(src, dst, init=init,
                 params=IcpParams(estimate_scale=True, max_iterations=100))
    assert_transform_close(result.transform, truth, 1e-6)


# ---------------------------------------------------------------------------
# attribute transfer
# ---------------------------------------------------------------------------

def make_grid_cloud():
    g = np.stack(np.meshgrid(np.arange(10.0), np.arange(10.0)), axis=-1).reshape(-1, 2)
    pts = np.concatenate([g, np.zeros((100, 1))], axis=1)
    normals = np.zeros((100, 3))
    normals[:, 2] = 1.0
    vis = [np.array([i]) for i in range(100)]
    return PointCloud(pts, normals=normals, visibility=vis)


def test_transfer_identity():
    src = make_grid_cloud()
    dst = PointCloud(src.points.copy())
    out = transfer_attributes(src, dst)
    np.testing.assert_array_equal(out.normals, src.normals)
    assert [v[0] for v in out.visibility] == list(range(100))


def test_transfer_with_small_jitter_keeps_own_attributes():
    rng = np.random.default_rng(0)
    src = make_grid_cloud()  # min spacing 1.0
    dst = PointCloud(src.points + rng.uniform(-0.05, 0.05, (100, 3)))
    out = transfer_attributes(src, dst)
    assert [v[0] for v in out.visibility] == list(range(100))


def test_transfer_single_point_source():
    src = PointCloud(np.array([[0.0, 0, 0]]),
                     normals=np.array([[0.0, 0, 1.0]]),
                     visibility=[np.array([7])])
    dst = PointCloud(np.random.default_rng(1).normal(size=(20, 3)))
    out = transfer_attributes(src, dst)
    assert all(v[0] == 7 for v in out.visibility)
    np.testing.assert_array_equal(out.normals, np.tile([[0.0, 0, 1.0]], (20, 1)))


def test_transfer_idempotent():
    src = make_grid_cloud()
    rng = np.random.default_rng(2)
    dst = PointCloud(src.points + rng.uniform(-0.03, 0.03, (100, 3)))
    once = transfer_attributes(src, dst)
    twice = transfer_attributes(src, once)
    np.testing.assert_array_equal(once.normals, twice.normals)
    assert all((a == b).all() for a, b in zip(once.visibility, twice.visibility))


def test_transfer_requires_nonempty_src_with_attributes():
    dst = PointCloud(np.zeros((3, 3)))
    with pytest.raises(ValueError):
        transfer_attributes(PointCloud(np.empty((0, 3))), dst)
    with pytest.raises(ValueError):
        transfer_attributes(PointCloud(np.zeros((3, 3))), dst)
