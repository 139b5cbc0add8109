import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from rdc.geometry import (CameraIntrinsics, PointCloud, Pose,
                          SimilarityTransform, apply_similarity, compose,
                          interpolate_pose, project, project_points,
                          quat_angle, quat_from_matrix, quat_from_rotvec,
                          quat_multiply, quat_slerp, quat_to_matrix,
                          quat_to_rotvec, tangent_basis, unproject)


def random_pose(rng, t_scale=5.0):
    q = rng.normal(size=4)
    return Pose(q / np.linalg.norm(q), rng.uniform(-t_scale, t_scale, 3))


K = CameraIntrinsics(fx=100.0, fy=100.0, cx=50.0, cy=50.0, width=100, height=100)


# ---------------------------------------------------------------------------
# quaternion helpers against scipy as an independent oracle
# ---------------------------------------------------------------------------

def test_quat_matrix_matches_scipy():
    rng = np.random.default_rng(0)
    for _ in range(50):
        q = rng.normal(size=4)
        q /= np.linalg.norm(q)
        ours = quat_to_matrix(q)
        theirs = Rotation.from_quat([q[1], q[2], q[3], q[0]]).as_matrix()
        np.testing.assert_allclose(ours, theirs, atol=1e-12)
        back = quat_from_matrix(ours)
        assert quat_angle(back, q) < 1e-9


def test_quat_multiply_matches_matrix_product():
    rng = np.random.default_rng(1)
    for _ in range(50):
        a = rng.normal(size=4)
        a /= np.linalg.norm(a)
        b = rng.normal(size=4)
        b /= np.linalg.norm(b)
        np.testing.assert_allclose(quat_to_matrix(quat_multiply(a, b)),
                                   quat_to_matrix(a) @ quat_to_matrix(b),
                                   atol=1e-12)


def test_rotvec_round_trip_matches_scipy():
    rng = np.random.default_rng(2)
    for _ in range(50):
        v = rng.normal(size=3)
        v *= rng.uniform(0, np.pi - 1e-6) / np.linalg.norm(v)
        q = quat_from_rotvec(v)
        theirs = Rotation.from_rotvec(v).as_quat()
        assert quat_angle(q, [theirs[3], *theirs[:3]]) < 1e-9
        np.testing.assert_allclose(quat_to_rotvec(q), v, atol=1e-9)


def test_slerp_endpoints_and_midpoint():
    a = quat_from_rotvec([0, 0, 0])
    b = quat_from_rotvec([0, 0, np.pi / 2])
    assert quat_angle(quat_slerp(a, b, 0.0), a) < 1e-12
    assert quat_angle(quat_slerp(a, b, 1.0), b) < 1e-12
    mid = quat_slerp(a, b, 0.5)
    np.testing.assert_allclose(quat_to_rotvec(mid), [0, 0, np.pi / 4], atol=1e-12)


def test_tangent_basis_orthonormal():
    rng = np.random.default_rng(3)
    for _ in range(30):
        n = rng.normal(size=3)
        n /= np.linalg.norm(n)
        t1, t2 = tangent_basis(n)
        for v in (t1, t2):
            assert abs(np.linalg.norm(v) - 1) < 1e-12
            assert abs(np.dot(v, n)) < 1e-12
        assert abs(np.dot(t1, t2)) < 1e-12


# ---------------------------------------------------------------------------
# Pose
# ---------------------------------------------------------------------------

def test_pose_canonical_hemisphere():
    p = Pose(np.array([-1.0, 0, 0, 0]), np.zeros(3))
    assert p.rotation[0] >= 0
    assert abs(np.linalg.norm(p.rotation) - 1) < 1e-9


def test_compose_identity_and_inverse():
    rng = np.random.default_rng(4)
    for _ in range(20):
        p = random_pose(rng)
        ident = compose(Pose.identity(), p)
        assert quat_angle(ident.rotation, p.rotation) < 1e-9
        np.testing.assert_allclose(ident.translation, p.translation, atol=1e-9)

        back = compose(p, p.inverse())
        assert quat_angle(back.rotation, [1, 0, 0, 0]) < 1e-9
        assert np.linalg.norm(back.translation) < 1e-9


def test_compose_matches_homogeneous_matrix_oracle():
    # worked case: rotation about z by 90 deg plus unit-x offset, then pure rotation
    a = Pose(quat_from_rotvec([0, 0, np.pi / 2]), [1.0, 0, 0])
    b = Pose(quat_from_rotvec([0, 0, np.pi / 2]), [0.0, 0, 0])
    c = compose(a, b)
    p = np.array([1.0, 0, 0])
    expected = (a.matrix() @ b.matrix() @ np.append(p, 1.0))[:3]
    np.testing.assert_allclose(c.apply(p[None])[0], expected, atol=1e-12)
    np.testing.assert_allclose(c.apply(p[None])[0], a.apply(b.apply(p[None]))[0],
                               atol=1e-12)

    rng = np.random.default_rng(5)
    for _ in range(20):
        a, b = random_pose(rng), random_pose(rng)
        c = compose(a, b)
        np.testing.assert_allclose(c.matrix(), a.matrix() @ b.matrix(), atol=1e-12)


def test_compose_associative():
    rng = np.random.default_rng(6)
    for _ in range(20):
        a, b, c = (random_pose(rng) for _ in range(3))
        left = compose(compose(a, b), c)
        right = compose(a, compose(b, c))
        assert quat_angle(left.rotation, right.rotation) < 1e-9
        np.testing.assert_allclose(left.translation, right.translation, atol=1e-9)


# ---------------------------------------------------------------------------
# SimilarityTransform
# ---------------------------------------------------------------------------

def test_similarity_rejects_nonpositive_scale():
    with pytest.raises(ValueError):
        SimilarityTransform(scale=0.0)
    with pytest.raises(ValueError):
        SimilarityTransform(scale=-2.0)


def test_similarity_inverse_round_trip():
    rng = np.random.default_rng(7)
    for _ in range(20):
        q = rng.normal(size=4)
        T = SimilarityTransform(rng.uniform(0.1, 10), q / np.linalg.norm(q),
                                rng.normal(size=3))
        pts = rng.normal(size=(30, 3))
        back = T.inverse().apply(T.apply(pts))
        np.testing.assert_allclose(back, pts, rtol=1e-9, atol=1e-12)


def test_apply_similarity_identity_and_pure_scale():
    cloud = PointCloud(np.array([[1.0, 1, 1]]))
    out = apply_similarity(SimilarityTransform.identity(), cloud)
    np.testing.assert_array_equal(out.points, cloud.points)

    out = apply_similarity(SimilarityTransform(scale=2.0), cloud)
    np.testing.assert_allclose(out.points, [[2.0, 2, 2]], atol=1e-15)


def test_apply_similarity_matches_matrix_oracle():
    rng = np.random.default_rng(8)
    q = rng.normal(size=4)
    T = SimilarityTransform(rng.uniform(0.5, 2), q / np.linalg.norm(q),
                            rng.normal(size=3))
    pts = rng.normal(size=(100, 3))
    cloud = PointCloud(pts)
    out = apply_similarity(T, cloud)
    hom = np.concatenate([pts, np.ones((100, 1))], axis=1)
    expected = (T.matrix() @ hom.T).T[:, :3]
    np.testing.assert_allclose(out.points, expected, atol=1e-12)


def test_apply_similarity_keeps_normals_unit_and_visibility():
    rng = np.random.default_rng(9)
    normals = rng.normal(size=(10, 3))
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    vis = [np.array([i]) for i in range(10)]
    cloud = PointCloud(rng.normal(size=(10, 3)), normals=normals, visibility=vis)
    out = apply_similarity(SimilarityTransform(scale=3.0), cloud)
    np.testing.assert_allclose(np.linalg.norm(out.normals, axis=1), 1.0, atol=1e-12)
    assert out.visibility is vis


def test_similarity_preserves_distance_ratios():
    rng = np.random.default_rng(10)
    q = rng.normal(size=4)
    s = 3.7
    T = SimilarityTransform(s, q / np.linalg.norm(q), rng.normal(size=3))
    pts = rng.normal(size=(20, 3))
    out = T.apply(pts)
    d_in = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
    d_out = np.linalg.norm(out[:, None] - out[None], axis=-1)
    mask = d_in > 1e-9
    np.testing.assert_allclose(d_out[mask] / d_in[mask], s, rtol=1e-9)


# ---------------------------------------------------------------------------
# projection
# ---------------------------------------------------------------------------

def test_project_optical_axis():
    u, v, z, ok = project(K, [0, 0, 5.0])
    assert (u, v, z) == (K.cx, K.cy, 5.0)
    assert ok


def test_project_behind_camera_flagged():
    *_, z, ok = project(K, [0, 0, -1.0])
    assert not ok and z == -1.0


def test_project_hand_computed():
    u, v, z, ok = project(K, [1.0, 2.0, 4.0])
    assert (u, v, z) == (75.0, 100.0, 4.0)
    assert not ok  # v == 100 is outside [0, height)


def test_project_unproject_identity():
    rng = np.random.default_rng(11)
    for _ in range(100):
        u, v = rng.uniform(0, 99, 2)
        z = rng.uniform(0.1, 50)
        p = unproject(K, u, v, z)
        u2, v2, z2, ok = project(K, p)
        assert ok
        assert abs(u2 - u) < 1e-9 and abs(v2 - v) < 1e-9 and abs(z2 - z) < 1e-12


def test_project_points_matches_scalar():
    rng = np.random.default_rng(12)
    pts = rng.normal(size=(200, 3)) * 3
    u, v, z, ok = project_points(K, pts)
    for i in range(len(pts)):
        su, sv, sz, sok = project(K, pts[i])
        assert ok[i] == sok
        if sok:
            assert u[i] == su and v[i] == sv and z[i] == sz


def test_intrinsics_validation():
    with pytest.raises(ValueError):
        CameraIntrinsics(fx=-1, fy=1, cx=0, cy=0, width=10, height=10)
    with pytest.raises(ValueError):
        CameraIntrinsics(fx=1, fy=1, cx=10, cy=0, width=10, height=10)


def test_interpolate_pose_midpoint():
    a = Pose(quat_from_rotvec([0, 0, 0]), [0.0, 0, 0])
    b = Pose(quat_from_rotvec([0, 0, np.pi / 2]), [2.0, 0, 0])
    mid = interpolate_pose(a, b, 0.5)
    np.testing.assert_allclose(mid.translation, [1.0, 0, 0], atol=1e-12)
    np.testing.assert_allclose(quat_to_rotvec(mid.rotation), [0, 0, np.pi / 4],
                               atol=1e-12)


def test_pointcloud_rejects_non_unit_normals():
    with pytest.raises(ValueError):
        PointCloud(np.zeros((2, 3)), normals=np.array([[1.0, 0, 0], [0, 0, 2.0]]))
