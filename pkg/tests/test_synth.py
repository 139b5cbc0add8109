import numpy as np
import pytest

from rdc.geometry import CameraIntrinsics, Pose, quat_from_rotvec
from rdc.synth import (Box, Plane, SceneSpec, Sphere, analytic_depth,
                       make_trajectory, sample_cloud, two_plane_scene)

K = CameraIntrinsics(fx=200.0, fy=200.0, cx=80.0, cy=60.0, width=160, height=120)


def test_scene_requires_primitive():
    with pytest.raises(ValueError):
        SceneSpec(())


def test_fronto_parallel_plane_constant_depth():
    scene = SceneSpec((Plane(center=(0, 0, 5.0), normal=(0, 0, 1), size=(100, 100)),))
    pose = Pose()  # camera at origin looking along +z
    depth = analytic_depth(scene, pose, K)
    np.testing.assert_allclose(depth.values, 5.0, atol=1e-12)


def test_sphere_center_pixel_depth():
    scene = SceneSpec((Sphere(center=(0, 0, 10.0), radius=2.0),))
    depth = analytic_depth(scene, Pose(), K)
    assert abs(depth.values[60, 80] - 8.0) < 1e-9


def test_tilted_plane_matches_hand_formula():
    # plane through (0,0,5) with normal n: ray p = t*(dx,dy,1) hits at
    # t = n.c / n.d; z-depth equals t by construction of the ray
    n = np.array([0.3, -0.2, 1.0])
    n = n / np.linalg.norm(n)
    c = np.array([0.0, 0.0, 5.0])
    scene = SceneSpec((Plane(center=c, normal=n, size=(1000, 1000)),))
    depth = analytic_depth(scene, Pose(), K)
    for (px, py) in [(80, 60), (10, 10), (150, 100), (40, 90), (120, 20)]:
        d = np.array([(px - K.cx) / K.fx, (py - K.cy) / K.fy, 1.0])
        t = np.dot(n, c) / np.dot(n, d)
        assert abs(depth.values[py, px] - t) < 1e-9


def test_box_depth_front_face():
    scene = SceneSpec((Box(center=(0, 0, 10.0), size=(4, 4, 4)),))
    depth = analytic_depth(scene, Pose(), K)
    assert abs(depth.values[60, 80] - 8.0) < 1e-12


def test_invalid_pixels_are_zero():
    scene = SceneSpec((Sphere(center=(0, 0, 10.0), radius=0.5),))
    depth = analytic_depth(scene, Pose(), K)
    assert depth.values[0, 0] == 0.0
    assert not depth.valid_mask[0, 0]


# ---------------------------------------------------------------------------
# cloud sampling
# ---------------------------------------------------------------------------

def test_plane_cloud_satisfies_plane_equation():
    plane = Plane(center=(1.0, 2.0, 3.0), normal=(0.1, 0.2, 1.0), size=(4, 6))
    cloud = sample_cloud(SceneSpec((plane,)), 500, 0.0, seed=0)
    d = (cloud.points - plane.center) @ plane.normal
    np.testing.assert_allclose(d, 0.0, atol=1e-12)
    np.testing.assert_allclose(cloud.normals, np.tile(plane.normal, (500, 1)),
                               atol=1e-12)


def test_sample_cloud_deterministic():
    scene = two_plane_scene()
    a = sample_cloud(scene, 1000, 0.01, seed=3)
    b = sample_cloud(scene, 1000, 0.01, seed=3)
    np.testing.assert_array_equal(a.points, b.points)
    np.testing.assert_array_equal(a.normals, b.normals)


def test_sphere_cloud_radius_and_normals():
    sphere = Sphere(center=(1, -2, 4.0), radius=3.0)
    cloud = sample_cloud(SceneSpec((sphere,)), 800, 0.0, seed=1)
    r = np.linalg.norm(cloud.points - sphere.center, axis=1)
    np.testing.assert_allclose(r, 3.0, atol=1e-12)
    outward = (cloud.points - sphere.center) / 3.0
    dots = np.sum(outward * cloud.normals, axis=1)
    assert np.all(dots >= 1 - 1e-9)


def test_box_cloud_on_surface():
    box = Box(center=(0, 0, 0), size=(2, 4, 6))
    cloud = sample_cloud(SceneSpec((box,)), 600, 0.0, seed=2)
    half = np.array([1.0, 2.0, 3.0])
    at_face = np.isclose(np.abs(cloud.points), half).any(axis=1)
    assert at_face.all()
    inside = (np.abs(cloud.points) <= half + 1e-12).all(axis=1)
    assert inside.all()


# ---------------------------------------------------------------------------
# trajectories
# ---------------------------------------------------------------------------

def test_dolly_constant_displacement():
    n = 25
    traj = make_trajectory("dolly", {"start": (0, 0, 0), "end": (0, 0, 12.0)}, n)
    pos = np.stack([p.translation for p in traj])
    steps = np.diff(pos, axis=0)
    np.testing.assert_allclose(np.linalg.norm(steps, axis=1), 12.0 / (n - 1),
                               rtol=1e-12)


def test_orbit_equidistant_from_pivot():
    pivot = np.array([1.0, 2.0, 0.0])
    traj = make_trajectory("orbit", {"pivot": pivot, "radius": 4.0, "height": 3.0}, 60)
    d = [np.linalg.norm(p.translation - pivot) for p in traj]
    np.testing.assert_allclose(d, 5.0, atol=1e-12)
    # looking at the pivot: forward axis points from camera to pivot
    for p in traj[::7]:
        fwd = p.matrix()[:3, 2]
        to_pivot = pivot - p.translation
        to_pivot /= np.linalg.norm(to_pivot)
        np.testing.assert_allclose(fwd, to_pivot, atol=1e-12)


def test_grid_lattice():
    traj = make_trajectory("grid", {"rows": 3, "cols": 3, "origin": (0, 0, 10.0),
                                    "spacing": 2.0}, 9)
    assert len(traj) == 9
    pts = {tuple(np.round(p.translation[:2], 9)) for p in traj}
    expected = {(c * 2.0, r * 2.0) for r in range(3) for c in range(3)}
    assert pts == expected


def test_grid_frame_count_mismatch():
    with pytest.raises(ValueError):
        make_trajectory("grid", {"rows": 3, "cols": 3}, 8)


def test_trajectory_needs_two_frames():
    with pytest.raises(ValueError):
        make_trajectory("dolly", {}, 1)


def test_scene_round_trip_dict():
    scene = SceneSpec((Plane((0, 0, 1), (0, 0, 1), (2, 3)),
                       Sphere((1, 2, 3), 0.5),
                       Box((0, 1, 0), (1, 1, 2), quat_from_rotvec([0.1, 0, 0]))))
    again = SceneSpec.from_dict(scene.to_dict())
    assert len(again.primitives) == 3
    depth_a = analytic_depth(scene, Pose(), K)
    depth_b = analytic_depth(again, Pose(), K)
    np.testing.assert_array_equal(depth_a.values, depth_b.values)
