"""Rigid/similarity transforms, quaternion helpers and pinhole projection.

Conventions used throughout the package:

* quaternions are scalar-first ``(w, x, y, z)`` and canonicalized to the
  ``w >= 0`` hemisphere on construction,
* poses are camera-to-world,
* depth is z-depth (coordinate along the optical axis), not ray length,
* image axes: u right, v down, pixel centers at integer coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

_QUAT_NORM_TOL = 1e-9


# ---------------------------------------------------------------------------
# quaternion helpers (scalar-first, shape (4,) float64)
# ---------------------------------------------------------------------------

def quat_normalize(q):
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q)
    if n == 0.0:
        raise ValueError("zero quaternion cannot be normalized")
    return q / n


def quat_canonical(q):
    """Normalize and flip to the w >= 0 hemisphere."""
    q = quat_normalize(q)
    for c in q:
        if c < 0.0:
            return -q
        if c > 0.0:
            return q
    return q


def quat_multiply(a, b):
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_conjugate(q):
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_to_matrix(q):
    w, x, y, z = quat_normalize(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quat_from_matrix(m):
    """Rotation matrix to quaternion, largest-component branch for stability."""
    m = np.asarray(m, dtype=np.float64)
    t = np.trace(m)
    if t > 0.0:
        s = np.sqrt(t + 1.0) * 2.0
        q = np.array([0.25 * s,
                      (m[2, 1] - m[1, 2]) / s,
                      (m[0, 2] - m[2, 0]) / s,
                      (m[1, 0] - m[0, 1]) / s])
    elif m[0, 0] >= m[1, 1] and m[0, 0] >= m[2, 2]:
        s = np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        q = np.array([(m[2, 1] - m[1, 2]) / s,
                      0.25 * s,
                      (m[0, 1] + m[1, 0]) / s,
                      (m[0, 2] + m[2, 0]) / s])
    elif m[1, 1] >= m[2, 2]:
        s = np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
        q = np.array([(m[0, 2] - m[2, 0]) / s,
                      (m[0, 1] + m[1, 0]) / s,
                      0.25 * s,
                      (m[1, 2] + m[2, 1]) / s])
    else:
        s = np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        q = np.array([(m[1, 0] - m[0, 1]) / s,
                      (m[0, 2] + m[2, 0]) / s,
                      (m[1, 2] + m[2, 1]) / s,
                      0.25 * s])
    return quat_canonical(q)


def quat_from_rotvec(v):
    v = np.asarray(v, dtype=np.float64)
    angle = np.linalg.norm(v)
    if angle < 1e-15:
        return np.array([1.0, 0.0, 0.0, 0.0])
    axis = v / angle
    half = 0.5 * angle
    return quat_canonical(np.concatenate([[np.cos(half)], np.sin(half) * axis]))


def quat_to_rotvec(q):
    """Axis-angle vector; magnitude in [0, pi] thanks to w >= 0 canonical form."""
    w, x, y, z = quat_canonical(q)
    s = np.linalg.norm([x, y, z])
    if s < 1e-15:
        return np.zeros(3)
    angle = 2.0 * np.arctan2(s, w)
    return np.array([x, y, z]) / s * angle


def quat_angle(a, b):
    """Relative rotation angle between two unit quaternions, in [0, pi].

    atan2 form: precise for tiny angles where acos(dot) loses ~1e-8.
    """
    r = quat_multiply(quat_conjugate(np.asarray(a, dtype=np.float64)),
                      np.asarray(b, dtype=np.float64))
    return 2.0 * np.arctan2(np.linalg.norm(r[1:]), abs(r[0]))


def quat_slerp(a, b, t):
    a = quat_normalize(a)
    b = quat_normalize(b)
    d = float(np.dot(a, b))
    if d < 0.0:
        b = -b
        d = -d
    if d > 1.0 - 1e-12:
        return quat_canonical(a + t * (b - a))
    omega = np.arccos(d)
    so = np.sin(omega)
    return quat_canonical((np.sin((1.0 - t) * omega) / so) * a
                          + (np.sin(t * omega) / so) * b)


def rotate_points(q, points):
    """Rotate an (N, 3) array by quaternion q."""
    return np.asarray(points, dtype=np.float64) @ quat_to_matrix(q).T


def tangent_basis(normal):
    """Deterministic orthonormal (t1, t2) spanning the plane of `normal`.

    Uses the axis of the normal's smallest component crossed with the
    normal, so the basis is stable under small normal perturbations.
    """
    normal = np.asarray(normal, dtype=np.float64)
    axis = np.zeros(3)
    axis[np.argmin(np.abs(normal))] = 1.0
    t1 = np.cross(axis, normal)
    t1 /= np.linalg.norm(t1)
    t2 = np.cross(normal, t1)
    return t1, t2


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Pose:
    """Camera-to-world rigid transform with optional timestamp metadata."""

    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0, 0, 0]))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    timestamp: float | None = None
    frame_id: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "rotation", quat_canonical(self.rotation))
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls, timestamp=None, frame_id=None):
        return cls(timestamp=timestamp, frame_id=frame_id)

    @classmethod
    def from_matrix(cls, m, timestamp=None, frame_id=None):
        m = np.asarray(m, dtype=np.float64)
        return cls(quat_from_matrix(m[:3, :3]), m[:3, 3],
                   timestamp=timestamp, frame_id=frame_id)

    def matrix(self):
        m = np.eye(4)
        m[:3, :3] = quat_to_matrix(self.rotation)
        m[:3, 3] = self.translation
        return m

    def apply(self, points):
        """Map camera-frame points to world frame."""
        points = np.asarray(points, dtype=np.float64)
        return points @ quat_to_matrix(self.rotation).T + self.translation

    def inverse(self):
        qc = quat_conjugate(self.rotation)
        return Pose(qc, -rotate_points(qc, self.translation[None])[0],
                    timestamp=self.timestamp, frame_id=self.frame_id)

    def world_to_camera(self, points):
        """Map world-frame points into this camera's frame."""
        points = np.asarray(points, dtype=np.float64)
        return (points - self.translation) @ quat_to_matrix(self.rotation)


def compose(a: Pose, b: Pose) -> Pose:
    """Pose such that compose(a, b).apply(p) == a.apply(b.apply(p)).

    Timestamp and frame id are inherited from ``b`` so that composing a
    global alignment with a trajectory keeps per-frame metadata.
    """
    return Pose(quat_multiply(a.rotation, b.rotation),
                a.apply(b.translation[None])[0],
                timestamp=b.timestamp, frame_id=b.frame_id)


@dataclass(frozen=True)
class SimilarityTransform:
    """Scaled rigid transform: p -> scale * R @ p + t."""

    scale: float = 1.0
    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0, 0, 0]))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError(f"scale must be positive, got {self.scale}")
        object.__setattr__(self, "scale", float(self.scale))
        object.__setattr__(self, "rotation", quat_canonical(self.rotation))
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls):
        return cls()

    @classmethod
    def from_matrix(cls, m):
        m = np.asarray(m, dtype=np.float64)
        s = np.cbrt(np.linalg.det(m[:3, :3]))
        return cls(s, quat_from_matrix(m[:3, :3] / s), m[:3, 3])

    def matrix(self):
        m = np.eye(4)
        m[:3, :3] = self.scale * quat_to_matrix(self.rotation)
        m[:3, 3] = self.translation
        return m

    def apply(self, points):
        points = np.asarray(points, dtype=np.float64)
        return self.scale * (points @ quat_to_matrix(self.rotation).T) + self.translation

    def inverse(self):
        qc = quat_conjugate(self.rotation)
        return SimilarityTransform(
            1.0 / self.scale, qc,
            -rotate_points(qc, self.translation[None])[0] / self.scale)

    def compose(self, other: "SimilarityTransform") -> "SimilarityTransform":
        """self after other: (self @ other)(p) == self(other(p))."""
        return SimilarityTransform(
            self.scale * other.scale,
            quat_multiply(self.rotation, other.rotation),
            self.apply(other.translation[None])[0])

    def apply_pose(self, pose: Pose) -> Pose:
        """Map a camera-to-world pose into the transformed world frame."""
        return Pose(quat_multiply(self.rotation, pose.rotation),
                    self.apply(pose.translation[None])[0],
                    timestamp=pose.timestamp, frame_id=pose.frame_id)


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    def matrix(self):
        return np.array([[self.fx, 0, self.cx],
                         [0, self.fy, self.cy],
                         [0, 0, 1.0]])


@dataclass
class PointCloud:
    """3D points with optional unit normals, per-point visibility and colors."""

    points: np.ndarray
    normals: np.ndarray | None = None
    visibility: list | None = None
    colors: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.ascontiguousarray(self.points, dtype=np.float64).reshape(-1, 3)
        n = len(self.points)
        if self.normals is not None:
            self.normals = np.ascontiguousarray(self.normals, dtype=np.float64).reshape(-1, 3)
            if len(self.normals) != n:
                raise ValueError("normals length does not match points")
            norms = np.linalg.norm(self.normals, axis=1)
            if np.any(np.abs(norms - 1.0) > 1e-6):
                raise ValueError("normals must be unit length (within 1e-6)")
        if self.visibility is not None and len(self.visibility) != n:
            raise ValueError("visibility length does not match points")
        if self.colors is not None:
            self.colors = np.ascontiguousarray(self.colors, dtype=np.uint8).reshape(-1, 3)
            if len(self.colors) != n:
                raise ValueError("colors length does not match points")

    def __len__(self):
        return len(self.points)


def apply_similarity(transform: SimilarityTransform, cloud: PointCloud) -> PointCloud:
    """Transform cloud geometry; normals rotate (no scale) and stay unit."""
    normals = None
    if cloud.normals is not None:
        normals = rotate_points(transform.rotation, cloud.normals)
        normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return PointCloud(transform.apply(cloud.points), normals,
                      cloud.visibility, cloud.colors)


# ---------------------------------------------------------------------------
# pinhole projection
# ---------------------------------------------------------------------------

def project(K: CameraIntrinsics, p_cam):
    """Project one camera-frame point; returns (u, v, z, in_frame)."""
    x, y, z = np.asarray(p_cam, dtype=np.float64)
    if z <= 0.0:
        return 0.0, 0.0, z, False
    u = K.fx * x / z + K.cx
    v = K.fy * y / z + K.cy
    in_frame = (0.0 <= u < K.width) and (0.0 <= v < K.height)
    return u, v, z, in_frame


def project_points(K: CameraIntrinsics, pts_cam):
    """Vectorized projection of (N, 3) camera-frame points.

    Returns (u, v, z, in_frame) arrays; u/v are zero where z <= 0.
    """
    pts_cam = np.asarray(pts_cam, dtype=np.float64)
    z = pts_cam[:, 2]
    front = z > 0.0
    zsafe = np.where(front, z, 1.0)
    u = np.where(front, K.fx * pts_cam[:, 0] / zsafe + K.cx, 0.0)
    v = np.where(front, K.fy * pts_cam[:, 1] / zsafe + K.cy, 0.0)
    in_frame = front & (u >= 0) & (u < K.width) & (v >= 0) & (v < K.height)
    return u, v, z, in_frame


def unproject(K: CameraIntrinsics, u, v, z):
    """Pixel coordinates and z-depth back to a camera-frame point."""
    return np.array([(u - K.cx) * z / K.fx, (v - K.cy) * z / K.fy, z])


def interpolate_pose(a: Pose, b: Pose, t: float, timestamp=None, frame_id=None) -> Pose:
    """Linear position / slerp orientation blend between two poses."""
    return Pose(quat_slerp(a.rotation, b.rotation, t),
                (1.0 - t) * a.translation + t * b.translation,
                timestamp=timestamp, frame_id=frame_id)


def look_at(position, target, up=(0.0, 0.0, 1.0), timestamp=None, frame_id=None) -> Pose:
    """Camera-to-world pose at `position` with +z (optical axis) toward `target`.

    Image v axis points as close to -up as the viewing direction allows.
    """
    position = np.asarray(position, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - position
    n = np.linalg.norm(forward)
    if n < 1e-12:
        raise ValueError("camera position coincides with look-at target")
    forward = forward / n
    up = np.asarray(up, dtype=np.float64)
    down = -(up - np.dot(up, forward) * forward)
    dn = np.linalg.norm(down)
    if dn < 1e-9:
        # viewing straight along `up`: fall back to an arbitrary stable axis
        alt = np.array([1.0, 0.0, 0.0])
        down = -(alt - np.dot(alt, forward) * forward)
        dn = np.linalg.norm(down)
    down = down / dn
    right = np.cross(down, forward)
    m = np.column_stack([right, down, forward])
    return Pose(quat_from_matrix(m), position, timestamp=timestamp, frame_id=frame_id)
