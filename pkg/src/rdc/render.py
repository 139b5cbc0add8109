"""Ground-truth depth map generation: splat creation, occlusion rendering
and point rendering with occlusion-based discard.

Depth maps store z-depth in meters with 0.0 as the invalid sentinel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from . import kernels
from .geometry import (CameraIntrinsics, PointCloud, Pose, project_points,
                       tangent_basis)

_NEAR = 1e-6


@dataclass
class DepthMap:
    width: int
    height: int
    values: np.ndarray  # (H, W) float64 meters, 0.0 = invalid

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (self.height, self.width):
            raise ValueError(f"value grid {self.values.shape} does not match "
                             f"{self.height}x{self.width}")

    @classmethod
    def empty(cls, K: CameraIntrinsics):
        return cls(K.width, K.height, np.zeros((K.height, K.width)))

    @property
    def valid_mask(self):
        return self.values > 0.0

    def valid_count(self):
        return int(self.valid_mask.sum())


@dataclass
class TriangleMesh:
    vertices: np.ndarray  # (M, 3) float64
    triangles: np.ndarray  # (K, 3) int vertex indices

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.ascontiguousarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if len(self.triangles) and self.triangles.max() >= len(self.vertices):
            bad = int(np.argmax(self.triangles.max(axis=1) >= len(self.vertices)))
            raise ValueError(f"triangle {bad} references vertex "
                             f"{int(self.triangles[bad].max())} out of range")

    def drop_degenerate(self):
        """Remove zero-area triangles in place; returns the number dropped."""
        v = self.vertices
        a = v[self.triangles[:, 1]] - v[self.triangles[:, 0]]
        b = v[self.triangles[:, 2]] - v[self.triangles[:, 0]]
        area = np.linalg.norm(np.cross(a, b), axis=1)
        keep = area > 0.0
        dropped = int((~keep).sum())
        self.triangles = self.triangles[keep]
        return dropped


@dataclass(frozen=True)
class Splat:
    """Oriented square centered on a point, used as occluder geometry."""

    center: np.ndarray
    normal: np.ndarray
    half_size: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=np.float64))
        n = np.asarray(self.normal, dtype=np.float64)
        nn = np.linalg.norm(n)
        if abs(nn - 1.0) > 1e-6:
            raise ValueError("splat normal must be unit length")
        object.__setattr__(self, "normal", n)
        if self.half_size <= 0:
            raise ValueError("splat half_size must be positive")

    def corners(self):
        t1, t2 = tangent_basis(self.normal)
        h = self.half_size
        c = self.center
        return np.array([c - h * t1 - h * t2, c + h * t1 - h * t2,
                         c + h * t1 + h * t2, c - h * t1 + h * t2])


def create_splats(cloud: PointCloud, mesh: TriangleMesh | None = None,
                  isolation_radius: float = 0.5,
                  half_size="auto") -> list:
    """One splat per point not represented by the occlusion mesh.

    With no mesh every point gets a splat. half_size='auto' uses twice the
    median nearest-neighbor distance of the cloud.
    """
    if cloud.normals is None:
        raise ValueError("splat creation requires point normals")
    points = cloud.points
    if mesh is not None and len(mesh.vertices):
        d, _ = cKDTree(mesh.vertices).query(points)
        isolated = d > isolation_radius
    else:
        isolated = np.ones(len(points), dtype=bool)
    if half_size == "auto":
        if len(points) < 2:
            raise ValueError("half_size='auto' needs at least 2 points")
        nn, _ = cKDTree(points).query(points, k=2)
        half_size = 2.0 * float(np.median(nn[:, 1]))
    half_size = float(half_size)
    return [Splat(points[i], cloud.normals[i], half_size)
            for i in np.flatnonzero(isolated)]


def _clip_near(tri_cam):
    """Clip camera-frame triangles (T, 3, 3) against z = _NEAR.

    Fully-in-front triangles pass through vectorized; the few straddling
    ones are re-triangulated individually.
    """
    z = tri_cam[:, :, 2]
    n_in = (z > _NEAR).sum(axis=1)
    keep = tri_cam[n_in == 3]
    crossing = np.flatnonzero((n_in > 0) & (n_in < 3))
    if crossing.size == 0:
        return keep
    extra = []
    for t in crossing:
        poly = []
        verts = tri_cam[t]
        for i in range(3):
            a, b = verts[i], verts[(i + 1) % 3]
            ain, bin_ = a[2] > _NEAR, b[2] > _NEAR
            if ain:
                poly.append(a)
            if ain != bin_:
                s = (_NEAR - a[2]) / (b[2] - a[2])
                poly.append(a + s * (b - a))
        for i in range(1, len(poly) - 1):  # fan-triangulate the clipped polygon
            extra.append([poly[0], poly[i], poly[i + 1]])
    if extra:
        keep = np.concatenate([keep, np.asarray(extra)])
    return keep


def _rasterize_geometry(tri_world, pose: Pose, K: CameraIntrinsics,
                        zbuf: np.ndarray):
    """Project world-space triangles (T, 3, 3) and min-z rasterize into zbuf."""
    if len(tri_world) == 0:
        return
    flat = pose.world_to_camera(tri_world.reshape(-1, 3))
    tri_cam = _clip_near(flat.reshape(-1, 3, 3))
    if len(tri_cam) == 0:
        return
    z = tri_cam[:, :, 2]
    u = K.fx * tri_cam[:, :, 0] / z + K.cx
    v = K.fy * tri_cam[:, :, 1] / z + K.cy
    # cheap cull of triangles whose bbox misses the image
    visible = (u.max(axis=1) >= 0) & (u.min(axis=1) < K.width) \
        & (v.max(axis=1) >= 0) & (v.min(axis=1) < K.height)
    if not visible.any():
        return
    kernels.rasterize_triangles(np.ascontiguousarray(u[visible]),
                                np.ascontiguousarray(v[visible]),
                                np.ascontiguousarray(1.0 / z[visible]),
                                K.width, K.height, zbuf)


def tangent_bases(normals):
    """Vectorized tangent_basis over (S, 3) unit normals."""
    normals = np.asarray(normals, dtype=np.float64)
    axis = np.zeros_like(normals)
    axis[np.arange(len(normals)), np.argmin(np.abs(normals), axis=1)] = 1.0
    t1 = np.cross(axis, normals)
    t1 /= np.linalg.norm(t1, axis=1, keepdims=True)
    t2 = np.cross(normals, t1)
    return t1, t2


def splat_triangles(splats: list) -> np.ndarray:
    """World-space triangles (2S, 3, 3) of the splat quads, two per splat."""
    if not splats:
        return np.empty((0, 3, 3))
    centers = np.array([s.center for s in splats])
    normals = np.array([s.normal for s in splats])
    half = np.array([s.half_size for s in splats])[:, None]
    t1, t2 = tangent_bases(normals)
    a = centers - half * t1 - half * t2
    b = centers + half * t1 - half * t2
    c = centers + half * t1 + half * t2
    d = centers - half * t1 + half * t2
    return np.concatenate([np.stack([a, b, c], axis=1),
                           np.stack([a, c, d], axis=1)])


def render_occlusion(mesh: TriangleMesh | None, splats: list,
                     pose: Pose, K: CameraIntrinsics) -> DepthMap:
    """Z-buffer the occlusion geometry (mesh triangles + splat quads)."""
    zbuf = np.full((K.height, K.width), np.inf)
    if mesh is not None and len(mesh.triangles):
        _rasterize_geometry(mesh.vertices[mesh.triangles], pose, K, zbuf)
    if splats:
        _rasterize_geometry(splat_triangles(splats), pose, K, zbuf)
    values = np.where(np.isfinite(zbuf), zbuf, 0.0)
    return DepthMap(K.width, K.height, values)


def render_gt_depth(cloud: PointCloud, occlusion: DepthMap, pose: Pose,
                    K: CameraIntrinsics, tolerance: float = 0.02,
                    abs_slack: float = 0.05) -> DepthMap:
    """Project cloud points and keep those not hidden per the occlusion map.

    A point with depth z at pixel p survives when the occlusion pixel is
    invalid or z <= occ + max(occ * tolerance, abs_slack); the smallest
    surviving depth wins per pixel. Points splat to their nearest pixel.
    """
    if (occlusion.width, occlusion.height) != (K.width, K.height):
        raise ValueError("occlusion map dimensions do not match the camera")
    pts_cam = pose.world_to_camera(cloud.points)
    u, v, z, _ = project_points(K, pts_cam)
    ix = np.round(u).astype(np.int64)
    iy = np.round(v).astype(np.int64)
    ok = (z > 0) & (ix >= 0) & (ix < K.width) & (iy >= 0) & (iy < K.height)
    ix, iy, z = ix[ok], iy[ok], z[ok]

    occ = occlusion.values[iy, ix]
    occluded = occ > 0.0
    with np.errstate(invalid="ignore"):
        slack = np.maximum(occ * tolerance, abs_slack)
        occluded &= z > occ + slack
    ix, iy, z = ix[~occluded], iy[~occluded], z[~occluded]

    zbuf = np.full((K.height, K.width), np.inf)
    if len(z):
        kernels.scatter_min(ix, iy, z, zbuf)
    return DepthMap(K.width, K.height, np.where(np.isfinite(zbuf), zbuf, 0.0))
