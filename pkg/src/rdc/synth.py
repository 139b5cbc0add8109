"""Synthetic rigid scenes with closed-form depth, cloud sampling and
trajectory generation. Serves as the independent oracle for the rendering
pipeline: intersections are analytic, never rasterized.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import (CameraIntrinsics, PointCloud, Pose, look_at,
                       quat_to_matrix, tangent_basis)
from .render import DepthMap

_EPS = 1e-9


@dataclass(frozen=True)
class Plane:
    """Finite rectangle: center, unit normal, extents along the tangent basis."""

    center: np.ndarray
    normal: np.ndarray
    size: tuple  # (extent along t1, extent along t2), meters

    def __post_init__(self):
        c = np.asarray(self.center, dtype=np.float64)
        n = np.asarray(self.normal, dtype=np.float64)
        n = n / np.linalg.norm(n)
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "normal", n)
        if min(self.size) <= 0:
            raise ValueError("plane extents must be positive")

    @property
    def area(self):
        return self.size[0] * self.size[1]

    def raycast(self, origins, dirs):
        t1, t2 = tangent_basis(self.normal)
        denom = dirs @ self.normal
        num = (self.center - origins) @ self.normal
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(np.abs(denom) > _EPS, num / denom, np.inf)
        hit = origins + t[..., None] * dirs - self.center
        inside = (np.abs(hit @ t1) <= self.size[0] / 2) \
            & (np.abs(hit @ t2) <= self.size[1] / 2)
        return np.where((t > _EPS) & inside, t, np.inf)

    def sample(self, n, rng):
        t1, t2 = tangent_basis(self.normal)
        a = rng.uniform(-self.size[0] / 2, self.size[0] / 2, n)
        b = rng.uniform(-self.size[1] / 2, self.size[1] / 2, n)
        pts = self.center + a[:, None] * t1 + b[:, None] * t2
        return pts, np.tile(self.normal, (n, 1))


@dataclass(frozen=True)
class Sphere:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=np.float64))
        if self.radius <= 0:
            raise ValueError("sphere radius must be positive")

    @property
    def area(self):
        return 4.0 * np.pi * self.radius ** 2

    def raycast(self, origins, dirs):
        oc = origins - self.center
        a = np.sum(dirs * dirs, axis=-1)
        b = 2.0 * np.sum(dirs * oc, axis=-1)
        c = np.sum(oc * oc, axis=-1) - self.radius ** 2
        disc = b * b - 4.0 * a * c
        ok = disc >= 0.0
        sq = np.sqrt(np.where(ok, disc, 0.0))
        t_near = (-b - sq) / (2.0 * a)
        t_far = (-b + sq) / (2.0 * a)
        t = np.where(t_near > _EPS, t_near, t_far)
        return np.where(ok & (t > _EPS), t, np.inf)

    def sample(self, n, rng):
        v = rng.normal(size=(n, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        return self.center + self.radius * v, v


@dataclass(frozen=True)
class Box:
    """Axis-aligned box, optionally rotated by a quaternion."""

    center: np.ndarray
    size: tuple
    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0, 0, 0]))

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=np.float64))
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64))
        if min(self.size) <= 0:
            raise ValueError("box extents must be positive")

    @property
    def area(self):
        sx, sy, sz = self.size
        return 2.0 * (sx * sy + sy * sz + sx * sz)

    def raycast(self, origins, dirs):
        r = quat_to_matrix(self.rotation)
        o = (origins - self.center) @ r
        d = dirs @ r
        half = np.asarray(self.size) / 2.0
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / d
            ta = (-half - o) * inv
            tb = (half - o) * inv
        # axis-parallel rays: replace the non-constraining slabs
        parallel = np.abs(d) < _EPS
        outside = np.abs(o) > half
        ta = np.where(parallel, np.where(outside, np.inf, -np.inf), ta)
        tb = np.where(parallel, np.where(outside, -np.inf, np.inf), tb)
        tmin = np.max(np.minimum(ta, tb), axis=-1)
        tmax = np.min(np.maximum(ta, tb), axis=-1)
        hit = tmax >= np.maximum(tmin, _EPS)
        t = np.where(tmin > _EPS, tmin, tmax)
        return np.where(hit & (t > _EPS), t, np.inf)

    def sample(self, n, rng):
        sx, sy, sz = self.size
        areas = np.array([sy * sz, sy * sz, sx * sz, sx * sz, sx * sy, sx * sy])
        face = rng.choice(6, size=n, p=areas / areas.sum())
        uv = rng.uniform(-0.5, 0.5, size=(n, 2))
        pts = np.empty((n, 3))
        nrm = np.zeros((n, 3))
        half = np.array([sx, sy, sz]) / 2.0
        for f in range(6):
            m = face == f
            axis = f // 2
            sign = 1.0 if f % 2 == 0 else -1.0
            others = [i for i in range(3) if i != axis]
            p = np.empty((m.sum(), 3))
            p[:, axis] = sign * half[axis]
            p[:, others[0]] = uv[m, 0] * self.size[others[0]]
            p[:, others[1]] = uv[m, 1] * self.size[others[1]]
            pts[m] = p
            nrm[m, axis] = sign
        r = quat_to_matrix(self.rotation)
        return pts @ r.T + self.center, nrm @ r.T


@dataclass(frozen=True)
class SceneSpec:
    primitives: tuple
    seed: int = 0

    def __post_init__(self):
        if not self.primitives:
            raise ValueError("scene needs at least one primitive")
        object.__setattr__(self, "primitives", tuple(self.primitives))

    @classmethod
    def from_dict(cls, d):
        prims = []
        for p in d["primitives"]:
            kind = p["type"]
            if kind == "plane":
                prims.append(Plane(p["center"], p["normal"], tuple(p["size"])))
            elif kind == "sphere":
                prims.append(Sphere(p["center"], p["radius"]))
            elif kind == "box":
                prims.append(Box(p["center"], tuple(p["size"]),
                                 np.asarray(p.get("rotation", [1.0, 0, 0, 0]))))
            else:
                raise ValueError(f"unknown primitive type: {kind!r}")
        return cls(tuple(prims), seed=d.get("seed", 0))

    def to_dict(self):
        out = []
        for p in self.primitives:
            if isinstance(p, Plane):
                out.append({"type": "plane", "center": p.center.tolist(),
                            "normal": p.normal.tolist(), "size": list(p.size)})
            elif isinstance(p, Sphere):
                out.append({"type": "sphere", "center": p.center.tolist(),
                            "radius": p.radius})
            else:
                out.append({"type": "box", "center": p.center.tolist(),
                            "size": list(p.size), "rotation": p.rotation.tolist()})
        return {"primitives": out, "seed": self.seed}


def two_plane_scene():
    """Small plane occluding half of a large plane behind it.

    The default demo scene: viewed from above, the front plane's only
    in-view silhouette edge is the vertical line x = 0.
    """
    back = Plane(center=(0.0, 0.0, 0.0), normal=(0, 0, 1), size=(20.0, 20.0))
    front = Plane(center=(-5.0, 0.0, 4.0), normal=(0, 0, 1), size=(10.0, 20.0))
    return SceneSpec((back, front))


def analytic_depth(scene: SceneSpec, pose: Pose, K: CameraIntrinsics) -> DepthMap:
    """Exact per-pixel z-depth by ray casting the scene primitives.

    Rays are parameterized so the parameter at the hit equals z-depth
    directly (direction has unit z in the camera frame).
    """
    u = np.arange(K.width, dtype=np.float64)
    v = np.arange(K.height, dtype=np.float64)
    uu, vv = np.meshgrid(u, v)
    dirs_cam = np.stack([(uu - K.cx) / K.fx, (vv - K.cy) / K.fy,
                         np.ones_like(uu)], axis=-1)
    r = quat_to_matrix(pose.rotation)
    dirs = dirs_cam @ r.T
    origins = np.broadcast_to(pose.translation, dirs.shape)
    depth = np.full((K.height, K.width), np.inf)
    for prim in scene.primitives:
        depth = np.minimum(depth, prim.raycast(origins, dirs))
    values = np.where(np.isfinite(depth), depth, 0.0)
    return DepthMap(width=K.width, height=K.height, values=values)


def sample_cloud(scene: SceneSpec, n: int, noise_sigma: float = 0.0,
                 seed: int | None = None) -> PointCloud:
    """n points uniform over the scene surfaces, with true surface normals."""
    if n < 1:
        raise ValueError("need at least one sample point")
    rng = np.random.default_rng(scene.seed if seed is None else seed)
    areas = np.array([p.area for p in scene.primitives])
    counts = rng.multinomial(n, areas / areas.sum())
    pts, nrm = [], []
    for prim, c in zip(scene.primitives, counts):
        if c == 0:
            continue
        p, m = prim.sample(c, rng)
        pts.append(p)
        nrm.append(m)
    points = np.concatenate(pts)
    normals = np.concatenate(nrm)
    if noise_sigma > 0:
        points = points + rng.normal(scale=noise_sigma, size=points.shape)
    return PointCloud(points, normals)


def make_trajectory(kind: str, params: dict, n_frames: int,
                    seed: int = 0, fps: float = 30.0) -> list:
    """Smooth synthetic camera trajectories: 'orbit', 'dolly' or 'grid'."""
    if n_frames < 2:
        raise ValueError("a trajectory needs at least 2 frames")
    rng = np.random.default_rng(seed)
    poses = []

    if kind == "orbit":
        pivot = np.asarray(params.get("pivot", (0.0, 0.0, 0.0)), dtype=np.float64)
        radius = float(params.get("radius", 5.0))
        height = float(params.get("height", 0.0))
        span = np.deg2rad(float(params.get("span_deg", 360.0)))
        phase = np.deg2rad(float(params.get("phase_deg", 0.0)))
        full = abs(span - 2.0 * np.pi) < 1e-12
        denom = n_frames if full else n_frames - 1
        for i in range(n_frames):
            a = phase + span * i / denom
            pos = pivot + np.array([radius * np.cos(a), radius * np.sin(a), height])
            poses.append(look_at(pos, pivot, timestamp=i / fps, frame_id=i))
    elif kind == "dolly":
        start = np.asarray(params.get("start", (0.0, 0.0, 0.0)), dtype=np.float64)
        end = np.asarray(params.get("end", (0.0, 0.0, 10.0)), dtype=np.float64)
        target = params.get("target")
        step = (end - start) / (n_frames - 1)
        for i in range(n_frames):
            pos = start + i * step
            aim = np.asarray(target, dtype=np.float64) if target is not None \
                else pos + step * n_frames
            poses.append(look_at(pos, aim, timestamp=i / fps, frame_id=i))
    elif kind == "grid":
        rows = int(params.get("rows", 3))
        cols = int(params.get("cols", 3))
        if rows * cols != n_frames:
            raise ValueError(f"grid rows*cols = {rows * cols} != n_frames = {n_frames}")
        origin = np.asarray(params.get("origin", (0.0, 0.0, 10.0)), dtype=np.float64)
        spacing = float(params.get("spacing", 1.0))
        target = np.asarray(params.get("target", (0.0, 0.0, 0.0)), dtype=np.float64)
        i = 0
        for r in range(rows):
            cs = range(cols) if r % 2 == 0 else range(cols - 1, -1, -1)
            for c in cs:  # serpentine sweep keeps consecutive frames adjacent
                pos = origin + np.array([c * spacing, r * spacing, 0.0])
                poses.append(look_at(pos, target, timestamp=i / fps, frame_id=i))
                i += 1
    else:
        raise ValueError(f"unknown trajectory kind: {kind!r}")

    jitter = float(params.get("jitter", 0.0))
    if jitter > 0:
        poses = [Pose(p.rotation, p.translation + rng.normal(scale=jitter, size=3),
                      timestamp=p.timestamp, frame_id=p.frame_id) for p in poses]
    return poses


def generate_dataset(out_dir, scene: SceneSpec | None = None,
                     traj_kind: str = "orbit", traj_params: dict | None = None,
                     n_frames: int = 60, n_points: int = 50000,
                     noise_sigma: float = 0.0, traj_noise: float = 0.0,
                     seed: int = 0, width: int = 640, height: int = 480,
                     hfov_deg: float = 60.0, n_pairs: int = 12):
    """Write a complete synthetic dataset usable by every CLI command.

    Produces the ground-truth cloud in two frames (dense.ply in the
    trajectory frame, lidar.ply displaced by a random similarity), picked
    point pairs, a raw trajectory, intrinsics, analytic depth maps posing
    as predictions, a manifest and a ready-to-run pipeline config.
    """
    import json

    from . import io as rdc_io
    from .geometry import (SimilarityTransform, apply_similarity,
                           quat_from_rotvec)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if scene is None:
        scene = two_plane_scene()
    rng = np.random.default_rng(seed)

    fx = (width / 2.0) / np.tan(np.deg2rad(hfov_deg) / 2.0)
    K = CameraIntrinsics(fx=fx, fy=fx, cx=width / 2.0, cy=height / 2.0,
                         width=width, height=height)

    if traj_params is None:
        centers = np.stack([np.asarray(getattr(p, "center", np.zeros(3)))
                            for p in scene.primitives])
        pivot = centers.mean(axis=0)
        traj_params = {"pivot": pivot.tolist(), "radius": 3.0, "height": 12.0}
    if traj_noise > 0:
        traj_params = dict(traj_params, jitter=traj_noise)
    traj = make_trajectory(traj_kind, traj_params, n_frames, seed=seed)

    world = sample_cloud(scene, n_points, noise_sigma, seed=seed)
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    offset = SimilarityTransform(
        scale=float(rng.uniform(0.9, 1.2)),
        rotation=quat_from_rotvec(np.deg2rad(rng.uniform(5, 15)) * axis),
        translation=rng.uniform(-2.0, 2.0, 3))
    lidar = apply_similarity(offset.inverse(), world)

    pick = rng.choice(len(world), size=min(n_pairs, len(world)), replace=False)
    with open(out / "pairs.txt", "w") as f:
        for i in pick:
            s = lidar.points[i]
            d = world.points[i]
            f.write(f"{s[0]:.12f} {s[1]:.12f} {s[2]:.12f} "
                    f"{d[0]:.12f} {d[1]:.12f} {d[2]:.12f}\n")

    rdc_io.write_ply(out / "dense.ply", world)
    rdc_io.write_ply(out / "lidar.ply", lidar)
    rdc_io.write_tum(out / "raw.tum", traj)
    rdc_io.write_tum(out / "pred.tum", traj)
    rdc_io.write_intrinsics(out / "cam.json", K)
    with open(out / "scene.json", "w") as f:
        json.dump(scene.to_dict(), f, indent=2)
        f.write("\n")

    pred_dir = out / "pred_depth"
    pred_dir.mkdir(exist_ok=True)
    for pose in traj:
        depth = analytic_depth(scene, pose, K)
        rdc_io.write_depth_png16(pred_dir / f"{pose.frame_id:06d}.png", depth)

    manifest = rdc_io.DatasetManifest(
        intrinsics="cam.json", trajectory="raw.tum", depth_dir="pred_depth",
        frames=[rdc_io.FrameEntry(p.frame_id) for p in traj])
    rdc_io.save_manifest(out / "manifest.json", manifest)

    config = {
        "output_root": "out",
        "stages": ["sample", "register", "filter-traj", "render", "evaluate"],
        "inputs": {
            "lidar_cloud": "lidar.ply",
            "dense_cloud": "dense.ply",
            "raw_trajectory": "raw.tum",
            "intrinsics": "cam.json",
            "pairs": "pairs.txt",
            "pred_depth": "pred_depth",
            "pred_trajectory": "pred.tum",
        },
        "params": {
            "sample": {"k": max(2, n_frames // 5), "seed": seed},
            "register": {"variant": "point-to-point", "estimate_scale": True},
            "filter-traj": {"window": 9, "polyorder": 3, "threshold": "auto"},
            "render": {"tolerance": 0.02, "half_size": 0.3},
            "evaluate": {"scale_mode": "per-frame"},
        },
    }
    with open(out / "pipeline.json", "w") as f:
        json.dump(config, f, indent=2)
        f.write("\n")
    return out
