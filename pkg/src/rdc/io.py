"""Readers and writers for all on-disk formats: PLY clouds/meshes, TUM
trajectories, 16-bit depth PNGs, KITTI-odometry exports, camera intrinsics,
dataset manifests and evaluation-subset construction."""

from __future__ import annotations

import json
import shutil
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .geometry import (CameraIntrinsics, PointCloud, Pose, quat_angle,
                       quat_from_matrix, quat_to_matrix)
from .render import DepthMap, TriangleMesh

# ---------------------------------------------------------------------------
# PLY
# ---------------------------------------------------------------------------

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def _parse_ply_header(f):
    if f.readline().strip() != b"ply":
        raise ValueError("not a PLY file (missing magic)")
    fmt = None
    elements = []  # (name, count, [(prop_name, np_type) or ('list', ctype, itype, name)])
    while True:
        line = f.readline()
        if not line:
            raise ValueError("malformed PLY header: missing end_header")
        tokens = line.decode("ascii", "replace").split()
        if not tokens or tokens[0] == "comment":
            continue
        if tokens[0] == "format":
            if tokens[1] == "ascii":
                fmt = "ascii"
            elif tokens[1] == "binary_little_endian":
                fmt = "binary"
            else:
                raise ValueError(f"unsupported PLY format: {tokens[1]}")
        elif tokens[0] == "element":
            elements.append((tokens[1], int(tokens[2]), []))
        elif tokens[0] == "property":
            if not elements:
                raise ValueError("malformed PLY header: property before element")
            if tokens[1] == "list":
                ctype, itype, name = tokens[2], tokens[3], tokens[4]
                if ctype not in _PLY_TYPES or itype not in _PLY_TYPES:
                    raise ValueError(f"unsupported PLY list types: {ctype}/{itype}")
                elements[-1][2].append(("list", _PLY_TYPES[ctype],
                                        _PLY_TYPES[itype], name))
            else:
                if tokens[1] not in _PLY_TYPES:
                    raise ValueError(f"unsupported PLY property type: {tokens[1]}")
                elements[-1][2].append((tokens[2], _PLY_TYPES[tokens[1]]))
        elif tokens[0] == "end_header":
            break
        else:
            raise ValueError(f"malformed PLY header line: {line.strip()!r}")
    if fmt is None:
        raise ValueError("malformed PLY header: missing format line")
    return fmt, elements


def _read_ply_element(f, fmt, count, props):
    has_list = any(p[0] == "list" for p in props)
    if not has_list:
        dtype = np.dtype([(name, "<" + t) for name, t in props])
        if fmt == "binary":
            data = np.frombuffer(f.read(dtype.itemsize * count), dtype=dtype)
            if len(data) != count:
                raise ValueError("truncated PLY payload")
            return data
        rows = [f.readline().split() for _ in range(count)]
        arr = np.empty(count, dtype=dtype)
        for j, (name, _) in enumerate(props):
            arr[name] = np.array([r[j] for r in rows], dtype=dtype[name])
        return arr
    if len(props) != 1:
        raise ValueError("PLY list property mixed with scalars is unsupported")
    _, ctype, itype, name = props[0]
    if fmt == "binary":
        dtype = np.dtype([("n", "<" + ctype), ("v", "<" + itype, (3,))])
        data = np.frombuffer(f.read(dtype.itemsize * count), dtype=dtype)
        if len(data) != count or not np.all(data["n"] == 3):
            raise ValueError("only triangular PLY faces are supported")
        return data["v"]
    rows = []
    for _ in range(count):
        vals = f.readline().split()
        if int(vals[0]) != 3:
            raise ValueError("only triangular PLY faces are supported")
        rows.append([int(v) for v in vals[1:4]])
    return np.asarray(rows, dtype="<" + itype)


def read_ply(path):
    """Load a PLY file as a PointCloud, or a TriangleMesh if faces exist.

    Normals are unit-normalized on load; degenerate mesh triangles are
    dropped; out-of-range triangle indices raise.
    """
    with open(path, "rb") as f:
        fmt, elements = _parse_ply_header(f)
        vertex_data = faces = None
        for name, count, props in elements:
            block = _read_ply_element(f, fmt, count, props)
            if name == "vertex":
                vertex_data = block
            elif name == "face":
                faces = block
    if vertex_data is None:
        raise ValueError("PLY file has no vertex element")
    names = vertex_data.dtype.names
    if not all(c in names for c in "xyz"):
        raise ValueError("PLY vertex element lacks x/y/z")
    points = np.stack([vertex_data[c].astype(np.float64) for c in "xyz"], axis=1)
    if faces is not None:
        mesh = TriangleMesh(points, faces.astype(np.int64))
        mesh.drop_degenerate()
        return mesh
    normals = None
    if all(c in names for c in ("nx", "ny", "nz")):
        normals = np.stack([vertex_data[c].astype(np.float64)
                            for c in ("nx", "ny", "nz")], axis=1)
        norms = np.linalg.norm(normals, axis=1)
        if np.any(norms == 0):
            raise ValueError("PLY contains zero-length normals")
        normals /= norms[:, None]
    colors = None
    if all(c in names for c in ("red", "green", "blue")):
        colors = np.stack([vertex_data[c] for c in ("red", "green", "blue")],
                          axis=1).astype(np.uint8)
    return PointCloud(points, normals=normals, colors=colors)


def read_ply_cloud(path) -> PointCloud:
    obj = read_ply(path)
    if isinstance(obj, TriangleMesh):
        return PointCloud(obj.vertices)
    return obj


def read_ply_mesh(path) -> TriangleMesh:
    obj = read_ply(path)
    if not isinstance(obj, TriangleMesh):
        raise ValueError(f"{path} has no face element; expected a mesh")
    return obj


def write_ply(path, obj, binary: bool = True):
    """Write a PointCloud or TriangleMesh; binary is bit-exact on round-trip."""
    if isinstance(obj, TriangleMesh):
        points, normals, colors = obj.vertices, None, None
        faces = obj.triangles
    else:
        points, normals, colors = obj.points, obj.normals, obj.colors
        faces = None
    lines = ["ply", "format binary_little_endian 1.0" if binary else "format ascii 1.0",
             f"element vertex {len(points)}",
             "property double x", "property double y", "property double z"]
    if normals is not None:
        lines += ["property double nx", "property double ny", "property double nz"]
    if colors is not None:
        lines += ["property uchar red", "property uchar green", "property uchar blue"]
    if faces is not None:
        lines += [f"element face {len(faces)}",
                  "property list uchar int vertex_indices"]
    lines.append("end_header")
    header = ("\n".join(lines) + "\n").encode("ascii")

    with open(path, "wb") as f:
        f.write(header)
        if binary:
            fields = [("x", "<f8"), ("y", "<f8"), ("z", "<f8")]
            if normals is not None:
                fields += [("nx", "<f8"), ("ny", "<f8"), ("nz", "<f8")]
            if colors is not None:
                fields += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
            rec = np.empty(len(points), dtype=np.dtype(fields))
            for i, c in enumerate("xyz"):
                rec[c] = points[:, i]
            if normals is not None:
                for i, c in enumerate(("nx", "ny", "nz")):
                    rec[c] = normals[:, i]
            if colors is not None:
                for i, c in enumerate(("red", "green", "blue")):
                    rec[c] = colors[:, i]
            f.write(rec.tobytes())
            if faces is not None:
                frec = np.empty(len(faces), dtype=np.dtype([("n", "u1"), ("v", "<i4", (3,))]))
                frec["n"] = 3
                frec["v"] = faces
                f.write(frec.tobytes())
        else:
            for i in range(len(points)):
                row = [f"{points[i, j]:.17g}" for j in range(3)]
                if normals is not None:
                    row += [f"{normals[i, j]:.17g}" for j in range(3)]
                if colors is not None:
                    row += [str(int(colors[i, j])) for j in range(3)]
                f.write((" ".join(row) + "\n").encode("ascii"))
            if faces is not None:
                for tri in faces:
                    f.write(f"3 {tri[0]} {tri[1]} {tri[2]}\n".encode("ascii"))


# ---------------------------------------------------------------------------
# TUM trajectories
# ---------------------------------------------------------------------------

def read_tum(path) -> list:
    """Parse `timestamp tx ty tz qx qy qz qw` lines into poses.

    Frame ids are assigned by pose-line order; '#' lines are comments.
    """
    poses = []
    with open(path, "r") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.split()
            if len(fields) != 8:
                raise ValueError(f"{path}:{lineno}: expected 8 fields, "
                                 f"got {len(fields)}")
            ts, tx, ty, tz, qx, qy, qz, qw = map(float, fields)
            poses.append(Pose(np.array([qw, qx, qy, qz]), (tx, ty, tz),
                              timestamp=ts, frame_id=len(poses)))
    return poses


def write_tum(path, trajectory):
    """Write poses with 9 decimal places (round-trip error below 1e-9)."""
    with open(path, "w") as f:
        f.write("# timestamp tx ty tz qx qy qz qw\n")
        for i, p in enumerate(trajectory):
            ts = p.timestamp if p.timestamp is not None else float(i)
            w, x, y, z = p.rotation
            tx, ty, tz = p.translation
            f.write(f"{ts:.9f} {tx:.9f} {ty:.9f} {tz:.9f} "
                    f"{x:.9f} {y:.9f} {z:.9f} {w:.9f}\n")


# ---------------------------------------------------------------------------
# 16-bit depth PNGs
# ---------------------------------------------------------------------------

MAX_PNG16_DEPTH = 65535 / 256.0


def write_depth_png16(path, depth: DepthMap):
    """Encode depth as value = depth * 256 in a single-channel 16-bit PNG.

    Zero means invalid; valid depths quantize to at least 1 LSB; depths
    beyond 255.996 m saturate with a warning.
    """
    values = depth.values
    if np.any(values > MAX_PNG16_DEPTH):
        warnings.warn(f"{path}: depths above {MAX_PNG16_DEPTH:.3f} m saturate "
                      "in PNG16 encoding")
    enc = np.round(values * 256.0)
    enc = np.where(depth.valid_mask, np.clip(enc, 1, 65535), 0)
    Image.fromarray(enc.astype(np.uint16)).save(path)


def read_depth_png16(path) -> DepthMap:
    img = Image.open(path)
    if img.mode not in ("I;16", "I;16B", "I"):
        raise ValueError(f"{path}: expected a single-channel 16-bit PNG, "
                         f"got mode {img.mode}")
    raw = np.asarray(img)
    if raw.ndim != 2:
        raise ValueError(f"{path}: expected a single-channel image")
    if raw.dtype == np.int32 and raw.max(initial=0) > 65535:
        raise ValueError(f"{path}: sample values exceed 16 bits")
    values = raw.astype(np.float64) / 256.0
    return DepthMap(width=raw.shape[1], height=raw.shape[0], values=values)


# ---------------------------------------------------------------------------
# KITTI odometry export
# ---------------------------------------------------------------------------

def export_kitti_odometry(trajectory, K: CameraIntrinsics, out_dir,
                          image_dir=None):
    """Write poses.txt / calib.txt / times.txt in KITTI odometry layout.

    poses.txt rows are row-major 3x4 camera-to-world matrices. If image_dir
    is given, frames are copied into image_2/ with KITTI-style names.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "poses.txt", "w") as f:
        for p in trajectory:
            m = p.matrix()[:3].reshape(-1)
            f.write(" ".join(f"{v:.12e}" for v in m) + "\n")
    proj = np.zeros((3, 4))
    proj[:3, :3] = K.matrix()
    row = " ".join(f"{v:.12e}" for v in proj.reshape(-1))
    with open(out / "calib.txt", "w") as f:
        for name in ("P0", "P1", "P2", "P3"):
            f.write(f"{name}: {row}\n")
    with open(out / "times.txt", "w") as f:
        for i, p in enumerate(trajectory):
            ts = p.timestamp if p.timestamp is not None else float(i)
            f.write(f"{ts:.9f}\n")
    if image_dir is not None:
        img_out = out / "image_2"
        img_out.mkdir(exist_ok=True)
        frames = sorted(Path(image_dir).iterdir())
        for i, src in enumerate(frames):
            shutil.copyfile(src, img_out / f"{i:06d}{src.suffix}")


def read_kitti_poses(path) -> list:
    """Parse a KITTI odometry poses.txt back into camera-to-world poses."""
    poses = []
    with open(path, "r") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            vals = [float(v) for v in line.split()]
            if len(vals) != 12:
                raise ValueError(f"{path}:{lineno}: expected 12 values, "
                                 f"got {len(vals)}")
            m = np.asarray(vals).reshape(3, 4)
            poses.append(Pose(quat_from_matrix(m[:, :3]), m[:, 3],
                              frame_id=len(poses)))
    return poses


# ---------------------------------------------------------------------------
# camera intrinsics + manifest
# ---------------------------------------------------------------------------

def read_intrinsics(path) -> CameraIntrinsics:
    with open(path) as f:
        d = json.load(f)
    return CameraIntrinsics(fx=d["fx"], fy=d["fy"], cx=d["cx"], cy=d["cy"],
                            width=d["width"], height=d["height"])


def write_intrinsics(path, K: CameraIntrinsics):
    with open(path, "w") as f:
        json.dump({"fx": K.fx, "fy": K.fy, "cx": K.cx, "cy": K.cy,
                   "width": K.width, "height": K.height}, f, indent=2)
        f.write("\n")


@dataclass
class FrameEntry:
    frame_id: int
    valid: bool = True
    interpolated: bool = False


@dataclass
class DatasetManifest:
    """Single JSON document tying a dataset together."""

    intrinsics: str
    trajectory: str
    depth_dir: str
    image_dir: str | None = None
    frames: list = field(default_factory=list)

    def interpolated_ids(self):
        return [f.frame_id for f in self.frames if f.interpolated]


def save_manifest(path, manifest: DatasetManifest):
    doc = {"intrinsics": manifest.intrinsics,
           "trajectory": manifest.trajectory,
           "depth_dir": manifest.depth_dir,
           "image_dir": manifest.image_dir,
           "frames": [{"id": f.frame_id, "valid": f.valid,
                       "interpolated": f.interpolated} for f in manifest.frames]}
    with open(path, "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    with open(path) as f:
        doc = json.load(f)
    root = path.parent
    manifest = DatasetManifest(
        intrinsics=doc["intrinsics"], trajectory=doc["trajectory"],
        depth_dir=doc["depth_dir"], image_dir=doc.get("image_dir"),
        frames=[FrameEntry(e["id"], e.get("valid", True),
                           e.get("interpolated", False))
                for e in doc.get("frames", [])])
    ids = [f.frame_id for f in manifest.frames]
    if len(ids) != len(set(ids)):
        raise ValueError(f"{path}: duplicate frame ids in manifest")
    for key in ("intrinsics", "trajectory", "depth_dir"):
        ref = root / getattr(manifest, key)
        if not ref.exists():
            raise ValueError(f"{path}: referenced {key} {ref} does not exist")
    return manifest


# ---------------------------------------------------------------------------
# evaluation subset construction
# ---------------------------------------------------------------------------

def filter_eval_subset(trajectory, forward_max_deg: float | None = None,
                       rotation_max_deg: float | None = None,
                       min_displacement: float | None = None,
                       exclude_ids=()) -> list:
    """Frame ids whose motion to the next frame satisfies all active criteria.

    Criteria (None = disabled): forward motion within forward_max_deg of the
    optical axis; relative rotation at most rotation_max_deg; displacement
    at least min_displacement. Excluded (interpolated-outlier) frames are
    always dropped. The final frame has no successor and is never kept.
    """
    exclude = set(exclude_ids)
    kept = []
    for a, b in zip(trajectory, trajectory[1:]):
        fid = a.frame_id
        if fid in exclude:
            continue
        t_rel = b.translation - a.translation
        norm = np.linalg.norm(t_rel)
        if min_displacement is not None and norm < min_displacement:
            continue
        if forward_max_deg is not None:
            if norm < 1e-12:
                continue
            fwd = quat_to_matrix(a.rotation)[:, 2]
            cosang = np.clip(np.dot(t_rel / norm, fwd), -1.0, 1.0)
            if np.degrees(np.arccos(cosang)) > forward_max_deg:
                continue
        if rotation_max_deg is not None:
            ang = quat_angle(a.rotation, b.rotation)
            if np.degrees(ang) > rotation_max_deg:
                continue
        kept.append(fid)
    return kept


def read_frame_list(path) -> list:
    with open(path) as f:
        return [int(line) for line in f.read().split()]


def write_frame_list(path, ids):
    with open(path, "w") as f:
        for i in ids:
            f.write(f"{i}\n")
