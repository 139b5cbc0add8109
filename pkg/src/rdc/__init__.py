"""Ground-truth depth construction and evaluation for videos in rigid scenes.

A reference point cloud plus a localized camera trajectory in, dense
per-frame metric depth maps and a full evaluation suite out.
"""

from .geometry import (CameraIntrinsics, PointCloud, Pose,
                       SimilarityTransform, apply_similarity, compose,
                       project, unproject)
from .render import DepthMap, Splat, TriangleMesh

__version__ = "0.1.0"

__all__ = [
    "CameraIntrinsics", "DepthMap", "PointCloud", "Pose",
    "SimilarityTransform", "Splat", "TriangleMesh",
    "apply_similarity", "compose", "project", "unproject", "__version__",
]
