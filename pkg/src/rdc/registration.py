"""Cloud-to-cloud alignment: closed-form similarity estimation from
correspondences, ICP refinement (point-to-point and point-to-plane), and
nearest-neighbor attribute transfer between registered clouds."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .geometry import (PointCloud, SimilarityTransform, quat_from_matrix,
                       quat_from_rotvec)


def umeyama_align(src, dst, estimate_scale: bool = True) -> SimilarityTransform:
    """Least-squares similarity (or rigid) transform mapping src onto dst.

    Minimizes sum ||s R src_i + t - dst_i||^2 over paired points via SVD of
    the cross-covariance, with the determinant sign correction.
    """
    src = np.asarray(src, dtype=np.float64).reshape(-1, 3)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 3)
    if src.shape != dst.shape:
        raise ValueError("src and dst must pair up")
    n = len(src)
    if n < 3:
        raise ValueError(f"need at least 3 point pairs, got {n}")
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    xs = src - mu_s
    xd = dst - mu_d
    cov = xd.T @ xs / n
    u, d, vt = np.linalg.svd(cov)
    if np.count_nonzero(d > max(d[0], 1e-300) * 1e-9) < 2:
        raise ValueError("degenerate correspondences: cross-covariance rank < 2 "
                         "(coincident or collinear points)")
    s = np.ones(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        s[2] = -1.0
    rot = u @ np.diag(s) @ vt
    if estimate_scale:
        var_s = (xs ** 2).sum() / n
        scale = float((d * s).sum() / var_s)
    else:
        scale = 1.0
    t = mu_d - scale * rot @ mu_s
    return SimilarityTransform(scale, quat_from_matrix(rot), t)


@dataclass(frozen=True)
class IcpParams:
    variant: str = "point-to-point"
    max_iterations: int = 50
    convergence_eps: float = 1e-6
    rejection_multiplier: float = 3.0
    estimate_scale: bool = False

    def __post_init__(self):
        if self.variant not in ("point-to-point", "point-to-plane"):
            raise ValueError(f"unknown ICP variant: {self.variant!r}")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.convergence_eps <= 0:
            raise ValueError("convergence_eps must be positive")
        if self.rejection_multiplier <= 0:
            raise ValueError("rejection_multiplier must be positive")


@dataclass
class IcpResult:
    transform: SimilarityTransform
    rmse_history: list
    iterations_used: int
    inlier_fraction: float


def _point_to_plane_update(p, q, normals, estimate_scale):
    """Small-angle least-squares increment minimizing plane distances.

    Linearizes (1+sigma)(I + [w]x) p + t against residual (p - q) . n.
    """
    r = np.sum((p - q) * normals, axis=1)
    cols = [np.cross(p, normals), normals]
    if estimate_scale:
        cols.append(np.sum(p * normals, axis=1)[:, None])
    a = np.hstack(cols)
    x, *_ = np.linalg.lstsq(a, -r, rcond=None)
    scale = 1.0 + float(x[6]) if estimate_scale else 1.0
    if scale <= 0:
        scale = 1e-6
    return SimilarityTransform(scale, quat_from_rotvec(x[:3]), x[3:6])


def icp(src: PointCloud, dst: PointCloud,
        init: SimilarityTransform | None = None,
        params: IcpParams = IcpParams()) -> IcpResult:
    """Iterative closest point from src onto dst, starting at `init`.

    Each iteration: exact k-d tree correspondences, rejection of pairs
    beyond rejection_multiplier x median distance, then a closed-form
    update (similarity estimation for point-to-point, linearized least
    squares for point-to-plane). Stops on RMSE convergence; an iteration
    that would increase the RMSE is rolled back, so rmse_history is
    non-increasing.
    """
    if len(src) == 0 or len(dst) == 0:
        raise ValueError("ICP needs non-empty clouds")
    if params.variant == "point-to-plane" and dst.normals is None:
        raise ValueError("point-to-plane ICP requires destination normals")
    transform = init if init is not None else SimilarityTransform.identity()
    tree = cKDTree(dst.points)
    history: list[float] = []
    inlier_fraction = 1.0
    prev_transform = transform

    for _ in range(params.max_iterations):
        moved = transform.apply(src.points)
        dist, idx = tree.query(moved)
        cutoff = params.rejection_multiplier * float(np.median(dist))
        keep = dist <= cutoff if cutoff > 0 else dist <= 0
        if keep.sum() < 3:
            raise ValueError("no correspondences survived rejection")
        rmse = float(np.sqrt(np.mean(dist[keep] ** 2)))
        if history and rmse > history[-1]:
            transform = prev_transform
            break
        inlier_fraction = float(keep.mean())
        history.append(rmse)
        if rmse < params.convergence_eps:
            break
        if len(history) > 1 and history[-2] - rmse < params.convergence_eps:
            break
        p = moved[keep]
        q = dst.points[idx[keep]]
        if params.variant == "point-to-point":
            delta = umeyama_align(p, q, estimate_scale=params.estimate_scale)
        else:
            delta = _point_to_plane_update(p, q, dst.normals[idx[keep]],
                                           params.estimate_scale)
        prev_transform = transform
        transform = delta.compose(transform)

    return IcpResult(transform=transform, rmse_history=history,
                     iterations_used=len(history),
                     inlier_fraction=inlier_fraction)


def transfer_attributes(src: PointCloud, dst: PointCloud) -> PointCloud:
    """Give every dst point the normals/visibility of its nearest src point."""
    if len(src) == 0:
        raise ValueError("cannot transfer attributes from an empty cloud")
    if src.normals is None and src.visibility is None:
        raise ValueError("source cloud has no attributes to transfer")
    _, idx = cKDTree(src.points).query(dst.points)
    normals = src.normals[idx] if src.normals is not None else None
    visibility = [src.visibility[i] for i in idx] if src.visibility is not None else None
    return PointCloud(dst.points.copy(), normals=normals,
                      visibility=visibility, colors=dst.colors)
