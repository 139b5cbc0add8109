"""Photogrammetry frame-subset selection by weighted K-means on 6D pose
embeddings (position + weighted rotation vector)."""

from __future__ import annotations

import numpy as np

from .geometry import Pose, quat_to_rotvec


def embed_pose(pose: Pose, orientation_weight: float = 1.0) -> np.ndarray:
    """6D embedding: translation followed by orientation_weight * rotvec.

    orientation_weight is in meters per radian and trades positional
    against orientational spread in the clustering metric.
    """
    if orientation_weight < 0:
        raise ValueError("orientation_weight must be non-negative")
    return np.concatenate([pose.translation,
                           orientation_weight * quat_to_rotvec(pose.rotation)])


def _kmeans_pp_init(emb, k, rng):
    """k-means++ seeding; distinct points are never picked twice."""
    n = len(emb)
    centers = np.empty((k, emb.shape[1]))
    first = int(rng.integers(n))
    centers[0] = emb[first]
    d2 = np.sum((emb - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            # all remaining points coincide with a center; reuse any point
            centers[j:] = emb[first]
            break
        centers[j] = emb[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, np.sum((emb - centers[j]) ** 2, axis=1))
    return centers


def _assign(emb, centers):
    """Nearest-centroid labels; ties go to the lowest centroid index."""
    d2 = ((emb[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(d2, axis=1), d2


def kmeans(emb: np.ndarray, k: int, seed: int = 0, max_iter: int = 100,
           return_history: bool = False):
    """Deterministic Lloyd iterations with k-means++ seeding.

    Returns (centers, labels), plus the per-iteration objective when
    return_history is set. Empty clusters are re-seeded with the point
    farthest from its centroid, so all k clusters stay populated.
    """
    emb = np.asarray(emb, dtype=np.float64)
    rng = np.random.default_rng(seed)
    centers = _kmeans_pp_init(emb, k, rng)
    labels = np.full(len(emb), -1)
    history = []
    for _ in range(max_iter):
        new_labels, d2 = _assign(emb, centers)
        point_d2 = d2[np.arange(len(emb)), new_labels]
        history.append(float(point_d2.sum()))
        for j in range(k):
            m = new_labels == j
            if m.any():
                centers[j] = emb[m].mean(axis=0)
            else:
                far = int(np.argmax(point_d2))
                centers[j] = emb[far]
                new_labels[far] = j
                point_d2[far] = 0.0
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    if return_history:
        return centers, labels, history
    return centers, labels


def select_optimal_subset(trajectory: list, k: int,
                          orientation_weight: float = 1.0,
                          seed: int = 0) -> list:
    """Frame ids of the K-means representatives of the pose embeddings.

    Each cluster contributes its member nearest to the centroid; ties break
    toward the lowest frame id. Output is sorted and deduplicated.
    """
    if k <= 0:
        raise ValueError("k must be >= 1")
    if not trajectory:
        raise ValueError("trajectory is empty")
    ids = np.array([p.frame_id if p.frame_id is not None else i
                    for i, p in enumerate(trajectory)])
    order = np.argsort(ids, kind="stable")  # tie-breaks independent of input order
    ids = ids[order]
    emb = np.stack([embed_pose(trajectory[i], orientation_weight) for i in order])

    if k >= len(trajectory):
        return sorted(set(int(i) for i in ids))

    _, labels = kmeans(emb, k, seed=seed)
    chosen = set()
    for j in range(k):
        members = np.flatnonzero(labels == j)
        if members.size == 0:
            continue
        centroid = emb[members].mean(axis=0)
        d2 = ((emb[members] - centroid) ** 2).sum(axis=1)
        chosen.add(int(ids[members[np.argmin(d2)]]))
    return sorted(chosen)


def kmeans_objective(emb, centers, labels):
    """Sum of squared distances of points to their assigned centroid."""
    return float(((emb - centers[labels]) ** 2).sum())
