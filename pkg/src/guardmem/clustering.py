"""Average-linkage agglomerative clustering over cosine distance.

No fixed cluster count: merging stops once the closest pair of clusters is
at least ``threshold`` apart.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np


def cosine_distances(vectors: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(vectors, axis=1, keepdims=True)
    unit = vectors / np.where(norms == 0.0, 1.0, norms)
    dist = 1.0 - unit @ unit.T
    np.fill_diagonal(dist, 0.0)
    return np.clip(dist, 0.0, 2.0)


def average_linkage(vectors: Sequence[np.ndarray], threshold: float = 0.20) -> list[list[int]]:
    """Cluster rows of ``vectors``; returns clusters as sorted index lists.

    Input order is the tie-break order: among equally close pairs the one with
    the smallest (row, column) position merges first, so callers sort items
    by id beforehand.  Exact duplicate vectors are collapsed into weighted
    points first, which leaves the average-linkage partition unchanged.
    """
    n = len(vectors)
    if n == 0:
        return []
    mat = np.asarray(np.vstack(vectors), dtype=float)

    groups: dict[bytes, list[int]] = {}
    for i in range(n):
        groups.setdefault(mat[i].tobytes(), []).append(i)
    members = list(groups.values())
    members.sort(key=lambda m: m[0])
    sizes = np.array([len(m) for m in members], dtype=float)
    reps = mat[[m[0] for m in members]]

    dist = cosine_distances(reps)
    m = len(members)
    active = np.ones(m, dtype=bool)
    np.fill_diagonal(dist, np.inf)

    while active.sum() > 1:
        masked = np.where(active[:, None] & active[None, :], dist, np.inf)
        flat = int(np.argmin(masked))
        i, j = divmod(flat, m)
        if masked[i, j] >= threshold:
            break
        if j < i:
            i, j = j, i
        # Lance-Williams update for average linkage
        merged = (sizes[i] * dist[i] + sizes[j] * dist[j]) / (sizes[i] + sizes[j])
        dist[i, :] = merged
        dist[:, i] = merged
        dist[i, i] = np.inf
        sizes[i] += sizes[j]
        members[i] = members[i] + members[j]
        active[j] = False
        dist[j, :] = np.inf
        dist[:, j] = np.inf

    clusters = [sorted(members[k]) for k in range(m) if active[k]]
    clusters.sort(key=lambda c: c[0])
    return clusters


def centroid(vectors: Sequence[np.ndarray]) -> np.ndarray:
    """Mean of the member vectors, re-normalized to unit length."""
    mean = np.mean(np.vstack(vectors), axis=0)
    norm = np.linalg.norm(mean)
    return mean / norm if norm > 0 else mean
