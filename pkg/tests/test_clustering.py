import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.spatial.distance import pdist

from guardmem.clustering import average_linkage, centroid, cosine_distances


def scipy_partition(vectors, threshold):
    if len(vectors) == 1:
        return {frozenset([0])}
    z = linkage(pdist(np.vstack(vectors), "cosine"), method="average")
    # fcluster keeps merges at height <= t; ours merges strictly below threshold
    labels = fcluster(z, t=np.nextafter(threshold, 0), criterion="distance")
    out = {}
    for i, lab in enumerate(labels):
        out.setdefault(lab, set()).add(i)
    return {frozenset(v) for v in out.values()}


def as_partition(clusters):
    return {frozenset(c) for c in clusters}


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 25), st.integers(0, 100_000), st.sampled_from([0.1, 0.2, 0.35, 0.6]))
def test_matches_scipy_average_linkage(n, seed, threshold):
    rng = np.random.default_rng(seed)
    # a few directions plus noise so that merges actually happen
    centers = rng.normal(size=(3, 6))
    vectors = [centers[rng.integers(3)] + 0.3 * rng.normal(size=6) for _ in range(n)]
    assert as_partition(average_linkage(vectors, threshold)) == scipy_partition(vectors, threshold)


def test_duplicates_collapse_like_scipy():
    rng = np.random.default_rng(5)
    base = [rng.normal(size=5) for _ in range(4)]
    vectors = [base[0], base[1], base[0], base[2], base[3], base[1], base[0]]
    assert as_partition(average_linkage(vectors, 0.2)) == scipy_partition(vectors, 0.2)


def test_identical_and_orthogonal():
    e = np.eye(3)
    assert average_linkage([e[0], e[0]], 0.2) == [[0, 1]]
    assert average_linkage([e[0], e[1]], 0.2) == [[0], [1]]
    assert average_linkage([], 0.2) == []


def test_threshold_is_exclusive():
    a = np.array([1.0, 0.0])
    theta = np.arccos(0.8)  # cosine distance exactly 0.2, up to rounding
    b = np.array([np.cos(theta), np.sin(theta)])
    d = cosine_distances(np.vstack([a, b]))[0, 1]
    assert average_linkage([a, b], d) == [[0], [1]]
    assert average_linkage([a, b], np.nextafter(d, 1)) == [[0, 1]]


def test_centroid_is_unit():
    c = centroid([np.array([1.0, 0.0]), np.array([0.0, 1.0])])
    assert np.linalg.norm(c) == pytest.approx(1.0)
    assert c[0] == pytest.approx(c[1])
