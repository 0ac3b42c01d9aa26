"""
spatial.py - Exact neighbor search, farthest point sampling and diameter estimation

All queries are exact and follow one tie rule: equal distances are ordered by ascending
point index. Distances are recomputed in double precision from the coordinates so ties
are judged identically everywhere in the package.
"""

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import pdist

from .config import DIAMETER_SAMPLE_SIZE
from .exceptions import EmptyInputError, InvalidCoordinateError, NeighborCountError


def as_points(points) -> np.ndarray:
    """Returns an (N, 3) float64 array from a PointCloud, array or list of 3-vectors."""
    arr = np.asarray(getattr(points, "points", points), dtype=np.float64)
    if arr.size == 0:
        raise EmptyInputError()
    arr = arr.reshape(-1, 3)
    return arr


@dataclass(frozen=True)
class SpatialIndex:
    """Immutable k-d tree over a fixed point set."""

    tree: cKDTree
    points: np.ndarray

    @property
    def point_count(self) -> int:
        return self.points.shape[0]


def build_index(points) -> SpatialIndex:
    """Builds an exact k-NN index over the points."""
    arr = as_points(points)
    if not np.all(np.isfinite(arr)):
        raise InvalidCoordinateError("invalid coordinate in index input")
    arr = arr.copy()
    arr.setflags(write=False)
    return SpatialIndex(tree=cKDTree(arr), points=arr)


def _check_count(k: int, available: int, what: str) -> None:
    if k < 1 or k > available:
        raise NeighborCountError(f"{what}={k} out of range [1, {available}]")


def knn_batch(index: SpatialIndex, queries, k: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    k nearest neighbors for many queries.

    Returns:
        (indices, distances), both of shape (Q, k), sorted by ascending distance and
        then ascending point index.
    """
    n = index.point_count
    _check_count(k, n, "k")
    queries = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
    pts = index.points

    # One extra neighbor tells whether the k-th distance is tied with an excluded point
    width = min(k + 1, n)
    _, cand = index.tree.query(queries, k=width)
    cand = np.asarray(cand, dtype=np.int64).reshape(len(queries), width)
    dist = np.sqrt(np.sum((pts[cand] - queries[:, None, :]) ** 2, axis=2))

    order = np.lexsort((cand, dist), axis=-1)
    cand = np.take_along_axis(cand, order, axis=1)
    dist = np.take_along_axis(dist, order, axis=1)

    indices = cand[:, :k].copy()
    distances = dist[:, :k].copy()

    if width > k:
        # A tie at the boundary (or tree rounding) may hide a lower-index point: rescan
        suspicious = dist[:, k] <= dist[:, k - 1] * (1.0 + 1e-12)
        for row in np.flatnonzero(suspicious):
            radius = dist[row, k - 1] * (1.0 + 1e-9) + 1e-300
            ball = np.asarray(index.tree.query_ball_point(queries[row], radius), dtype=np.int64)
            ball_dist = np.sqrt(np.sum((pts[ball] - queries[row]) ** 2, axis=1))
            pick = np.lexsort((ball, ball_dist))[:k]
            indices[row] = ball[pick]
            distances[row] = ball_dist[pick]

    return indices, distances


def knn(index: SpatialIndex, query, k: int) -> List[Tuple[int, float]]:
    """k nearest neighbors of one query as (point index, distance) pairs."""
    indices, distances = knn_batch(index, np.asarray(query, dtype=np.float64).reshape(1, 3), k)
    return [(int(i), float(d)) for i, d in zip(indices[0], distances[0])]


def farthest_point_sample(points, count: int, start: int = 0) -> List[int]:
    """
    Greedy max-min sampling.

    The first index is `start`; every next index maximizes its minimum distance to
    the points already selected, ties going to the lower index.
    """
    arr = as_points(points)
    n = arr.shape[0]
    _check_count(count, n, "count")
    if not 0 <= start < n:
        raise NeighborCountError(f"start={start} out of range [0, {n})")

    selected = np.empty(count, dtype=np.int64)
    selected[0] = start
    min_dist = np.sqrt(np.sum((arr - arr[start]) ** 2, axis=1))
    min_dist[start] = -np.inf

    for i in range(1, count):
        nxt = int(np.argmax(min_dist))
        selected[i] = nxt
        d = np.sqrt(np.sum((arr - arr[nxt]) ** 2, axis=1))
        # selected entries stay at -inf through the minimum
        np.minimum(min_dist, d, out=min_dist)
        min_dist[nxt] = -np.inf

    return selected.tolist()


def estimate_diameter(cloud) -> float:
    """
    Largest pairwise distance among up to 200 farthest-point samples started at index 0.
    Never above the true diameter and exact for clouds of at most 200 points.
    """
    arr = as_points(cloud)
    n = arr.shape[0]
    if n == 1:
        return 0.0
    sample = farthest_point_sample(arr, min(n, DIAMETER_SAMPLE_SIZE), 0)
    return float(pdist(arr[sample]).max())
