"""
fixtures.py - Seeded synthetic shapes and brute-force oracles shared by the tests
"""

import numpy as np

from glrdenoise.core import PointCloud


def rng(seed=0):
    return np.random.Generator(np.random.PCG64(seed))


# =============================================================================
# SHAPES
# =============================================================================

def plane_points(count, seed=0, size=1.0):
    """Uniform samples of the square [0, size]^2 in the z=0 plane."""
    xy = rng(seed).uniform(0.0, size, size=(count, 2))
    return np.column_stack([xy, np.zeros(count)])


def line_points(count, seed=0):
    x = rng(seed).uniform(0.0, 1.0, size=count)
    return np.column_stack([x, np.zeros(count), np.zeros(count)])


def cube_surface_points(count, seed=0):
    """Uniform samples of the surface of the cube [-0.5, 0.5]^3."""
    gen = rng(seed)
    pts = gen.uniform(-0.5, 0.5, size=(count, 3))
    axis = gen.integers(0, 3, size=count)
    side = np.where(gen.random(count) < 0.5, -0.5, 0.5)
    pts[np.arange(count), axis] = side
    return pts


def sphere_points(count, seed=0, radius=1.0):
    directions = rng(seed).normal(size=(count, 3))
    return radius * directions / np.linalg.norm(directions, axis=1, keepdims=True)


def ball_points(count, seed=0):
    gen = rng(seed)
    directions = gen.normal(size=(count, 3))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    return directions * gen.random(count)[:, None] ** (1.0 / 3.0)


def noisy(points, sigma_level, seed=0):
    """Clean cloud and its copy with noise of std sigma_level * (max pairwise distance)."""
    from glrdenoise.evaluation import add_gaussian_noise
    clean = PointCloud(points)
    return clean, add_gaussian_noise(clean, sigma_level, seed)


# =============================================================================
# GRAPHS
# =============================================================================

def random_links(dimension, count, seed=0, max_weight=1.0):
    """count random links (a != b) with weights in (0, max_weight]."""
    gen = rng(seed)
    a = gen.integers(0, dimension, size=count)
    b = (a + gen.integers(1, dimension, size=count)) % dimension
    w = gen.uniform(1e-3, max_weight, size=count)
    return a, b, w


def dense_laplacian(dimension, a, b, w):
    L = np.zeros((dimension, dimension))
    for i, j, x in zip(a, b, w):
        if i == j:
            continue
        L[i, j] -= x
        L[j, i] -= x
        L[i, i] += x
        L[j, j] += x
    return L


def sampling_matrix(point_of_slot, n_points):
    """Materialized 0/1 matrix S with S[s, point_of_slot[s]] = 1."""
    S = np.zeros((len(point_of_slot), n_points))
    S[np.arange(len(point_of_slot)), point_of_slot] = 1.0
    return S


# =============================================================================
# BRUTE-FORCE ORACLES
# =============================================================================

def brute_knn(points, query, k):
    d = np.sqrt(np.sum((np.asarray(points) - np.asarray(query)) ** 2, axis=1))
    order = np.lexsort((np.arange(len(d)), d))[:k]
    return order.tolist(), d[order]


def brute_fps(points, count, start=0):
    points = np.asarray(points)
    chosen = [start]
    while len(chosen) < count:
        best, best_d = None, -1.0
        for i in range(len(points)):
            if i in chosen:
                continue
            d = min(np.linalg.norm(points[i] - points[j]) for j in chosen)
            if d > best_d:
                best, best_d = i, d
        chosen.append(best)
    return chosen


def brute_nearest(source, target, p=2):
    """Per-source minimum Minkowski-p distance to the target set."""
    diff = np.abs(np.asarray(source)[:, None, :] - np.asarray(target)[None, :, :])
    if p == 1:
        return diff.sum(axis=2).min(axis=1)
    return np.sqrt((diff ** 2).sum(axis=2)).min(axis=1)


def mean_nearest_distance(points):
    d = np.sqrt(np.sum((points[:, None, :] - points[None, :, :]) ** 2, axis=2))
    np.fill_diagonal(d, np.inf)
    return float(d.min(axis=1).mean())
