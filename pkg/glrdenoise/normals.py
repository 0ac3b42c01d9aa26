"""
normals.py - Patch normals by PCA and projection onto the patch reference plane

The covariance is taken about the patch center (the origin of translated coordinates),
not about the centroid. Normals are canonically oriented: the component of largest
magnitude is nonnegative.
"""

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .config import EIGEN_TIE_RTOL
from .exceptions import UnderdeterminedNormalError


@dataclass(frozen=True, eq=False)
class ReferenceFrame:
    """Unit normal of a reference plane through the origin."""

    normal: np.ndarray
    degenerate: bool = False


@dataclass(frozen=True, eq=False)
class PlanarProjection:
    """In-plane projections and signed displacements along the normal."""

    projections: np.ndarray
    displacements: np.ndarray


def _coords(patch_or_coords) -> np.ndarray:
    coords = getattr(patch_or_coords, "translated_coords", patch_or_coords)
    return np.asarray(coords, dtype=np.float64).reshape(-1, 3)


def canonical_orientation(normals: np.ndarray) -> np.ndarray:
    """Flips each row so that its largest-magnitude component is nonnegative."""
    normals = np.atleast_2d(np.asarray(normals, dtype=np.float64))
    lead = np.argmax(np.abs(normals), axis=1)
    signs = np.where(normals[np.arange(len(normals)), lead] < 0, -1.0, 1.0)
    return normals * signs[:, None]


def patch_covariance(patch) -> np.ndarray:
    """Q = (1/k) sum v v^T over the translated coordinates."""
    coords = _coords(patch)
    return coords.T @ coords / coords.shape[0]


def estimate_normals(coords: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Normals of many equally sized patches at once.

    Args:
        coords: (M, k, 3) translated coordinates

    Returns:
        (normals (M, 3), degenerate (M,) bool)
    """
    coords = np.asarray(coords, dtype=np.float64)
    if coords.shape[1] < 3:
        raise UnderdeterminedNormalError()

    cov = np.einsum("mki,mkj->mij", coords, coords) / coords.shape[1]
    eigvals, eigvecs = np.linalg.eigh(cov)

    normals = canonical_orientation(eigvecs[:, :, 0])
    scale = np.abs(eigvals[:, 2])
    degenerate = (eigvals[:, 1] - eigvals[:, 0]) <= EIGEN_TIE_RTOL * scale

    for m in np.flatnonzero(degenerate):
        # Tied smallest eigenvalues: take the lexicographically largest canonical candidate
        candidates = canonical_orientation(eigvecs[m][:, :2].T)
        best = max(range(2), key=lambda c: tuple(candidates[c]))
        normals[m] = candidates[best]

    return normals, degenerate


def estimate_normal(patch) -> ReferenceFrame:
    """Unit eigenvector of the patch covariance for its smallest eigenvalue."""
    coords = _coords(patch)
    if coords.shape[0] < 3:
        raise UnderdeterminedNormalError()
    normals, degenerate = estimate_normals(coords[None])
    return ReferenceFrame(normal=normals[0], degenerate=bool(degenerate[0]))


def project_to_plane(points, frame: ReferenceFrame) -> PlanarProjection:
    """Splits each point into its projection on the plane and its signed displacement v . n."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    normal = np.asarray(getattr(frame, "normal", frame), dtype=np.float64)
    displacements = pts @ normal
    projections = pts - displacements[:, None] * normal[None, :]
    return PlanarProjection(projections=projections, displacements=displacements)
