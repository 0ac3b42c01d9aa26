"""
core.py - Domain types, patch-center selection and patch extraction

A PointCloud is the signal being denoised; a Patch is a center plus its k nearest
points, translated so that the center sits at the origin.
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Literal, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from .config import (
    DEFAULT_CENTER_FRACTION,
    DEFAULT_CONVERGENCE_TOL,
    DEFAULT_DEGREE_NORMALIZATION,
    DEFAULT_GAMMA,
    DEFAULT_MAX_ITERATIONS,
    DEFAULT_PATCH_NEIGHBORS,
    DEFAULT_PATCH_SIZE,
    DEFAULT_PCG_MAX_ITERS,
    DEFAULT_PCG_TOL,
    DEFAULT_RNG_SEED,
    DEFAULT_SCHEDULE_R,
    DEFAULT_TAU,
    SCHEDULE_BY_SIGMA,
)
from .exceptions import EmptyInputError, InvalidCoordinateError, PatchSizeError
from .spatial import SpatialIndex, build_index, farthest_point_sample, knn_batch


# =============================================================================
# DOMAIN TYPES
# =============================================================================

@dataclass(frozen=True, eq=False)
class PointCloud:
    """Ordered, immutable set of 3D points. Index i names the same point everywhere."""

    points: np.ndarray
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        arr = np.array(self.points, dtype=np.float64, copy=True)
        if arr.size == 0:
            raise EmptyInputError()
        if arr.ndim != 2 or arr.shape[1] != 3:
            try:
                arr = arr.reshape(-1, 3)
            except ValueError:
                raise InvalidCoordinateError(f"points must be 3-vectors, got shape {arr.shape}")
        bad = np.flatnonzero(~np.all(np.isfinite(arr), axis=1))
        if bad.size:
            raise InvalidCoordinateError(f"invalid coordinate at point {int(bad[0])}")
        arr.setflags(write=False)
        object.__setattr__(self, "points", arr)

    @property
    def count(self) -> int:
        return self.points.shape[0]

    def __len__(self) -> int:
        return self.count

    def with_points(self, points: np.ndarray) -> "PointCloud":
        """New cloud with the same metadata and replaced coordinates."""
        return PointCloud(points, dict(self.metadata))


@dataclass(frozen=True, eq=False)
class Patch:
    """
    A center and its k member points.

    translated_coords[j] is the position of member_indices[j] minus the center position;
    Patch.from_cloud guarantees that relation. Direct construction only checks shapes so
    that synthetic coordinate sets can be compared.
    """

    center_index: int
    member_indices: np.ndarray
    translated_coords: np.ndarray

    def __post_init__(self):
        members = np.asarray(self.member_indices, dtype=np.int64).reshape(-1)
        coords = np.asarray(self.translated_coords, dtype=np.float64).reshape(-1, 3)
        if members.shape[0] != coords.shape[0]:
            raise ValueError(f"{members.shape[0]} member indices but {coords.shape[0]} coordinates")
        if int(self.center_index) not in set(members.tolist()):
            raise ValueError(f"center {self.center_index} is not a member of its patch")
        members.setflags(write=False)
        coords.setflags(write=False)
        object.__setattr__(self, "center_index", int(self.center_index))
        object.__setattr__(self, "member_indices", members)
        object.__setattr__(self, "translated_coords", coords)

    @property
    def k(self) -> int:
        return self.member_indices.shape[0]

    @classmethod
    def from_cloud(cls, cloud: PointCloud, center_index: int, member_indices: Sequence[int]) -> "Patch":
        members = np.asarray(member_indices, dtype=np.int64)
        coords = cloud.points[members] - cloud.points[center_index]
        return cls(center_index, members, coords)


class SeedStrategy(str, Enum):
    """How farthest point sampling picks its first point."""

    FIRST_INDEX = "first_index"
    SEEDED = "seeded"


class DenoiseConfig(BaseModel):
    """All tunables of the denoising loop."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    sigma_level: Optional[float] = Field(default=None, ge=0)
    patch_size: int = Field(default=DEFAULT_PATCH_SIZE, gt=0)
    patch_neighbors: int = Field(default=DEFAULT_PATCH_NEIGHBORS, gt=0)
    center_fraction: float = Field(default=DEFAULT_CENTER_FRACTION, gt=0, le=1)
    tau: float = Field(default=DEFAULT_TAU, gt=0)
    gamma: float = Field(default=DEFAULT_GAMMA, gt=0)
    degree_normalization: Literal["gamma", "inverse_gamma"] = DEFAULT_DEGREE_NORMALIZATION
    schedule_r: Optional[int] = Field(default=None, gt=0)
    max_iterations: int = Field(default=DEFAULT_MAX_ITERATIONS, ge=0)
    convergence_tol: float = Field(default=DEFAULT_CONVERGENCE_TOL, gt=0)
    pcg_tol: float = Field(default=DEFAULT_PCG_TOL, gt=0)
    pcg_max_iters: int = Field(default=DEFAULT_PCG_MAX_ITERS, gt=0)
    rng_seed: int = Field(default=DEFAULT_RNG_SEED, ge=-(2 ** 63), lt=2 ** 64)
    seed_strategy: SeedStrategy = SeedStrategy.FIRST_INDEX
    radius_multiplier: Optional[float] = Field(default=None, gt=0)
    interpolation_weighting: Literal["proportional", "inverse"] = "proportional"
    normalized_laplacian: bool = False

    @field_validator("radius_multiplier", mode="before")
    @classmethod
    def _unbounded_radius(cls, value):
        if isinstance(value, str) and value.strip().lower() in ("off", "unbounded", "none", ""):
            return None
        return value

    @property
    def effective_schedule_r(self) -> int:
        """schedule_r if given, else the table entry for sigma_level, else the middle setting."""
        if self.schedule_r is not None:
            return self.schedule_r
        return schedule_for_sigma(self.sigma_level)


def schedule_for_sigma(sigma: Optional[float]) -> int:
    """Maps a noise level to the mu schedule denominator (0.02 -> 4, 0.03 -> 7, 0.04 -> 12)."""
    if sigma is not None:
        for level, r in SCHEDULE_BY_SIGMA.items():
            if math.isclose(sigma, level, rel_tol=1e-9, abs_tol=1e-12):
                return r
    return DEFAULT_SCHEDULE_R


class IterationRecord(BaseModel):
    """Diagnostics of one outer iteration."""

    iteration: int
    mu: float
    mean_displacement: float
    pcg_iterations: List[int]
    pcg_converged: bool
    edge_count: int
    epsilon: float
    objective_before: float
    objective_after: float

    def to_row(self) -> Dict[str, Any]:
        return {
            "iteration": self.iteration,
            "mu": self.mu,
            "mean_displacement": self.mean_displacement,
            "pcg_iterations_x": self.pcg_iterations[0],
            "pcg_iterations_y": self.pcg_iterations[1],
            "pcg_iterations_z": self.pcg_iterations[2],
            "pcg_converged": self.pcg_converged,
            "edge_count": self.edge_count,
            "epsilon": self.epsilon,
            "objective_before": self.objective_before,
            "objective_after": self.objective_after,
        }


class DenoiseReport(BaseModel):
    """Per-iteration diagnostics of a denoise run."""

    iterations_run: int = 0
    per_iteration: List[IterationRecord] = Field(default_factory=list)
    converged: bool = False


# =============================================================================
# OPERATIONS
# =============================================================================

def select_patch_centers(cloud: PointCloud, fraction: float,
                         seed_strategy: SeedStrategy = SeedStrategy.FIRST_INDEX,
                         seed: Optional[int] = None) -> List[int]:
    """
    Picks ceil(fraction * N) distinct patch centers by farthest point sampling.

    FIRST_INDEX starts at point 0; SEEDED starts at a point drawn from PCG64(seed).
    """
    if cloud is None or len(getattr(cloud, "points", ())) == 0:
        raise EmptyInputError()
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")

    n = cloud.count
    count = min(n, max(1, math.ceil(fraction * n)))
    start = 0
    if SeedStrategy(seed_strategy) is SeedStrategy.SEEDED:
        # negative 64-bit seeds map to their two's complement
        rng = np.random.Generator(np.random.PCG64((seed or 0) & 0xFFFFFFFFFFFFFFFF))
        start = int(rng.integers(n))
    return farthest_point_sample(cloud.points, count, start)


def extract_patches(cloud: PointCloud, center_indices: Sequence[int], k: int,
                    index: Optional[SpatialIndex] = None) -> List[Patch]:
    """Patches of the k nearest points around each center, ties to the lower index."""
    if k > cloud.count:
        raise PatchSizeError()
    if index is None:
        index = build_index(cloud.points)
    centers = np.asarray(center_indices, dtype=np.int64).reshape(-1)
    if centers.size == 0:
        return []
    members, _ = knn_batch(index, cloud.points[centers], k)

    patches = []
    for center, row in zip(centers.tolist(), members):
        if center not in row:
            # Duplicate points at distance 0 can push the center out of its own top k
            row = np.concatenate(([center], row[row != center][:k - 1]))
        patches.append(Patch.from_cloud(cloud, center, row))
    return patches


def extract_patch(cloud: PointCloud, center_index: int, k: int,
                  index: Optional[SpatialIndex] = None) -> Patch:
    """The patch of the k nearest points to one center."""
    return extract_patches(cloud, [center_index], k, index)[0]


def ensure_coverage(cloud: PointCloud, patches: List[Patch], k: Optional[int] = None,
                    index: Optional[SpatialIndex] = None) -> List[Patch]:
    """
    Appends patches centered at uncovered points, lowest index first, until the union of
    all members is the whole cloud. Returns the input list itself when nothing is missing.
    """
    covered = np.zeros(cloud.count, dtype=bool)
    for patch in patches:
        covered[patch.member_indices] = True
    if covered.all():
        return patches

    if k is None:
        if not patches:
            raise ValueError("k is required when no patches are given")
        k = patches[0].k
    if index is None:
        index = build_index(cloud.points)

    extended = list(patches)
    for point in np.flatnonzero(~covered).tolist():
        if covered[point]:
            continue
        patch = extract_patch(cloud, point, k, index)
        covered[patch.member_indices] = True
        extended.append(patch)
    return extended
