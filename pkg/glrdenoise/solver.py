"""
solver.py - Linear systems, conjugate gradient solves and the outer denoising loop

Each outer iteration fixes the point-domain Laplacian L_p built from the current iterate
and minimizes, per coordinate,

    (S u - c)^T L_p (S u - c) + mu ||u - v||^2

whose normal equations are (S^T L_p S + mu I) u = mu v + S^T L_p c. The data term v is
the previous iterate, and mu grows along the iterations.
"""

import math
import time
from dataclasses import dataclass
from typing import List, Optional, Tuple, Union

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import cg

from .config import (
    DEFAULT_PCG_MAX_ITERS,
    DEFAULT_PCG_TOL,
    MU_SCALE,
    SPECTRAL_ORACLE_LIMIT,
)
from .core import (
    DenoiseConfig,
    DenoiseReport,
    IterationRecord,
    Patch,
    PointCloud,
    ensure_coverage,
    extract_patches,
    select_patch_centers,
)
from .exceptions import (
    CoverageError,
    DimensionMismatchError,
    NumericalBreakdownError,
    OracleLimitError,
    PatchSizeError,
    PipelineStageError,
)
from .graph import PatchGraph, SparseSymmetricMatrix, build_patch_graph, normalize_laplacian
from .normals import estimate_normals
from .spatial import build_index, estimate_diameter
from .utils.logger import get_logger, log_diagnostic, slog
from .utils.workers import ordered_map

logger = get_logger(__name__)

COMPONENT = "solver"

AXES = {"x": 0, "y": 1, "z": 2}


@dataclass(frozen=True, eq=False)
class LinearSystem:
    """
    (S^T L_p S + mu I) U = mu V + S^T L_p C for the three coordinates.

    S is kept as point_of_slot: slot s of the stacked patch coordinates holds point
    point_of_slot[s].
    """

    system_matrix: SparseSymmetricMatrix
    regularizer: SparseSymmetricMatrix  # S^T L_p S
    rhs: np.ndarray  # (N, 3)
    mu: float
    laplacian: SparseSymmetricMatrix  # L_p
    point_of_slot: np.ndarray  # (kM,)
    stacked_centers: np.ndarray  # (kM, 3), C
    reference: np.ndarray  # (N, 3), V

    @property
    def size(self) -> int:
        return self.rhs.shape[0]


@dataclass(frozen=True)
class PCGResult:
    solution: np.ndarray
    iterations: int
    converged: bool
    relative_residual: float


def mu_schedule(iteration: int, schedule_r: int) -> float:
    """mu = 25 (exp(iteration / r) - 1); 0 at iteration 0."""
    if iteration < 0:
        raise ValueError(f"iteration must be nonnegative, got {iteration}")
    if schedule_r <= 0:
        raise ValueError(f"schedule_r must be positive, got {schedule_r}")
    return MU_SCALE * math.expm1(iteration / schedule_r)


def _index_map(patch_index_map) -> Tuple[np.ndarray, np.ndarray]:
    """(point_of_slot, patch sizes) from an (M, k) array or a list of member lists."""
    if isinstance(patch_index_map, np.ndarray) and patch_index_map.ndim == 2:
        sizes = np.full(patch_index_map.shape[0], patch_index_map.shape[1])
        return patch_index_map.reshape(-1).astype(np.int64), sizes
    members = [np.asarray(getattr(p, "member_indices", p), dtype=np.int64).reshape(-1) for p in patch_index_map]
    sizes = np.array([m.shape[0] for m in members], dtype=np.int64)
    if not members:
        return np.zeros(0, dtype=np.int64), sizes
    return np.concatenate(members), sizes


def build_system(laplacian: SparseSymmetricMatrix, patch_index_map, centers, V, mu: float) -> LinearSystem:
    """
    Assembles S^T L_p S + mu I and the three right-hand sides with index gathers and
    scatters over the stacked patch slots.

    Args:
        laplacian: L_p over the kM stacked slots
        patch_index_map: (M, k) member indices, or one member list (or Patch) per patch
        centers: (M, 3) patch center coordinates
        V: (N, 3) data term
        mu: fidelity weight, positive
    """
    if mu <= 0:
        raise ValueError(f"mu must be positive, got {mu}")
    V = np.asarray(getattr(V, "points", V), dtype=np.float64).reshape(-1, 3)
    centers = np.asarray(centers, dtype=np.float64).reshape(-1, 3)
    n_points = V.shape[0]
    point_of_slot, sizes = _index_map(patch_index_map)

    if point_of_slot.shape[0] != laplacian.dimension:
        raise DimensionMismatchError(f"{point_of_slot.shape[0]} patch slots for a Laplacian of "
                                     f"dimension {laplacian.dimension}")
    if sizes.shape[0] != centers.shape[0]:
        raise DimensionMismatchError(f"{sizes.shape[0]} patches but {centers.shape[0]} centers")
    if point_of_slot.size and (point_of_slot.min() < 0 or point_of_slot.max() >= n_points):
        raise CoverageError(f"patch member out of range [0, {n_points})")
    if np.any(np.bincount(point_of_slot, minlength=n_points)[:n_points] == 0):
        raise CoverageError()

    rows, cols, vals = laplacian.entries()
    diag = np.arange(n_points)
    regularizer = SparseSymmetricMatrix.from_triplets(
        n_points, point_of_slot[rows], point_of_slot[cols], vals)
    system_matrix = SparseSymmetricMatrix.from_triplets(
        n_points,
        np.concatenate([point_of_slot[rows], diag]),
        np.concatenate([point_of_slot[cols], diag]),
        np.concatenate([vals, np.full(n_points, float(mu))]),
    )

    stacked = np.repeat(centers, sizes, axis=0)
    pulled = laplacian.matrix @ stacked
    scattered = np.column_stack([
        np.bincount(point_of_slot, weights=pulled[:, axis], minlength=n_points) for axis in range(3)
    ])
    rhs = mu * V + scattered

    return LinearSystem(system_matrix=system_matrix, regularizer=regularizer, rhs=rhs, mu=float(mu),
                        laplacian=laplacian, point_of_slot=point_of_slot, stacked_centers=stacked,
                        reference=V.copy())


def _axis(which: Union[int, str]) -> int:
    if isinstance(which, str):
        if which.lower() not in AXES:
            raise ValueError(f"unknown axis '{which}'")
        return AXES[which.lower()]
    if which not in (0, 1, 2):
        raise ValueError(f"unknown axis {which}")
    return int(which)


def pcg_solve(system: LinearSystem, which: Union[int, str], tol: float = DEFAULT_PCG_TOL,
              max_iters: int = DEFAULT_PCG_MAX_ITERS, x0: Optional[np.ndarray] = None) -> PCGResult:
    """Jacobi-preconditioned conjugate gradient for one coordinate."""
    axis = _axis(which)
    A = system.system_matrix.matrix
    b = system.rhs[:, axis]
    if x0 is None:
        x0 = system.reference[:, axis]
    if not (np.all(np.isfinite(b)) and np.all(np.isfinite(A.data))):
        raise NumericalBreakdownError()

    inverse_diag = 1.0 / A.diagonal()
    preconditioner = sparse.diags(inverse_diag)
    steps = [0]

    def count(_):
        steps[0] += 1

    x, info = cg(A, b, x0=np.array(x0, dtype=np.float64), rtol=tol, atol=0.0, maxiter=max_iters,
                 M=preconditioner, callback=count)
    if info < 0 or not np.all(np.isfinite(x)):
        raise NumericalBreakdownError()

    b_norm = float(np.linalg.norm(b))
    residual = float(np.linalg.norm(b - A @ x))
    relative = residual / b_norm if b_norm > 0 else residual
    return PCGResult(solution=x, iterations=steps[0], converged=info == 0, relative_residual=relative)


def solve_coordinate(system: LinearSystem, which: Union[int, str], tol: float = DEFAULT_PCG_TOL,
                     max_iters: int = DEFAULT_PCG_MAX_ITERS) -> np.ndarray:
    """Solution for one coordinate; logs a warning when PCG stops at its iteration cap."""
    result = pcg_solve(system, which, tol, max_iters)
    if not result.converged:
        log_diagnostic(logger, "PCG stopped before reaching the tolerance", component=COMPONENT,
                       operation="solve_coordinate", hint="raise pcg_max_iters or loosen pcg_tol",
                       expected=f"relative residual <= {tol}", actual=result.relative_residual,
                       axis=which, iterations=result.iterations)
    return result.solution


def spectral_filter_reference(laplacian: SparseSymmetricMatrix, mu: float, rhs) -> np.ndarray:
    """Dense graph-spectral filter x = Phi diag(1 / (lambda + mu)) Phi^T rhs = (L + mu I)^-1 rhs."""
    if laplacian.dimension > SPECTRAL_ORACLE_LIMIT:
        raise OracleLimitError()
    rhs = np.asarray(rhs, dtype=np.float64)
    if rhs.shape[0] != laplacian.dimension:
        raise DimensionMismatchError(f"rhs of length {rhs.shape[0]} for dimension {laplacian.dimension}")
    eigvals, eigvecs = np.linalg.eigh(laplacian.to_dense())
    gains = 1.0 / (eigvals + mu)
    coeffs = eigvecs.T @ rhs
    if coeffs.ndim == 1:
        return eigvecs @ (gains * coeffs)
    return eigvecs @ (gains[:, None] * coeffs)


def spectral_response(laplacian: SparseSymmetricMatrix, mu: float) -> Tuple[np.ndarray, np.ndarray]:
    """Graph frequencies (ascending eigenvalues of L) and the low-pass gains 1 / (lambda + mu)."""
    if laplacian.dimension > SPECTRAL_ORACLE_LIMIT:
        raise OracleLimitError()
    eigvals = np.linalg.eigvalsh(laplacian.to_dense())
    return eigvals, 1.0 / (eigvals + mu)


def objective(system: LinearSystem, U) -> float:
    """tr((S U - C)^T L_p (S U - C)) + mu ||V - U||^2 with the system's L_p, C and V."""
    U = np.asarray(getattr(U, "points", U), dtype=np.float64).reshape(-1, 3)
    if U.shape[0] != system.size:
        raise DimensionMismatchError(f"{U.shape[0]} points for a system of size {system.size}")
    residual = U[system.point_of_slot] - system.stacked_centers
    smoothness = float(np.einsum("si,si->", residual, system.laplacian.matrix @ residual))
    return smoothness + system.mu * float(np.sum((system.reference - U) ** 2))


# =============================================================================
# OUTER LOOP
# =============================================================================

@dataclass(frozen=True, eq=False)
class IterationGraph:
    """Patches, normals and patch graph built from one iterate."""

    patches: List[Patch]
    coords: np.ndarray  # (M, k, 3)
    member_ids: np.ndarray  # (M, k)
    centers: np.ndarray  # (M, 3)
    normals: np.ndarray
    degenerate: np.ndarray
    graph: PatchGraph
    laplacian: SparseSymmetricMatrix


def build_iteration_graph(cloud: PointCloud, config: DenoiseConfig, iteration: int = 0,
                          workers: Optional[int] = None) -> IterationGraph:
    """
    Center selection, patch extraction with coverage, normals, the patch graph and L_p
    for one iterate. Errors are raised as PipelineStageError naming the stage.
    """
    stage = "patches"
    try:
        points = cloud.points
        index = build_index(points)
        centers = select_patch_centers(cloud, config.center_fraction, config.seed_strategy, config.rng_seed)
        sampled = extract_patches(cloud, centers, config.patch_size, index)
        patches = ensure_coverage(cloud, sampled, config.patch_size, index)
        if len(patches) > len(sampled):
            log_diagnostic(logger, "Coverage patches added", component=COMPONENT, operation="ensure_coverage",
                           hint="raise center_fraction or patch_size", iteration=iteration,
                           added=len(patches) - len(sampled))

        stage = "normals"
        coords = np.stack([p.translated_coords for p in patches])
        member_ids = np.stack([p.member_indices for p in patches])
        center_xyz = points[[p.center_index for p in patches]]
        normals, degenerate = estimate_normals(coords)
        if degenerate.any():
            log_diagnostic(logger, "Degenerate patch normals", component=COMPONENT, operation="estimate_normals",
                           hint="flat or isotropic patches use the tie-break normal", iteration=iteration,
                           count=int(degenerate.sum()))

        stage = "graph"
        graph = build_patch_graph(coords, member_ids, normals, center_xyz, config.patch_neighbors,
                                  tau=config.tau, gamma=config.gamma,
                                  radius_multiplier=config.radius_multiplier,
                                  weighting=config.interpolation_weighting, workers=workers,
                                  normalization=config.degree_normalization)
        laplacian = graph.point_laplacian()
        if config.normalized_laplacian:
            laplacian = normalize_laplacian(laplacian)
    except Exception as exc:
        log_diagnostic(logger, "Graph construction failed", component=COMPONENT, operation="build_iteration_graph",
                       error=exc, iteration=iteration, stage=stage)
        raise PipelineStageError(iteration, stage, exc) from exc

    matches = graph.matches
    slog(logger, "INFO", "Graph built", component=COMPONENT, operation="graph_built",
         iteration=iteration, patches=len(patches), edges=graph.edge_count, epsilon=graph.epsilon,
         degenerate_normals=int(degenerate.sum()), interpolated=matches.interpolated_count,
         fallbacks=matches.fallback_count)
    if matches.fallback_count:
        log_diagnostic(logger, "Interpolation fell back to replacement", component=COMPONENT,
                       operation="patch_distance", iteration=iteration, count=matches.fallback_count)

    return IterationGraph(patches=patches, coords=coords, member_ids=member_ids, centers=center_xyz,
                          normals=normals, degenerate=degenerate, graph=graph, laplacian=laplacian)


def denoise(cloud: PointCloud, config: Optional[DenoiseConfig] = None,
            workers: Optional[int] = None) -> Tuple[PointCloud, DenoiseReport]:
    """
    Alternates graph construction on the current iterate with the three coordinate
    solves until the mean displacement drops to convergence_tol times the input
    diameter or max_iterations is reached.

    Any error inside an iteration is re-raised as PipelineStageError carrying the
    iteration number and the stage name.
    """
    config = config or DenoiseConfig()
    if config.patch_size > cloud.count:
        raise PatchSizeError()

    start = time.time()
    diameter = estimate_diameter(cloud)
    threshold = config.convergence_tol * diameter
    schedule_r = config.effective_schedule_r
    current = np.array(cloud.points, dtype=np.float64)
    report = DenoiseReport()

    slog(logger, "INFO", "Denoising started", component=COMPONENT, operation="denoise",
         points=cloud.count, diameter=diameter, effective_schedule_r=schedule_r, **config.model_dump(mode="json"))

    for iteration in range(1, config.max_iterations + 1):
        slog(logger, "DEBUG", "Iteration started", component=COMPONENT, operation="iteration_start",
             iteration=iteration)
        built = build_iteration_graph(cloud.with_points(current), config, iteration, workers)
        graph = built.graph

        stage = "system"
        try:
            mu = mu_schedule(iteration, schedule_r)
            system = build_system(built.laplacian, built.member_ids, built.centers, current, mu)
            before = objective(system, current)

            stage = "solve"
            results = ordered_map(
                lambda axis: pcg_solve(system, axis, config.pcg_tol, config.pcg_max_iters),
                range(3), workers)
            updated = np.column_stack([r.solution for r in results])
            after = objective(system, updated)
        except Exception as exc:
            log_diagnostic(logger, "Denoising iteration failed", component=COMPONENT, operation="denoise",
                           error=exc, iteration=iteration, stage=stage)
            raise PipelineStageError(iteration, stage, exc) from exc

        converged_solves = all(r.converged for r in results)
        if not converged_solves:
            log_diagnostic(logger, "PCG stopped before reaching the tolerance", component=COMPONENT,
                           operation="solve_coordinate", hint="raise pcg_max_iters or loosen pcg_tol",
                           iteration=iteration, residuals=[r.relative_residual for r in results])

        displacement = float(np.mean(np.linalg.norm(updated - current, axis=1)))
        record = IterationRecord(
            iteration=iteration,
            mu=mu,
            mean_displacement=displacement,
            pcg_iterations=[r.iterations for r in results],
            pcg_converged=converged_solves,
            edge_count=graph.edge_count,
            epsilon=graph.epsilon,
            objective_before=before,
            objective_after=after,
        )
        report.per_iteration.append(record)
        report.iterations_run = iteration
        current = updated

        slog(logger, "INFO", "Iteration complete", component=COMPONENT, operation="iteration_complete",
             iteration=iteration, mu=mu, mean_displacement=displacement,
             pcg_iterations=record.pcg_iterations, objective_before=before, objective_after=after)

        if displacement <= threshold:
            report.converged = True
            break

    slog(logger, "INFO", "Denoising complete", component=COMPONENT, operation="solve_complete",
         iterations=report.iterations_run, converged=report.converged,
         duration_ms=round((time.time() - start) * 1000, 1))
    return cloud.with_points(current), report
