"""
graph.py - Patch graph, point-domain Laplacian assembly and spectral diagnostics

Patch pairs among the K nearest centers are weighted by a degree-normalized,
thresholded Gaussian of their patch distance:

    w_mn = (rho_m rho_n)^(-gamma) * exp(-d_mn^2 / (2 eps^2))   if d_mn < r, else 0

The "inverse_gamma" normalization swaps the power for -1/gamma.

Each weighted pair contributes the Laplacian of its point correspondences, scaled by
w_mn, to the kM x kM point-domain Laplacian L_p.
"""

import math
from dataclasses import dataclass
from typing import Iterable, Iterator, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import sparse
from scipy.spatial.distance import pdist

from .config import (
    DEFAULT_DEGREE_NORMALIZATION,
    DEFAULT_GAMMA,
    DEFAULT_TAU,
    EPSILON_SCALE,
    EPSILON_SPREAD_RTOL,
    LAPLACIAN_ROW_SUM_TOL,
)
from .exceptions import DimensionMismatchError, InvalidGraphError, NeighborCountError
from .patchdist import Correspondence, CorrespondenceSet, PairMatches, Weighting, measure_patch_pairs
from .spatial import build_index, knn_batch
from .utils.logger import get_logger, slog

logger = get_logger(__name__)

COMPONENT = "graph"

DegreeNormalization = Literal["gamma", "inverse_gamma"]


# =============================================================================
# SPARSE SYMMETRIC MATRIX
# =============================================================================

@dataclass(frozen=True, eq=False)
class SparseSymmetricMatrix:
    """Immutable symmetric matrix in CSR storage (both triangles stored)."""

    matrix: sparse.csr_matrix

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    def entries(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(row, col, value) of the stored nonzeros in row-major order."""
        coo = self.matrix.tocoo()
        return coo.row, coo.col, coo.data

    def diagonal(self) -> np.ndarray:
        return self.matrix.diagonal()

    def to_dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def row_sums(self) -> np.ndarray:
        return np.asarray(self.matrix.sum(axis=1)).ravel()

    def is_laplacian(self, tol: float = LAPLACIAN_ROW_SUM_TOL) -> bool:
        """Symmetric, nonpositive off-diagonal and zero row sums within tol."""
        diff = abs(self.matrix - self.matrix.T)
        if diff.nnz and diff.max() > tol:
            return False
        off = self.matrix - sparse.diags(self.diagonal())
        if off.nnz and off.max() > tol:
            return False
        scale = max(1.0, float(np.abs(self.diagonal()).max(initial=0.0)))
        return bool(np.all(np.abs(self.row_sums()) <= tol * scale))

    @classmethod
    def zeros(cls, dimension: int) -> "SparseSymmetricMatrix":
        return cls(sparse.csr_matrix((dimension, dimension)))

    @classmethod
    def from_triplets(cls, dimension: int, rows, cols, values) -> "SparseSymmetricMatrix":
        """Sums duplicate (row, col) entries in input order."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        values = np.asarray(values, dtype=np.float64)
        if rows.size and (rows.min() < 0 or cols.min() < 0 or max(rows.max(), cols.max()) >= dimension):
            raise InvalidGraphError(f"entry index out of range [0, {dimension})")
        matrix = sparse.coo_matrix((values, (rows, cols)), shape=(dimension, dimension)).tocsr()
        matrix.sum_duplicates()
        matrix.sort_indices()
        return cls(matrix)

    @classmethod
    def laplacian_from_links(cls, dimension: int, a, b, weights) -> "SparseSymmetricMatrix":
        """
        Combinatorial Laplacian D - A of undirected links (a_i, b_i, w_i). Repeated links
        add up; self-links carry no energy and are dropped.
        """
        a = np.asarray(a, dtype=np.int64)
        b = np.asarray(b, dtype=np.int64)
        weights = np.asarray(weights, dtype=np.float64)
        if a.size and (min(a.min(), b.min()) < 0 or max(a.max(), b.max()) >= dimension):
            raise InvalidGraphError(f"link index out of range [0, {dimension})")
        if np.any(weights < 0) or not np.all(np.isfinite(weights)):
            raise InvalidGraphError("link weights must be finite and nonnegative")
        keep = a != b
        a, b, weights = a[keep], b[keep], weights[keep]

        rows = np.concatenate([a, b])
        cols = np.concatenate([b, a])
        adjacency = sparse.coo_matrix((np.concatenate([weights, weights]), (rows, cols)),
                                      shape=(dimension, dimension)).tocsr()
        degree = np.asarray(adjacency.sum(axis=1)).ravel()
        laplacian = (sparse.diags(degree) - adjacency).tocsr()
        laplacian.sum_duplicates()
        laplacian.sort_indices()
        return cls(laplacian)


# =============================================================================
# PATCH GRAPH
# =============================================================================

@dataclass(frozen=True, eq=False)
class PatchGraph:
    """
    Candidate patch pairs with their distances and weights.

    Pairs whose weight is 0 are kept in the candidate arrays (they count toward rho)
    but are not edges.
    """

    pairs: np.ndarray  # (E, 2), m < n
    distances: np.ndarray
    weights: np.ndarray
    epsilon: float
    radius: Optional[float]  # None = unbounded
    rho: np.ndarray  # (M,)
    matches: Optional[PairMatches] = None

    @property
    def patch_count(self) -> int:
        return self.rho.shape[0]

    @property
    def edge_mask(self) -> np.ndarray:
        return self.weights > 0

    @property
    def edge_count(self) -> int:
        return int(self.edge_mask.sum())

    def edges(self) -> Iterator[Tuple[int, int, float, float, Optional[CorrespondenceSet]]]:
        """(m, n, d_mn, w_mn, correspondences) for every edge with positive weight."""
        for e in np.flatnonzero(self.edge_mask):
            m, n = self.pairs[e]
            pairs = self.matches.correspondences(int(e)) if self.matches is not None else None
            yield int(m), int(n), float(self.distances[e]), float(self.weights[e]), pairs

    def patch_laplacian(self) -> SparseSymmetricMatrix:
        """M x M Laplacian of the patch-level graph."""
        return SparseSymmetricMatrix.laplacian_from_links(
            self.patch_count, self.pairs[:, 0], self.pairs[:, 1], self.weights)

    def subgraphs(self) -> Iterator[Tuple[SparseSymmetricMatrix, np.ndarray]]:
        """(L_mn, index map into the kM stacked coordinates) per edge."""
        if self.matches is None:
            raise InvalidGraphError("graph has no point correspondences")
        k = self.matches.k
        for m, n, _, w, pairs in self.edges():
            index_map = np.concatenate([np.arange(m * k, m * k + k), np.arange(n * k, n * k + k)])
            yield build_subgraph_laplacian(pairs, w, 2 * k), index_map

    def point_laplacian(self) -> SparseSymmetricMatrix:
        """L_p over the kM stacked patch coordinates."""
        if self.matches is None:
            raise InvalidGraphError("graph has no point correspondences")
        dimension = self.patch_count * self.matches.k
        a, b, w = self.matches.links(self.weights)
        return SparseSymmetricMatrix.laplacian_from_links(dimension, a, b, w)


def patch_knn_edges(centers, K: int) -> List[Tuple[int, int]]:
    """
    Union of every center's K nearest other centers as undirected pairs (m < n), sorted.
    """
    pts = np.asarray(centers, dtype=np.float64).reshape(-1, 3)
    count = pts.shape[0]
    if K < 1 or K >= count:
        raise NeighborCountError(f"K={K} must be in [1, {count - 1}] for {count} centers")

    index = build_index(pts)
    nearest, _ = knn_batch(index, pts, K + 1)
    own = np.arange(count)[:, None]
    is_self = nearest == own
    # Without self in the row (duplicate centers), the farthest candidate goes instead
    drop = np.where(is_self.any(axis=1)[:, None], is_self, np.arange(K + 1)[None, :] == K)
    others = nearest[~drop].reshape(count, K)

    m = np.repeat(np.arange(count), K)
    n = others.reshape(-1)
    pairs = np.stack([np.minimum(m, n), np.maximum(m, n)], axis=1)
    pairs = np.unique(pairs, axis=0)
    return [(int(a), int(b)) for a, b in pairs]


def epsilon_from_distances(distances: Sequence[float]) -> float:
    """eps = 0.5 * sqrt(population std of d^2); falls back to mean(d), then to 1."""
    d = np.asarray(distances, dtype=np.float64).reshape(-1)
    if d.size == 0:
        raise ValueError("epsilon needs at least one distance")
    squared = d ** 2
    spread = float(np.std(squared))
    if spread > EPSILON_SPREAD_RTOL * float(squared.mean()):
        return EPSILON_SCALE * math.sqrt(spread)
    mean = float(d.mean())
    return mean if mean > 0 else 1.0


def kernel(distances, epsilon: float, radius: Optional[float] = None) -> np.ndarray:
    """Thresholded Gaussian psi(d) = exp(-d^2 / 2 eps^2) for d < r, else 0."""
    d = np.asarray(distances, dtype=np.float64)
    psi = np.exp(-(d ** 2) / (2.0 * epsilon ** 2))
    if radius is not None:
        psi = np.where(d < radius, psi, 0.0)
    return psi


def degrees(pairs: np.ndarray, psi: np.ndarray, count: int) -> np.ndarray:
    """rho_n = 1 + sum of psi over the candidate pairs incident to n (the 1 is psi(0))."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    rho = np.ones(count)
    rho += np.bincount(pairs[:, 0], weights=psi, minlength=count)
    rho += np.bincount(pairs[:, 1], weights=psi, minlength=count)
    return rho


def degree_exponent(gamma: float, normalization: DegreeNormalization = DEFAULT_DEGREE_NORMALIZATION) -> float:
    """Power applied to rho_m * rho_n: -gamma, or -1/gamma for "inverse_gamma"."""
    if normalization == "gamma":
        return -gamma
    if normalization == "inverse_gamma":
        return -1.0 / gamma
    raise InvalidGraphError(f"unknown degree normalization '{normalization}'")


def edge_weights(distances, epsilon: float, radius: Optional[float], rho_m, rho_n,
                 gamma: float = DEFAULT_GAMMA,
                 normalization: DegreeNormalization = DEFAULT_DEGREE_NORMALIZATION) -> np.ndarray:
    """Vectorized edge_weight."""
    if epsilon <= 0 or gamma <= 0:
        raise InvalidGraphError(f"epsilon and gamma must be positive, got {epsilon}, {gamma}")
    rho_m = np.asarray(rho_m, dtype=np.float64)
    rho_n = np.asarray(rho_n, dtype=np.float64)
    if np.any(rho_m <= 0) or np.any(rho_n <= 0):
        raise InvalidGraphError("degrees must be positive")
    return (rho_m * rho_n) ** degree_exponent(gamma, normalization) * kernel(distances, epsilon, radius)


def edge_weight(d: float, epsilon: float, r: Optional[float], rho_m: float, rho_n: float,
                gamma: float = DEFAULT_GAMMA,
                normalization: DegreeNormalization = DEFAULT_DEGREE_NORMALIZATION) -> float:
    """Weight of one patch pair; r=None or inf means unbounded."""
    radius = None if r is None or math.isinf(r) else r
    return float(edge_weights(d, epsilon, radius, rho_m, rho_n, gamma, normalization))


# =============================================================================
# LAPLACIANS
# =============================================================================

def build_subgraph_laplacian(correspondences: Union[CorrespondenceSet, Iterable[Correspondence]],
                             w_mn: float, patch_pair_size: int) -> SparseSymmetricMatrix:
    """Laplacian of one patch pair's correspondence graph with link weights scaled by w_mn."""
    if isinstance(correspondences, CorrespondenceSet):
        a, b, w = correspondences.links()
    else:
        a_list, b_list, w_list = [], [], []
        for c in correspondences:
            for slot, share in zip(c.target_slots, c.weights):
                a_list.append(c.source_slot)
                b_list.append(slot)
                w_list.append(share)
        a, b, w = np.array(a_list, dtype=np.int64), np.array(b_list, dtype=np.int64), np.array(w_list)
    return SparseSymmetricMatrix.laplacian_from_links(patch_pair_size, a, b, w_mn * w)


def assemble_point_laplacian(subgraphs: Iterable[Tuple[SparseSymmetricMatrix, Sequence[int]]],
                             total: int) -> SparseSymmetricMatrix:
    """L_p = sum of S^T L_mn S, accumulated through the index maps."""
    rows, cols, vals = [], [], []
    for laplacian, index_map in subgraphs:
        index_map = np.asarray(index_map, dtype=np.int64).reshape(-1)
        if index_map.shape[0] != laplacian.dimension:
            raise InvalidGraphError(f"index map has {index_map.shape[0]} entries for a "
                                    f"{laplacian.dimension}-node subgraph")
        if index_map.size and (index_map.min() < 0 or index_map.max() >= total):
            raise InvalidGraphError(f"index map entry out of range [0, {total})")
        if np.unique(index_map).shape[0] != index_map.shape[0]:
            raise InvalidGraphError("index map collision")
        r, c, v = laplacian.entries()
        rows.append(index_map[r])
        cols.append(index_map[c])
        vals.append(v)
    if not rows:
        return SparseSymmetricMatrix.zeros(total)
    return SparseSymmetricMatrix.from_triplets(total, np.concatenate(rows), np.concatenate(cols),
                                               np.concatenate(vals))


def normalize_laplacian(laplacian: SparseSymmetricMatrix) -> SparseSymmetricMatrix:
    """D^(-1/2) L D^(-1/2); isolated nodes keep a zero row."""
    diag = laplacian.diagonal()
    inv_sqrt = np.zeros_like(diag)
    positive = diag > 0
    inv_sqrt[positive] = 1.0 / np.sqrt(diag[positive])
    scale = sparse.diags(inv_sqrt)
    return SparseSymmetricMatrix((scale @ laplacian.matrix @ scale).tocsr())


def _check_length(laplacian: SparseSymmetricMatrix, length: int) -> None:
    if length != laplacian.dimension:
        raise DimensionMismatchError(f"vector of length {length} for a matrix of dimension "
                                     f"{laplacian.dimension}")


def quadratic_form(laplacian: SparseSymmetricMatrix, f) -> float:
    """f^T L f."""
    f = np.asarray(f, dtype=np.float64).reshape(-1)
    _check_length(laplacian, f.shape[0])
    return float(f @ (laplacian.matrix @ f))


def _coordinate_columns(laplacian: SparseSymmetricMatrix, coords) -> np.ndarray:
    """
    Coordinate vectors as the columns of a (dimension, D) array. An array is read as
    (dimension, D); a list or tuple holds one vector per coordinate.
    """
    arr = np.asarray(coords, dtype=np.float64)
    if isinstance(coords, (list, tuple)):
        arr = arr.reshape(1, -1).T if arr.ndim == 1 else arr.T
    elif arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[0] != laplacian.dimension:
        raise DimensionMismatchError(f"coordinates of shape {arr.shape} for a matrix of dimension "
                                     f"{laplacian.dimension}")
    return arr


def dimension_estimate(laplacian: SparseSymmetricMatrix, coords) -> float:
    """
    sum_i alpha_i^T L alpha_i over the coordinate vectors alpha_i.

    coords is a list of vectors of length `dimension`, or a (dimension, D) array such as
    the M x 3k matrix of patch vectors, whose columns are the coordinate vectors.
    """
    columns = _coordinate_columns(laplacian, coords)
    return float(np.einsum("id,id->", columns, laplacian.matrix @ columns))


def normalized_dimension_estimate(laplacian: SparseSymmetricMatrix, coords, epsilon: float) -> float:
    """
    dimension_estimate / (eps^2 * total edge weight). For a Gaussian kernel on a densely
    sampled manifold this approaches the manifold's intrinsic dimension.
    """
    total_weight = float(laplacian.diagonal().sum()) / 2.0
    if total_weight <= 0:
        return 0.0
    return dimension_estimate(laplacian, coords) / (epsilon ** 2 * total_weight)


def gershgorin_bound(laplacian: SparseSymmetricMatrix, mu: float) -> Tuple[float, float]:
    """
    (lambda_max bound, condition bound) = (2 rho_max, (2 rho_max + mu) / mu), with rho_max
    the largest weighted degree.
    """
    if mu <= 0:
        raise InvalidGraphError(f"mu must be positive, got {mu}")
    diag = laplacian.diagonal()
    off = (laplacian.matrix - sparse.diags(diag)).tocsr()
    scale = max(1.0, float(np.abs(diag).max(initial=0.0)))
    if off.nnz and off.max() > LAPLACIAN_ROW_SUM_TOL * scale:
        raise InvalidGraphError("positive off-diagonal entry in a Laplacian")
    off_sum = -np.asarray(off.sum(axis=1)).ravel()
    if np.any(np.abs(diag - off_sum) > LAPLACIAN_ROW_SUM_TOL * scale):
        raise InvalidGraphError("diagonal does not match the off-diagonal magnitudes")
    rho_max = float(diag.max(initial=0.0))
    return 2.0 * rho_max, (2.0 * rho_max + mu) / mu


# =============================================================================
# GRAPH BUILDERS
# =============================================================================

def _weigh(pairs: np.ndarray, distances: np.ndarray, count: int, gamma: float,
           radius_multiplier: Optional[float],
           normalization: DegreeNormalization) -> Tuple[float, Optional[float], np.ndarray, np.ndarray]:
    if distances.size == 0:
        return 1.0, None, np.ones(count), np.zeros(0)
    epsilon = epsilon_from_distances(distances)
    radius = None if radius_multiplier is None else radius_multiplier * epsilon
    rho = degrees(pairs, kernel(distances, epsilon, radius), count)
    weights = edge_weights(distances, epsilon, radius, rho[pairs[:, 0]], rho[pairs[:, 1]], gamma, normalization)
    return epsilon, radius, rho, weights


def build_vector_graph(vectors, epsilon: Optional[float] = None, gamma: float = DEFAULT_GAMMA,
                       radius: Optional[float] = None,
                       normalization: DegreeNormalization = DEFAULT_DEGREE_NORMALIZATION) -> PatchGraph:
    """
    Complete graph over patch vectors (rows) weighted with the Euclidean distance.

    epsilon defaults to the distance-spread rule. radius None means unbounded.
    """
    vec = np.asarray(vectors, dtype=np.float64)
    vec = vec.reshape(vec.shape[0], -1)
    count = vec.shape[0]
    m, n = np.triu_indices(count, k=1)
    pairs = np.stack([m, n], axis=1)
    distances = pdist(vec) if count > 1 else np.zeros(0)

    if epsilon is None:
        epsilon = epsilon_from_distances(distances) if distances.size else 1.0
    rho = degrees(pairs, kernel(distances, epsilon, radius), count)
    weights = (edge_weights(distances, epsilon, radius, rho[m], rho[n], gamma, normalization)
               if distances.size else np.zeros(0))
    return PatchGraph(pairs=pairs, distances=distances, weights=weights, epsilon=float(epsilon),
                      radius=radius, rho=rho)


def build_patch_graph(coords: np.ndarray, member_ids: np.ndarray, normals: np.ndarray, centers: np.ndarray,
                      K: int, tau: float = DEFAULT_TAU, gamma: float = DEFAULT_GAMMA,
                      radius_multiplier: Optional[float] = None, weighting: Weighting = "proportional",
                      workers: Optional[int] = None,
                      normalization: DegreeNormalization = DEFAULT_DEGREE_NORMALIZATION) -> PatchGraph:
    """
    Patch graph of one iteration: K-NN candidate pairs, projection distances, epsilon,
    degrees, weights and point correspondences.

    Args:
        coords: (M, k, 3) translated patch coordinates
        member_ids: (M, k) global point indices
        normals: (M, 3) patch normals
        centers: (M, 3) patch center positions
    """
    count = coords.shape[0]
    if count < 2:
        pairs = np.zeros((0, 2), dtype=np.int64)
    else:
        neighbors = min(K, count - 1)
        if neighbors < K:
            slog(logger, "WARNING", "Patch neighbors clamped to the patch count", component=COMPONENT,
                 operation="build_patch_graph", requested=K, effective=neighbors, patches=count)
        pairs = np.asarray(patch_knn_edges(centers, neighbors), dtype=np.int64).reshape(-1, 2)

    matches = measure_patch_pairs(coords, member_ids, normals, pairs, tau, weighting, workers=workers)
    distances = matches.d_mn
    epsilon, radius, rho, weights = _weigh(pairs, distances, count, gamma, radius_multiplier, normalization)

    graph = PatchGraph(pairs=pairs, distances=distances, weights=weights, epsilon=epsilon,
                       radius=radius, rho=rho, matches=matches)
    slog(logger, "DEBUG", "Patch graph built", component=COMPONENT, operation="build_patch_graph",
         patches=count, candidates=int(pairs.shape[0]), edges=graph.edge_count, epsilon=epsilon,
         interpolated=matches.interpolated_count, fallbacks=matches.fallback_count)
    return graph
