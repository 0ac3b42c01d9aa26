"""
patchdist.py - Projection-based patch distance

Two centered patches are compared on the reference plane of one of them: each point is
paired with the point of the other patch whose projection is nearest, and the signed
displacements along the normal are compared. Above the projection gap tau, the other
patch's surface is interpolated by the plane through its three projection-nearest
points. The symmetric distance combines both reference planes:

    d_mn = sqrt((d_forward^2 + d_backward^2) / 2)

Batch helpers evaluate many patch pairs at once; the single-pair operations wrap them.
"""

from dataclasses import dataclass
from enum import Enum
from typing import Iterator, List, Literal, Optional, Tuple

import numpy as np

from .config import DEFAULT_TAU, PAIR_CHUNK_SIZE, PLANE_DEGENERACY_TOL
from .exceptions import DegeneratePlaneError
from .normals import ReferenceFrame
from .utils.workers import ordered_map

Weighting = Literal["proportional", "inverse"]

_NO_ID = np.iinfo(np.int64).max


class Direction(str, Enum):
    """Which patch's reference plane produced a correspondence."""

    FORWARD = "forward"  # plane of patch m, sources in m
    BACKWARD = "backward"  # plane of patch n, sources in n


@dataclass(frozen=True)
class Correspondence:
    """
    One source point tied to one target (replacement) or three targets (interpolation).

    Slots index the 2k stacked pair coordinates: patch m first, then patch n.
    """

    source_slot: int
    target_slots: Tuple[int, ...]
    weights: Tuple[float, ...]
    direction: Direction
    source_point: int
    target_points: Tuple[int, ...]

    @property
    def interpolated(self) -> bool:
        return len(self.target_slots) == 3


@dataclass(frozen=True, eq=False)
class CorrespondenceSet:
    """
    Array-backed correspondences of one patch pair.

    Each row has three target columns; replacement rows carry weight 1 in the first
    column and 0 in the others.
    """

    source_slots: np.ndarray  # (c,)
    target_slots: np.ndarray  # (c, 3)
    weights: np.ndarray  # (c, 3)
    backward: np.ndarray  # (c,) bool
    source_points: np.ndarray  # (c,)
    target_points: np.ndarray  # (c, 3)
    patch_pair_size: int

    def __len__(self) -> int:
        return self.source_slots.shape[0]

    def __iter__(self) -> Iterator[Correspondence]:
        for r in range(len(self)):
            cols = [0, 1, 2] if self.weights[r, 1] > 0 or self.weights[r, 2] > 0 else [0]
            yield Correspondence(
                source_slot=int(self.source_slots[r]),
                target_slots=tuple(int(self.target_slots[r, c]) for c in cols),
                weights=tuple(float(self.weights[r, c]) for c in cols),
                direction=Direction.BACKWARD if self.backward[r] else Direction.FORWARD,
                source_point=int(self.source_points[r]),
                target_points=tuple(int(self.target_points[r, c]) for c in cols),
            )

    def links(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(slot_a, slot_b, fraction) for every weighted source-target link."""
        a = np.repeat(self.source_slots, 3)
        b = self.target_slots.reshape(-1)
        w = self.weights.reshape(-1)
        keep = w > 0
        return a[keep], b[keep], w[keep]

    @classmethod
    def empty(cls, patch_pair_size: int) -> "CorrespondenceSet":
        return cls(
            source_slots=np.zeros(0, dtype=np.int64),
            target_slots=np.zeros((0, 3), dtype=np.int64),
            weights=np.zeros((0, 3)),
            backward=np.zeros(0, dtype=bool),
            source_points=np.zeros(0, dtype=np.int64),
            target_points=np.zeros((0, 3), dtype=np.int64),
            patch_pair_size=patch_pair_size,
        )


@dataclass(frozen=True, eq=False)
class PatchDistanceResult:
    d_mn: float
    d_forward: float
    d_backward: float
    correspondences: CorrespondenceSet
    fallbacks: int = 0


@dataclass(frozen=True, eq=False)
class DirectedMatch:
    """Directed matching of E source patches against E target patches."""

    distance: np.ndarray  # (E,)
    targets: np.ndarray  # (E, ks, 3) positions in the target patch
    weights: np.ndarray  # (E, ks, 3)
    interpolated: np.ndarray  # (E, ks) bool
    fallbacks: int

    @property
    def replacement(self) -> np.ndarray:
        return ~self.interpolated


# =============================================================================
# PLANAR INTERPOLATION
# =============================================================================

def plane_interpolated_displacement(v, a, b, c, n) -> float:
    """
    Signed distance t from v along the unit direction n to the plane through a, b, c,
    so that v - t n lies on that plane: t = (n0 . v + d) / (n . n0), d = -n0 . a,
    with n0 the unit normal of the plane.
    """
    v, a, b, c, n = (np.asarray(x, dtype=np.float64) for x in (v, a, b, c, n))
    n0 = np.cross(b - a, c - a)
    norm = np.linalg.norm(n0)
    span = max(np.linalg.norm(b - a), np.linalg.norm(c - a), 1e-300)
    if norm <= PLANE_DEGENERACY_TOL * span * span:
        raise DegeneratePlaneError()
    n0 = n0 / norm
    denom = float(n @ n0)
    if abs(denom) < PLANE_DEGENERACY_TOL:
        raise DegeneratePlaneError()
    d = -float(n0 @ a)
    return (float(n0 @ v) + d) / denom


def interpolation_weights(v, targets, weighting: Weighting = "proportional") -> np.ndarray:
    """
    Split of a patch weight over three interpolation targets.

    "proportional": d_va / (d_va + d_vb + d_vc); "inverse": (1/d_va) / sum(1/d).
    """
    dist = np.linalg.norm(np.asarray(targets, dtype=np.float64) - np.asarray(v, dtype=np.float64), axis=1)
    if weighting == "inverse":
        if np.any(dist == 0):
            share = (dist == 0).astype(np.float64)
            return share / share.sum()
        inv = 1.0 / dist
        return inv / inv.sum()
    total = dist.sum()
    if total == 0:
        return np.full(3, 1.0 / 3.0)
    return dist / total


# =============================================================================
# DIRECTED MATCHING
# =============================================================================

def match_directed(src: np.ndarray, tgt: np.ndarray, tgt_ids: np.ndarray, normals: np.ndarray,
                   tau: float = DEFAULT_TAU, weighting: Weighting = "proportional") -> DirectedMatch:
    """
    Directed distance of E source patches to E target patches on the source planes.

    Args:
        src: (E, ks, 3) centered source coordinates
        tgt: (E, kt, 3) centered target coordinates
        tgt_ids: (E, kt) global point indices of the targets, used to break ties
        normals: (E, 3) unit normals of the source reference planes
    """
    src = np.asarray(src, dtype=np.float64)
    tgt = np.asarray(tgt, dtype=np.float64)
    tgt_ids = np.asarray(tgt_ids, dtype=np.int64)
    normals = np.asarray(normals, dtype=np.float64)
    e_count, ks = src.shape[:2]
    kt = tgt.shape[1]

    f_src = np.einsum("eki,ei->ek", src, normals)
    f_tgt = np.einsum("eki,ei->ek", tgt, normals)
    x_src = src - f_src[..., None] * normals[:, None, :]
    x_tgt = tgt - f_tgt[..., None] * normals[:, None, :]

    diff = x_src[:, :, None, :] - x_tgt[:, None, :, :]
    gap2 = np.einsum("eijc,eijc->eij", diff, diff)
    best = gap2.min(axis=2, keepdims=True)
    tied_ids = np.where(gap2 == best, tgt_ids[:, None, :], _NO_ID)
    tied_min = tied_ids.min(axis=2, keepdims=True)
    match = np.argmax((tied_ids == tied_min), axis=2)

    matched_f = np.take_along_axis(f_tgt, match, axis=1)
    residual = f_src - matched_f

    targets = np.repeat(match[..., None], 3, axis=2)
    weights = np.zeros((e_count, ks, 3))
    weights[..., 0] = 1.0
    interpolated = np.zeros((e_count, ks), dtype=bool)
    fallbacks = 0

    far = np.sqrt(best[..., 0]) > tau
    if far.any():
        if kt < 3:
            fallbacks = int(far.sum())
        else:
            for e, i in np.argwhere(far):
                order = np.lexsort((tgt_ids[e], gap2[e, i]))[:3]
                corners = tgt[e, order]
                try:
                    t = plane_interpolated_displacement(src[e, i], corners[0], corners[1], corners[2], normals[e])
                except DegeneratePlaneError:
                    fallbacks += 1
                    continue
                residual[e, i] = t
                targets[e, i] = order
                weights[e, i] = interpolation_weights(src[e, i], corners, weighting)
                interpolated[e, i] = True

    distance = np.sqrt(np.mean(residual ** 2, axis=1))
    return DirectedMatch(distance=distance, targets=targets, weights=weights,
                         interpolated=interpolated, fallbacks=fallbacks)


def duplicate_backward(forward: DirectedMatch, backward: DirectedMatch) -> np.ndarray:
    """
    Mask (E, kn) of backward replacement pairs that repeat a forward replacement pair.

    Backward source j in n pairs with i in m; it repeats the forward pair when forward
    source i in m pairs with j by replacement.
    """
    bwd_t0 = backward.targets[..., 0]
    fwd_t0_at = np.take_along_axis(forward.targets[..., 0], bwd_t0, axis=1)
    fwd_repl_at = np.take_along_axis(forward.replacement, bwd_t0, axis=1)
    own = np.arange(bwd_t0.shape[1])[None, :]
    return backward.replacement & fwd_repl_at & (fwd_t0_at == own)


def _correspondence_set(forward: DirectedMatch, backward: Optional[DirectedMatch], e: int,
                        ids_m: np.ndarray, ids_n: np.ndarray) -> CorrespondenceSet:
    """Correspondences of pair e in 2k slot coordinates (m first, then n)."""
    km, kn = ids_m.shape[0], ids_n.shape[0]

    src_slots = [np.arange(km)]
    tgt_slots = [forward.targets[e] + km]
    weights = [forward.weights[e]]
    back = [np.zeros(km, dtype=bool)]
    src_pts = [ids_m]
    tgt_pts = [ids_n[forward.targets[e]]]

    if backward is not None:
        keep = ~duplicate_backward(forward, backward)[e]
        src_slots.append(np.arange(kn)[keep] + km)
        tgt_slots.append(backward.targets[e][keep])
        weights.append(backward.weights[e][keep])
        back.append(np.ones(int(keep.sum()), dtype=bool))
        src_pts.append(ids_n[keep])
        tgt_pts.append(ids_m[backward.targets[e][keep]])

    return CorrespondenceSet(
        source_slots=np.concatenate(src_slots),
        target_slots=np.concatenate(tgt_slots),
        weights=np.concatenate(weights),
        backward=np.concatenate(back),
        source_points=np.concatenate(src_pts),
        target_points=np.concatenate(tgt_pts),
        patch_pair_size=km + kn,
    )


def _frame_normal(frame) -> np.ndarray:
    return np.asarray(getattr(frame, "normal", frame), dtype=np.float64)


# =============================================================================
# SINGLE PAIR OPERATIONS
# =============================================================================

def directed_distance(pm, pn, frame_m: ReferenceFrame, tau: float = DEFAULT_TAU,
                      weighting: Weighting = "proportional") -> Tuple[float, List[Correspondence]]:
    """Distance from patch m to patch n on m's reference plane, with its correspondences."""
    match = match_directed(pm.translated_coords[None], pn.translated_coords[None],
                           pn.member_indices[None], _frame_normal(frame_m)[None], tau, weighting)
    pairs = _correspondence_set(match, None, 0, pm.member_indices, pn.member_indices)
    return float(match.distance[0]), list(pairs)


def patch_distance(pm, pn, frame_m: ReferenceFrame, frame_n: ReferenceFrame,
                   tau: float = DEFAULT_TAU, weighting: Weighting = "proportional") -> PatchDistanceResult:
    """Symmetric projection distance of two patches and their deduplicated correspondences."""
    forward = match_directed(pm.translated_coords[None], pn.translated_coords[None],
                             pn.member_indices[None], _frame_normal(frame_m)[None], tau, weighting)
    backward = match_directed(pn.translated_coords[None], pm.translated_coords[None],
                              pm.member_indices[None], _frame_normal(frame_n)[None], tau, weighting)
    d_forward = float(forward.distance[0])
    d_backward = float(backward.distance[0])
    return PatchDistanceResult(
        d_mn=combine_directed(d_forward, d_backward),
        d_forward=d_forward,
        d_backward=d_backward,
        correspondences=_correspondence_set(forward, backward, 0, pm.member_indices, pn.member_indices),
        fallbacks=forward.fallbacks + backward.fallbacks,
    )


def combine_directed(d_forward, d_backward):
    """sqrt((d_forward^2 + d_backward^2) / 2), elementwise for arrays."""
    return np.sqrt((np.square(d_forward) + np.square(d_backward)) / 2.0)


def modified_hausdorff(pm, pn) -> float:
    """Directed modified Hausdorff distance: mean distance from m's points to their nearest in n."""
    a = np.asarray(getattr(pm, "translated_coords", pm), dtype=np.float64).reshape(-1, 3)
    b = np.asarray(getattr(pn, "translated_coords", pn), dtype=np.float64).reshape(-1, 3)
    dist = np.sqrt(np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=2))
    return float(dist.min(axis=1).mean())


# =============================================================================
# BATCHED PAIRS
# =============================================================================

@dataclass(frozen=True, eq=False)
class PairMatches:
    """Distances and correspondences of E patch pairs (m, n) over equally sized patches."""

    pairs: np.ndarray  # (E, 2)
    d_forward: np.ndarray
    d_backward: np.ndarray
    forward: DirectedMatch
    backward: DirectedMatch
    member_ids: np.ndarray  # (M, k)

    @property
    def d_mn(self) -> np.ndarray:
        return combine_directed(self.d_forward, self.d_backward)

    @property
    def k(self) -> int:
        return self.member_ids.shape[1]

    @property
    def interpolated_count(self) -> int:
        return int(self.forward.interpolated.sum() + self.backward.interpolated.sum())

    @property
    def fallback_count(self) -> int:
        return self.forward.fallbacks + self.backward.fallbacks

    def correspondences(self, e: int) -> CorrespondenceSet:
        m, n = self.pairs[e]
        return _correspondence_set(self.forward, self.backward, e,
                                   self.member_ids[m], self.member_ids[n])

    def links(self, edge_weights: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        Point-domain links (a, b, w) over the kM stacked patch coordinates, where patch m
        occupies slots m*k .. m*k+k-1. Zero-weight edges contribute nothing.
        """
        k = self.k
        edge_weights = np.asarray(edge_weights, dtype=np.float64)
        m = self.pairs[:, 0][:, None, None]
        n = self.pairs[:, 1][:, None, None]
        local = np.arange(k)[None, :, None]
        scale = edge_weights[:, None, None]

        dup = duplicate_backward(self.forward, self.backward)[..., None]

        fa = np.broadcast_to(m * k + local, self.forward.targets.shape)
        fb = n * k + self.forward.targets
        fw = scale * self.forward.weights

        ba = np.broadcast_to(n * k + local, self.backward.targets.shape)
        bb = m * k + self.backward.targets
        bw = np.where(dup, 0.0, scale * self.backward.weights)

        a = np.concatenate([fa.reshape(-1), ba.reshape(-1)])
        b = np.concatenate([fb.reshape(-1), bb.reshape(-1)])
        w = np.concatenate([fw.reshape(-1), bw.reshape(-1)])
        keep = w > 0
        return a[keep], b[keep], w[keep]


def _concat_matches(parts: List[DirectedMatch]) -> DirectedMatch:
    return DirectedMatch(
        distance=np.concatenate([p.distance for p in parts]),
        targets=np.concatenate([p.targets for p in parts]),
        weights=np.concatenate([p.weights for p in parts]),
        interpolated=np.concatenate([p.interpolated for p in parts]),
        fallbacks=sum(p.fallbacks for p in parts),
    )


def measure_patch_pairs(coords: np.ndarray, member_ids: np.ndarray, normals: np.ndarray,
                        pairs: np.ndarray, tau: float = DEFAULT_TAU, weighting: Weighting = "proportional",
                        chunk_size: int = PAIR_CHUNK_SIZE, workers: Optional[int] = None) -> PairMatches:
    """
    Patch distances for every pair, evaluated in chunks (concurrently when allowed) and
    merged in pair order.

    Args:
        coords: (M, k, 3) translated patch coordinates
        member_ids: (M, k) global point indices
        normals: (M, 3) patch normals
        pairs: (E, 2) patch index pairs (m, n)
    """
    coords = np.asarray(coords, dtype=np.float64)
    member_ids = np.asarray(member_ids, dtype=np.int64)
    normals = np.asarray(normals, dtype=np.float64)
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    k = coords.shape[1]

    if pairs.shape[0] == 0:
        empty = DirectedMatch(np.zeros(0), np.zeros((0, k, 3), dtype=np.int64), np.zeros((0, k, 3)),
                              np.zeros((0, k), dtype=bool), 0)
        return PairMatches(pairs, np.zeros(0), np.zeros(0), empty, empty, member_ids)

    def run(bounds):
        lo, hi = bounds
        m, n = pairs[lo:hi, 0], pairs[lo:hi, 1]
        fwd = match_directed(coords[m], coords[n], member_ids[n], normals[m], tau, weighting)
        bwd = match_directed(coords[n], coords[m], member_ids[m], normals[n], tau, weighting)
        return fwd, bwd

    starts = range(0, pairs.shape[0], chunk_size)
    chunks = [(lo, min(lo + chunk_size, pairs.shape[0])) for lo in starts]
    results = ordered_map(run, chunks, workers)

    forward = _concat_matches([r[0] for r in results])
    backward = _concat_matches([r[1] for r in results])
    return PairMatches(pairs=pairs, d_forward=forward.distance, d_backward=backward.distance,
                       forward=forward, backward=backward, member_ids=member_ids)
