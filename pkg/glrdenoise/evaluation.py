"""
evaluation.py - Scale-proportional Gaussian noise and the MSE, SNR and MCD metrics

MSE and MCD are two-sided: each cloud is matched to its nearest neighbors in the other
and both directed averages contribute one half. MCD selects neighbors by the city-block
metric it reports.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .core import PointCloud
from .spatial import as_points, estimate_diameter
from .utils.logger import get_logger, log_diagnostic

logger = get_logger(__name__)

COMPONENT = "evaluation"


@dataclass(frozen=True)
class MetricsResult:
    mse: float
    snr_db: float
    mcd: float

    def to_row(self) -> dict:
        return {"mse": self.mse, "snr_db": self.snr_db, "mcd": self.mcd}


def add_gaussian_noise(cloud: PointCloud, sigma_level: float, seed: int = 0) -> PointCloud:
    """
    Adds i.i.d. N(0, (sigma_level * diameter)^2) noise to every coordinate.

    The generator is numpy's PCG64 seeded with `seed`, so outputs are reproducible
    across platforms.
    """
    if sigma_level < 0:
        raise ValueError(f"sigma_level must be nonnegative, got {sigma_level}")
    if sigma_level == 0:
        return cloud.with_points(cloud.points)
    std = sigma_level * estimate_diameter(cloud)
    rng = np.random.Generator(np.random.PCG64(seed))
    noise = rng.normal(0.0, std, size=cloud.points.shape)
    return cloud.with_points(cloud.points + noise)


def _directed(source: np.ndarray, target: np.ndarray, p: int) -> np.ndarray:
    """Distance (Minkowski p) from every source point to its nearest target point."""
    distances, _ = cKDTree(target).query(source, k=1, p=p)
    return np.asarray(distances, dtype=np.float64)


def mse(truth, estimate) -> float:
    """(1/2N1) sum_u min ||u - v||^2 + (1/2N2) sum_v min ||v - u||^2."""
    U, V = as_points(truth), as_points(estimate)
    forward = _directed(U, V, 2)
    backward = _directed(V, U, 2)
    return float(np.mean(forward ** 2) / 2.0 + np.mean(backward ** 2) / 2.0)


def mcd(truth, estimate) -> float:
    """Two-sided mean city-block distance to the l1-nearest neighbor."""
    U, V = as_points(truth), as_points(estimate)
    return float(np.mean(_directed(U, V, 1)) / 2.0 + np.mean(_directed(V, U, 1)) / 2.0)


def _snr_from(error: float, estimate: np.ndarray) -> float:
    if error == 0:
        return math.inf
    power = float(np.mean(np.sum(estimate ** 2, axis=1)))
    if power == 0:
        log_diagnostic(logger, "SNR of an all-zero estimate", component=COMPONENT, operation="snr",
                       hint="signal power is zero, reporting -inf", actual=error)
        return -math.inf
    return 10.0 * math.log10(power / error)


def snr(truth, estimate) -> float:
    """10 log10(mean ||v||^2 / MSE) in dB, v over the estimate; +inf when MSE is 0."""
    V = as_points(estimate)
    return _snr_from(mse(truth, estimate), V)


def evaluate(truth, estimate) -> MetricsResult:
    """All three metrics for one cloud pair."""
    error = mse(truth, estimate)
    return MetricsResult(mse=error, snr_db=_snr_from(error, as_points(estimate)), mcd=mcd(truth, estimate))
