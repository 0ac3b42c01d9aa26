"""
config.py - Centralized defaults for the denoiser

Every constant, tolerance and default parameter lives here to simplify tuning.
Patch and schedule values are the tuned defaults for clouds of a few thousand to tens of thousands of points.
"""

from typing import Dict

# =============================================================================
# PATCHES AND PATCH GRAPH
# =============================================================================
DEFAULT_PATCH_SIZE = 30  # k, points per patch
DEFAULT_PATCH_NEIGHBORS = 16  # K, candidate patches per center
DEFAULT_CENTER_FRACTION = 0.5  # share of points used as patch centers
DEFAULT_TAU = 1.0  # projection gap above which planar interpolation kicks in (model units)
DEFAULT_GAMMA = 0.5  # degree normalization strength
DEFAULT_DEGREE_NORMALIZATION = "gamma"  # (rho_m rho_n)^(-gamma); "inverse_gamma" gives (rho_m rho_n)^(-1/gamma)
DEFAULT_RADIUS_MULTIPLIER = 3.0  # C_r when a hard radius r = C_r * epsilon is enabled
EPSILON_SCALE = 0.5  # epsilon = 0.5 * sqrt(std(d^2))
EPSILON_SPREAD_RTOL = 1e-12  # std(d^2) below this share of mean(d^2) counts as no spread

# =============================================================================
# MU SCHEDULE
# =============================================================================
MU_SCALE = 25.0  # mu = 25 * (exp(iteration / r) - 1)
SCHEDULE_BY_SIGMA: Dict[float, int] = {
    0.02: 4,
    0.03: 7,
    0.04: 12,
}
DEFAULT_SCHEDULE_R = 7  # used when sigma is unknown or not in the table

# =============================================================================
# OUTER LOOP AND LINEAR SOLVER
# =============================================================================
DEFAULT_MAX_ITERATIONS = 15
DEFAULT_CONVERGENCE_TOL = 1e-4  # relative to the input diameter
DEFAULT_PCG_TOL = 1e-8  # relative residual
DEFAULT_PCG_MAX_ITERS = 1000
DEFAULT_RNG_SEED = 0

# =============================================================================
# NUMERICAL THRESHOLDS
# =============================================================================
EIGEN_TIE_RTOL = 1e-9  # two smallest covariance eigenvalues closer than this are a tie
PLANE_DEGENERACY_TOL = 1e-12  # |n . n0| below this means no usable interpolation plane
DIAMETER_SAMPLE_SIZE = 200  # farthest points used for the diameter estimate
PAIR_CHUNK_SIZE = 512  # patch pairs per vectorized distance batch
SPECTRAL_ORACLE_LIMIT = 500  # largest matrix the dense spectral filter accepts
LAPLACIAN_ROW_SUM_TOL = 1e-9

# =============================================================================
# I/O
# =============================================================================
TEXT_FLOAT_FORMAT = "%.17g"  # round-trips doubles exactly
SUPPORTED_EXTENSIONS = (".ply", ".xyz")
REPORT_COLUMNS = [
    "iteration",
    "mu",
    "mean_displacement",
    "pcg_iterations_x",
    "pcg_iterations_y",
    "pcg_iterations_z",
    "pcg_converged",
    "edge_count",
    "epsilon",
    "objective_before",
    "objective_after",
]
EVAL_COLUMNS = ["cloud", "sigma", "mse", "snr_db", "mcd"]
GRAPH_COLUMNS = ["m", "n", "d_mn", "w_mn"]

# =============================================================================
# ENVIRONMENT
# =============================================================================
THREADS_ENV = "GLR_THREADS"  # 0 = one worker per CPU
LOG_LEVEL_ENV = "GLR_LOG_LEVEL"
