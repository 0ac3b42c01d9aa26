"""
cli.py - Command line front end

Subcommands:
    denoise     run the denoising loop on a cloud file
    add-noise   add scale-proportional Gaussian noise
    eval        compare an estimate against the ground truth (MSE, SNR, MCD)
    graph-info  build one iteration's patch graph and dump its edges

Exit codes: 0 success, 1 runtime error, 2 usage error.
"""

import argparse
import csv
import math
import os
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import yaml
from dotenv import load_dotenv
from pydantic import ValidationError
from tabulate import tabulate

from .config import (
    DEFAULT_CENTER_FRACTION,
    DEFAULT_GAMMA,
    DEFAULT_PATCH_NEIGHBORS,
    DEFAULT_PATCH_SIZE,
    DEFAULT_RADIUS_MULTIPLIER,
    DEFAULT_TAU,
    EVAL_COLUMNS,
    GRAPH_COLUMNS,
    REPORT_COLUMNS,
)
from .core import DenoiseConfig, DenoiseReport
from .evaluation import add_gaussian_noise, evaluate
from .exceptions import ConfigError, GLRError
from .solver import build_iteration_graph, denoise
from .utils.cloud_io import CloudFile, read_cloud, write_cloud
from .utils.logger import get_logger, log_diagnostic, set_level, slog

load_dotenv()

logger = get_logger(__name__)

COMPONENT = "cli"

# flag destination -> DenoiseConfig field
FLAG_FIELDS = {
    "sigma": "sigma_level",
    "k": "patch_size",
    "patch_neighbors": "patch_neighbors",
    "center_fraction": "center_fraction",
    "tau": "tau",
    "gamma": "gamma",
    "degree_normalization": "degree_normalization",
    "schedule_r": "schedule_r",
    "max_iters": "max_iterations",
    "convergence_tol": "convergence_tol",
    "pcg_tol": "pcg_tol",
    "pcg_max_iters": "pcg_max_iters",
    "seed": "rng_seed",
    "radius_multiplier": "radius_multiplier",
    "interpolation_weighting": "interpolation_weighting",
    "normalized_laplacian": "normalized_laplacian",
}


def _schedule_r(value: str):
    if value.strip().lower() == "auto":
        return "auto"
    try:
        parsed = int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'auto' or a positive integer, got '{value}'")
    if parsed <= 0:
        raise argparse.ArgumentTypeError(f"schedule-r must be positive, got {parsed}")
    return parsed


def _radius_multiplier(value: str):
    if value.strip().lower() in ("off", "unbounded"):
        return "off"
    try:
        parsed = float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'off' or a positive number, got '{value}'")
    if not parsed > 0:
        raise argparse.ArgumentTypeError(f"radius multiplier must be positive, got {parsed}")
    return parsed


def _add_graph_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--k", type=int, help=f"Points per patch (default {DEFAULT_PATCH_SIZE})")
    parser.add_argument("--patch-neighbors", type=int,
                        help=f"Candidate patches per center (default {DEFAULT_PATCH_NEIGHBORS})")
    parser.add_argument("--center-fraction", type=float,
                        help=f"Share of points used as patch centers (default {DEFAULT_CENTER_FRACTION})")
    parser.add_argument("--tau", type=float, help=f"Planar interpolation threshold (default {DEFAULT_TAU})")
    parser.add_argument("--gamma", type=float, help=f"Degree normalization strength (default {DEFAULT_GAMMA})")
    parser.add_argument("--degree-normalization", choices=["gamma", "inverse_gamma"],
                        help="Weight normalization (rho_m rho_n)^(-gamma) (default) or (rho_m rho_n)^(-1/gamma)")
    parser.add_argument("--radius-multiplier", type=_radius_multiplier,
                        help=f"'off' (default) or C_r for the hard radius C_r * epsilon (e.g. {DEFAULT_RADIUS_MULTIPLIER})")
    parser.add_argument("--interpolation-weighting", choices=["proportional", "inverse"],
                        help="Split of the patch weight over interpolation targets")
    parser.add_argument("--normalized-laplacian", action="store_true", default=None, help=argparse.SUPPRESS)
    parser.add_argument("--config", help="YAML file with DenoiseConfig fields")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="glrdenoise",
                                     description="Point cloud denoising by patch graph Laplacian regularization")
    parser.add_argument("--log-level", type=str.upper, choices=["DEBUG", "INFO", "WARNING", "ERROR"],
                        help="Logging level (default from GLR_LOG_LEVEL)")
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("denoise", help="Denoise a point cloud")
    run.add_argument("--in", dest="input", required=True, help="Input cloud (.ply or .xyz)")
    run.add_argument("--out", dest="output", required=True, help="Output cloud (.ply or .xyz)")
    run.add_argument("--sigma", type=float, help="Noise level used to pick the mu schedule")
    run.add_argument("--schedule-r", type=_schedule_r, help="'auto' (from sigma) or the schedule denominator")
    run.add_argument("--max-iters", type=int, help="Maximum outer iterations (default 15)")
    run.add_argument("--convergence-tol", type=float, help="Mean displacement threshold relative to the diameter")
    run.add_argument("--pcg-tol", type=float, help="Relative residual of the coordinate solves")
    run.add_argument("--pcg-max-iters", type=int, help="Iteration cap of the coordinate solves")
    run.add_argument("--seed", type=int, help="Seed of the farthest point sampling start (default: start at point 0)")
    run.add_argument("--report", help="Per-iteration report CSV")
    _add_graph_flags(run)

    noise = commands.add_parser("add-noise", help="Add Gaussian noise proportional to the cloud diameter")
    noise.add_argument("--in", dest="input", required=True)
    noise.add_argument("--out", dest="output", required=True)
    noise.add_argument("--sigma", type=float, required=True, help="Noise std as a fraction of the diameter")
    noise.add_argument("--seed", type=int, default=0)

    score = commands.add_parser("eval", help="Compare an estimate with the ground truth")
    score.add_argument("--truth", required=True)
    score.add_argument("--estimate", required=True)
    score.add_argument("--csv", help="CSV file to append the result row to")
    score.add_argument("--sigma", type=float, help="Noise level recorded in the CSV row")

    info = commands.add_parser("graph-info", help="Build one iteration's patch graph")
    info.add_argument("--in", dest="input", required=True)
    info.add_argument("--dump", required=True, help="Edge CSV (m, n, d_mn, w_mn)")
    _add_graph_flags(info)

    return parser


def load_config(args: argparse.Namespace) -> DenoiseConfig:
    """Defaults, then the YAML file, then explicit flags."""
    values: Dict[str, Any] = {}
    if getattr(args, "config", None):
        try:
            with open(args.config, "r", encoding="utf-8") as fid:
                loaded = yaml.safe_load(fid) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {args.config}: {exc}")
        if not isinstance(loaded, dict):
            raise ConfigError(f"{args.config} must hold a mapping of DenoiseConfig fields")
        values.update(loaded)

    for flag, field in FLAG_FIELDS.items():
        value = getattr(args, flag, None)
        if value is None:
            continue
        if flag == "schedule_r" and value == "auto":
            value = None
        if flag == "radius_multiplier" and value == "off":
            value = None
        values[field] = value

    if getattr(args, "seed", None) is not None:
        values.setdefault("seed_strategy", "seeded")
    if values.get("schedule_r") == "auto":
        values["schedule_r"] = None
    try:
        return DenoiseConfig(**values)
    except ValidationError as exc:
        raise ConfigError(f"invalid configuration: {exc}")


def write_report(path: str, report: DenoiseReport, config: DenoiseConfig) -> None:
    """Leading '# key: value' lines echo the effective configuration."""
    with open(path, "w", newline="", encoding="utf-8") as fid:
        for key, value in config.model_dump(mode="json").items():
            fid.write(f"# {key}: {value}\n")
        fid.write(f"# effective_schedule_r: {config.effective_schedule_r}\n")
        fid.write(f"# converged: {report.converged}\n")
        writer = csv.DictWriter(fid, fieldnames=REPORT_COLUMNS)
        writer.writeheader()
        for record in report.per_iteration:
            writer.writerow(record.to_row())


def _format_metric(value: float) -> str:
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return repr(float(value))


def cmd_denoise(args: argparse.Namespace) -> int:
    config = load_config(args)
    cloud = read_cloud(args.input)
    denoised, report = denoise(cloud, config)
    write_cloud(denoised, CloudFile.for_path(args.output))
    if args.report:
        write_report(args.report, report, config)

    rows = [[r.iteration, f"{r.mu:.4f}", f"{r.mean_displacement:.3e}", "/".join(map(str, r.pcg_iterations)),
             r.edge_count, f"{r.epsilon:.3e}"] for r in report.per_iteration]
    if rows:
        print(tabulate(rows, headers=["iter", "mu", "displacement", "pcg x/y/z", "edges", "epsilon"],
                       tablefmt="github"))
    slog(logger, "INFO", "Denoised cloud written", component=COMPONENT, operation="denoise",
         output=args.output, iterations=report.iterations_run, converged=report.converged)
    return 0


def cmd_add_noise(args: argparse.Namespace) -> int:
    if args.sigma < 0:
        raise ConfigError(f"sigma must be nonnegative, got {args.sigma}")
    cloud = read_cloud(args.input)
    noisy = add_gaussian_noise(cloud, args.sigma, args.seed)
    write_cloud(noisy, CloudFile.for_path(args.output))
    slog(logger, "INFO", "Noisy cloud written", component=COMPONENT, operation="add_noise",
         output=args.output, sigma_level=args.sigma, seed=args.seed)
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    truth = read_cloud(args.truth)
    estimate = read_cloud(args.estimate)
    metrics = evaluate(truth, estimate)
    row = {
        "cloud": Path(args.estimate).name,
        "sigma": "" if args.sigma is None else args.sigma,
        "mse": _format_metric(metrics.mse),
        "snr_db": _format_metric(metrics.snr_db),
        "mcd": _format_metric(metrics.mcd),
    }
    if args.csv:
        fresh = not os.path.exists(args.csv) or os.path.getsize(args.csv) == 0
        with open(args.csv, "a", newline="", encoding="utf-8") as fid:
            writer = csv.DictWriter(fid, fieldnames=EVAL_COLUMNS)
            if fresh:
                writer.writeheader()
            writer.writerow(row)
    print(tabulate([[row[c] for c in EVAL_COLUMNS]], headers=EVAL_COLUMNS, tablefmt="github"))
    return 0


def cmd_graph_info(args: argparse.Namespace) -> int:
    config = load_config(args)
    cloud = read_cloud(args.input)
    built = build_iteration_graph(cloud, config)
    graph = built.graph

    with open(args.dump, "w", newline="", encoding="utf-8") as fid:
        writer = csv.writer(fid)
        writer.writerow(GRAPH_COLUMNS)
        for m, n, d, w, _ in graph.edges():
            writer.writerow([m, n, repr(d), repr(w)])

    weights = graph.weights[graph.edge_mask]
    summary = [
        ["patches", graph.patch_count],
        ["candidate pairs", int(graph.pairs.shape[0])],
        ["edges", graph.edge_count],
        ["epsilon", f"{graph.epsilon:.4e}"],
        ["radius", "unbounded" if graph.radius is None else f"{graph.radius:.4e}"],
        ["weight min", f"{weights.min():.4e}" if weights.size else "-"],
        ["weight mean", f"{weights.mean():.4e}" if weights.size else "-"],
        ["weight max", f"{weights.max():.4e}" if weights.size else "-"],
        ["max degree", f"{float(np.max(built.laplacian.diagonal(), initial=0.0)):.4e}"],
        ["degenerate normals", int(built.degenerate.sum())],
    ]
    print(tabulate(summary, headers=["graph", "value"], tablefmt="github"))
    return 0


COMMANDS = {
    "denoise": cmd_denoise,
    "add-noise": cmd_add_noise,
    "eval": cmd_eval,
    "graph-info": cmd_graph_info,
}


def run_command(argv: Optional[Sequence[str]] = None) -> int:
    """Parses argv, runs the subcommand and returns its exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(list(argv) if argv is not None else None)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2

    if args.log_level:
        set_level(args.log_level)

    try:
        return COMMANDS[args.command](args)
    except (GLRError, OSError) as exc:
        log_diagnostic(logger, "Command failed", component=COMPONENT, operation=args.command, error=exc)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        log_diagnostic(logger, "Command crashed", component=COMPONENT, operation=args.command, error=exc,
                       hint="unexpected failure, rerun with --log-level DEBUG")
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main(argv: Optional[List[str]] = None) -> None:
    sys.exit(run_command(argv))


if __name__ == "__main__":
    main()
