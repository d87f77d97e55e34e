"""
Command-line entry point: ``python -m ccama <command> ...``.

Every flag may also be supplied through an environment variable named
``CCAMA_<FLAG>`` (upper case, dashes as underscores); explicit flags win.
Exit codes: 0 success, 2 a solve did not converge (outputs still written),
3 invalid input, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Callable

import numpy as np
import pandas as pd

from ccama import __version__
from ccama.admm_solver import AdmmOptions, solve_admm
from ccama.ama_solver import AmaOptions, SolveResult, solve_ama
from ccama.decomposition import DEFAULT_ZERO_TOL, check_signature_bounds, factor_channels, signature
from ccama.diagnostics import diagnose
from ccama.errors import CcamaError, InvalidInputError
from ccama.io import (
    DecompositionFile,
    RunManifest,
    Solution,
    ground_truth_path,
    instance_hash,
    load_ground_truth,
    load_instance,
    load_realization,
    load_solution,
    save_ground_truth,
    save_instance,
    save_realization,
    save_stats,
    write_json,
    write_model,
    write_solution,
)
from ccama.problem import DEFAULT_GAMMA, ProblemInstance, gen_msd
from ccama.realization import consistent_covariance, filter_gain, optimal_gain
from ccama.simulation import SimConfig, compare_covariance, simulate_ensemble

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_NOT_CONVERGED = 2
EXIT_INVALID_INPUT = 3
EXIT_NUMERICAL = 4

SOLVERS = ("ama", "ama-bb", "ama-fixed", "admm")
FILTER_MODE_ALIASES = {"eq5c": "direct"}
LOG_FORMAT = "%(asctime)s - %(levelname)s - %(name)s - %(message)s"


# -----------------------------
# Flag helpers
# -----------------------------
def _env_name(flag: str) -> str:
    return "CCAMA_" + flag.lstrip("-").replace("-", "_").upper()


def _add(parser: argparse.ArgumentParser, flag: str, type: Callable = str, default: Any = None, required: bool = False, **kw):
    """add_argument with the default taken from CCAMA_<FLAG> when set."""
    env = os.environ.get(_env_name(flag))
    if env is not None:
        try:
            default = type(env)
        except (ValueError, argparse.ArgumentTypeError):
            raise InvalidInputError(f"{_env_name(flag)}={env!r} is not a valid value for {flag}") from None
        required = False
    parser.add_argument(flag, type=type, default=default, required=required, **kw)


def _add_switch(parser: argparse.ArgumentParser, flag: str, help: str, aliases: tuple[str, ...] = ()):
    names = (flag, *aliases)
    on = any(os.environ.get(_env_name(f), "").lower() in ("1", "true", "yes", "on") for f in names)
    parser.add_argument(*names, dest=flag.lstrip("-").replace("-", "_"), action="store_true", default=on, help=help)


def _gamma_list(text: str) -> list[float]:
    try:
        values = [float(v) for v in text.replace(" ", "").split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("empty gamma list")
    return values


def _filter_mode(text: str) -> str:
    return FILTER_MODE_ALIASES.get(text, text)


def _flags(args: argparse.Namespace) -> dict[str, Any]:
    return {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items() if k != "func"}


def _manifest(args, command: str, instance: ProblemInstance | None = None, **kw) -> RunManifest:
    return RunManifest(
        command=command,
        flags=_flags(args),
        instance_hash=instance_hash(instance) if instance is not None else None,
        version=__version__,
        **kw,
    )


# -----------------------------
# Solver dispatch
# -----------------------------
def _run_solver(instance: ProblemInstance, args: argparse.Namespace) -> SolveResult:
    if args.solver == "admm":
        opts = AdmmOptions(
            rho=args.rho,
            eps_gap=args.eps_gap,
            eps_primal=args.eps_primal,
            max_iter=args.max_iter,
            step_policy=args.step_policy,
            lenient_stop=args.lenient_stop,
        )
        return solve_admm(instance, opts)
    step_mode = {"ama": "backtracking", "ama-bb": "bb", "ama-fixed": "fixed"}[args.solver]
    opts = AmaOptions(
        eps_gap=args.eps_gap,
        eps_primal=args.eps_primal,
        max_iter=args.max_iter,
        beta_backtrack=args.beta,
        rho0=args.rho0,
        step_mode=step_mode,
        rho_fixed=args.rho_fixed,
        lenient_stop=args.lenient_stop,
        keep_iterates=args.keep_iterates,
    )
    return solve_ama(instance, opts)


def _relative_error(X: np.ndarray, truth: np.ndarray | None) -> float | None:
    if truth is None or truth.shape != X.shape:
        return None
    return float(np.linalg.norm(X - truth) / np.linalg.norm(truth))


def _instance_for(solution: Solution, args: argparse.Namespace) -> ProblemInstance:
    path = getattr(args, "instance", None)
    if path is None and solution.manifest is not None:
        path = solution.manifest.flags.get("instance")
    if path is None:
        raise InvalidInputError(f"no instance recorded for {solution.path}; pass --instance")
    return load_instance(Path(path), gamma=solution.summary.gamma)


# -----------------------------
# Commands
# -----------------------------
def cmd_gen_msd(args: argparse.Namespace) -> int:
    start = time.perf_counter()
    truth = gen_msd(args.masses, gamma=args.gamma)
    out = Path(args.out)
    save_instance(truth.instance, out, source=f"msd N={args.masses}")
    sidecar = save_ground_truth(truth, ground_truth_path(out))
    manifest = _manifest(
        args, "gen-msd", truth.instance,
        timings={"generate": time.perf_counter() - start},
        artifacts=[out.name, sidecar.name],
    )
    write_model(manifest, out.with_name(out.stem + ".manifest.json"))
    logger.info("MSD instance with %d masses written to %s (ground truth %s)", args.masses, out, sidecar)
    return EXIT_OK


def cmd_solve(args: argparse.Namespace) -> int:
    instance = load_instance(Path(args.instance), gamma=args.gamma)
    result = _run_solver(instance, args)
    manifest = _manifest(
        args, "solve", instance,
        timings={"solve": result.elapsed},
        iterations={result.solver: result.iterations},
    )
    write_solution(Path(args.out), result, manifest)
    error = _relative_error(result.X, load_ground_truth(ground_truth_path(Path(args.instance))))
    if error is not None:
        logger.info("relative error against ground truth: %.4f", error)
    return EXIT_OK if result.converged else EXIT_NOT_CONVERGED


def _sweep_one(instance: ProblemInstance, gamma: float, args, out_dir: Path, truth) -> dict[str, Any]:
    result = _run_solver(instance.with_gamma(gamma), args)
    run_dir = out_dir / f"gamma_{gamma:g}"
    manifest = _manifest(
        args, "sweep", instance.with_gamma(gamma),
        timings={"solve": result.elapsed},
        iterations={result.solver: result.iterations},
    )
    write_solution(run_dir, result, manifest)
    sig = signature(result.Z, args.zero_tol)
    return {
        "gamma": gamma,
        "converged": result.converged,
        "iterations": result.iterations,
        "relative_error": _relative_error(result.X, truth),
        "pi": sig.pi,
        "nu": sig.nu,
        "nonzero": sig.rank,
        "run_dir": run_dir.name,
    }


def cmd_sweep(args: argparse.Namespace) -> int:
    instance = load_instance(Path(args.instance))
    truth = load_ground_truth(ground_truth_path(Path(args.instance)))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    gammas = args.gammas

    if args.workers > 1:
        with ThreadPoolExecutor(max_workers=args.workers) as pool:
            rows = list(pool.map(lambda g: _sweep_one(instance, g, args, out_dir, truth), gammas))
    else:
        rows = [_sweep_one(instance, g, args, out_dir, truth) for g in gammas]

    sweep = pd.DataFrame(rows)
    sweep.to_csv(out_dir / "sweep.csv", index=False)
    if truth is not None:
        best = sweep.loc[sweep["relative_error"].idxmin()]
        logger.info("smallest relative error %.4f at gamma = %g", best["relative_error"], best["gamma"])
    return EXIT_OK if sweep["converged"].all() else EXIT_NOT_CONVERGED


def cmd_decompose(args: argparse.Namespace) -> int:
    solution = load_solution(Path(args.solution))
    dec = factor_channels(solution.Z, args.zero_tol)
    payload = DecompositionFile.from_decomposition(dec, solution.Z)
    try:
        instance = _instance_for(solution, args)
    except InvalidInputError as exc:
        logger.warning("skipping signature bounds: %s", exc)
    else:
        A = instance.model.A
        Z_eff = dec.B @ dec.H.T + dec.H @ dec.B.T
        bounds = check_signature_bounds(A, consistent_covariance(A, Z_eff), Z_eff, dec.m, args.zero_tol)
        payload.mu_A = bounds.mu_A
        payload.signature_bounds_hold = bounds.holds
    out = Path(args.out) if args.out else Path(args.solution) / "decomposition.json"
    write_model(payload, out)
    logger.info("signature (%d, %d, %d), %d channels -> %s", dec.signature.pi, dec.signature.nu, dec.signature.delta, dec.m, out)
    return EXIT_OK


def cmd_filter(args: argparse.Namespace) -> int:
    solution = load_solution(Path(args.solution))
    instance = _instance_for(solution, args)
    A = instance.model.A
    dec = factor_channels(solution.Z, args.zero_tol)
    # realize the covariance generated exactly by the factored Z
    Z_eff = dec.B @ dec.H.T + dec.H @ dec.B.T
    X_hat = consistent_covariance(A, Z_eff)
    drift = float(np.linalg.norm(X_hat - solution.X) / np.linalg.norm(solution.X))
    logger.info("consistent covariance differs from the solver X by %.3e (relative)", drift)

    if args.mode == "direct":
        realization = filter_gain(A, X_hat, dec.B, dec.H)
    else:
        realization = optimal_gain(A, X_hat, dec.B, method=args.method)
    out = Path(args.out) if args.out else Path(args.solution) / "realization.json"
    save_realization(realization, out)
    write_model(_manifest(args, "filter", instance), out.with_name(out.stem + ".manifest.json"))
    logger.info("%s realization with %d channels -> %s", realization.mode, realization.m, out)
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace) -> int:
    realization = load_realization(Path(args.realization))
    cfg = SimConfig(
        dt=args.dt,
        t_final=args.tfinal,
        n_traj=args.traj,
        seed=args.seed,
        scheme=args.scheme,
        workers=args.workers,
    )
    stats = simulate_ensemble(realization, cfg)
    mask = load_instance(Path(args.instance)).data.E if args.instance else None
    comparison = compare_covariance(stats, realization.X, mask)
    out_dir = Path(args.out)
    artifacts = save_stats(stats, out_dir, comparison)
    manifest = _manifest(args, "simulate", seeds=[args.seed], artifacts=artifacts + ["manifest.json"])
    write_model(manifest, out_dir / "manifest.json")
    logger.info(
        "sample covariance vs realized X: full %.4f, masked %.4f (relative)",
        comparison.full_relative_error, comparison.masked_relative_error,
    )
    return EXIT_OK


def cmd_diagnose(args: argparse.Namespace) -> int:
    solution = load_solution(Path(args.solution), require_history=True)
    instance = _instance_for(solution, args)
    rhos = solution.history["rho"].to_numpy()
    report = diagnose(instance, solution.Y, solution.X, solution.iterates, rhos)
    out = Path(args.out) if args.out else Path(args.solution) / "diagnostics.json"
    write_json(report.as_dict(), out)
    logger.info("diagnostics -> %s (contraction verdict %s)", out, report.contraction_holds)
    return EXIT_OK


# -----------------------------
# Parser
# -----------------------------
def _solver_flags(p: argparse.ArgumentParser):
    _add(p, "--solver", default="ama-bb", choices=SOLVERS)
    _add(p, "--eps-gap", type=float, default=0.005)
    _add(p, "--eps-primal", type=float, default=0.05)
    _add(p, "--max-iter", type=int, default=10000)
    _add(p, "--beta", type=float, default=0.5, help="backtracking factor")
    _add(p, "--rho0", type=float, default=1.0, help="initial AMA step")
    _add(p, "--rho-fixed", type=float, default=None, help="step for ama-fixed (default: Lipschitz step)")
    _add(p, "--rho", type=float, default=1.0, help="ADMM penalty")
    _add(p, "--step-policy", default="residual-balancing", choices=("constant", "residual-balancing"))
    _add_switch(p, "--lenient-stop", "stop when either tolerance is met", aliases=("--paper-stop",))
    _add_switch(p, "--keep-iterates", "store dual iterates for diagnostics")


class _Parser(argparse.ArgumentParser):
    """Usage errors become InvalidInputError so they map to exit code 3."""

    def error(self, message):
        raise InvalidInputError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ccama", description="Covariance completion toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    parser.add_argument("--quiet", action="store_true", help="warnings and errors only")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-msd", help="mass-spring-damper benchmark instance")
    _add(p, "--masses", type=int, required=True)
    _add(p, "--out", type=Path, required=True)
    _add(p, "--gamma", type=float, default=DEFAULT_GAMMA)
    p.set_defaults(func=cmd_gen_msd)

    p = sub.add_parser("solve", help="solve one completion problem")
    _add(p, "--instance", type=Path, required=True)
    _add(p, "--out", type=Path, required=True)
    _add(p, "--gamma", type=float, default=None, help="override the instance gamma")
    _solver_flags(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("sweep", help="solve over a list of gamma values")
    _add(p, "--instance", type=Path, required=True)
    _add(p, "--gammas", type=_gamma_list, required=True, help="comma-separated values")
    _add(p, "--out", type=Path, required=True)
    _add(p, "--zero-tol", type=float, default=DEFAULT_ZERO_TOL)
    _add(p, "--workers", type=int, default=1)
    _solver_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("decompose", help="factor Z into input channels")
    _add(p, "--solution", type=Path, required=True)
    _add(p, "--zero-tol", type=float, default=DEFAULT_ZERO_TOL)
    _add(p, "--instance", type=Path, default=None)
    _add(p, "--out", type=Path, default=None)
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("filter", help="synthesize a realizing filter")
    _add(p, "--solution", type=Path, required=True)
    _add(p, "--mode", type=_filter_mode, default="direct", choices=("direct", "optimal"), help="eq5c is accepted for direct")
    _add(p, "--method", default="congruence", choices=("congruence", "kkt"))
    _add(p, "--zero-tol", type=float, default=DEFAULT_ZERO_TOL)
    _add(p, "--instance", type=Path, default=None)
    _add(p, "--out", type=Path, default=None)
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("simulate", help="ensemble simulation of a realization")
    _add(p, "--realization", type=Path, required=True)
    _add(p, "--traj", type=int, default=20)
    _add(p, "--seed", type=int, default=0)
    _add(p, "--tfinal", type=float, default=50.0)
    _add(p, "--dt", type=float, default=0.01)
    _add(p, "--scheme", default="exact", choices=("exact", "euler-maruyama"))
    _add(p, "--workers", type=int, default=1)
    _add(p, "--instance", type=Path, default=None, help="instance whose mask selects the observed entries")
    _add(p, "--out", type=Path, required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("diagnose", help="step-size constants at a solved point")
    _add(p, "--solution", type=Path, required=True)
    _add(p, "--instance", type=Path, default=None)
    _add(p, "--out", type=Path, default=None)
    p.set_defaults(func=cmd_diagnose)

    return parser


def configure_logging(verbose: bool = False, quiet: bool = False) -> None:
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT)


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except InvalidInputError as exc:
        print(f"ccama: {exc}", file=sys.stderr)
        return EXIT_INVALID_INPUT
    configure_logging(args.verbose, args.quiet)
    try:
        return args.func(args)
    except InvalidInputError as exc:
        logger.error("invalid input: %s", exc)
        return EXIT_INVALID_INPUT
    except CcamaError as exc:
        logger.error("numerical failure: %s", exc)
        return EXIT_NUMERICAL
