"""
ADMM baseline for covariance completion.

Both primal blocks minimize the augmented Lagrangian. The Z-step is the same
singular value thresholding as AMA; the X-step has no closed form and is
solved by an inner proximal-gradient loop whose prox is the log-det resolvent.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass
from typing import Literal

import numpy as np

from ccama.ama_solver import SolveResult, SolverState, stopping_met, z_update
from ccama.errors import DualInfeasibleError, InnerLoopError, InvalidInputError
from ccama.linops import (
    DualPoint,
    OperatorBundle,
    apply_a1,
    apply_a1_adj,
    apply_a2,
    apply_a2_adj,
    dual_objective,
    logdet_pd,
    primal_objective,
    primal_residual,
)
from ccama.problem import Matrix, ProblemInstance
from ccama.proxops import logdet_resolvent

logger = logging.getLogger(__name__)

StepPolicy = Literal["constant", "residual-balancing"]


@dataclass(frozen=True)
class AdmmOptions:
    """Penalty and inner-loop settings.

    The X-step is solved to a relative tolerance that follows the outer iteration:
    ``inner_ratio`` times the last relative change of X, clipped to
    [``inner_tol``, ``inner_tol_max``]. Residual balancing only adjusts ρ during
    the first ``balance_until`` iterations; afterwards the penalty stays fixed.
    """

    rho: float = 1.0
    mu_safety: float = 1.0
    inner_tol: float = 1e-10
    inner_tol_max: float = 1e-4
    inner_ratio: float = 0.1
    inner_max: int = 5000
    eps_gap: float = 0.005
    eps_primal: float = 0.05
    max_iter: int = 10000
    step_policy: StepPolicy = "residual-balancing"
    balance_factor: float = 10.0
    balance_multiplier: float = 2.0
    balance_until: int = 200
    lenient_stop: bool = False

    def __post_init__(self):
        for name in ("rho", "inner_tol", "inner_tol_max", "inner_ratio", "eps_gap", "eps_primal"):
            value = getattr(self, name)
            if not value > 0:
                raise InvalidInputError(f"{name} must be positive, got {value}")
        if self.inner_tol_max < self.inner_tol:
            raise InvalidInputError("inner_tol_max must not be below inner_tol")
        if not self.mu_safety >= 1:
            raise InvalidInputError(f"mu_safety must be at least 1, got {self.mu_safety}")
        if self.inner_max < 1 or self.max_iter < 1:
            raise InvalidInputError("inner_max and max_iter must be positive")
        if self.balance_until < 0:
            raise InvalidInputError(f"balance_until must be non-negative, got {self.balance_until}")
        if self.step_policy not in ("constant", "residual-balancing"):
            raise InvalidInputError(f"unknown step policy {self.step_policy!r}")
        if not (self.balance_factor > 1 and self.balance_multiplier > 1):
            raise InvalidInputError("balance_factor and balance_multiplier must exceed 1")


# -----------------------------
# Inner X-minimization
# -----------------------------
def _targets(Z: Matrix, Y: DualPoint, rho: float, G: Matrix) -> tuple[Matrix, Matrix]:
    return -(Z + Y.Y1 / rho), G - Y.Y2 / rho


def x_objective(bundle: OperatorBundle, X: Matrix, U1: Matrix, U2: Matrix, rho: float) -> float:
    """-logdet X + (ρ/2)(‖𝒜₁(X) - U1‖² + ‖𝒜₂(X) - U2‖²)."""
    r1 = apply_a1(bundle, X) - U1
    r2 = apply_a2(bundle, X) - U2
    return -logdet_pd(X) + 0.5 * rho * float(np.vdot(r1, r1) + np.vdot(r2, r2))


def inner_step(bundle: OperatorBundle, X: Matrix, U1: Matrix, U2: Matrix, rho: float, mu: float) -> Matrix:
    """One proximal-gradient step: X⁺ solves μX⁺ - (X⁺)⁻¹ = μX - ρΣⱼ𝒜ⱼ†(𝒜ⱼ(X) - Uⱼ)."""
    grad = apply_a1_adj(bundle, apply_a1(bundle, X) - U1) + apply_a2_adj(bundle, apply_a2(bundle, X) - U2)
    return logdet_resolvent(mu * X - rho * grad, mu)


def inner_mu(bundle: OperatorBundle, rho: float, mu_safety: float) -> float:
    lam = bundle.norms.lambda_normal
    mu = mu_safety * rho * lam
    if not mu > 0:
        raise InvalidInputError("operator 𝒜₁†𝒜₁ + 𝒜₂†𝒜₂ vanishes; the X-step is unbounded")
    return mu


def x_update_admm(
    bundle: OperatorBundle,
    Z: Matrix,
    Y: DualPoint,
    rho: float,
    opts: AdmmOptions,
    *,
    G: Matrix,
    X0: Matrix | None = None,
    tol: float | None = None,
    trace: list[float] | None = None,
) -> tuple[Matrix, int]:
    """Minimize the augmented Lagrangian in X; returns (X, inner iterations).

    Monotone accelerated proximal gradient: each step is a proximal-gradient
    step from an extrapolated point, kept only if it does not raise the
    objective; otherwise the momentum restarts from the current iterate. The
    objective of the kept iterates is appended to ``trace`` when given.
    """
    if not rho > 0:
        raise InvalidInputError(f"rho must be positive, got {rho}")
    tol = opts.inner_tol if tol is None else tol
    U1, U2 = _targets(Z, Y, rho, G)
    mu = inner_mu(bundle, rho, opts.mu_safety)

    X = np.eye(bundle.n) if X0 is None else X0
    F = x_objective(bundle, X, U1, U2, rho)
    if trace is not None:
        trace.append(F)
    V = X  # extrapolated point
    X_prev = X
    t = 1.0
    change = np.inf
    for i in range(opts.inner_max):
        P = inner_step(bundle, V, U1, U2, rho, mu)
        change = float(np.linalg.norm(P - V) / np.linalg.norm(V))
        F_p = x_objective(bundle, P, U1, U2, rho)
        X_prev = X
        if F_p <= F:
            X, F = P, F_p
        if trace is not None:
            trace.append(F)
        if change <= tol:
            return X, i + 1
        if X is P:
            t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
            V = X + ((t - 1.0) / t_next) * (X - X_prev)
            t = t_next
        else:
            # restart
            V, t = X, 1.0
    raise InnerLoopError(opts.inner_max, change)


def stationarity_residual(bundle: OperatorBundle, X: Matrix, Z: Matrix, Y: DualPoint, rho: float, G: Matrix) -> float:
    U1, U2 = _targets(Z, Y, rho, G)
    grad = apply_a1_adj(bundle, apply_a1(bundle, X) - U1) + apply_a2_adj(bundle, apply_a2(bundle, X) - U2)
    return float(np.linalg.norm(-np.linalg.inv(X) + rho * grad))


def inner_tolerance(opts: AdmmOptions, outer_change: float) -> float:
    """Inner tolerance for the next X-step given the last relative change of X."""
    if not np.isfinite(outer_change):
        return opts.inner_tol_max
    return float(np.clip(opts.inner_ratio * outer_change, opts.inner_tol, opts.inner_tol_max))


# -----------------------------
# Outer loop
# -----------------------------
def _balance_penalty(rho: float, primal: float, dual: float, factor: float, multiplier: float) -> float:
    if primal > factor * dual:
        return rho * multiplier
    if dual > factor * primal:
        return rho / multiplier
    return rho


def solve_admm(
    instance: ProblemInstance,
    opts: AdmmOptions | None = None,
    bundle: OperatorBundle | None = None,
) -> SolveResult:
    opts = opts or AdmmOptions()
    bundle = bundle or OperatorBundle.from_instance(instance)
    G = instance.data.G
    gamma = instance.gamma
    n, p = bundle.n, bundle.p
    logger.info(
        "starting admm: n=%d, p=%d, gamma=%.4g, rho=%.3g, policy=%s", n, p, gamma, opts.rho, opts.step_policy
    )
    start = time.perf_counter()

    state = SolverState(X=np.eye(n), Z=np.zeros((n, n)), Y=DualPoint.zeros(n, p), rho=opts.rho)
    converged = False
    outer_change = np.inf

    for k in range(opts.max_iter):
        rho = state.rho
        tol = inner_tolerance(opts, outer_change)
        X, inner = x_update_admm(bundle, state.Z, state.Y, rho, opts, G=G, X0=state.X, tol=tol)
        outer_change = float(np.linalg.norm(X - state.X) / np.linalg.norm(state.X))
        Z = z_update(bundle, X, state.Y.Y1, rho, gamma)
        Y = DualPoint(
            state.Y.Y1 + rho * (apply_a1(bundle, X) + Z),
            state.Y.Y2 + rho * (apply_a2(bundle, X) - G),
        )

        residual = primal_residual(bundle, X, Z, G)
        dual_residual = rho * float(np.linalg.norm(apply_a1_adj(bundle, Z - state.Z)))
        J_p = primal_objective(X, Z, gamma)
        try:
            J_d = dual_objective(bundle, Y, G)
        except DualInfeasibleError:
            J_d = np.nan
        gap = J_p - J_d

        state.X, state.Z, state.Y, state.k = X, Z, Y, k + 1
        state.history.append(
            {
                "k": k + 1,
                "J_p": J_p,
                "J_d": J_d,
                "gap": gap,
                "primal_residual": residual,
                "rho": rho,
                "backtracks": 0,
                "elapsed": time.perf_counter() - start,
                "dual_residual": dual_residual,
                "inner_iterations": inner,
                "inner_tol": tol,
            }
        )
        logger.debug(
            "k=%d J_p=%.8e J_d=%.8e gap=%.3e r=%.3e s=%.3e rho=%.3e inner=%d",
            k + 1, J_p, J_d, gap, residual, dual_residual, rho, inner,
        )

        if stopping_met(gap, residual, opts.eps_gap, opts.eps_primal, opts.lenient_stop):
            converged = True
            break
        if opts.step_policy == "residual-balancing" and k + 1 <= opts.balance_until:
            state.rho = _balance_penalty(rho, residual, dual_residual, opts.balance_factor, opts.balance_multiplier)
            if state.rho != rho:
                logger.debug("penalty rebalanced: %.3e -> %.3e", rho, state.rho)

    elapsed = time.perf_counter() - start
    if not converged:
        logger.warning("admm did not converge in %d iterations", opts.max_iter)
    logger.info("admm finished: converged=%s, iterations=%d, %.2fs", converged, state.k, elapsed)
    return SolveResult(
        solver="admm",
        X=state.X,
        Z=state.Z,
        Y=state.Y,
        gamma=gamma,
        converged=converged,
        iterations=state.k,
        history=state.history,
        elapsed=elapsed,
        options=asdict(opts),
    )
