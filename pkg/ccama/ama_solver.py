"""
Customized alternating minimization (AMA) for covariance completion.

One iteration:

    X⁺  = 𝒜†(Y)⁻¹
    Z⁺  = 𝒮_{γ/ρ}(-(𝒜₁(X⁺) + Y1/ρ))
    Y1⁺ = 𝒯_γ(Y1 + ρ𝒜₁(X⁺))
    Y2⁺ = Y2 + ρ(𝒜₂(X⁺) - G)

with ρ chosen by backtracking from a Barzilai-Borwein guess, the previous
accepted step, or a fixed Lipschitz step. Because X⁺ = 𝒜†(Y)⁻¹ the dual
update is a projected gradient ascent step on J_d.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Any, Literal, NamedTuple

import numpy as np
import pandas as pd

from ccama.errors import BacktrackingError, DualInfeasibleError, InvalidInputError, NotPositiveDefiniteError
from ccama.linops import (
    DualPoint,
    OperatorBundle,
    apply_a1,
    apply_a2,
    apply_adjoint,
    cholesky_pd,
    dual_evaluate,
    dual_gradient,
    inverse_from_cholesky,
    primal_objective,
    primal_residual,
)
from ccama.problem import Matrix, ProblemInstance, lyapunov_solve
from ccama.proxops import saturate, saturate_and_shrink, soft_threshold

logger = logging.getLogger(__name__)

StepMode = Literal["bb", "backtracking", "fixed"]

HISTORY_COLUMNS = ["k", "J_p", "J_d", "gap", "primal_residual", "rho", "backtracks", "elapsed"]
BB_DEGENERACY_TOL = 1e-14


# -----------------------------
# Options and results
# -----------------------------
@dataclass(frozen=True)
class AmaOptions:
    """Tolerances and step-size policy.

    ``step_mode`` is one of ``"bb"`` (Barzilai-Borwein guess then backtracking),
    ``"backtracking"`` (start from the previous accepted ρ) or ``"fixed"``
    (ρ = α²/σ²_max(𝒜†) unless ``rho_fixed`` is given). ``lenient_stop`` stops as
    soon as either tolerance is met instead of requiring both.
    """

    eps_gap: float = 0.005
    eps_primal: float = 0.05
    beta_backtrack: float = 0.5
    rho0: float = 1.0
    max_iter: int = 10000
    max_backtracks: int = 60
    step_mode: StepMode = "bb"
    rho_fixed: float | None = None
    lenient_stop: bool = False
    keep_iterates: bool = False

    def __post_init__(self):
        for name in ("eps_gap", "eps_primal", "rho0"):
            value = getattr(self, name)
            if not value > 0:
                raise InvalidInputError(f"{name} must be positive, got {value}")
        if not 0 < self.beta_backtrack < 1:
            raise InvalidInputError(f"beta_backtrack must lie in (0, 1), got {self.beta_backtrack}")
        if self.max_iter < 1 or self.max_backtracks < 1:
            raise InvalidInputError("max_iter and max_backtracks must be positive")
        if self.step_mode not in ("bb", "backtracking", "fixed"):
            raise InvalidInputError(f"unknown step mode {self.step_mode!r}")
        if self.rho_fixed is not None and not self.rho_fixed > 0:
            raise InvalidInputError(f"rho_fixed must be positive, got {self.rho_fixed}")


@dataclass
class SolverState:
    X: Matrix
    Z: Matrix
    Y: DualPoint
    rho: float
    k: int = 0
    history: list[dict[str, float]] = field(default_factory=list)


@dataclass(frozen=True, eq=False)
class SolveResult:
    """Final (or best) iterate of a solve together with its per-iteration history."""

    solver: str
    X: Matrix
    Z: Matrix
    Y: DualPoint
    gamma: float
    converged: bool
    iterations: int
    history: list[dict[str, float]]
    elapsed: float
    options: dict[str, Any] = field(default_factory=dict)
    iterates: list[DualPoint] | None = None
    selected: int | None = None  # k of the returned iterate when it is not the last one

    @property
    def final(self) -> dict[str, float]:
        """History record of the returned iterate."""
        if not self.history:
            return {}
        if self.selected is not None:
            return self.history[self.selected - 1]
        return self.history[-1]

    @property
    def last(self) -> dict[str, float]:
        return self.history[-1] if self.history else {}

    @property
    def J_p(self) -> float:
        return primal_objective(self.X, self.Z, self.gamma)

    @property
    def J_d(self) -> float:
        return float(self.final.get("J_d", np.nan))

    def to_frame(self) -> pd.DataFrame:
        extra = [c for c in (self.history[0] if self.history else {}) if c not in HISTORY_COLUMNS]
        df = pd.DataFrame(self.history, columns=HISTORY_COLUMNS + extra)
        df.insert(0, "solver", self.solver)
        return df


# -----------------------------
# Iteration pieces
# -----------------------------
def x_update(bundle: OperatorBundle, Y: DualPoint) -> Matrix:
    try:
        L = cholesky_pd(apply_adjoint(bundle, Y))
    except NotPositiveDefiniteError as exc:
        raise DualInfeasibleError(exc.min_eigenvalue) from None
    return inverse_from_cholesky(L)


def z_update(bundle: OperatorBundle, X: Matrix, Y1: Matrix, rho: float, gamma: float) -> Matrix:
    """Z⁺ = 𝒮_{γ/ρ}(V) with V = -(𝒜₁(X) + Y1/ρ)."""
    if not rho > 0:
        raise InvalidInputError(f"rho must be positive, got {rho}")
    V = -(apply_a1(bundle, X) + Y1 / rho)
    return soft_threshold(V, gamma / rho)


def dual_update(
    bundle: OperatorBundle,
    X: Matrix,
    Z: Matrix | None,
    Y: DualPoint,
    rho: float,
    gamma: float,
    G: Matrix,
) -> DualPoint:
    """Multiplier update.

    With ``Z=None`` the saturated form Y1⁺ = 𝒯_γ(Y1 + ρ𝒜₁(X)) is used; passing Z
    applies the plain form Y1⁺ = Y1 + ρ(𝒜₁(X) + Z). The two agree when Z is the
    matching ``z_update`` output.
    """
    if not rho > 0:
        raise InvalidInputError(f"rho must be positive, got {rho}")
    if Z is None:
        Y1 = saturate(Y.Y1 + rho * apply_a1(bundle, X), gamma)
    else:
        Y1 = Y.Y1 + rho * (apply_a1(bundle, X) + Z)
    Y2 = Y.Y2 + rho * (apply_a2(bundle, X) - G)
    return DualPoint(Y1, Y2)


def _candidate(
    bundle: OperatorBundle, X: Matrix, Y: DualPoint, rho: float, gamma: float, G: Matrix
) -> tuple[DualPoint, Matrix]:
    # both Z⁺ and Y1⁺ from one decomposition of M = Y1 + ρ𝒜₁(X)
    M = Y.Y1 + rho * apply_a1(bundle, X)
    T, S = saturate_and_shrink(M, gamma)
    Y2 = Y.Y2 + rho * (apply_a2(bundle, X) - G)
    return DualPoint(T, Y2), -S / rho


def prox_gradient_dual_step(bundle: OperatorBundle, Y: DualPoint, rho: float, gamma: float, G: Matrix) -> DualPoint:
    """Projected gradient ascent on J_d onto {‖Y1‖₂ ≤ γ}."""
    grad = dual_gradient(bundle, Y, G)
    step = Y + rho * grad
    return DualPoint(saturate(step.Y1, gamma), step.Y2)


def bb_step(
    Y_prev: DualPoint,
    Y_cur: DualPoint,
    grad_prev: DualPoint,
    grad_cur: DualPoint,
    fallback: float = 1.0,
) -> float:
    """Barzilai-Borwein quotient ‖ΔY‖² / ⟨ΔY, ∇J_d(Y_prev) - ∇J_d(Y_cur)⟩."""
    dY = Y_cur - Y_prev
    num = dY.inner(dY)
    den = dY.inner(grad_prev - grad_cur)
    if num == 0.0 or den <= BB_DEGENERACY_TOL * num:
        return fallback
    return num / den


def lipschitz_step(bundle: OperatorBundle, Y: DualPoint) -> float:
    """ρ = α²/σ²_max(𝒜†) with α = λ_min(𝒜†(Y))."""
    alpha = float(np.linalg.eigvalsh(apply_adjoint(bundle, Y))[0])
    if not alpha > 0:
        raise DualInfeasibleError(alpha)
    sigma = bundle.norms.sigma_a_adj
    return alpha**2 / sigma**2


def certified_fixed_step(
    bundle: OperatorBundle,
    Y: DualPoint,
    gamma: float,
    G: Matrix,
    opts: AmaOptions,
    current: tuple[float, DualPoint, Matrix] | None = None,
) -> float:
    """Largest ρ the sufficient-ascent test accepts at Y, searching down from rho0.

    Never below the Lipschitz step α²/σ²_max(𝒜†), which the test always accepts
    inside 𝒟_αβ. Every step taken with a constant ρ that passes the test keeps the
    O(1/k) bound J_d(Ȳ) - J_d(Y^k) ≤ ‖Y⁰ - Ȳ‖²/(2ρk).
    """
    floor = lipschitz_step(bundle, Y)
    try:
        trial = backtrack(bundle, Y, opts.rho0, opts.beta_backtrack, gamma, G, opts.max_backtracks, current=current)
    except BacktrackingError:
        return floor
    return max(trial.rho, floor)


class StepOutcome(NamedTuple):
    Y: DualPoint  # accepted Y⁺
    rho: float
    Z: Matrix  # Z⁺
    X: Matrix  # X⁺ = 𝒜†(Y)⁻¹ the step was built from
    J_d: float  # J_d(Y⁺)
    backtracks: int
    grad: DualPoint  # ∇J_d(Y⁺)
    W: Matrix  # 𝒜†(Y⁺)⁻¹, the next X


def backtrack(
    bundle: OperatorBundle,
    Y: DualPoint,
    rho0: float,
    beta: float,
    gamma: float,
    G: Matrix,
    max_backtracks: int,
    current: tuple[float, DualPoint, Matrix] | None = None,
) -> StepOutcome:
    """Shrink ρ from rho0 until 𝒜†(Y⁺) ≻ 0 and J_d(Y⁺) lies above the quadratic minorant."""
    J, grad, X = current if current is not None else dual_evaluate(bundle, Y, G)
    rho = rho0
    trace: list[float] = []
    pd_residual = np.nan
    ascent_residual = np.nan
    for j in range(max_backtracks + 1):
        trace.append(rho)
        Y_new, Z = _candidate(bundle, X, Y, rho, gamma, G)
        try:
            J_new, grad_new, W = dual_evaluate(bundle, Y_new, G)
        except DualInfeasibleError as exc:
            pd_residual = exc.min_eigenvalue if exc.min_eigenvalue is not None else np.nan
            rho *= beta
            continue
        dY = Y_new - Y
        bound = J + grad.inner(dY) - dY.inner(dY) / (2.0 * rho)
        slack = 1e-12 * (1.0 + abs(J))
        if J_new >= bound - slack:
            return StepOutcome(Y_new, rho, Z, X, J_new, j, grad_new, W)
        ascent_residual = bound - J_new
        rho *= beta
    raise BacktrackingError(trace, pd_residual, ascent_residual)


def initial_dual_point(bundle: OperatorBundle, gamma: float) -> DualPoint:
    """Y1⁰ = c·Y_L with Aᵀ Y_L + Y_L A = I, scaled so 𝒜₁†(Y1⁰) = (γ/‖Y1⁰‖₂)·I; Y2⁰ = 0."""
    A = bundle.model.A
    n = bundle.n
    Y_L = lyapunov_solve(A.T, -np.eye(n))
    c = np.sqrt(gamma / np.linalg.norm(Y_L, 2))
    Y1 = c * Y_L
    norm = float(np.linalg.norm(Y1, 2))
    if norm > gamma:
        logger.info("rescaling initial Y1 from spectral norm %.4e to gamma = %.4e", norm, gamma)
        Y1 *= gamma / norm
    return DualPoint(Y1, np.zeros((bundle.p, bundle.p)))


def stopping_met(gap: float, residual: float, eps_gap: float, eps_primal: float, lenient_stop: bool) -> bool:
    gap_ok = bool(np.isfinite(gap) and abs(gap) <= eps_gap)
    res_ok = bool(residual <= eps_primal)
    return (gap_ok or res_ok) if lenient_stop else (gap_ok and res_ok)


def _merit(gap: float, residual: float, eps_gap: float, eps_primal: float) -> float:
    if not np.isfinite(gap):
        return np.inf
    return max(abs(gap) / eps_gap, residual / eps_primal)


# -----------------------------
# Solver
# -----------------------------
def solve_ama(
    instance: ProblemInstance,
    opts: AmaOptions | None = None,
    bundle: OperatorBundle | None = None,
) -> SolveResult:
    opts = opts or AmaOptions()
    bundle = bundle or OperatorBundle.from_instance(instance)
    G = instance.data.G
    gamma = instance.gamma
    solver = {"bb": "ama-bb", "backtracking": "ama", "fixed": "ama-fixed"}[opts.step_mode]
    logger.info(
        "starting %s: n=%d, p=%d, gamma=%.4g, eps_gap=%.3g, eps_primal=%.3g",
        solver, bundle.n, bundle.p, gamma, opts.eps_gap, opts.eps_primal,
    )
    start = time.perf_counter()

    Y = initial_dual_point(bundle, gamma)
    J, grad, W = dual_evaluate(bundle, Y, G)
    rho_fixed = opts.rho_fixed
    if opts.step_mode == "fixed" and rho_fixed is None:
        rho_fixed = certified_fixed_step(bundle, Y, gamma, G, opts, current=(J, grad, W))
        logger.info(
            "fixed step certified at the start: rho = %.6e (Lipschitz step %.6e)",
            rho_fixed, lipschitz_step(bundle, Y),
        )

    state = SolverState(X=W, Z=np.zeros_like(W), Y=Y, rho=opts.rho0)
    iterates = [Y] if opts.keep_iterates else None
    Y_prev: DualPoint | None = None
    grad_prev: DualPoint | None = None
    best: tuple[float, int, Matrix, Matrix, DualPoint] | None = None
    converged = False

    for k in range(opts.max_iter):
        if opts.step_mode == "fixed":
            rho_try = rho_fixed
        elif k == 0:
            rho_try = opts.rho0
        elif opts.step_mode == "bb":
            rho_try = bb_step(Y_prev, state.Y, grad_prev, grad, fallback=state.rho)
        else:
            rho_try = state.rho

        step = backtrack(
            bundle, state.Y, rho_try, opts.beta_backtrack, gamma, G, opts.max_backtracks,
            current=(J, grad, W),
        )
        if opts.step_mode == "fixed" and step.backtracks:
            logger.warning("fixed step %.3e backtracked %d times at k=%d", rho_try, step.backtracks, k + 1)

        Y_prev, grad_prev = state.Y, grad
        state.X, state.Z, state.Y, state.rho, state.k = step.X, step.Z, step.Y, step.rho, k + 1
        J, grad, W = step.J_d, step.grad, step.W
        if iterates is not None:
            iterates.append(state.Y)

        J_p = primal_objective(state.X, state.Z, gamma)
        gap = J_p - J
        residual = primal_residual(bundle, state.X, state.Z, G)
        record = {
            "k": k + 1,
            "J_p": J_p,
            "J_d": J,
            "gap": gap,
            "primal_residual": residual,
            "rho": step.rho,
            "backtracks": step.backtracks,
            "elapsed": time.perf_counter() - start,
        }
        state.history.append(record)
        logger.debug(
            "k=%d J_p=%.8e J_d=%.8e gap=%.3e dp=%.3e rho=%.3e bt=%d",
            k + 1, J_p, J, gap, residual, step.rho, step.backtracks,
        )

        merit = _merit(gap, residual, opts.eps_gap, opts.eps_primal)
        if best is None or merit < best[0]:
            best = (merit, k + 1, state.X, state.Z, state.Y)
        if stopping_met(gap, residual, opts.eps_gap, opts.eps_primal, opts.lenient_stop):
            converged = True
            break

    elapsed = time.perf_counter() - start
    X, Z, Y = state.X, state.Z, state.Y
    selected = None
    if not converged:
        _, selected, X, Z, Y = best
        logger.warning(
            "%s did not converge in %d iterations; returning best iterate k=%d", solver, opts.max_iter, selected
        )
    logger.info("%s finished: converged=%s, iterations=%d, %.2fs", solver, converged, state.k, elapsed)

    options = asdict(opts)
    options["rho_fixed"] = rho_fixed
    return SolveResult(
        solver=solver,
        X=X,
        Z=Z,
        Y=Y,
        gamma=gamma,
        converged=converged,
        iterations=state.k,
        history=state.history,
        elapsed=elapsed,
        options=options,
        iterates=iterates,
        selected=selected,
    )
