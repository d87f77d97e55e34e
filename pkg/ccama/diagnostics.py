"""
Post-hoc constants for the dual iteration at a solved point.

At the solution Ȳ with α·I ⪯ 𝒜†(Ȳ) ⪯ β·I:

    L     = σ²_max(𝒜†) / α²                   gradient Lipschitz constant
    ρ_c   = 2α⁴ / (β² σ²_max(𝒜))             steps below this contract toward Ȳ

and, for a feasible start Y⁰, the universal iterate bounds

    β₀ = σ_max(𝒜†)‖Y⁰ - Ȳ‖_F + ‖𝒜†(Ȳ)‖₂
    α₀ = det 𝒜†(Y⁰) · β₀^{1-n} · exp(-⟨G, Y2⁰⟩ - γ√n σ_max(𝒜₁†) tr X̄)

α₀ underflows easily, so it is carried as log α₀.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ccama.ama_solver import initial_dual_point
from ccama.errors import DualInfeasibleError
from ccama.linops import DualPoint, OperatorBundle, apply_adjoint, logdet_pd
from ccama.problem import Matrix, ProblemInstance

logger = logging.getLogger(__name__)

CONTRACTION_SLACK = 1e-10


@dataclass(frozen=True)
class DiagnosticsReport:
    alpha: float
    beta: float
    lipschitz: float
    sigma_a: float
    sigma_a_adj: float
    sigma_a1_adj: float
    contraction_bound: float
    iterate_log_alpha: float
    iterate_beta: float
    iterate_step_bound: float
    steps_checked: int = 0
    contraction_holds: bool | None = None
    violations: list[int] = field(default_factory=list)

    @property
    def iterate_alpha(self) -> float:
        return float(np.exp(self.iterate_log_alpha))

    def as_dict(self) -> dict:
        """JSON-ready fields; non-finite floats become None."""
        out = {k: getattr(self, k) for k in self.__dataclass_fields__}
        out["iterate_alpha"] = self.iterate_alpha
        return {k: None if isinstance(v, float) and not np.isfinite(v) else v for k, v in out.items()}


def dual_bounds(bundle: OperatorBundle, Y: DualPoint) -> tuple[float, float]:
    """(λ_min, λ_max) of 𝒜†(Y)."""
    lam = np.linalg.eigvalsh(apply_adjoint(bundle, Y))
    if not lam[0] > 0:
        raise DualInfeasibleError(float(lam[0]))
    return float(lam[0]), float(lam[-1])


def lipschitz_constant(bundle: OperatorBundle, alpha: float) -> float:
    return bundle.norms.sigma_a_adj**2 / alpha**2


def contraction_step_bound(bundle: OperatorBundle, alpha: float, beta: float) -> float:
    return 2.0 * alpha**4 / (beta**2 * bundle.norms.sigma_a**2)


def iterate_bounds(
    bundle: OperatorBundle,
    Y0: DualPoint,
    Y_bar: DualPoint,
    X_bar: Matrix,
    G: Matrix,
    gamma: float,
) -> tuple[float, float]:
    """(log α₀, β₀) bracketing 𝒜†(Y^k) along a run started at Y0."""
    norms = bundle.norms
    n = bundle.n
    beta = norms.sigma_a_adj * (Y0 - Y_bar).norm() + float(np.linalg.norm(apply_adjoint(bundle, Y_bar), 2))
    log_alpha = (
        logdet_pd(apply_adjoint(bundle, Y0))
        + (1 - n) * np.log(beta)
        - float(np.vdot(G, Y0.Y2))
        - gamma * np.sqrt(n) * norms.sigma_a1_adj * float(np.trace(X_bar))
    )
    return float(log_alpha), float(beta)


def check_contraction(
    iterates: Sequence[DualPoint],
    rhos: Sequence[float],
    Y_bar: DualPoint,
    bound: float,
) -> tuple[int, list[int]]:
    """Steps k (1-based) with ρ_k ≤ bound whose distance to Ȳ grew; returns (checked, violations)."""
    checked = 0
    violations: list[int] = []
    for k, rho in enumerate(rhos, start=1):
        if k >= len(iterates) or rho > bound:
            continue
        checked += 1
        before = (iterates[k - 1] - Y_bar).norm()
        after = (iterates[k] - Y_bar).norm()
        if after > before * (1.0 + CONTRACTION_SLACK) + CONTRACTION_SLACK:
            violations.append(k)
    return checked, violations


def diagnose(
    instance: ProblemInstance,
    Y_bar: DualPoint,
    X_bar: Matrix,
    iterates: Sequence[DualPoint] | None = None,
    rhos: Sequence[float] | None = None,
    bundle: OperatorBundle | None = None,
) -> DiagnosticsReport:
    bundle = bundle or OperatorBundle.from_instance(instance)
    norms = bundle.norms
    alpha, beta = dual_bounds(bundle, Y_bar)
    bound = contraction_step_bound(bundle, alpha, beta)

    Y0 = iterates[0] if iterates else initial_dual_point(bundle, instance.gamma)
    log_alpha0, beta0 = iterate_bounds(bundle, Y0, Y_bar, X_bar, instance.data.G, instance.gamma)
    # ρ bound with the iterate constants, in log space to survive underflow of α₀
    log_step = np.log(2.0) + 4.0 * log_alpha0 - 2.0 * np.log(beta0) - 2.0 * np.log(norms.sigma_a)
    iterate_step = float(np.exp(log_step))

    checked, violations, holds = 0, [], None
    if iterates is not None and rhos is not None:
        checked, violations = check_contraction(iterates, rhos, Y_bar, bound)
        holds = not violations
        if violations:
            logger.warning("distance to the solution grew at %d step(s) below the bound", len(violations))
    else:
        logger.warning("no recorded iterates; contraction verdict unavailable")

    logger.info("diagnostics: alpha=%.4e beta=%.4e L=%.4e rho_c=%.4e", alpha, beta, lipschitz_constant(bundle, alpha), bound)
    return DiagnosticsReport(
        alpha=alpha,
        beta=beta,
        lipschitz=lipschitz_constant(bundle, alpha),
        sigma_a=norms.sigma_a,
        sigma_a_adj=norms.sigma_a_adj,
        sigma_a1_adj=norms.sigma_a1_adj,
        contraction_bound=bound,
        iterate_log_alpha=log_alpha0,
        iterate_beta=beta0,
        iterate_step_bound=iterate_step,
        steps_checked=checked,
        contraction_holds=holds,
        violations=violations,
    )
