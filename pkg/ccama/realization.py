"""
Linear filters that realize a completed covariance.

Given X ≻ 0 and input factors (B, H) with AX + XAᵀ + BHᵀ + HBᵀ = 0, the gain

    K = ½ Ω Bᵀ X⁻¹ - Hᵀ X⁻¹

makes ẋ = (A - BK)x + Bw, w white with covariance Ω, hold X as its steady-state
covariance. ``optimal_gain`` instead picks the K of least trace(KXKᵀ) among all
gains assigning X.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from scipy import linalg

from ccama.errors import (
    InconsistentRealizationError,
    InvalidInputError,
    NotPositiveDefiniteError,
    UnstableGeneratorError,
)
from ccama.problem import (
    KRON_ORACLE_MAX_N,
    LtiModel,
    Matrix,
    as_matrix,
    check_symmetric,
    lyapunov_solve,
    max_real_eig,
    symmetrize,
    validate_covariance,
)

logger = logging.getLogger(__name__)

FEASIBILITY_RTOL = 1e-6
CLOSED_LOOP_RTOL = 1e-8
HURWITZ_MARGIN = 1e-10
NULL_DIRECTION_RTOL = 1e-10

GainMethod = Literal["congruence", "kkt"]


@dataclass(frozen=True, eq=False)
class FilterRealization:
    A: Matrix
    B: Matrix
    K: Matrix
    Omega: Matrix
    Acl: Matrix
    X: Matrix
    closed_loop_residual: float
    constraint_residual: float = 0.0
    mode: str = "direct"
    H: Matrix | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def spectrum(self) -> np.ndarray:
        return np.linalg.eigvals(self.Acl)

    @property
    def noise_covariance(self) -> Matrix:
        return symmetrize(self.B @ self.Omega @ self.B.T)


# -----------------------------
# Helpers
# -----------------------------
def _pd(M: Matrix, name: str) -> Matrix:
    M = check_symmetric(M, name, tol=1e-10)
    min_eig = float(linalg.eigvalsh(M)[0]) if M.size else 0.0
    if not min_eig > 0:
        raise NotPositiveDefiniteError(f"{name} must be positive definite", min_eig)
    return M


def _omega(Omega, m: int) -> Matrix:
    if Omega is None:
        return np.eye(m)
    Omega = _pd(as_matrix(Omega, "Omega"), "Omega")
    if Omega.shape != (m, m):
        raise InvalidInputError(f"Omega must be {m}x{m}, got {Omega.shape}")
    return Omega


def _relative(residual: float, scale: float) -> float:
    return residual / max(scale, np.finfo(np.float64).tiny)


def closed_loop_residual(Acl: Matrix, X: Matrix, B: Matrix, Omega: Matrix) -> float:
    return float(np.linalg.norm(Acl @ X + X @ Acl.T + B @ Omega @ B.T, "fro"))


def _finish(A, B, K, Omega, X, mode, H=None, constraint_residual=0.0) -> FilterRealization:
    Acl = A - B @ K
    norm_acl = float(np.linalg.norm(Acl, 2))
    max_re = max_real_eig(Acl)
    if not max_re < -HURWITZ_MARGIN * norm_acl:
        raise UnstableGeneratorError(max_re)
    residual = closed_loop_residual(Acl, X, B, Omega)
    if residual > CLOSED_LOOP_RTOL * float(np.linalg.norm(X, "fro")):
        logger.warning(
            "closed-loop Lyapunov residual %.3e exceeds %.1e relative to ‖X‖", residual, CLOSED_LOOP_RTOL
        )
    return FilterRealization(
        A=A,
        B=B,
        K=K,
        Omega=Omega,
        Acl=Acl,
        X=X,
        closed_loop_residual=residual,
        constraint_residual=constraint_residual,
        mode=mode,
        H=H,
    )


def consistent_covariance(A, Z) -> Matrix:
    """The covariance exactly realized by Z: AX̂ + X̂Aᵀ + Z = 0."""
    return lyapunov_solve(A, Z)


# -----------------------------
# Gains
# -----------------------------
def filter_gain(A, X, B, H, Omega=None) -> FilterRealization:
    """K = ½ΩBᵀX⁻¹ - HᵀX⁻¹ for (X, B, H) satisfying AX + XAᵀ + BHᵀ + HBᵀ = 0."""
    A = as_matrix(A, "A")
    X = _pd(as_matrix(X, "X"), "X")
    B = as_matrix(B, "B")
    H = as_matrix(H, "H")
    n = A.shape[0]
    if X.shape != (n, n) or B.shape[0] != n or H.shape != B.shape:
        raise InvalidInputError(f"shape mismatch: A {A.shape}, X {X.shape}, B {B.shape}, H {H.shape}")
    Omega = _omega(Omega, B.shape[1])

    S = A @ X + X @ A.T
    residual = float(np.linalg.norm(S + B @ H.T + H @ B.T, "fro"))
    rel = _relative(residual, float(np.linalg.norm(S, "fro")))
    if rel > FEASIBILITY_RTOL:
        raise InconsistentRealizationError("inconsistent (X, B, H)", rel)

    K = linalg.solve(X, 0.5 * B @ Omega - H, assume_a="pos").T
    logger.info("direct gain: n=%d, m=%d, structural residual %.3e", n, B.shape[1], rel)
    return _finish(A, B, K, Omega, X, "direct", H=H, constraint_residual=rel)


def _gain_congruence(P: Matrix, X: Matrix, R: Matrix) -> Matrix:
    # V with VᵀXV = I, VᵀPV = D turns PΛX + XΛP = R into DΛ̃ + Λ̃D = VᵀRV
    d, V = linalg.eigh(P, X)
    d = np.maximum(d, 0.0)
    R_t = V.T @ R @ V
    denom = d[:, None] + d[None, :]
    null = denom <= NULL_DIRECTION_RTOL * max(float(d.max()), np.finfo(np.float64).tiny)
    Lam_t = np.where(null, 0.0, R_t / np.where(null, 1.0, denom))
    return symmetrize(V @ Lam_t @ V.T)


def _gain_kkt(P: Matrix, X: Matrix, R: Matrix) -> Matrix:
    n = X.shape[0]
    if n > 2 * KRON_ORACLE_MAX_N:
        raise InvalidInputError(f"dense KKT solve is limited to n <= {2 * KRON_ORACLE_MAX_N}, got {n}")
    L = np.kron(X, P) + np.kron(P, X)
    lam, *_ = np.linalg.lstsq(L, R.reshape(-1, order="F"), rcond=None)
    return symmetrize(lam.reshape((n, n), order="F"))


def optimal_gain(A, X, B, Omega=None, method: GainMethod = "congruence") -> FilterRealization:
    """Least trace(KXKᵀ) gain subject to (A - BK)X + X(A - BK)ᵀ + BΩBᵀ = 0.

    Stationarity gives K = BᵀΛ with Λ symmetric solving BBᵀΛX + XΛBBᵀ = R,
    R = AX + XAᵀ + BΩBᵀ.
    """
    A = as_matrix(A, "A")
    X = _pd(as_matrix(X, "X"), "X")
    B = as_matrix(B, "B")
    n = A.shape[0]
    if X.shape != (n, n) or B.shape[0] != n:
        raise InvalidInputError(f"shape mismatch: A {A.shape}, X {X.shape}, B {B.shape}")
    Omega = _omega(Omega, B.shape[1])

    report = validate_covariance(LtiModel(A, np.eye(n)), X, B)
    if report.h_relative_residual > FEASIBILITY_RTOL:
        raise InconsistentRealizationError("X is not assignable through this B", report.h_relative_residual)
    if not report.consistent:
        logger.warning("rank test disagrees (%d vs %d) at a small residual", report.rank_lhs, report.rank_rhs)

    P = B @ B.T
    R = symmetrize(A @ X + X @ A.T + B @ Omega @ B.T)
    if method == "congruence":
        Lam = _gain_congruence(P, X, R)
    elif method == "kkt":
        Lam = _gain_kkt(P, X, R)
    else:
        raise InvalidInputError(f"unknown gain method {method!r}")
    K = B.T @ Lam

    residual = float(np.linalg.norm(B @ K @ X + X @ K.T @ B.T - R, "fro"))
    rel = _relative(residual, float(np.linalg.norm(R, "fro")))
    if rel > FEASIBILITY_RTOL:
        raise InconsistentRealizationError("assignment constraint has no solution", rel)
    logger.info("optimal gain (%s): trace(KXKᵀ) = %.6e, constraint residual %.3e", method, objective_of(K, X), rel)
    return _finish(A, B, K, Omega, X, "optimal", constraint_residual=rel)


# -----------------------------
# Derived quantities
# -----------------------------
def objective_of(K: Matrix, X: Matrix) -> float:
    return float(np.trace(K @ X @ K.T))


def objective(realization: FilterRealization) -> float:
    return objective_of(realization.K, realization.X)


def input_correlation(realization: FilterRealization) -> Matrix:
    """H′ = -XKᵀ + ½BΩ, which satisfies the structural constraint for this realization."""
    return -realization.X @ realization.K.T + 0.5 * realization.B @ realization.Omega


def closed_loop_covariance(realization: FilterRealization) -> Matrix:
    return lyapunov_solve(realization.Acl, realization.noise_covariance)
