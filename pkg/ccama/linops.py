"""
Linear operators of the completion problem and the dual function built on them.

    𝒜₁(X) = A X + X Aᵀ            𝒜₁†(Y) = Aᵀ Y + Y A
    𝒜₂(X) = (C X Cᵀ) ∘ E           𝒜₂†(Y) = Cᵀ (E ∘ Y) C

The dual objective is J_d(Y) = logdet 𝒜†(Y) - ⟨G, Y2⟩ + n on the set where
𝒜†(Y) = 𝒜₁†(Y1) + 𝒜₂†(Y2) is positive definite.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import linalg

from ccama.errors import DualInfeasibleError, InvalidInputError, NotPositiveDefiniteError, PowerIterationError
from ccama.problem import LtiModel, Matrix, as_matrix, symmetrize
from ccama.proxops import nuclear_norm

logger = logging.getLogger(__name__)

POWER_SEED = 0x5EED
POWER_TOL = 1e-8
POWER_MAX_ITER = 10000


# -----------------------------
# Dual variables
# -----------------------------
@dataclass(frozen=True, eq=False)
class DualPoint:
    """Pair (Y1, Y2) of symmetric multipliers; both blocks symmetrized on construction."""

    Y1: Matrix
    Y2: Matrix

    def __post_init__(self):
        object.__setattr__(self, "Y1", symmetrize(np.asarray(self.Y1, dtype=np.float64)))
        object.__setattr__(self, "Y2", symmetrize(np.asarray(self.Y2, dtype=np.float64)))

    @classmethod
    def zeros(cls, n: int, p: int) -> DualPoint:
        return cls(np.zeros((n, n)), np.zeros((p, p)))

    def __add__(self, other: DualPoint) -> DualPoint:
        return DualPoint(self.Y1 + other.Y1, self.Y2 + other.Y2)

    def __sub__(self, other: DualPoint) -> DualPoint:
        return DualPoint(self.Y1 - other.Y1, self.Y2 - other.Y2)

    def __mul__(self, scalar: float) -> DualPoint:
        return DualPoint(scalar * self.Y1, scalar * self.Y2)

    __rmul__ = __mul__

    def inner(self, other: DualPoint) -> float:
        return float(np.vdot(self.Y1, other.Y1) + np.vdot(self.Y2, other.Y2))

    def norm(self) -> float:
        return float(np.sqrt(self.inner(self)))


@dataclass(frozen=True)
class SpectralNorms:
    sigma_a: float  # σ_max(𝒜)
    sigma_a_adj: float  # σ_max(𝒜†), equal to σ_max(𝒜)
    sigma_a1_adj: float  # σ_max(𝒜₁†)
    lambda_a2: float  # λ_max(𝒜₂†𝒜₂)
    lambda_normal: float  # λ_max(𝒜₁†𝒜₁ + 𝒜₂†𝒜₂)


# -----------------------------
# Operator bundle
# -----------------------------
class OperatorBundle:
    """The model and mask the operators are built from, with norms computed at construction."""

    def __init__(self, model: LtiModel, mask: Matrix):
        mask = as_matrix(mask, "mask")
        if mask.shape != (model.p, model.p):
            raise InvalidInputError(f"mask must be {model.p}x{model.p}, got {mask.shape}")
        mask.setflags(write=False)
        self.model = model
        self.mask = mask
        self.norms: SpectralNorms = spectral_norms(self)

    @classmethod
    def from_instance(cls, instance) -> OperatorBundle:
        return cls(instance.model, instance.data.E)

    @property
    def n(self) -> int:
        return self.model.n

    @property
    def p(self) -> int:
        return self.model.p


def _check_shape(M: Matrix, size: int, name: str) -> Matrix:
    M = np.asarray(M, dtype=np.float64)
    if M.shape != (size, size):
        raise InvalidInputError(f"{name} must be {size}x{size}, got {M.shape}")
    return M


def apply_a1(bundle: OperatorBundle, X: Matrix) -> Matrix:
    X = _check_shape(X, bundle.n, "X")
    AX = bundle.model.A @ X
    return AX + AX.T


def apply_a2(bundle: OperatorBundle, X: Matrix) -> Matrix:
    X = _check_shape(X, bundle.n, "X")
    C = bundle.model.C
    return symmetrize(C @ X @ C.T) * bundle.mask


def apply_a1_adj(bundle: OperatorBundle, Y1: Matrix) -> Matrix:
    Y1 = _check_shape(Y1, bundle.n, "Y1")
    YA = Y1 @ bundle.model.A
    return YA + YA.T


def apply_a2_adj(bundle: OperatorBundle, Y2: Matrix) -> Matrix:
    Y2 = _check_shape(Y2, bundle.p, "Y2")
    C = bundle.model.C
    return symmetrize(C.T @ (bundle.mask * Y2) @ C)


def apply_adjoint(bundle: OperatorBundle, Y: DualPoint) -> Matrix:
    return apply_a1_adj(bundle, Y.Y1) + apply_a2_adj(bundle, Y.Y2)


# -----------------------------
# Log-det machinery
# -----------------------------
def cholesky_pd(M: Matrix, message: str = "matrix is not positive definite") -> Matrix:
    """Lower Cholesky factor; failure is the positive-definiteness verdict."""
    try:
        return linalg.cholesky(symmetrize(M), lower=True)
    except linalg.LinAlgError:
        raise NotPositiveDefiniteError(message, float(linalg.eigvalsh(symmetrize(M))[0])) from None


def logdet_pd(M: Matrix) -> float:
    L = cholesky_pd(M)
    return 2.0 * float(np.sum(np.log(np.diag(L))))


def _factor_dual(bundle: OperatorBundle, Y: DualPoint) -> tuple[Matrix, float]:
    M = apply_adjoint(bundle, Y)
    try:
        L = cholesky_pd(M)
    except NotPositiveDefiniteError as exc:
        raise DualInfeasibleError(exc.min_eigenvalue) from None
    return L, 2.0 * float(np.sum(np.log(np.diag(L))))


def inverse_from_cholesky(L: Matrix) -> Matrix:
    return symmetrize(linalg.cho_solve((L, True), np.eye(L.shape[0])))


def dual_objective(bundle: OperatorBundle, Y: DualPoint, G: Matrix) -> float:
    _, logdet = _factor_dual(bundle, Y)
    return logdet - float(np.vdot(G, Y.Y2)) + bundle.n


def dual_evaluate(bundle: OperatorBundle, Y: DualPoint, G: Matrix) -> tuple[float, DualPoint, Matrix]:
    """J_d(Y), its ascent gradient and W = 𝒜†(Y)⁻¹ from one factorization."""
    L, logdet = _factor_dual(bundle, Y)
    W = inverse_from_cholesky(L)
    value = logdet - float(np.vdot(G, Y.Y2)) + bundle.n
    grad = DualPoint(apply_a1(bundle, W), apply_a2(bundle, W) - G)
    return value, grad, W


def dual_gradient(bundle: OperatorBundle, Y: DualPoint, G: Matrix) -> DualPoint:
    return dual_evaluate(bundle, Y, G)[1]


def primal_objective(X: Matrix, Z: Matrix, gamma: float) -> float:
    return -logdet_pd(X) + gamma * nuclear_norm(Z)


def primal_residual(bundle: OperatorBundle, X: Matrix, Z: Matrix, G: Matrix) -> float:
    """‖(𝒜₁(X) + Z, 𝒜₂(X) - G)‖_F."""
    r1 = np.linalg.norm(apply_a1(bundle, X) + Z, "fro")
    r2 = np.linalg.norm(apply_a2(bundle, X) - G, "fro")
    return float(np.hypot(r1, r2))


# -----------------------------
# Spectral norms
# -----------------------------
def power_iteration(
    operator: Callable[[Matrix], Matrix],
    n: int,
    tol: float = POWER_TOL,
    max_iter: int = POWER_MAX_ITER,
    seed: int = POWER_SEED,
) -> float:
    """Largest eigenvalue of a symmetric PSD operator on n×n symmetric matrices."""
    rng = np.random.default_rng(seed)
    X = symmetrize(rng.standard_normal((n, n)))
    X /= np.linalg.norm(X)
    previous = np.inf
    quotient = 0.0
    for it in range(max_iter):
        W = operator(X)
        quotient = float(np.vdot(X, W))
        norm_w = float(np.linalg.norm(W))
        if norm_w == 0.0:
            logger.info("power iteration hit the null space after %d iterations", it + 1)
            return 0.0
        if abs(quotient - previous) <= tol * abs(quotient):
            logger.info("power iteration converged in %d iterations: %.10e", it + 1, quotient)
            return quotient
        previous = quotient
        X = W / norm_w
    raise PowerIterationError(previous, quotient, max_iter)


def spectral_norms(bundle: OperatorBundle, tol: float = POWER_TOL, max_iter: int = POWER_MAX_ITER) -> SpectralNorms:
    n = bundle.n

    def normal_a1(X):
        return apply_a1_adj(bundle, apply_a1(bundle, X))

    def normal_a2(X):
        return apply_a2_adj(bundle, apply_a2(bundle, X))

    lam_a1 = power_iteration(normal_a1, n, tol, max_iter)
    lam_a2 = power_iteration(normal_a2, n, tol, max_iter)
    lam = power_iteration(lambda X: normal_a1(X) + normal_a2(X), n, tol, max_iter)
    sigma = float(np.sqrt(max(lam, 0.0)))
    return SpectralNorms(
        sigma_a=sigma,
        sigma_a_adj=sigma,
        sigma_a1_adj=float(np.sqrt(max(lam_a1, 0.0))),
        lambda_a2=lam_a2,
        lambda_normal=lam,
    )
