"""
Signature analysis and the minimal channel factorization Z = B Hᵀ + H Bᵀ.

A congruence T brings Z to 2·diag(I_π, -I_ν, 0). In that frame the factors
pair one positive with one negative coordinate per column,

    (e_p + e_n)(e_p - e_n)ᵀ + (e_p - e_n)(e_p + e_n)ᵀ = 2 e_p e_pᵀ - 2 e_n e_nᵀ,

and the |π - ν| unpaired coordinates get a column of their own, so
m = max(π, ν) columns suffice. Mapping back with T⁻¹ gives B and H.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from ccama.errors import InconsistentRealizationError, InvalidInputError
from ccama.problem import Matrix, as_matrix, check_symmetric, numerical_rank, symmetrize

logger = logging.getLogger(__name__)

DEFAULT_ZERO_TOL = 1e-6
NEAR_CUT_FACTOR = 10.0
RANK_RTOL = 1e-8
EIG_CLUSTER_TOL = 1e-6


@dataclass(frozen=True)
class Signature:
    """Inertia (π, ν, δ) of a symmetric matrix at a relative zero tolerance."""

    pi: int
    nu: int
    delta: int
    eigenvalues: np.ndarray = field(repr=False)
    zero_tol: float = DEFAULT_ZERO_TOL

    @property
    def n(self) -> int:
        return self.pi + self.nu + self.delta

    @property
    def rank(self) -> int:
        return self.pi + self.nu

    @property
    def min_channels(self) -> int:
        return max(self.pi, self.nu)


@dataclass(frozen=True, eq=False)
class ChannelDecomposition:
    T: Matrix
    T_inv: Matrix
    B: Matrix
    H: Matrix
    m: int
    signature: Signature
    canonical_residual: float
    reconstruction_residual: float


@dataclass(frozen=True)
class SignatureBounds:
    pi: int
    nu: int
    mu_A: int
    m: int
    nu_bounds_hold: bool  # 0 ≤ ν ≤ m
    pi_bounds_hold: bool  # μ(A) ≤ π ≤ m
    lyapunov_residual: float

    @property
    def holds(self) -> bool:
        return self.nu_bounds_hold and self.pi_bounds_hold


@dataclass(frozen=True)
class RankBoundReport:
    pi: int
    nu: int
    rank: int
    holds: bool


# -----------------------------
# Signature
# -----------------------------
def _symmetric(Z) -> Matrix:
    return check_symmetric(as_matrix(Z, "Z"), "Z", tol=1e-10)


def _cut(lam: np.ndarray, zero_tol: float) -> float:
    scale = float(np.max(np.abs(lam))) if lam.size else 0.0
    return zero_tol * scale


def _from_eigenvalues(lam: np.ndarray, zero_tol: float) -> Signature:
    lam = np.sort(lam)[::-1]
    cut = _cut(lam, zero_tol)
    pi = int(np.sum(lam > cut))
    nu = int(np.sum(lam < -cut))

    if cut > 0:
        near = lam[(np.abs(lam) > cut / NEAR_CUT_FACTOR) & (np.abs(lam) < cut * NEAR_CUT_FACTOR)]
        if near.size:
            logger.warning(
                "signature near the zero cut %.3e: eigenvalues %s", cut, np.array2string(near, precision=3)
            )
    return Signature(pi=pi, nu=nu, delta=lam.size - pi - nu, eigenvalues=lam, zero_tol=zero_tol)


def signature(Z, zero_tol: float = DEFAULT_ZERO_TOL) -> Signature:
    Z = _symmetric(Z)
    if not zero_tol >= 0:
        raise InvalidInputError(f"zero_tol must be non-negative, got {zero_tol}")
    return _from_eigenvalues(linalg.eigvalsh(Z), zero_tol)


def singular_value_profile(Z) -> np.ndarray:
    """|λ| of symmetric Z in decreasing order."""
    return np.sort(np.abs(linalg.eigvalsh(_symmetric(Z))))[::-1]


def largest_gap(Z) -> tuple[int, float]:
    """(k, s_k / s_{k+1}) for the largest drop between consecutive singular values."""
    s = singular_value_profile(Z)
    if s.size < 2:
        return s.size, 1.0
    tiny = np.finfo(np.float64).tiny
    ratios = s[:-1] / np.maximum(s[1:], tiny)
    k = int(np.argmax(ratios))
    return k + 1, float(ratios[k])


# -----------------------------
# Congruence and factorization
# -----------------------------
def _canonical_frame(Z: Matrix, zero_tol: float) -> tuple[Matrix, np.ndarray, Signature]:
    lam, U = linalg.eigh(Z)
    cut = _cut(lam, zero_tol)
    pos = np.flatnonzero(lam > cut)
    neg = np.flatnonzero(lam < -cut)
    zero = np.flatnonzero(np.abs(lam) <= cut)
    order = np.concatenate([pos[np.argsort(-lam[pos])], neg[np.argsort(lam[neg])], zero])
    lam = lam[order]
    s = np.ones_like(lam)
    nz = slice(0, pos.size + neg.size)
    s[nz] = np.sqrt(2.0 / np.abs(lam[nz]))
    sig = _from_eigenvalues(lam, zero_tol)
    return U[:, order], s, sig


def congruence_to_canonical(Z, zero_tol: float = DEFAULT_ZERO_TOL) -> tuple[Matrix, Signature]:
    """T with T Z Tᵀ = 2·diag(I_π, -I_ν, 0), built as diag(s)·Uᵀ from Z = U Λ Uᵀ."""
    Z = _symmetric(Z)
    U, s, sig = _canonical_frame(Z, zero_tol)
    return s[:, None] * U.T, sig


def canonical_form(sig: Signature) -> Matrix:
    return np.diag(np.concatenate([2.0 * np.ones(sig.pi), -2.0 * np.ones(sig.nu), np.zeros(sig.delta)]))


def canonical_factors(sig: Signature) -> tuple[Matrix, Matrix]:
    """B̂, Ĥ with B̂Ĥᵀ + ĤB̂ᵀ = 2·diag(I_π, -I_ν, 0) and m = max(π, ν) columns."""
    pi, nu, n = sig.pi, sig.nu, sig.n
    m = max(pi, nu)
    B_hat = np.zeros((n, m))
    H_hat = np.zeros((n, m))
    paired = min(pi, nu)
    for j in range(paired):
        p, q = j, pi + j
        B_hat[[p, q], j] = 1.0
        H_hat[p, j] = 1.0
        H_hat[q, j] = -1.0
    for j in range(paired, m):
        if pi > nu:
            B_hat[j, j] = 1.0
            H_hat[j, j] = 1.0
        else:
            q = pi + j
            B_hat[q, j] = 1.0
            H_hat[q, j] = -1.0
    return B_hat, H_hat


def factor_channels(Z, zero_tol: float = DEFAULT_ZERO_TOL) -> ChannelDecomposition:
    Z = _symmetric(Z)
    norm_z = float(np.linalg.norm(Z, "fro"))
    if norm_z == 0.0:
        raise InvalidInputError("nothing to factor: Z is zero")
    U, s, sig = _canonical_frame(Z, zero_tol)
    if sig.rank == 0:
        raise InvalidInputError("nothing to factor: Z is numerically zero")

    T = s[:, None] * U.T
    T_inv = U / s[None, :]
    B_hat, H_hat = canonical_factors(sig)
    B = T_inv @ B_hat
    H = T_inv @ H_hat

    canonical_residual = float(np.linalg.norm(symmetrize(T @ Z @ T.T) - canonical_form(sig), "fro"))
    reconstruction = float(np.linalg.norm(B @ H.T + H @ B.T - Z, "fro")) / norm_z
    logger.info(
        "factored Z: signature (%d, %d, %d), m=%d, reconstruction error %.3e",
        sig.pi, sig.nu, sig.delta, sig.min_channels, reconstruction,
    )
    return ChannelDecomposition(
        T=T,
        T_inv=T_inv,
        B=B,
        H=H,
        m=sig.min_channels,
        signature=sig,
        canonical_residual=canonical_residual,
        reconstruction_residual=reconstruction,
    )


# -----------------------------
# Rank bounds
# -----------------------------
def geometric_multiplicity_bound(A, cluster_tol: float = EIG_CLUSTER_TOL, rank_rtol: float = RANK_RTOL) -> int:
    """max over eigenvalues λ of n - rank(A - λI); conjugate pairs counted once."""
    A = as_matrix(A, "A")
    n = A.shape[0]
    eigs = np.linalg.eigvals(A)
    eigs = eigs[eigs.imag >= -cluster_tol * np.maximum(1.0, np.abs(eigs))]

    representatives: list[complex] = []
    for lam in sorted(eigs, key=lambda z: (z.real, z.imag)):
        if not any(abs(lam - r) <= cluster_tol * max(1.0, abs(r)) for r in representatives):
            representatives.append(lam)

    best = 1
    for lam in representatives:
        shifted = A - lam * np.eye(n) if lam.imag != 0 else A - lam.real * np.eye(n)
        best = max(best, n - numerical_rank(shifted, rank_rtol))
    return best


def check_signature_bounds(
    A,
    X,
    Z,
    m: int,
    zero_tol: float = DEFAULT_ZERO_TOL,
    residual_rtol: float = 1e-6,
) -> SignatureBounds:
    A = as_matrix(A, "A")
    X = _symmetric(X)
    Z = _symmetric(Z)
    residual = float(np.linalg.norm(A @ X + X @ A.T + Z, "fro"))
    scale = 2.0 * float(np.linalg.norm(A, 2)) * float(np.linalg.norm(X, "fro")) + float(np.linalg.norm(Z, "fro"))
    if residual > residual_rtol * scale:
        raise InconsistentRealizationError("Z does not match -(AX + XAᵀ)", residual)

    sig = signature(Z, zero_tol)
    mu_A = geometric_multiplicity_bound(A)
    return SignatureBounds(
        pi=sig.pi,
        nu=sig.nu,
        mu_A=mu_A,
        m=m,
        nu_bounds_hold=0 <= sig.nu <= m,
        pi_bounds_hold=mu_A <= sig.pi <= m,
        lyapunov_residual=residual,
    )


def rank_bound_check(Z, B, H, zero_tol: float = DEFAULT_ZERO_TOL, rank_rtol: float = RANK_RTOL) -> RankBoundReport:
    """π(Z) ≤ rank(BHᵀ) and ν(Z) ≤ rank(BHᵀ) for a factorization Z = BHᵀ + HBᵀ."""
    sig = signature(Z, zero_tol)
    B = as_matrix(B, "B")
    H = as_matrix(H, "H")
    rank = numerical_rank(B @ H.T, rank_rtol)
    return RankBoundReport(pi=sig.pi, nu=sig.nu, rank=rank, holds=sig.pi <= rank and sig.nu <= rank)
