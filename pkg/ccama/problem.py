"""
Problem data for covariance completion.

Holds the model/data/instance types, the Lyapunov solver every other module
leans on, the mass-spring-damper benchmark generator and the structural
feasibility check for a (covariance, input matrix) pair.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from numpy.typing import NDArray
from scipy import linalg
from scipy.linalg import get_lapack_funcs

from ccama.errors import (
    IllConditionedError,
    InvalidInputError,
    NotPositiveDefiniteError,
    UnstableGeneratorError,
)

logger = logging.getLogger(__name__)

Matrix = NDArray[np.float64]

SYMMETRY_TOL = 1e-12
LYAPUNOV_RESIDUAL_TOL = 1e-10
KRON_ORACLE_MAX_N = 20
DEFAULT_GAMMA = 2.2


# -----------------------------
# Small matrix helpers
# -----------------------------
def as_matrix(M: Any, name: str = "matrix") -> Matrix:
    arr = np.array(M, dtype=np.float64)
    if arr.ndim == 1 and arr.size == 1:
        arr = arr.reshape(1, 1)
    if arr.ndim != 2:
        raise InvalidInputError(f"{name} must be two-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    return arr


def symmetrize(M: Matrix) -> Matrix:
    return 0.5 * (M + M.T)


def check_symmetric(M: Matrix, name: str, tol: float = SYMMETRY_TOL) -> Matrix:
    """Validate near-symmetry (absolute asymmetry ≤ tol·max(1, ‖M‖_max)) and symmetrize."""
    if M.shape[0] != M.shape[1]:
        raise InvalidInputError(f"{name} must be square, got shape {M.shape}")
    asym = float(np.max(np.abs(M - M.T))) if M.size else 0.0
    scale = max(1.0, float(np.max(np.abs(M)))) if M.size else 1.0
    if asym > tol * scale:
        raise InvalidInputError(f"{name} is not symmetric (max asymmetry {asym:.3e})")
    return symmetrize(M)


def max_real_eig(A: Matrix) -> float:
    return float(np.max(np.linalg.eigvals(A).real))


def is_hurwitz(A: Matrix, margin: float = 0.0) -> bool:
    """True when every eigenvalue satisfies Re(λ) < -margin·‖A‖₂."""
    bound = margin * float(np.linalg.norm(A, 2)) if margin > 0 else 0.0
    return max_real_eig(A) < -bound


def numerical_rank(M: Matrix, rtol: float | None = None) -> int:
    """Count singular values above rtol·σ_max (default max(shape)·eps)."""
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    if s[0] == 0.0:
        return 0
    if rtol is None:
        rtol = max(M.shape) * np.finfo(np.float64).eps
    return int(np.sum(s > rtol * s[0]))


def _readonly(M: Matrix) -> Matrix:
    M = np.array(M, dtype=np.float64, copy=True)
    M.setflags(write=False)
    return M


# -----------------------------
# Domain types
# -----------------------------
@dataclass(frozen=True, eq=False)
class LtiModel:
    """Continuous-time generator A (n×n) with output map C (p×n)."""

    A: Matrix
    C: Matrix

    def __post_init__(self):
        A = as_matrix(self.A, "A")
        C = as_matrix(self.C, "C")
        if A.shape[0] != A.shape[1]:
            raise InvalidInputError(f"A must be square, got shape {A.shape}")
        if C.shape[1] != A.shape[0]:
            raise InvalidInputError(f"C must have {A.shape[0]} columns, got shape {C.shape}")
        max_re = max_real_eig(A)
        if not max_re < 0:
            raise UnstableGeneratorError(max_re)
        object.__setattr__(self, "A", _readonly(A))
        object.__setattr__(self, "C", _readonly(C))

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def p(self) -> int:
        return self.C.shape[0]


@dataclass(frozen=True, eq=False)
class CovarianceData:
    """Observed output correlations G on the support of the binary mask E."""

    G: Matrix
    E: Matrix

    def __post_init__(self):
        E = check_symmetric(as_matrix(self.E, "E"), "E", tol=0.0)
        if not np.all((E == 0.0) | (E == 1.0)):
            raise InvalidInputError("E must have entries in {0, 1}")
        G = check_symmetric(as_matrix(self.G, "G"), "G")
        if G.shape != E.shape:
            raise InvalidInputError(f"G has shape {G.shape} but E has shape {E.shape}")
        if np.any(G[E == 0.0] != 0.0):
            raise InvalidInputError("G must be zero wherever E is zero")
        object.__setattr__(self, "G", _readonly(G))
        object.__setattr__(self, "E", _readonly(E))

    @property
    def p(self) -> int:
        return self.E.shape[0]

    @property
    def n_observed(self) -> int:
        return int(self.E.sum())


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    model: LtiModel
    data: CovarianceData
    gamma: float = DEFAULT_GAMMA

    def __post_init__(self):
        if not (np.isfinite(self.gamma) and self.gamma > 0):
            raise InvalidInputError(f"gamma must be positive, got {self.gamma}")
        if self.data.p != self.model.p:
            raise InvalidInputError(
                f"data is {self.data.p}x{self.data.p} but the model has p = {self.model.p}"
            )
        object.__setattr__(self, "gamma", float(self.gamma))

    @property
    def n(self) -> int:
        return self.model.n

    @property
    def p(self) -> int:
        return self.model.p

    def with_gamma(self, gamma: float) -> ProblemInstance:
        return ProblemInstance(self.model, self.data, gamma)


@dataclass(frozen=True, eq=False)
class MsdGroundTruth:
    """Mass-spring-damper benchmark: instance plus the covariances it was sampled from."""

    instance: ProblemInstance
    Sigma_xx: Matrix
    Sigma_full: Matrix
    N: int

    @property
    def Sigma_pp(self) -> Matrix:
        return self.Sigma_xx[: self.N, : self.N]

    @property
    def Sigma_vv(self) -> Matrix:
        return self.Sigma_xx[self.N :, self.N :]

    @property
    def Sigma_pv(self) -> Matrix:
        return self.Sigma_xx[: self.N, self.N :]

    def relative_error(self, X: Matrix) -> float:
        return float(np.linalg.norm(X - self.Sigma_xx) / np.linalg.norm(self.Sigma_xx))


@dataclass(frozen=True)
class RankReport:
    """Outcome of the structural rank test for a covariance X and input matrix B."""

    rank_lhs: int
    rank_rhs: int
    consistent: bool
    H: Matrix = field(repr=False)
    h_residual: float
    h_relative_residual: float


# -----------------------------
# Lyapunov equations
# -----------------------------
def lyapunov_solve(A: Any, Q: Any) -> Matrix:
    """Solve A X + X Aᵀ + Q = 0 for Hurwitz A.

    Real Schur reduction A = U S Uᵀ, quasi-triangular back-substitution on
    S X̃ + X̃ Sᵀ = -Uᵀ Q U via LAPACK trsyl, then X = U X̃ Uᵀ.
    """
    A = as_matrix(A, "A")
    Q = check_symmetric(as_matrix(Q, "Q"), "Q", tol=1e-10)
    n = A.shape[0]
    if A.shape != (n, n) or Q.shape != (n, n):
        raise InvalidInputError(f"shape mismatch: A {A.shape}, Q {Q.shape}")

    eigs = np.linalg.eigvals(A)
    max_re = float(np.max(eigs.real))
    if not max_re < 0:
        raise UnstableGeneratorError(max_re)
    # sep(A, -Aᵀ) is bounded below by the smallest |λi + λj|
    sep = float(np.min(np.abs(eigs[:, None] + eigs[None, :])))
    norm_a = float(np.linalg.norm(A, "fro"))
    condition = norm_a / sep if sep > 0 else np.inf

    S, U = linalg.schur(A, output="real")
    F = U.T @ Q @ U
    (trsyl,) = get_lapack_funcs(("trsyl",), (S, S, F))
    Y, scale, info = trsyl(S, S, -F, tranb="T")
    if info < 0:
        raise IllConditionedError(f"trsyl rejected argument {-info}", condition)
    if info == 1:
        raise IllConditionedError("Schur back-substitution perturbed near-singular blocks", condition)
    X = symmetrize(U @ (Y / scale) @ U.T)

    residual = float(np.linalg.norm(A @ X + X @ A.T + Q, "fro"))
    bound = LYAPUNOV_RESIDUAL_TOL * (norm_a * float(np.linalg.norm(X, "fro")) + float(np.linalg.norm(Q, "fro")))
    if residual > bound:
        raise IllConditionedError(
            f"Lyapunov residual {residual:.3e} exceeds bound {bound:.3e}", condition
        )
    return X


def lyapunov_solve_kron(A: Any, Q: Any) -> Matrix:
    """Dense Kronecker solve of A X + X Aᵀ + Q = 0 (reference for small n)."""
    A = as_matrix(A, "A")
    Q = as_matrix(Q, "Q")
    n = A.shape[0]
    if n > KRON_ORACLE_MAX_N:
        raise InvalidInputError(f"Kronecker solve is limited to n <= {KRON_ORACLE_MAX_N}, got {n}")
    eye = np.eye(n)
    K = np.kron(eye, A) + np.kron(A, eye)
    x = np.linalg.solve(K, -Q.reshape(-1, order="F"))
    return symmetrize(x.reshape((n, n), order="F"))


# -----------------------------
# Mass-spring-damper benchmark
# -----------------------------
def msd_matrices(N: int) -> tuple[Matrix, Matrix, Matrix]:
    """Return (T, A, B_zeta) for N masses with state x = [positions; velocities]."""
    if N < 1:
        raise InvalidInputError(f"number of masses must be positive, got {N}")
    T = 2.0 * np.eye(N) - np.eye(N, k=1) - np.eye(N, k=-1)
    I = np.eye(N)
    O = np.zeros((N, N))
    A = np.block([[O, I], [-T, -I]])
    B_zeta = np.vstack([O, I])
    return T, A, B_zeta


def one_point_mask(N: int) -> Matrix:
    """Diagonals of the position, velocity and position-velocity blocks."""
    E = np.eye(2 * N)
    idx = np.arange(N)
    E[idx, idx + N] = 1.0
    E[idx + N, idx] = 1.0
    return E


def gen_msd(N: int, mask: Any | None = None, gamma: float = DEFAULT_GAMMA) -> MsdGroundTruth:
    """Build the low-pass-filtered MSD benchmark and its partially observed covariance."""
    _, A, B_zeta = msd_matrices(N)
    n = 2 * N
    A_aug = np.block([[A, B_zeta], [np.zeros((N, n)), -np.eye(N)]])
    B_aug = np.vstack([np.zeros((n, N)), np.eye(N)])
    Sigma = lyapunov_solve(A_aug, B_aug @ B_aug.T)
    Sigma_xx = symmetrize(Sigma[:n, :n])

    E = one_point_mask(N) if mask is None else as_matrix(mask, "mask")
    if E.shape != (n, n):
        raise InvalidInputError(f"mask must be {n}x{n}, got {E.shape}")
    G = Sigma_xx * E

    instance = ProblemInstance(LtiModel(A, np.eye(n)), CovarianceData(G, E), gamma)
    logger.info("generated MSD benchmark: N=%d, n=%d, %d observed entries", N, n, int(E.sum()))
    return MsdGroundTruth(instance=instance, Sigma_xx=_readonly(Sigma_xx), Sigma_full=_readonly(Sigma), N=N)


def white_noise_instance(
    A: Any,
    B: Any,
    W: Any | None = None,
    C: Any | None = None,
    E: Any | None = None,
    gamma: float = 1.0,
) -> tuple[ProblemInstance, Matrix, Matrix]:
    """Instance generated by white noise through B: returns (instance, X, H = ½BW)."""
    A = as_matrix(A, "A")
    B = as_matrix(B, "B")
    W = np.eye(B.shape[1]) if W is None else as_matrix(W, "W")
    C = np.eye(A.shape[0]) if C is None else as_matrix(C, "C")
    X = lyapunov_solve(A, B @ W @ B.T)
    E = np.ones((C.shape[0], C.shape[0])) if E is None else as_matrix(E, "E")
    G = symmetrize(C @ X @ C.T) * E
    instance = ProblemInstance(LtiModel(A, C), CovarianceData(G, E), gamma)
    return instance, X, 0.5 * B @ W


def random_hurwitz(n: int, rng: np.random.Generator, margin: float = 0.5) -> Matrix:
    """Random matrix shifted so its rightmost eigenvalue sits at -margin."""
    A = rng.standard_normal((n, n))
    return A - (max_real_eig(A) + margin) * np.eye(n)


def random_instance(
    n: int,
    rng: np.random.Generator,
    gamma: float = 1.0,
    mask: str = "full",
    inputs: int | None = None,
) -> tuple[ProblemInstance, Matrix]:
    """Random Hurwitz instance with a white-noise ground truth; returns (instance, X_true)."""
    A = random_hurwitz(n, rng)
    B = rng.standard_normal((n, inputs or n))
    if mask == "full":
        E = np.ones((n, n))
    elif mask == "diagonal":
        E = np.eye(n)
    elif mask == "random":
        upper = np.triu(rng.random((n, n)) < 0.5).astype(float)
        E = np.maximum(upper, upper.T)
        np.fill_diagonal(E, 1.0)
    else:
        raise InvalidInputError(f"unknown mask kind {mask!r}")
    instance, X, _ = white_noise_instance(A, B, E=E, gamma=gamma)
    return instance, X


# -----------------------------
# Structural feasibility
# -----------------------------
def validate_covariance(model: LtiModel, X: Any, B: Any, rtol: float | None = None) -> RankReport:
    """Rank test of [[AX+XAᵀ, B],[Bᵀ, 0]] against [[0, B],[Bᵀ, 0]], plus the least-squares H.

    The returned H minimizes ‖AX + XAᵀ + BHᵀ + HBᵀ‖_F; the residual vanishes
    exactly when the rank condition holds.
    """
    X = check_symmetric(as_matrix(X, "X"), "X", tol=1e-10)
    B = as_matrix(B, "B")
    n = model.n
    if X.shape != (n, n) or B.shape[0] != n or B.shape[1] == 0:
        raise InvalidInputError(f"shape mismatch: X {X.shape}, B {B.shape}, n = {n}")
    min_eig = float(np.linalg.eigvalsh(X)[0])
    if not min_eig > 0:
        raise NotPositiveDefiniteError("X must be positive definite", min_eig)

    A = model.A
    S = A @ X + X @ A.T
    m = B.shape[1]
    zero = np.zeros((m, m))
    lhs = np.block([[S, B], [B.T, zero]])
    rhs = np.block([[np.zeros((n, n)), B], [B.T, zero]])
    rank_lhs = numerical_rank(lhs, rtol)
    rank_rhs = numerical_rank(rhs, rtol)

    # In an orthonormal basis [Q, Q⊥] adapted to range(B), H Bᵀ has zero columns
    # against Q⊥, so only the Q⊥-Q⊥ block of S is out of reach.
    r = numerical_rank(B, rtol) if B.size else 0
    U, _, _ = np.linalg.svd(B, full_matrices=True)
    S_t = U.T @ S @ U
    F_t = np.zeros_like(S_t)
    F_t[:r, :r] = -0.5 * S_t[:r, :r]
    F_t[r:, :r] = -S_t[r:, :r]
    F = U @ F_t @ U.T
    H = F @ np.linalg.pinv(B).T
    residual = float(np.linalg.norm(S + B @ H.T + H @ B.T, "fro"))
    rel = residual / max(float(np.linalg.norm(S, "fro")), np.finfo(float).tiny)
    return RankReport(
        rank_lhs=rank_lhs,
        rank_rhs=rank_rhs,
        consistent=rank_lhs == rank_rhs,
        H=H,
        h_residual=residual,
        h_relative_residual=rel,
    )
