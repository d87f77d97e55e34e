"""Spectral operators on symmetric matrices.

All operators go through one symmetric eigendecomposition. For symmetric M the
singular values are |λ| and the singular vectors coincide with the
eigenvectors up to sign, so thresholding the signed eigenvalues reproduces
singular value thresholding exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from ccama.errors import InvalidInputError
from ccama.problem import Matrix, symmetrize


@dataclass(frozen=True)
class SpectralDecomposition:
    """M = U diag(lam) Uᵀ with eigenvalues ordered by decreasing |λ|, ties by decreasing λ."""

    U: Matrix
    lam: np.ndarray

    def reconstruct(self, values: np.ndarray | None = None) -> Matrix:
        values = self.lam if values is None else values
        return symmetrize((self.U * values) @ self.U.T)


def spectral_decomposition(M: Matrix) -> SpectralDecomposition:
    lam, U = linalg.eigh(symmetrize(np.asarray(M, dtype=np.float64)))
    order = np.lexsort((-lam, -np.abs(lam)))
    return SpectralDecomposition(U=U[:, order], lam=lam[order])


def _check_tau(tau: float) -> None:
    if not tau >= 0:
        raise InvalidInputError(f"threshold must be non-negative, got {tau}")


def _shrink(lam: np.ndarray, tau: float) -> np.ndarray:
    return np.sign(lam) * np.maximum(np.abs(lam) - tau, 0.0)


def _clip(lam: np.ndarray, tau: float) -> np.ndarray:
    return np.clip(lam, -tau, tau)


def soft_threshold(M: Matrix, tau: float) -> Matrix:
    """Prox of τ‖·‖∗: argmin_Z τ‖Z‖∗ + ½‖Z - M‖²_F."""
    _check_tau(tau)
    dec = spectral_decomposition(M)
    return dec.reconstruct(_shrink(dec.lam, tau))


def saturate(M: Matrix, tau: float) -> Matrix:
    """Projection onto the spectral-norm ball of radius τ."""
    _check_tau(tau)
    dec = spectral_decomposition(M)
    return dec.reconstruct(_clip(dec.lam, tau))


def saturate_and_shrink(M: Matrix, tau: float) -> tuple[Matrix, Matrix]:
    """(𝒯_τ(M), 𝒮_τ(M)) from a single decomposition; the two sum to M."""
    _check_tau(tau)
    dec = spectral_decomposition(M)
    return dec.reconstruct(_clip(dec.lam, tau)), dec.reconstruct(_shrink(dec.lam, tau))


def logdet_resolvent(R: Matrix, mu: float) -> Matrix:
    """Unique X ≻ 0 with μX - X⁻¹ = R."""
    if not mu > 0:
        raise InvalidInputError(f"mu must be positive, got {mu}")
    dec = spectral_decomposition(R)
    half = dec.lam / (2.0 * mu)
    g = half + np.sqrt(half**2 + 1.0 / mu)
    # cancellation-free form of the same root for strongly negative λ
    neg = half < 0
    g[neg] = (1.0 / mu) / (np.sqrt(half[neg] ** 2 + 1.0 / mu) - half[neg])
    return dec.reconstruct(g)


def nuclear_norm(M: Matrix) -> float:
    return float(np.sum(np.abs(linalg.eigvalsh(symmetrize(np.asarray(M, dtype=np.float64))))))
