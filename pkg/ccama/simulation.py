"""
Ensemble simulation of ẋ = Acl x + B w with white w of covariance Ω, x(0) = 0.

The exact scheme steps x_{k+1} = Φ x_k + ε_k with Φ = e^{Acl·dt} and
ε_k ~ N(0, Q_d), Q_d = ∫₀^dt e^{Acl s} BΩBᵀ e^{Aclᵀ s} ds, both read off one
block matrix exponential.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
import pandas as pd
from scipy import linalg

from ccama.errors import InvalidInputError, NotPositiveDefiniteError, UnstableGeneratorError
from ccama.problem import Matrix, as_matrix, max_real_eig, symmetrize
from ccama.realization import HURWITZ_MARGIN, FilterRealization

logger = logging.getLogger(__name__)

Scheme = Literal["exact", "euler-maruyama"]

CHUNK_STEPS = 512
QD_NEGATIVE_TOL = 1e-12


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.01
    t_final: float = 50.0
    n_traj: int = 20
    seed: int = 0
    scheme: Scheme = "exact"
    tail_fraction: float = 0.2
    max_records: int = 2000
    workers: int = 1

    def __post_init__(self):
        if not (self.dt > 0 and self.t_final > 0):
            raise InvalidInputError("dt and t_final must be positive")
        if self.dt > self.t_final:
            raise InvalidInputError(f"dt = {self.dt} exceeds t_final = {self.t_final}")
        if self.n_traj < 1:
            raise InvalidInputError(f"n_traj must be at least 1, got {self.n_traj}")
        if not 0 <= self.seed < 2**64:
            raise InvalidInputError(f"seed must be a non-negative 64-bit integer, got {self.seed}")
        if self.scheme not in ("exact", "euler-maruyama"):
            raise InvalidInputError(f"unknown scheme {self.scheme!r}")
        if not 0 < self.tail_fraction <= 1:
            raise InvalidInputError(f"tail_fraction must lie in (0, 1], got {self.tail_fraction}")
        if self.max_records < 2 or self.workers < 1:
            raise InvalidInputError("max_records must be at least 2 and workers at least 1")

    @property
    def n_steps(self) -> int:
        return max(1, int(round(self.t_final / self.dt)))


@dataclass(frozen=True, eq=False)
class EnsembleStats:
    """Ensemble averages on the record grid and the tail-window sample covariance."""

    times: np.ndarray
    mean_variance: np.ndarray  # ensemble average of xᵀx per record
    state_variance: np.ndarray  # records × n, ensemble average of x_i²
    sample_cov_final: Matrix
    n_traj: int
    tail_samples: int
    config: SimConfig | None = field(default=None, repr=False)


@dataclass(frozen=True, eq=False)
class CovarianceComparison:
    full_relative_error: float
    masked_relative_error: float
    elementwise_relative_error: Matrix
    diagonal_sample: np.ndarray
    diagonal_target: np.ndarray


# -----------------------------
# Discretization
# -----------------------------
def discretize(Acl, B, Omega, dt: float, scheme: Scheme = "exact") -> tuple[Matrix, Matrix]:
    """(Φ, Q_d) for one step of length dt."""
    Acl = as_matrix(Acl, "Acl")
    B = np.asarray(B, dtype=np.float64)
    Omega = np.asarray(Omega, dtype=np.float64)
    n = Acl.shape[0]
    Q = symmetrize(B @ Omega @ B.T) if B.size else np.zeros((n, n))
    if scheme == "exact":
        # Van Loan block exponential
        M = np.block([[-Acl, Q], [np.zeros((n, n)), Acl.T]]) * dt
        F = linalg.expm(M)
        Phi = F[n:, n:].T
        Qd = Phi @ F[:n, n:]
    elif scheme == "euler-maruyama":
        Phi = np.eye(n) + Acl * dt
        Qd = Q * dt
    else:
        raise InvalidInputError(f"unknown scheme {scheme!r}")
    return Phi, symmetrize(Qd)


def noise_factor(Qd: Matrix) -> Matrix:
    """L with L Lᵀ = Q_d after clipping round-off negative eigenvalues."""
    lam, U = linalg.eigh(symmetrize(Qd))
    scale = max(1.0, float(np.max(np.abs(lam)))) if lam.size else 1.0
    if lam.size and lam[0] < -QD_NEGATIVE_TOL * scale:
        raise NotPositiveDefiniteError("discrete noise covariance is indefinite", float(lam[0]))
    return U * np.sqrt(np.clip(lam, 0.0, None))


def trajectory_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(index,)))


# -----------------------------
# Integration
# -----------------------------
def _simulate_trajectory(
    index: int,
    Phi: Matrix,
    L: Matrix,
    cfg: SimConfig,
    stride: int,
    tail_start: int,
) -> tuple[np.ndarray, Matrix, int]:
    """Recorded squares, tail outer-product sum and tail length of one trajectory."""
    n = Phi.shape[0]
    rng = trajectory_rng(cfg.seed, index)
    x = np.zeros(n)
    squares = [np.zeros((1, n))]
    tail_sum = np.zeros((n, n))
    tail_count = 0
    PhiT = Phi.T
    LT = L.T

    step = 0
    n_steps = cfg.n_steps
    while step < n_steps:
        c = min(CHUNK_STEPS, n_steps - step)
        noise = rng.standard_normal((c, n)) @ LT
        traj = np.empty((c, n))
        for t in range(c):
            x = x @ PhiT + noise[t]
            traj[t] = x
        steps = np.arange(step + 1, step + c + 1)
        recorded = traj[steps % stride == 0]
        if recorded.size:
            squares.append(recorded**2)
        tail = traj[steps > tail_start]
        if tail.size:
            tail_sum += tail.T @ tail
            tail_count += tail.shape[0]
        step += c
    return np.concatenate(squares, axis=0), tail_sum, tail_count


def simulate_system(Acl, B, Omega, cfg: SimConfig) -> EnsembleStats:
    Acl = as_matrix(Acl, "Acl")
    max_re = max_real_eig(Acl)
    if not max_re < -HURWITZ_MARGIN * float(np.linalg.norm(Acl, 2)):
        raise UnstableGeneratorError(max_re)
    n = Acl.shape[0]
    Phi, Qd = discretize(Acl, B, Omega, cfg.dt, cfg.scheme)
    L = noise_factor(Qd)

    n_steps = cfg.n_steps
    stride = max(1, math.ceil(n_steps / (cfg.max_records - 1)))
    tail_start = n_steps - max(1, int(round(cfg.tail_fraction * n_steps)))
    workers = min(cfg.workers, cfg.n_traj)
    logger.info(
        "simulating %d trajectories, n=%d, %d steps of %.3g (%s), %d worker(s)",
        cfg.n_traj, n, n_steps, cfg.dt, cfg.scheme, workers,
    )

    def run(index: int) -> tuple[np.ndarray, Matrix, int]:
        return _simulate_trajectory(index, Phi, L, cfg, stride, tail_start)

    if workers == 1:
        results = [run(i) for i in range(cfg.n_traj)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, range(cfg.n_traj)))

    # reduce in trajectory-index order so the sums do not depend on workers
    squares = np.zeros_like(results[0][0])
    tail_sum = np.zeros((n, n))
    tail_count = results[0][2]
    for sq, ts, _ in results:
        squares += sq
        tail_sum += ts

    state_variance = squares / cfg.n_traj
    times = cfg.dt * stride * np.arange(state_variance.shape[0])
    sample_cov = symmetrize(tail_sum / (cfg.n_traj * tail_count))
    return EnsembleStats(
        times=times,
        mean_variance=state_variance.sum(axis=1),
        state_variance=state_variance,
        sample_cov_final=sample_cov,
        n_traj=cfg.n_traj,
        tail_samples=tail_count,
        config=cfg,
    )


def simulate_ensemble(realization: FilterRealization, cfg: SimConfig | None = None) -> EnsembleStats:
    return simulate_system(realization.Acl, realization.B, realization.Omega, cfg or SimConfig())


# -----------------------------
# Validation against a target covariance
# -----------------------------
def compare_covariance(stats: EnsembleStats, X_target, mask=None) -> CovarianceComparison:
    X = as_matrix(X_target, "X_target")
    S = stats.sample_cov_final
    if X.shape != S.shape:
        raise InvalidInputError(f"target is {X.shape} but the sample covariance is {S.shape}")
    tiny = np.finfo(np.float64).tiny
    diff = S - X
    full = float(np.linalg.norm(diff) / max(np.linalg.norm(X), tiny))
    if mask is None:
        masked = full
    else:
        E = as_matrix(mask, "mask") != 0
        masked = float(np.linalg.norm(diff[E]) / max(np.linalg.norm(X[E]), tiny))
    with np.errstate(divide="ignore", invalid="ignore"):
        elementwise = np.where(X != 0, np.abs(diff) / np.abs(X), np.nan)
    return CovarianceComparison(
        full_relative_error=full,
        masked_relative_error=masked,
        elementwise_relative_error=elementwise,
        diagonal_sample=np.diag(S).copy(),
        diagonal_target=np.diag(X).copy(),
    )


def stats_frame(stats: EnsembleStats) -> pd.DataFrame:
    df = pd.DataFrame(stats.state_variance, columns=[f"var_{i}" for i in range(stats.state_variance.shape[1])])
    df.insert(0, "mean_variance", stats.mean_variance)
    df.insert(0, "time", stats.times)
    return df
