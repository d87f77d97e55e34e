"""
File formats: instances, solutions, decompositions, realizations and run manifests.

Matrices are stored row-major as nested JSON lists. Floats go through the
shortest round-tripping representation, so a save/load cycle is exact.
Tables (solver histories, sweeps, simulation statistics) are CSV.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Literal

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from ccama.ama_solver import SolveResult
from ccama.decomposition import ChannelDecomposition, largest_gap, singular_value_profile
from ccama.errors import CcamaError, InvalidInputError
from ccama.linops import DualPoint
from ccama.problem import CovarianceData, LtiModel, MsdGroundTruth, ProblemInstance
from ccama.realization import FilterRealization, closed_loop_residual, objective
from ccama.simulation import CovarianceComparison, EnsembleStats, stats_frame

logger = logging.getLogger(__name__)

Rows = list[list[float]]


def _rows(M) -> Rows:
    return np.asarray(M, dtype=np.float64).tolist()


def _finite_or_none(x: float | None) -> float | None:
    if x is None or not np.isfinite(x):
        return None
    return float(x)


# -----------------------------
# Schemas
# -----------------------------
class MatrixFile(BaseModel):
    rows: int = Field(ge=0)
    cols: int = Field(ge=0)
    data: Rows

    @model_validator(mode="after")
    def _check_shape(self):
        if len(self.data) != self.rows or any(len(r) != self.cols for r in self.data):
            raise ValueError(f"data is not {self.rows}x{self.cols}")
        return self

    @classmethod
    def from_array(cls, M) -> MatrixFile:
        M = np.atleast_2d(np.asarray(M, dtype=np.float64))
        return cls(rows=M.shape[0], cols=M.shape[1], data=_rows(M))

    def to_array(self) -> np.ndarray:
        return np.array(self.data, dtype=np.float64).reshape(self.rows, self.cols)


class InstanceFile(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["ccama-instance"] = "ccama-instance"
    n: int = Field(ge=1)
    p: int = Field(ge=1)
    gamma: float = Field(gt=0)
    A: Rows
    C: Rows
    E: Rows
    G: Rows
    source: str | None = None

    @model_validator(mode="after")
    def _check_shapes(self):
        expected = {"A": (self.n, self.n), "C": (self.p, self.n), "E": (self.p, self.p), "G": (self.p, self.p)}
        for name, (r, c) in expected.items():
            rows = getattr(self, name)
            if len(rows) != r or any(len(row) != c for row in rows):
                raise ValueError(f"{name} must be {r}x{c}")
        return self

    @classmethod
    def from_instance(cls, instance: ProblemInstance, source: str | None = None) -> InstanceFile:
        return cls(
            n=instance.n,
            p=instance.p,
            gamma=instance.gamma,
            A=_rows(instance.model.A),
            C=_rows(instance.model.C),
            E=_rows(instance.data.E),
            G=_rows(instance.data.G),
            source=source,
        )

    def to_instance(self, gamma: float | None = None) -> ProblemInstance:
        model = LtiModel(np.array(self.A), np.array(self.C))
        data = CovarianceData(np.array(self.G), np.array(self.E))
        return ProblemInstance(model, data, self.gamma if gamma is None else gamma)


class GroundTruthFile(BaseModel):
    N: int = Field(ge=1)
    Sigma_xx: Rows
    Sigma_full: Rows


class RunManifest(BaseModel):
    command: str
    flags: dict[str, Any]
    instance_hash: str | None = None
    seeds: list[int] = Field(default_factory=list)
    timings: dict[str, float] = Field(default_factory=dict)
    iterations: dict[str, int] = Field(default_factory=dict)
    version: str
    artifacts: list[str] = Field(default_factory=list)


class SolveSummary(BaseModel):
    solver: str
    converged: bool
    iterations: int
    gamma: float
    J_p: float | None
    J_d: float | None
    gap: float | None
    primal_residual: float | None
    elapsed: float
    options: dict[str, Any]
    selected_iteration: int | None = None

    @classmethod
    def from_result(cls, result: SolveResult) -> SolveSummary:
        final = result.final
        return cls(
            solver=result.solver,
            converged=result.converged,
            iterations=result.iterations,
            gamma=result.gamma,
            J_p=_finite_or_none(result.J_p),
            J_d=_finite_or_none(final.get("J_d")),
            gap=_finite_or_none(final.get("gap")),
            primal_residual=_finite_or_none(final.get("primal_residual")),
            elapsed=result.elapsed,
            options=result.options,
            selected_iteration=result.selected,
        )


class DecompositionFile(BaseModel):
    pi: int
    nu: int
    delta: int
    m: int
    zero_tol: float
    eigenvalues: list[float]
    singular_values: list[float]
    gap_index: int
    gap_ratio: float
    T: Rows
    B: Rows
    H: Rows
    canonical_residual: float
    reconstruction_residual: float
    mu_A: int | None = None
    signature_bounds_hold: bool | None = None

    @classmethod
    def from_decomposition(cls, dec: ChannelDecomposition, Z) -> DecompositionFile:
        sig = dec.signature
        gap_index, gap_ratio = largest_gap(Z)
        return cls(
            pi=sig.pi,
            nu=sig.nu,
            delta=sig.delta,
            m=dec.m,
            zero_tol=sig.zero_tol,
            eigenvalues=sig.eigenvalues.tolist(),
            singular_values=singular_value_profile(Z).tolist(),
            gap_index=gap_index,
            gap_ratio=gap_ratio,
            T=_rows(dec.T),
            B=_rows(dec.B),
            H=_rows(dec.H),
            canonical_residual=dec.canonical_residual,
            reconstruction_residual=dec.reconstruction_residual,
        )


class RealizationFile(BaseModel):
    mode: str
    A: Rows
    B: Rows
    K: Rows
    Omega: Rows
    X: Rows
    spectrum_real: list[float]
    spectrum_imag: list[float]
    closed_loop_residual: float
    constraint_residual: float
    objective: float

    @classmethod
    def from_realization(cls, r: FilterRealization) -> RealizationFile:
        spectrum = r.spectrum
        return cls(
            mode=r.mode,
            A=_rows(r.A),
            B=_rows(r.B),
            K=_rows(r.K),
            Omega=_rows(r.Omega),
            X=_rows(r.X),
            spectrum_real=spectrum.real.tolist(),
            spectrum_imag=spectrum.imag.tolist(),
            closed_loop_residual=r.closed_loop_residual,
            constraint_residual=r.constraint_residual,
            objective=objective(r),
        )

    def to_realization(self) -> FilterRealization:
        A, B, K, Omega, X = (np.array(getattr(self, k), dtype=np.float64) for k in ("A", "B", "K", "Omega", "X"))
        B = B.reshape(A.shape[0], -1)
        K = K.reshape(B.shape[1], A.shape[0])
        Omega = Omega.reshape(B.shape[1], B.shape[1])
        Acl = A - B @ K
        return FilterRealization(
            A=A,
            B=B,
            K=K,
            Omega=Omega,
            Acl=Acl,
            X=X,
            closed_loop_residual=closed_loop_residual(Acl, X, B, Omega),
            constraint_residual=self.constraint_residual,
            mode=self.mode,
        )


# -----------------------------
# Low-level readers and writers
# -----------------------------
def _read_text(path: Path) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise InvalidInputError(f"cannot read {path}: {exc.strerror or exc}") from None


def _parse(model: type[BaseModel], path: Path):
    try:
        return model.model_validate_json(_read_text(path))
    except ValidationError as exc:
        raise InvalidInputError(f"{path}: {exc}") from None


def write_model(obj: BaseModel, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(obj.model_dump_json(indent=1))
    return path


def save_matrix(M, path: Path) -> Path:
    return write_model(MatrixFile.from_array(M), path)


def load_matrix(path: Path) -> np.ndarray:
    return _parse(MatrixFile, path).to_array()


# -----------------------------
# Instances
# -----------------------------
def instance_hash(instance: ProblemInstance) -> str:
    payload = InstanceFile.from_instance(instance).model_dump(exclude={"source"})
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


def ground_truth_path(instance_path: Path) -> Path:
    instance_path = Path(instance_path)
    return instance_path.with_name(instance_path.stem + ".truth.json")


def save_instance(instance: ProblemInstance, path: Path, source: str | None = None) -> Path:
    path = write_model(InstanceFile.from_instance(instance, source), path)
    logger.info("wrote instance to %s", path)
    return path


def load_instance(path: Path, gamma: float | None = None) -> ProblemInstance:
    spec = _parse(InstanceFile, path)
    try:
        return spec.to_instance(gamma)
    except CcamaError as exc:
        raise InvalidInputError(f"{path}: {exc}") from None


def save_ground_truth(truth: MsdGroundTruth, path: Path) -> Path:
    return write_model(
        GroundTruthFile(N=truth.N, Sigma_xx=_rows(truth.Sigma_xx), Sigma_full=_rows(truth.Sigma_full)), path
    )


def load_ground_truth(path: Path) -> np.ndarray | None:
    """Σ_xx from the sidecar, or None if there is none."""
    if not Path(path).exists():
        return None
    return np.array(_parse(GroundTruthFile, path).Sigma_xx, dtype=np.float64)


# -----------------------------
# Solutions
# -----------------------------
@dataclass(frozen=True, eq=False)
class Solution:
    path: Path
    X: np.ndarray
    Z: np.ndarray
    Y: DualPoint
    summary: SolveSummary
    manifest: RunManifest | None
    history: pd.DataFrame | None
    iterates: list[DualPoint] | None


def save_history(result: SolveResult, path: Path) -> Path:
    result.to_frame().to_csv(path, index=False)
    return path


def load_history(path: Path) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise InvalidInputError(f"missing history: {path}")
    df = pd.read_csv(path)
    for col in df.columns:
        if col != "solver":
            df[col] = pd.to_numeric(df[col], errors="coerce")
    df["k"] = df["k"].astype(int)
    return df


def save_iterates(iterates: list[DualPoint], path: Path) -> Path:
    np.savez(path, Y1=np.stack([Y.Y1 for Y in iterates]), Y2=np.stack([Y.Y2 for Y in iterates]))
    return path


def load_iterates(path: Path) -> list[DualPoint] | None:
    path = Path(path)
    if not path.exists():
        return None
    with np.load(path) as data:
        return [DualPoint(y1, y2) for y1, y2 in zip(data["Y1"], data["Y2"])]


def write_solution(out_dir: Path, result: SolveResult, manifest: RunManifest | None = None) -> list[str]:
    """One solve into a run directory; returns the artifact names written."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, M in (("X", result.X), ("Z", result.Z), ("Y1", result.Y.Y1), ("Y2", result.Y.Y2)):
        save_matrix(M, out_dir / f"{name}.json")
    save_history(result, out_dir / "history.csv")
    write_model(SolveSummary.from_result(result), out_dir / "result.json")
    artifacts = ["X.json", "Z.json", "Y1.json", "Y2.json", "history.csv", "result.json"]
    if result.iterates is not None:
        save_iterates(result.iterates, out_dir / "iterates.npz")
        artifacts.append("iterates.npz")
    if manifest is not None:
        manifest.artifacts = artifacts + ["manifest.json"]
        write_model(manifest, out_dir / "manifest.json")
        artifacts.append("manifest.json")
    logger.info("wrote %s solution to %s", result.solver, out_dir)
    return artifacts


def load_solution(path: Path, require_history: bool = False) -> Solution:
    path = Path(path)
    if not path.is_dir():
        raise InvalidInputError(f"solution directory not found: {path}")
    history_path = path / "history.csv"
    if require_history and not history_path.exists():
        raise InvalidInputError(f"missing history: {history_path}")
    manifest_path = path / "manifest.json"
    return Solution(
        path=path,
        X=load_matrix(path / "X.json"),
        Z=load_matrix(path / "Z.json"),
        Y=DualPoint(load_matrix(path / "Y1.json"), load_matrix(path / "Y2.json")),
        summary=_parse(SolveSummary, path / "result.json"),
        manifest=_parse(RunManifest, manifest_path) if manifest_path.exists() else None,
        history=load_history(history_path) if history_path.exists() else None,
        iterates=load_iterates(path / "iterates.npz"),
    )


# -----------------------------
# Realizations
# -----------------------------
def save_realization(realization: FilterRealization, path: Path) -> Path:
    return write_model(RealizationFile.from_realization(realization), path)


def load_realization(path: Path) -> FilterRealization:
    return _parse(RealizationFile, path).to_realization()


# -----------------------------
# Simulation statistics
# -----------------------------
class StatsFile(BaseModel):
    n_traj: int
    tail_samples: int
    config: dict[str, Any]
    sample_cov_final: Rows
    full_relative_error: float | None = None
    masked_relative_error: float | None = None
    diagonal_sample: list[float] = Field(default_factory=list)
    diagonal_target: list[float] = Field(default_factory=list)


def save_stats(stats: EnsembleStats, out_dir: Path, comparison: CovarianceComparison | None = None) -> list[str]:
    """stats.csv (variance time series) and stats.json (tail covariance and errors)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stats_frame(stats).to_csv(out_dir / "stats.csv", index=False)
    payload = StatsFile(
        n_traj=stats.n_traj,
        tail_samples=stats.tail_samples,
        config=asdict(stats.config) if stats.config is not None else {},
        sample_cov_final=_rows(stats.sample_cov_final),
    )
    if comparison is not None:
        payload.full_relative_error = comparison.full_relative_error
        payload.masked_relative_error = comparison.masked_relative_error
        payload.diagonal_sample = comparison.diagonal_sample.tolist()
        payload.diagonal_target = comparison.diagonal_target.tolist()
    write_model(payload, out_dir / "stats.json")
    return ["stats.csv", "stats.json"]


def write_json(payload: dict[str, Any], path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=1, allow_nan=False))
    return path
