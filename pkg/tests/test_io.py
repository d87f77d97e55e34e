import json

import numpy as np
import pytest

from ccama.ama_solver import AmaOptions, SolveResult, solve_ama
from ccama.errors import InvalidInputError
from ccama.io import (
    SolveSummary,
    ground_truth_path,
    instance_hash,
    load_ground_truth,
    load_instance,
    load_matrix,
    load_realization,
    load_solution,
    save_ground_truth,
    save_instance,
    save_matrix,
    save_realization,
    save_stats,
    write_solution,
)
from ccama.linops import DualPoint
from ccama.problem import white_noise_instance
from ccama.realization import filter_gain
from ccama.simulation import SimConfig, compare_covariance, simulate_ensemble


def test_instance_round_trip_is_exact(tmp_path, masked_instance):
    instance, _ = masked_instance
    path = save_instance(instance, tmp_path / "inst.json", source="random")
    loaded = load_instance(path)
    assert np.array_equal(loaded.model.A, instance.model.A)
    assert np.array_equal(loaded.data.G, instance.data.G)
    assert loaded.gamma == instance.gamma
    assert instance_hash(loaded) == instance_hash(instance)
    assert load_instance(path, gamma=3.0).gamma == 3.0


def test_matrix_round_trip(tmp_path, rng):
    M = rng.standard_normal((3, 2))
    assert np.array_equal(load_matrix(save_matrix(M, tmp_path / "m.json")), M)


def test_malformed_instance_files(tmp_path, small_instance):
    instance, _ = small_instance
    path = save_instance(instance, tmp_path / "inst.json")
    payload = json.loads(path.read_text())

    with pytest.raises(InvalidInputError):
        load_instance(tmp_path / "missing.json")

    bad = dict(payload, A=payload["A"][:-1])
    (tmp_path / "short.json").write_text(json.dumps(bad))
    with pytest.raises(InvalidInputError):
        load_instance(tmp_path / "short.json")

    (tmp_path / "extra.json").write_text(json.dumps(dict(payload, colour="red")))
    with pytest.raises(InvalidInputError):
        load_instance(tmp_path / "extra.json")

    unstable = dict(payload, A=(np.eye(instance.n)).tolist())
    (tmp_path / "unstable.json").write_text(json.dumps(unstable))
    with pytest.raises(InvalidInputError, match="unstable"):
        load_instance(tmp_path / "unstable.json")


def test_ground_truth_sidecar(tmp_path, msd2):
    inst_path = save_instance(msd2.instance, tmp_path / "msd.json")
    sidecar = ground_truth_path(inst_path)
    assert sidecar.name == "msd.truth.json"
    assert load_ground_truth(sidecar) is None
    save_ground_truth(msd2, sidecar)
    assert np.array_equal(load_ground_truth(sidecar), msd2.Sigma_xx)


def test_solution_round_trip(tmp_path, small_instance):
    instance, _ = small_instance
    result = solve_ama(instance, AmaOptions(max_iter=5, keep_iterates=True))
    artifacts = write_solution(tmp_path / "run", result)
    assert "iterates.npz" in artifacts and "history.csv" in artifacts
    sol = load_solution(tmp_path / "run", require_history=True)
    assert np.array_equal(sol.X, result.X)
    assert np.array_equal(sol.Y.Y1, result.Y.Y1)
    assert sol.summary.iterations == 5 and not sol.summary.converged
    assert len(sol.history) == 5
    assert np.allclose(sol.history["rho"], [h["rho"] for h in result.history], rtol=1e-14, atol=0)
    assert len(sol.iterates) == 6
    assert sol.manifest is None


def test_missing_history_is_an_input_error(tmp_path, small_instance):
    instance, _ = small_instance
    write_solution(tmp_path / "run", solve_ama(instance, AmaOptions(max_iter=2)))
    (tmp_path / "run" / "history.csv").unlink()
    assert load_solution(tmp_path / "run").history is None
    with pytest.raises(InvalidInputError, match="missing history"):
        load_solution(tmp_path / "run", require_history=True)


def test_summary_drops_non_finite_values():
    n = 2
    result = SolveResult(
        solver="admm",
        X=np.eye(n),
        Z=np.zeros((n, n)),
        Y=DualPoint.zeros(n, n),
        gamma=1.0,
        converged=False,
        iterations=1,
        history=[{"k": 1, "J_d": np.nan, "gap": np.nan, "primal_residual": 0.3}],
        elapsed=0.0,
    )
    summary = SolveSummary.from_result(result)
    assert summary.J_d is None and summary.gap is None
    assert summary.primal_residual == 0.3
    json.loads(summary.model_dump_json())


def test_summary_reports_selected_iterate():
    n = 2
    history = [{"k": k, "J_d": -float(k), "gap": 0.1 * k, "primal_residual": 0.5 / k} for k in (1, 2, 3)]
    result = SolveResult(
        solver="ama-bb",
        X=np.eye(n),
        Z=np.zeros((n, n)),
        Y=DualPoint.zeros(n, n),
        gamma=1.0,
        converged=False,
        iterations=3,
        history=history,
        elapsed=0.0,
        selected=2,
    )
    summary = SolveSummary.from_result(result)
    assert summary.selected_iteration == 2
    assert summary.iterations == 3
    assert summary.gap == pytest.approx(0.2)
    assert summary.J_d == -2.0
    assert json.loads(summary.model_dump_json())["selected_iteration"] == 2


def test_realization_and_stats_files(tmp_path):
    A = np.array([[-1.0, 0.5], [-0.5, -2.0]])
    B = np.eye(2)
    _, X, H = white_noise_instance(A, B)
    r = filter_gain(A, X, B, H)
    path = save_realization(r, tmp_path / "realization.json")
    loaded = load_realization(path)
    assert np.array_equal(loaded.K, r.K)
    assert np.array_equal(loaded.Acl, r.Acl)
    assert loaded.mode == "direct"

    stats = simulate_ensemble(loaded, SimConfig(n_traj=2, t_final=1.0))
    names = save_stats(stats, tmp_path / "sim", compare_covariance(stats, X))
    assert names == ["stats.csv", "stats.json"]
    payload = json.loads((tmp_path / "sim" / "stats.json").read_text())
    assert payload["n_traj"] == 2
    assert payload["config"]["seed"] == 0
    assert len(payload["diagonal_target"]) == 2
