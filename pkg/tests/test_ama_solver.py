import numpy as np
import pytest

from ccama.ama_solver import (
    HISTORY_COLUMNS,
    AmaOptions,
    _candidate,
    backtrack,
    bb_step,
    certified_fixed_step,
    dual_update,
    initial_dual_point,
    lipschitz_step,
    prox_gradient_dual_step,
    solve_ama,
    stopping_met,
    x_update,
    z_update,
)
from ccama.errors import DualInfeasibleError, InvalidInputError
from ccama.linops import (
    DualPoint,
    OperatorBundle,
    apply_a1,
    apply_a1_adj,
    apply_adjoint,
    dual_objective,
    primal_objective,
)
from ccama.problem import LtiModel, random_instance


@pytest.fixture(scope="module")
def solved():
    instance, X_true = random_instance(4, np.random.default_rng(7), gamma=1.0, mask="full")
    result = solve_ama(instance, AmaOptions(keep_iterates=True))
    return instance, X_true, result


def test_converges_on_fully_observed_instance(solved):
    instance, X_true, result = solved
    assert result.converged
    assert result.solver == "ama-bb"
    final = result.final
    assert abs(final["gap"]) <= 0.005
    assert final["primal_residual"] <= 0.05
    assert np.linalg.norm(result.X - X_true) <= 0.05
    assert np.linalg.eigvalsh(result.X)[0] > 0


def test_dual_objective_never_decreases(solved):
    _, _, result = solved
    J = np.array([h["J_d"] for h in result.history])
    assert np.all(np.diff(J) >= -1e-10 * (1.0 + np.abs(J[:-1])))


def test_iterates_stay_in_spectral_ball(solved):
    instance, _, result = solved
    assert result.iterates is not None
    assert len(result.iterates) == result.iterations + 1
    for Y in result.iterates:
        assert np.linalg.norm(Y.Y1, 2) <= instance.gamma * (1 + 1e-10)


def test_weak_duality_against_ground_truth(solved):
    instance, X_true, result = solved
    bundle = OperatorBundle.from_instance(instance)
    Z_true = -apply_a1(bundle, X_true)
    J_p = primal_objective(X_true, Z_true, instance.gamma)
    assert dual_objective(bundle, result.Y, instance.data.G) <= J_p + 1e-9


def test_history_frame(solved):
    _, _, result = solved
    df = result.to_frame()
    assert list(df.columns) == ["solver"] + HISTORY_COLUMNS
    assert len(df) == result.iterations
    assert df["k"].iloc[-1] == result.iterations


def test_initial_dual_point(small_bundle):
    Y = initial_dual_point(small_bundle, 0.7)
    assert np.linalg.norm(Y.Y1, 2) <= 0.7 * (1 + 1e-12)
    M = apply_a1_adj(small_bundle, Y.Y1)
    assert np.allclose(M, M[0, 0] * np.eye(small_bundle.n))
    assert M[0, 0] > 0
    assert np.all(Y.Y2 == 0)


def test_bb_step_on_quadratic():
    c = 4.0
    Y0 = DualPoint(np.eye(2), np.ones((1, 1)))
    Y1 = DualPoint(np.diag([0.3, -2.0]), 2 * np.ones((1, 1)))
    assert bb_step(Y0, Y1, -c * Y0, -c * Y1) == pytest.approx(1.0 / c)


def test_bb_step_falls_back_when_degenerate():
    Y = DualPoint(np.eye(2), np.ones((1, 1)))
    assert bb_step(Y, Y, Y, Y, fallback=0.3) == 0.3
    # non-positive curvature along the step
    Y1 = DualPoint(2 * np.eye(2), np.ones((1, 1)))
    assert bb_step(Y, Y1, Y, Y1, fallback=0.3) == 0.3


def test_small_step_accepted_without_backtracking(small_instance, small_bundle):
    instance, _ = small_instance
    Y = initial_dual_point(small_bundle, instance.gamma)
    step = backtrack(small_bundle, Y, 1e-6, 0.5, instance.gamma, instance.data.G, 60)
    assert step.backtracks == 0
    assert step.rho == 1e-6
    assert step.J_d >= dual_objective(small_bundle, Y, instance.data.G)


def test_large_step_backtracks(small_instance, small_bundle):
    instance, _ = small_instance
    Y = initial_dual_point(small_bundle, instance.gamma)
    step = backtrack(small_bundle, Y, 1e6, 0.5, instance.gamma, instance.data.G, 100)
    assert step.backtracks > 0
    assert step.rho == pytest.approx(1e6 * 0.5**step.backtracks)


def test_saturated_and_plain_dual_updates_agree(small_instance, small_bundle, rng):
    instance, _ = small_instance
    gamma, G = instance.gamma, instance.data.G
    Y = initial_dual_point(small_bundle, gamma)
    X = x_update(small_bundle, Y)
    rho = 0.8
    Z = z_update(small_bundle, X, Y.Y1, rho, gamma)
    plain = dual_update(small_bundle, X, Z, Y, rho, gamma, G)
    saturated = dual_update(small_bundle, X, None, Y, rho, gamma, G)
    assert np.allclose(plain.Y1, saturated.Y1, atol=1e-10)
    assert np.allclose(plain.Y2, saturated.Y2)

    Y_c, Z_c = _candidate(small_bundle, X, Y, rho, gamma, G)
    assert np.allclose(Z_c, Z, atol=1e-10)
    assert np.allclose(Y_c.Y1, saturated.Y1, atol=1e-10)


def test_update_is_projected_gradient_step(small_instance, small_bundle):
    instance, _ = small_instance
    gamma, G = instance.gamma, instance.data.G
    Y = initial_dual_point(small_bundle, gamma)
    X = x_update(small_bundle, Y)
    Y_ama = dual_update(small_bundle, X, None, Y, 0.5, gamma, G)
    Y_pg = prox_gradient_dual_step(small_bundle, Y, 0.5, gamma, G)
    assert np.allclose(Y_ama.Y1, Y_pg.Y1, atol=1e-10)
    assert np.allclose(Y_ama.Y2, Y_pg.Y2, atol=1e-10)


def test_x_update_rejects_infeasible_dual(small_bundle):
    with pytest.raises(DualInfeasibleError):
        x_update(small_bundle, DualPoint.zeros(small_bundle.n, small_bundle.p))


@pytest.mark.parametrize(
    "gap, residual, lenient_stop, expected",
    [
        (0.001, 0.01, False, True),
        (0.001, 0.5, False, False),
        (0.001, 0.5, True, True),
        (0.1, 0.01, True, True),
        (0.1, 0.5, True, False),
        (np.nan, 0.01, False, False),
    ],
)
def test_stopping_rule(gap, residual, lenient_stop, expected):
    assert stopping_met(gap, residual, 0.005, 0.05, lenient_stop) is expected


def test_non_converged_run_returns_best_iterate(small_instance):
    instance, _ = small_instance
    result = solve_ama(instance, AmaOptions(max_iter=2))
    assert not result.converged
    assert result.iterations == 2
    assert len(result.history) == 2
    assert result.selected in (1, 2)
    assert result.final is result.history[result.selected - 1]
    assert result.J_d == result.final["J_d"]
    assert result.last is result.history[-1]


def test_fixed_and_backtracking_modes(small_instance):
    instance, _ = small_instance
    fixed = solve_ama(instance, AmaOptions(step_mode="fixed", max_iter=30))
    assert fixed.solver == "ama-fixed"
    rho_fixed = fixed.options["rho_fixed"]
    assert rho_fixed > 0
    assert all(h["rho"] <= rho_fixed for h in fixed.history)

    plain = solve_ama(instance, AmaOptions(step_mode="backtracking", max_iter=30))
    assert plain.solver == "ama"
    rhos = [h["rho"] for h in plain.history]
    assert all(b <= a for a, b in zip(rhos, rhos[1:]))


def test_options_validation():
    with pytest.raises(InvalidInputError):
        AmaOptions(beta_backtrack=1.0)
    with pytest.raises(InvalidInputError):
        AmaOptions(step_mode="newton")
    with pytest.raises(InvalidInputError):
        AmaOptions(eps_gap=0.0)


def test_x_update_inverts_dual_operator():
    bundle = OperatorBundle(LtiModel(-0.5 * np.eye(2), np.eye(2)), np.zeros((2, 2)))
    X = x_update(bundle, DualPoint(-np.diag([1.0, 4.0]), np.zeros((2, 2))))
    assert np.allclose(X, np.diag([1.0, 0.25]))


def _scalar_fixed_point():
    # A = -1, C = E = 1, G = 2, gamma = 0.5: Y1 saturates at -gamma and 𝒜†(Ȳ) = 1/G
    model = LtiModel(np.array([[-1.0]]), np.array([[1.0]]))
    bundle = OperatorBundle(model, np.array([[1.0]]))
    Y_bar = DualPoint(np.array([[-0.5]]), np.array([[-0.5]]))
    return bundle, Y_bar, np.array([[2.0]]), 0.5


def test_fixed_point_accepts_initial_step():
    bundle, Y_bar, G, gamma = _scalar_fixed_point()
    assert np.allclose(apply_adjoint(bundle, Y_bar), 0.5)
    step = backtrack(bundle, Y_bar, 1.0, 0.5, gamma, G, 10)
    assert step.backtracks == 0
    assert step.rho == 1.0
    assert np.allclose(step.Y.Y1, Y_bar.Y1) and np.allclose(step.Y.Y2, Y_bar.Y2)
    assert step.J_d == pytest.approx(dual_objective(bundle, Y_bar, G))


def test_lipschitz_step_needs_no_backtracking(solved):
    instance, _, result = solved
    bundle = OperatorBundle.from_instance(instance)
    G = instance.data.G
    rho = lipschitz_step(bundle, result.Y)
    step = backtrack(bundle, result.Y, rho, 0.5, instance.gamma, G, 10)
    assert step.backtracks == 0
    assert step.rho == rho


def test_certified_fixed_step_not_below_lipschitz_step(small_instance, small_bundle):
    instance, _ = small_instance
    G = instance.data.G
    Y = initial_dual_point(small_bundle, instance.gamma)
    rho = certified_fixed_step(small_bundle, Y, instance.gamma, G, AmaOptions())
    assert rho >= lipschitz_step(small_bundle, Y)
