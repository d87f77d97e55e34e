import numpy as np
import pytest

from ccama.ama_solver import initial_dual_point
from ccama.errors import DualInfeasibleError, PowerIterationError
from ccama.linops import (
    DualPoint,
    OperatorBundle,
    apply_a1,
    apply_a1_adj,
    apply_a2,
    apply_a2_adj,
    apply_adjoint,
    dual_evaluate,
    dual_objective,
    power_iteration,
    primal_residual,
)
from ccama.problem import LtiModel


def _sym(rng, n):
    M = rng.standard_normal((n, n))
    return M + M.T


def _sym_basis(n):
    basis = []
    for i in range(n):
        for j in range(i, n):
            M = np.zeros((n, n))
            if i == j:
                M[i, i] = 1.0
            else:
                M[i, j] = M[j, i] = 1.0 / np.sqrt(2.0)
            basis.append(M)
    return basis


def test_adjoint_identities(masked_instance, rng):
    instance, _ = masked_instance
    bundle = OperatorBundle.from_instance(instance)
    X = _sym(rng, bundle.n)
    Y1 = _sym(rng, bundle.n)
    Y2 = _sym(rng, bundle.p)
    assert np.vdot(apply_a1(bundle, X), Y1) == pytest.approx(np.vdot(X, apply_a1_adj(bundle, Y1)))
    assert np.vdot(apply_a2(bundle, X), Y2) == pytest.approx(np.vdot(X, apply_a2_adj(bundle, Y2)))


def test_gradient_matches_finite_differences(masked_instance, rng):
    instance, _ = masked_instance
    bundle = OperatorBundle.from_instance(instance)
    G = instance.data.G
    Y = initial_dual_point(bundle, instance.gamma)
    _, grad, W = dual_evaluate(bundle, Y, G)
    D = DualPoint(_sym(rng, bundle.n), _sym(rng, bundle.p) * instance.data.E)
    D = (1.0 / D.norm()) * D
    t = 1e-6
    fd = (dual_objective(bundle, Y + t * D, G) - dual_objective(bundle, Y - t * D, G)) / (2 * t)
    assert fd == pytest.approx(grad.inner(D), rel=1e-5, abs=1e-7)
    assert np.allclose(W @ apply_adjoint(bundle, Y), np.eye(bundle.n), atol=1e-8)


def test_dual_objective_rejects_infeasible_point(small_bundle):
    with pytest.raises(DualInfeasibleError):
        dual_objective(small_bundle, DualPoint.zeros(small_bundle.n, small_bundle.p), np.zeros((4, 4)))


def test_power_iteration_matches_dense_matricization(masked_instance):
    instance, _ = masked_instance
    bundle = OperatorBundle.from_instance(instance)
    basis = _sym_basis(bundle.n)

    def normal(X):
        return apply_a1_adj(bundle, apply_a1(bundle, X)) + apply_a2_adj(bundle, apply_a2(bundle, X))

    M = np.array([[np.vdot(Ei, normal(Ej)) for Ej in basis] for Ei in basis])
    expected = np.linalg.eigvalsh(M)[-1]
    assert bundle.norms.lambda_normal == pytest.approx(expected, rel=1e-4)
    assert bundle.norms.sigma_a == pytest.approx(np.sqrt(expected), rel=1e-4)


def test_norms_of_negative_identity():
    model = LtiModel(-np.eye(3), np.zeros((3, 3)))
    bundle = OperatorBundle(model, np.ones((3, 3)))
    assert bundle.norms.sigma_a1_adj == pytest.approx(2.0, rel=1e-8)
    assert bundle.norms.lambda_a2 == 0.0
    assert bundle.norms.sigma_a == pytest.approx(2.0, rel=1e-8)


def test_power_iteration_zero_operator():
    assert power_iteration(lambda X: np.zeros_like(X), 3) == 0.0


def test_power_iteration_budget_exhausted():
    with pytest.raises(PowerIterationError):
        power_iteration(lambda X: 2.0 * X, 3, max_iter=1)


def test_dual_point_arithmetic():
    a = DualPoint(np.eye(2), np.ones((1, 1)))
    b = DualPoint(2 * np.eye(2), np.zeros((1, 1)))
    assert np.allclose((a + b).Y1, 3 * np.eye(2))
    assert np.allclose((b - a).Y2, -1.0)
    assert (2 * a).inner(a) == pytest.approx(2 * (2 + 1))
    assert a.norm() == pytest.approx(np.sqrt(3))


def test_dual_point_symmetrizes():
    Y = DualPoint(np.array([[0.0, 1.0], [0.0, 0.0]]), np.zeros((1, 1)))
    assert np.allclose(Y.Y1, [[0.0, 0.5], [0.5, 0.0]])


def test_primal_residual_vanishes_at_ground_truth(small_instance):
    instance, X = small_instance
    bundle = OperatorBundle.from_instance(instance)
    Z = -apply_a1(bundle, X)
    assert primal_residual(bundle, X, Z, instance.data.G) < 1e-9 * np.linalg.norm(X)


def test_bundle_rejects_wrong_mask():
    model = LtiModel(-np.eye(2), np.eye(2))
    with pytest.raises(ValueError):
        OperatorBundle(model, np.ones((3, 3)))


def test_norms_present_after_construction(small_instance):
    bundle = OperatorBundle.from_instance(small_instance[0])
    assert "norms" in vars(bundle)
    assert bundle.norms.sigma_a > 0.0


def test_adjoint_identity_on_random_pairs(masked_instance, rng):
    instance, _ = masked_instance
    bundle = OperatorBundle.from_instance(instance)
    sigma = bundle.norms.sigma_a
    for _ in range(100):
        X = _sym(rng, bundle.n)
        Y = DualPoint(_sym(rng, bundle.n), _sym(rng, bundle.p))
        lhs = np.vdot(apply_a1(bundle, X), Y.Y1) + np.vdot(apply_a2(bundle, X), Y.Y2)
        rhs = np.vdot(X, apply_adjoint(bundle, Y))
        scale = sigma * np.linalg.norm(X) * Y.norm()
        assert abs(lhs - rhs) <= 1e-12 * scale


def _feasible_points(bundle, gamma, rng, count):
    """Points around Y⁰ with λ_min(𝒜†(Y)) at least half of λ_min(𝒜†(Y⁰))."""
    Y0 = initial_dual_point(bundle, gamma)
    c = float(np.linalg.eigvalsh(apply_adjoint(bundle, Y0))[0])
    radius = 0.5 * c / bundle.norms.sigma_a_adj
    points = []
    for _ in range(count):
        D = DualPoint(_sym(rng, bundle.n), _sym(rng, bundle.p) * bundle.mask)
        points.append(Y0 + (radius * rng.random() / D.norm()) * D)
    return points


def test_gradient_matches_finite_differences_at_random_points(masked_instance, rng):
    instance, _ = masked_instance
    bundle = OperatorBundle.from_instance(instance)
    G = instance.data.G
    t = 1e-6
    for Y in _feasible_points(bundle, instance.gamma, rng, 20):
        _, grad, _ = dual_evaluate(bundle, Y, G)
        D = DualPoint(_sym(rng, bundle.n), _sym(rng, bundle.p) * instance.data.E)
        D = (1.0 / D.norm()) * D
        fd = (dual_objective(bundle, Y + t * D, G) - dual_objective(bundle, Y - t * D, G)) / (2 * t)
        assert fd == pytest.approx(grad.inner(D), rel=1e-5, abs=1e-6 * max(1.0, grad.norm()))


def test_gradient_lipschitz_bound(masked_instance, rng):
    instance, _ = masked_instance
    bundle = OperatorBundle.from_instance(instance)
    G = instance.data.G
    sigma = bundle.norms.sigma_a_adj
    points = _feasible_points(bundle, instance.gamma, rng, 20)
    for Y, Y_other in zip(points[::2], points[1::2]):
        alpha = min(
            np.linalg.eigvalsh(apply_adjoint(bundle, Y))[0],
            np.linalg.eigvalsh(apply_adjoint(bundle, Y_other))[0],
        )
        gap = (dual_evaluate(bundle, Y, G)[1] - dual_evaluate(bundle, Y_other, G)[1]).norm()
        assert gap <= (1.0 + 1e-6) * sigma**2 / alpha**2 * (Y - Y_other).norm()
