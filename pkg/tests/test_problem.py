import numpy as np
import pytest

from ccama.errors import InvalidInputError, UnstableGeneratorError
from ccama.problem import (
    CovarianceData,
    LtiModel,
    ProblemInstance,
    gen_msd,
    is_hurwitz,
    lyapunov_solve,
    lyapunov_solve_kron,
    msd_matrices,
    one_point_mask,
    random_hurwitz,
    validate_covariance,
    white_noise_instance,
)


def test_lyapunov_matches_kronecker(rng):
    A = random_hurwitz(6, rng)
    B = rng.standard_normal((6, 3))
    Q = B @ B.T
    X = lyapunov_solve(A, Q)
    assert np.allclose(X, lyapunov_solve_kron(A, Q), atol=1e-10)
    assert np.linalg.norm(A @ X + X @ A.T + Q) < 1e-10 * np.linalg.norm(Q)
    assert np.allclose(X, X.T)


def test_lyapunov_scalar():
    assert lyapunov_solve([[-1.0]], [[1.0]])[0, 0] == pytest.approx(0.5)


def test_lyapunov_rejects_unstable():
    with pytest.raises(UnstableGeneratorError):
        lyapunov_solve(np.diag([-1.0, 0.5]), np.eye(2))


def test_model_rejects_marginal_generator():
    with pytest.raises(UnstableGeneratorError):
        LtiModel(np.zeros((2, 2)), np.eye(2))


def test_model_is_read_only():
    model = LtiModel(-np.eye(2), np.eye(2))
    with pytest.raises(ValueError):
        model.A[0, 0] = 1.0


def test_data_requires_g_zero_off_mask():
    E = np.eye(2)
    with pytest.raises(InvalidInputError):
        CovarianceData(np.ones((2, 2)), E)


def test_data_rejects_non_binary_mask():
    with pytest.raises(InvalidInputError):
        CovarianceData(np.eye(2), 0.5 * np.ones((2, 2)))


def test_instance_checks_gamma_and_sizes():
    model = LtiModel(-np.eye(3), np.eye(3))
    data = CovarianceData(np.eye(3), np.eye(3))
    with pytest.raises(InvalidInputError):
        ProblemInstance(model, data, gamma=0.0)
    with pytest.raises(InvalidInputError):
        ProblemInstance(model, CovarianceData(np.eye(2), np.eye(2)))
    assert ProblemInstance(model, data).with_gamma(3.0).gamma == 3.0


def test_msd_matrices_structure():
    T, A, B = msd_matrices(3)
    assert np.allclose(T, [[2, -1, 0], [-1, 2, -1], [0, -1, 2]])
    assert A.shape == (6, 6) and B.shape == (6, 3)
    assert is_hurwitz(A)


def test_one_point_mask_counts():
    E = one_point_mask(4)
    assert E.sum() == 4 * 4
    assert np.array_equal(E, E.T)


def test_gen_msd_ground_truth(msd2):
    inst = msd2.instance
    assert inst.n == 4 and inst.p == 4
    assert inst.gamma == pytest.approx(2.2)
    S = msd2.Sigma_xx
    assert np.allclose(S, S.T)
    assert np.linalg.eigvalsh(S)[0] > 0
    assert np.array_equal(inst.data.G, S * inst.data.E)
    assert msd2.relative_error(S) == 0.0
    assert msd2.Sigma_pp.shape == (2, 2) and msd2.Sigma_pv.shape == (2, 2)


def test_gen_msd_full_covariance_solves_augmented_lyapunov():
    truth = gen_msd(1)
    A_aug = np.array([[0.0, 1.0, 0.0], [-2.0, -1.0, 1.0], [0.0, 0.0, -1.0]])
    Q = np.diag([0.0, 0.0, 1.0])
    S = truth.Sigma_full
    assert np.linalg.norm(A_aug @ S + S @ A_aug.T + Q) < 1e-10


def test_validate_covariance_consistent(rng):
    A = random_hurwitz(4, rng)
    B = rng.standard_normal((4, 2))
    inst, X, H = white_noise_instance(A, B)
    report = validate_covariance(inst.model, X, B, rtol=1e-9)
    assert report.consistent
    assert report.h_relative_residual < 1e-8


def test_validate_covariance_inconsistent():
    model = LtiModel(np.diag([-1.0, -2.0, -3.0]), np.eye(3))
    report = validate_covariance(model, np.eye(3), np.array([[1.0], [0.0], [0.0]]))
    assert not report.consistent
    assert report.rank_lhs == 4 and report.rank_rhs == 2
    assert report.h_relative_residual > 0.1


def test_validate_covariance_default_rank_tolerance():
    # Q⊥ block of AX + XAᵀ is 1e-12: a rank jump at eps-level tolerance only.
    model = LtiModel(np.diag([-1.0, -1.0, -5e-13]), np.eye(3))
    B = np.eye(3)[:, :2]
    strict = validate_covariance(model, np.eye(3), B)
    assert strict.rank_lhs == 5 and strict.rank_rhs == 4
    assert not strict.consistent
    loose = validate_covariance(model, np.eye(3), B, rtol=1e-9)
    assert loose.consistent
