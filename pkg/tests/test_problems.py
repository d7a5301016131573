import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from focusfl.participation import SeededStream
from focusfl.problems import (
    HeterogeneityProfile,
    NotStronglyConvexError,
    ProblemError,
    RidgeProblem,
    constants,
    generate_ridge,
    gradient,
    gradient_variance,
    hessian,
    heterogeneity,
    optimum,
    stochastic_gradient,
)


@pytest.fixture(scope="module")
def problem():
    return generate_ridge(5, 6, 9, 0.05, HeterogeneityProfile(1.0), SeededStream(3))


def scalar(a, b, lam):
    return RidgeProblem(np.array([[[a]]], dtype=float), np.array([[b]], dtype=float), lam)


def test_scalar_ridge_optimum():
    # 2a(ax - b) + 2 lam x = 0  =>  x = ab / (a^2 + lam)
    assert scalar(1.0, 2.0, 1.0).x_star[0] == pytest.approx(1.0, abs=1e-14)


def test_scalar_least_squares_optimum():
    assert optimum(scalar(1.0, 2.0, 0.0))[0] == pytest.approx(2.0, abs=1e-14)


def test_scalar_constants():
    assert constants(scalar(1.0, 3.0, 0.0)) == (pytest.approx(2.0), pytest.approx(2.0))


def test_singular_system_raises():
    A = np.zeros((1, 1, 2))
    A[0, 0] = [1.0, 1.0]
    with pytest.raises(NotStronglyConvexError):
        RidgeProblem(A, np.ones((1, 1)), 0.0)


def test_benchmark_scale_mu_lower_bound():
    p = generate_ridge(16, 100, 100, 0.01, HeterogeneityProfile(1.0), SeededStream(7))
    assert p.mu >= 0.02
    assert p.mu <= p.L


def test_optimum_residual(problem):
    g = np.mean([gradient(problem, i, problem.x_star) for i in range(1, 6)], axis=0)
    c = 2.0 * problem.Atb.mean(axis=0)
    assert np.linalg.norm(g) <= 1e-10 * (1 + np.linalg.norm(c))
    np.testing.assert_allclose(problem.global_gradient(problem.x_star), g, atol=1e-12)


def test_gradient_matches_central_differences(problem):
    rng = np.random.default_rng(0)
    h = 1e-5
    for _ in range(10):
        x = rng.standard_normal(problem.dim)
        i = int(rng.integers(1, problem.n_clients + 1))
        fd = np.array([(problem.loss(i, x + h * e) - problem.loss(i, x - h * e)) / (2 * h)
                       for e in np.eye(problem.dim)])
        g = gradient(problem, i, x)
        assert np.linalg.norm(fd - g) <= 1e-6 * np.linalg.norm(g)


def test_gradient_zero_at_own_minimiser():
    p = generate_ridge(3, 4, 10, 0.0, HeterogeneityProfile(2.0), SeededStream(1))
    for i in range(1, 4):
        xi = np.linalg.lstsq(p.A[i - 1], p.b[i - 1], rcond=None)[0]
        np.testing.assert_allclose(gradient(p, i, xi), 0, atol=1e-10)


def test_all_gradients_rows(problem):
    X = np.random.default_rng(1).standard_normal((problem.n_clients, problem.dim))
    G = problem.all_gradients(X)
    for i in range(1, problem.n_clients + 1):
        np.testing.assert_allclose(G[i - 1], gradient(problem, i, X[i - 1]), rtol=1e-13, atol=1e-12)


def test_gradient_errors(problem):
    with pytest.raises(ProblemError):
        gradient(problem, 0, np.zeros(problem.dim))
    with pytest.raises(ProblemError):
        gradient(problem, 1, np.zeros(problem.dim + 1))
    with pytest.raises(ProblemError):
        stochastic_gradient(problem, 1, np.zeros(problem.dim), [])
    with pytest.raises(ProblemError):
        stochastic_gradient(problem, 1, np.zeros(problem.dim), [problem.n_samples + 1])


def test_full_batch_is_bit_identical(problem):
    x = np.random.default_rng(2).standard_normal(problem.dim)
    K = problem.n_samples
    for i in range(1, problem.n_clients + 1):
        assert np.array_equal(stochastic_gradient(problem, i, x, range(1, K + 1)), gradient(problem, i, x))
        assert np.array_equal(stochastic_gradient(problem, i, x, range(K, 0, -1)), gradient(problem, i, x))


def test_stochastic_gradient_unbiased(problem):
    rng = np.random.default_rng(3)
    x = rng.standard_normal(problem.dim)
    draws = 10_000
    samples = np.array([stochastic_gradient(problem, 2, x, [k]) for k in rng.integers(1, problem.n_samples + 1, draws)])
    mean = samples.mean(axis=0)
    se = samples.std(axis=0, ddof=1) / np.sqrt(draws)
    assert np.all(np.abs(mean - gradient(problem, 2, x)) <= 3 * se)


def test_single_sample_exact_mean(problem):
    # Enumerating all K single-sample gradients reproduces the full gradient.
    x = np.ones(problem.dim)
    K = problem.n_samples
    mean = np.mean([stochastic_gradient(problem, 1, x, [k]) for k in range(1, K + 1)], axis=0)
    np.testing.assert_allclose(mean, gradient(problem, 1, x), rtol=1e-12, atol=1e-10)


def test_gradient_variance_positive_and_shrinks(problem):
    x = problem.x_star
    v1 = gradient_variance(problem, x, 1, 500, SeededStream(0))
    v4 = gradient_variance(problem, x, 4, 500, SeededStream(0))
    assert np.isfinite(v1) and v1 > v4 > 0
    assert gradient_variance(problem, x, problem.n_samples, 5) == 0.0


def test_hessian_quadratic_form_in_range(problem):
    rng = np.random.default_rng(4)
    for _ in range(20):
        v = rng.standard_normal(problem.dim)
        v /= np.linalg.norm(v)
        x = rng.standard_normal(problem.dim)
        i = int(rng.integers(1, problem.n_clients + 1))
        # For a quadratic the directional second difference is exact.
        h = 1e-3
        curv = (problem.loss(i, x + h * v) - 2 * problem.loss(i, x) + problem.loss(i, x - h * v)) / h ** 2
        assert problem.mu * (1 - 1e-6) <= curv <= problem.L * (1 + 1e-6)
        assert problem.mu - 1e-10 <= v @ hessian(problem, i) @ v <= problem.L + 1e-10


def test_mu_at_least_twice_lambda(problem):
    assert problem.mu >= 2 * problem.lam


def test_homogeneous_profile_has_no_heterogeneity():
    p = generate_ridge(4, 5, 6, 0.1, HeterogeneityProfile.homogeneous(), SeededStream(5))
    assert all(np.array_equal(p.A[0], p.A[i]) and np.array_equal(p.b[0], p.b[i]) for i in range(4))
    pts = np.random.default_rng(5).standard_normal((20, 5))
    assert heterogeneity(p, pts) == 0.0
    own = np.linalg.solve(2 * p.H[0] + 2 * p.lam * np.eye(5), 2 * p.Atb[0])
    np.testing.assert_allclose(p.x_star, own, rtol=1e-12, atol=1e-12)


def test_heterogeneous_profile_is_heterogeneous(problem):
    assert heterogeneity(problem, [problem.x_star]) > 0.1


def test_generator_is_seeded():
    a = generate_ridge(2, 3, 4, 0.1, stream=SeededStream(9))
    b = generate_ridge(2, 3, 4, 0.1, stream=SeededStream(9))
    c = generate_ridge(2, 3, 4, 0.1, stream=SeededStream(10))
    assert np.array_equal(a.A, b.A) and np.array_equal(a.b, b.b)
    assert not np.array_equal(a.A, c.A)


def test_invalid_generation():
    with pytest.raises(ProblemError):
        generate_ridge(0, 3, 3, 0.1)
    with pytest.raises(ProblemError):
        generate_ridge(2, 3, 3, -1.0)
    with pytest.raises(ValueError):
        HeterogeneityProfile(-1.0)


def test_save_load_round_trip(problem, tmp_path):
    path = tmp_path / "p.npz"
    problem.save(path)
    q = RidgeProblem.load(path)
    assert np.array_equal(q.A, problem.A) and np.array_equal(q.b, problem.b) and q.lam == problem.lam
    assert np.array_equal(q.x_star, problem.x_star)


@settings(max_examples=100)
@given(st.lists(st.floats(-50, 50), min_size=6, max_size=6))
def test_optimum_minimises_global_loss(problem, x):
    x = np.array(x)
    assert problem.f_star <= problem.global_loss(x) + 1e-9 * (1 + abs(problem.f_star))
