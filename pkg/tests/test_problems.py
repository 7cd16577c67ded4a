import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, strategies as st

from gconvex.calculus import eval_gradient
from gconvex.errors import DomainError
from gconvex.geometry import gconvexity_rate, metric_at, riemannian_hessian
from gconvex.problems import (PROBLEM_IDS, bregman_divergence, bregman_riemannian_hessian, burg_entropy,
                              get_problem, half_squared_norm, is_spd, karcher_problem, kl_problem,
                              negative_entropy, pd_cone_metric, random_spd, rosenbrock_theta, rosenbrock_z,
                              spd_geometric_mean, spd_inv, spd_log, spd_log_pair, spd_sqrt, sym_basis,
                              sym_dim, sym_exp, sym_n, sym_to_vec, vec_to_sym)

seeds = st.integers(0, 100_000)


@given(st.integers(1, 5), seeds)
def test_chart_roundtrip_and_isometry(n, seed):
    rng = np.random.default_rng(seed)
    A, B = rng.normal(size=(2, n, n))
    A, B = A + A.T, B + B.T
    assert np.allclose(vec_to_sym(sym_to_vec(A)), A)
    assert sym_to_vec(A) @ sym_to_vec(B) == pytest.approx(np.trace(A @ B))
    assert sym_n(sym_dim(n)) == n


def test_sym_basis_orthonormal():
    E = sym_basis(3)
    G = np.einsum("aij,bji->ab", E, E)
    assert np.allclose(G, np.eye(6))


def test_sym_n_rejects_non_triangular():
    with pytest.raises(ValueError):
        sym_n(4)


@given(st.integers(1, 4), seeds)
def test_spd_functions(n, seed):
    X = random_spd(n, np.random.default_rng(seed))
    S = spd_sqrt(X)
    assert np.allclose(S @ S, X)
    assert np.allclose(sym_exp(spd_log(X)), X)
    assert np.allclose(spd_log(X), scipy.linalg.logm(X).real, atol=1e-10)
    assert np.allclose(spd_inv(X) @ X, np.eye(n))


@given(st.integers(1, 4), seeds)
def test_log_pair_is_log_of_inverse_product(n, seed):
    rng = np.random.default_rng(seed)
    A, X = random_spd(n, rng), random_spd(n, rng)
    ref = scipy.linalg.logm(np.linalg.solve(A, X)).real
    assert np.allclose(spd_log_pair(A, X), ref, atol=1e-9)


@given(seeds)
def test_geometric_mean_riccati(seed):
    rng = np.random.default_rng(seed)
    A, B = random_spd(3, rng), random_spd(3, rng)
    G = spd_geometric_mean(A, B)
    assert np.allclose(G @ np.linalg.solve(A, G), B, atol=1e-10)
    assert np.allclose(G, spd_geometric_mean(B, A), atol=1e-10)


def test_spd_floor():
    assert not is_spd(np.diag([1.0, 1e-16]))
    with pytest.raises(DomainError):
        spd_log(np.diag([1.0, -1.0]))


def test_pd_cone_metric_is_affine_invariant():
    rng = np.random.default_rng(0)
    X, V = random_spd(2, rng), rng.normal(size=(2, 2))
    V = V + V.T
    G = rng.normal(size=(2, 2)) + 3 * np.eye(2)
    M = pd_cone_metric(2)
    q1 = sym_to_vec(V) @ metric_at(M, sym_to_vec(X)) @ sym_to_vec(V)
    V2, X2 = G @ V @ G.T, G @ X @ G.T
    q2 = sym_to_vec(V2) @ metric_at(M, sym_to_vec(X2)) @ sym_to_vec(V2)
    assert q1 == pytest.approx(np.trace(np.linalg.solve(X, V) @ np.linalg.solve(X, V)))
    assert q1 == pytest.approx(q2)


@given(st.floats(-2, 2), st.floats(-2, 2))
def test_rosenbrock_theta(a, b):
    x = np.array([a, b])
    from gconvex.problems import rosenbrock_metric, rosenbrock_problem
    Th = rosenbrock_theta(x)
    assert np.allclose(Th.T @ Th, rosenbrock_metric().eval(x), rtol=0, atol=1e-12)
    assert np.sum(rosenbrock_z(x) ** 2) == pytest.approx(rosenbrock_problem().f.eval(x, 0), rel=1e-12, abs=1e-12)


def test_karcher_optima():
    rng = np.random.default_rng(1)
    A, B = random_spd(2, rng), random_spd(2, rng)
    p1 = karcher_problem([A])
    assert np.allclose(eval_gradient(p1.f, sym_to_vec(A)), 0, atol=1e-12)
    p2 = karcher_problem([A, B])
    assert np.allclose(p2.known_optimum, sym_to_vec(spd_geometric_mean(A, B)))
    assert np.allclose(eval_gradient(p2.f, p2.known_optimum), 0, atol=1e-10)
    assert np.allclose(p2.flow()(p2.known_optimum), 0, atol=1e-10)


@pytest.mark.parametrize("n,m", [(2, 1), (2, 2), (2, 3), (3, 2)])
def test_karcher_rate_lower_bound(n, m):
    p = get_problem("karcher", n=n, m=m, seed=7)
    for x in p.sampler.sample(10, 2):
        assert gconvexity_rate(p.f, p.M, x) >= m - 1e-6


def test_karcher_flow_is_natural_gradient():
    p = get_problem("karcher", n=3, m=3, seed=2)
    from gconvex.contraction import natural_gradient_system
    ref = natural_gradient_system(p.f, p.M)
    for x in p.sampler.sample(5, 1):
        assert np.allclose(p.flow()(x), ref(x), atol=1e-10)


def test_kl_divergence_matches_entropy_bregman():
    p = np.array([0.2, 0.3, 0.5])
    q = np.array([0.4, 0.4, 0.3])
    ref = np.sum(p * np.log(p / q) - p + q)
    assert bregman_divergence(negative_entropy(3), p, q) == pytest.approx(ref)
    assert kl_problem(p).f.eval(q, 0) == pytest.approx(ref)


@given(seeds)
def test_kl_closed_form_riemannian_hessian(seed):
    p = np.array([0.2, 0.3, 0.5])
    prob = kl_problem(p)
    q = prob.sampler.sample(1, seed)[0]
    H = riemannian_hessian(prob.f, prob.M, q)
    assert np.allclose(H, np.diag((p + q) / (2 * q ** 2)), atol=1e-8)
    assert np.allclose(H, bregman_riemannian_hessian(negative_entropy(3), p, q), atol=1e-8)


def test_bregman_of_half_norm_is_half_distance():
    p, q = np.array([1.0, -2.0]), np.array([0.5, 0.5])
    assert bregman_divergence(half_squared_norm(2), p, q) == pytest.approx(0.5 * np.sum((p - q) ** 2))
    assert bregman_divergence(burg_entropy(2), q + 1, q + 1) == pytest.approx(0.0)


def test_kl_reduced_optimum():
    p = np.array([0.2, 0.3, 0.5])
    prob = kl_problem(p, reduced=True)
    assert np.allclose(eval_gradient(prob.f, p[:-1]), 0, atol=1e-12)
    assert gconvexity_rate(prob.f, prob.M, p[:-1]) > 0


def test_kl_rejects_bad_target():
    with pytest.raises(ValueError):
        kl_problem([0.5, 0.6])


def test_logdet_closed_form():
    p = get_problem("logdet", n=2, seed=3)
    x0 = p.sampler.sample(1, 0)[0]
    assert np.allclose(p.solution(x0, 0.0), x0)
    assert np.allclose(eval_gradient(p.f, p.known_optimum), 0, atol=1e-12)
    assert p.f.eval(p.known_optimum, 0) == pytest.approx(p.params["n"], abs=1e-12)


def test_registry():
    for pid in PROBLEM_IDS:
        prob = get_problem(pid)
        assert prob.id == pid
        x = prob.sampler.sample(1, 0)[0]
        assert np.isfinite(prob.f.eval(x, 0.0))
    with pytest.raises(KeyError):
        get_problem("nope")
    assert get_problem("karcher", seed=1).params == get_problem("karcher", seed=1).params
