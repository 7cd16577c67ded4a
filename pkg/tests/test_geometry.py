import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, strategies as st

from gconvex.calculus import ScalarField
from gconvex.errors import MetricError
from gconvex.geometry import (GeoCfg, MetricField, block_diag_metric, christoffel, constant_metric,
                              gconvexity_rate, geodesic_distance, geodesic_path, identity_metric,
                              metric_at, pencil_eigvalsh, riemannian_hessian, spd_factor)
from gconvex.problems import (get_problem, gp_metric, gp_problem, pd_cone_metric, random_spd,
                              rosenbrock_metric, rosenbrock_problem, rosenbrock_z, spd_invsqrt, spd_log,
                              sym_exp, spd_sqrt, sym_to_vec, vec_to_sym)

coords = st.floats(-2.0, 2.0, allow_nan=False)
positive = st.floats(0.2, 5.0, allow_nan=False)


def coupled_metric():
    def ev(x):
        return np.array([[1 + x[0] ** 2, x[0] * x[1]], [x[0] * x[1], 2 + x[1] ** 2]])

    def parts(x):
        return np.array([[[2 * x[0], x[1]], [x[1], 0.0]], [[0.0, x[0]], [x[0], 2 * x[1]]]])

    return MetricField(2, ev, parts, name="coupled")


def coupled_objective():
    return ScalarField(2, lambda x, t: x[0] ** 3 + x[0] * x[1] + np.exp(x[1]),
                       lambda x, t: np.array([3 * x[0] ** 2 + x[1], x[0] + np.exp(x[1])]),
                       lambda x, t: np.array([[6 * x[0], 1.0], [1.0, np.exp(x[1])]]))


# frozen symbolic values at x = (2/5, -3/10)
X_REF = np.array([0.4, -0.3])
GAMMA_REF = np.array([[[0.33195020746887965, 0.0], [0.0, 0.33195020746887965]],
                      [[-0.12448132780082988, 0.0], [0.0, -0.12448132780082988]]])
RHESS_REF = np.array([[2.482259529545442, 1.0], [1.0, 0.8230777502271599]])
RATE_REF = 0.17498693550433053


def test_christoffel_matches_symbolic():
    assert np.allclose(christoffel(coupled_metric(), X_REF), GAMMA_REF, atol=1e-13)


def test_christoffel_fd_partials_match_symbolic():
    M = coupled_metric()
    M_fd = MetricField(2, M.eval, None)
    assert np.allclose(christoffel(M_fd, X_REF), GAMMA_REF, atol=1e-8)


def test_riemannian_hessian_matches_symbolic():
    H = riemannian_hessian(coupled_objective(), coupled_metric(), X_REF)
    assert np.allclose(H, RHESS_REF, atol=1e-12)
    assert gconvexity_rate(coupled_objective(), coupled_metric(), X_REF) == pytest.approx(RATE_REF, abs=1e-12)


def test_rosenbrock_christoffel_frozen():
    G = christoffel(rosenbrock_metric(), [0.3, -0.7])
    ref = np.zeros((2, 2, 2))
    ref[1, 0, 0] = -2.0
    assert np.allclose(G, ref, atol=1e-12)


@given(coords, coords)
def test_rosenbrock_riemannian_hessian_is_twice_metric(a, b):
    # f = |z|^2 in flat coordinates, so the covariant Hessian is exactly 2 M
    p = rosenbrock_problem()
    x = np.array([a, b])
    H = riemannian_hessian(p.f, p.M, x)
    Mx = metric_at(p.M, x)
    assert np.max(np.abs(H - 2 * Mx)) <= 1e-9 * np.max(np.abs(Mx))


@given(st.lists(positive, min_size=1, max_size=4))
def test_gp_rate_is_two_cosh_log(xs):
    x = np.array(xs)
    p = gp_problem(x.size)
    assert gconvexity_rate(p.f, p.M, x) == pytest.approx(np.min(x + 1 / x), rel=1e-9)


@given(st.integers(0, 10_000))
def test_pencil_matches_scipy(seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(4, 4))
    A = A + A.T
    B = random_spd(4, rng)
    ev = pencil_eigvalsh(A, spd_factor(B))
    assert np.allclose(ev, scipy.linalg.eigh(A, B, eigvals_only=True), atol=1e-10)


def test_spd_factor_rejects_near_singular():
    with pytest.raises(MetricError):
        spd_factor(np.diag([1.0, 1e-12]))
    with pytest.raises(MetricError):
        spd_factor(np.array([[1.0, 2.0], [2.0, 1.0]]))
    spd_factor(np.diag([1.0, 1e-9]))


def test_asymmetric_metric_rejected():
    M = MetricField(2, lambda x: np.array([[1.0, 1e-6], [0.0, 1.0]]))
    with pytest.raises(MetricError):
        metric_at(M, [0.0, 0.0])


def test_block_diag_metric_weights():
    M = block_diag_metric([identity_metric(1), constant_metric([[2.0, 0.1], [0.1, 1.0]])], [1.0, 3.0])
    Mx = metric_at(M, np.zeros(3))
    assert Mx[0, 0] == 1.0
    assert np.allclose(Mx[1:, 1:], 3 * np.array([[2.0, 0.1], [0.1, 1.0]]))


def _geodesic_second_derivative(f, x, v, h=1e-3):
    """d^2/ds^2 f(exp_X(s V)) on the PD cone, from the closed-form geodesic."""
    X = vec_to_sym(x)
    V = vec_to_sym(v)
    R, Ri = spd_sqrt(X), spd_invsqrt(X)

    def gam(s):
        return sym_to_vec(R @ sym_exp(s * Ri @ V @ Ri) @ R)

    return (f.eval(gam(h), 0) - 2 * f.eval(x, 0) + f.eval(gam(-h), 0)) / h ** 2


@pytest.mark.parametrize("pid,kw", [("karcher", {"n": 2, "m": 2}), ("karcher", {"n": 3, "m": 3}),
                                    ("logdet", {"n": 3})])
def test_matrix_hessian_along_geodesics(pid, kw):
    p = get_problem(pid, seed=5, **kw)
    rng = np.random.default_rng(9)
    for x in p.sampler.sample(5, 11):
        v = rng.normal(size=p.dim)
        H = riemannian_hessian(p.f, p.M, x)
        ref = _geodesic_second_derivative(p.f, x, v)
        assert v @ H @ v == pytest.approx(ref, rel=1e-5, abs=1e-6)


def test_rosenbrock_geodesic_distance_is_flat():
    M = rosenbrock_metric()
    rng = np.random.default_rng(2)
    for _ in range(3):
        a, b = rng.uniform(-1.5, 1.5, (2, 2))
        d = geodesic_distance(M, a, b)
        assert d == pytest.approx(np.linalg.norm(rosenbrock_z(a) - rosenbrock_z(b)), rel=1e-8)


def test_gp_geodesic_distance():
    a, b = np.array([0.5, 2.0]), np.array([3.0, 0.7])
    res = geodesic_path(gp_metric(2), a, b)
    assert res.converged
    # discrete midpoint rule converges at second order in the segment count
    assert res.length == pytest.approx(np.linalg.norm(np.log(b / a)), rel=1e-4)
    assert res.note == "upper-bound estimate"


def test_pd_cone_geodesic_distance():
    rng = np.random.default_rng(4)
    A, B = random_spd(2, rng), random_spd(2, rng)
    S = spd_invsqrt(A)
    ref = np.linalg.norm(spd_log(S @ B @ S))
    d = geodesic_distance(pd_cone_metric(2), sym_to_vec(A), sym_to_vec(B), GeoCfg(n_segments=64))
    assert d == pytest.approx(ref, rel=1e-4)


def test_geodesic_warm_start_reuses_path():
    M = rosenbrock_metric()
    first = geodesic_path(M, [-1.0, 0.5], [1.2, 0.3])
    again = geodesic_path(M, [-1.0, 0.5 + 1e-3], [1.2, 0.3], init=first.path)
    assert again.sweeps <= first.sweeps
    assert np.allclose(again.path[0], [-1.0, 0.5 + 1e-3])
