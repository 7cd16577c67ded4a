import json
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from gconvex.calculus import ScalarField
from gconvex.contraction import (BoxSampler, FlowSystem, MappedSampler, SimplexSampler, certify_region,
                                 contraction_lhs, contraction_rate, linear_system, lyapunov_value,
                                 natural_gradient_system, philox, robustness_ball, theorem1_residual)
from gconvex.errors import DomainError, NumericalError
from gconvex.geometry import MetricField, constant_metric, gconvexity_rate, identity_metric
from gconvex.problems import get_problem, gp_problem, rosenbrock_problem

coords = st.floats(-2.0, 2.0, allow_nan=False)


def test_linear_system_rate():
    sys = linear_system(-np.eye(2))
    assert contraction_rate(sys, identity_metric(2), [0.3, 0.1]) == pytest.approx(1.0)
    # rotation plus damping: the skew part does not change the rate
    B = np.array([[-0.5, 3.0], [-3.0, -0.5]])
    assert contraction_rate(linear_system(B), identity_metric(2), [0, 0]) == pytest.approx(0.5)


def test_metric_changes_linear_rate():
    # xdot = B x is not contracting in the identity metric but is in P solving B'P + PB = -2P
    B = np.array([[-1.0, 4.0], [0.0, -1.0]])
    assert contraction_rate(linear_system(B), identity_metric(2), [0, 0]) < 0
    P = np.array([[1.0, 0.0], [0.0, 100.0]])
    assert contraction_rate(linear_system(B), constant_metric(P), [0, 0]) > 0


@given(coords, coords)
def test_rosenbrock_lhs_is_minus_four_metric(a, b):
    p = rosenbrock_problem()
    x = np.array([a, b])
    Q = contraction_lhs(p.flow(), p.M, x)
    assert np.allclose(Q, -4 * p.M.eval(x), atol=1e-12)


@given(coords, coords)
def test_theorem1_residual_small(a, b):
    p = rosenbrock_problem()
    assert theorem1_residual(p.f, p.M, [a, b]) <= 1e-6


@given(st.lists(st.floats(0.3, 3.0), min_size=2, max_size=2))
def test_rate_equivalence_gp(xs):
    p = gp_problem(2)
    sys = natural_gradient_system(p.f, p.M)
    assert contraction_rate(sys, p.M, xs) == pytest.approx(gconvexity_rate(p.f, p.M, xs), abs=1e-6)


def test_lyapunov_value_zero_at_optimum():
    p = rosenbrock_problem()
    assert lyapunov_value(p.f, p.M, [1.0, 1.0]) == 0.0
    assert lyapunov_value(p.f, p.M, [0.0, 1.0]) > 0


def test_robustness_ball():
    assert robustness_ball(2.0, 1.0) == 0.5
    with pytest.raises(ValueError):
        robustness_ball(0.0, 1.0)
    with pytest.raises(ValueError):
        robustness_ball(1.0, -1.0)


def test_flow_system_guards():
    sys = FlowSystem(1, lambda x, t: np.array([np.nan]))
    with pytest.raises(NumericalError):
        sys([0.0])
    p = gp_problem(1)
    with pytest.raises(DomainError):
        natural_gradient_system(p.f, p.M)([-1.0])


def test_lhs_symmetric_even_with_asymmetric_partial_slices():
    M = MetricField(2, lambda x: np.eye(2), lambda x: np.array([[[0, 1.0], [0, 0]], [[0, 0], [0, 0]]]))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        Q = contraction_lhs(linear_system(-np.eye(2)), M, [1.0, 0.0])
    assert np.array_equal(Q, Q.T)


def test_philox_reproducible():
    assert np.array_equal(philox(7).random(5), philox(7).random(5))
    assert not np.array_equal(philox(7).random(5), philox(8).random(5))


def test_box_sampler_in_region_and_seeded():
    s = BoxSampler((-2.0, -1.0), (2.0, 3.0))
    a = s.sample(64, 3)
    assert np.all(a >= [-2, -1]) and np.all(a <= [2, 3])
    assert np.array_equal(a, s.sample(64, 3))
    assert not np.array_equal(a, s.sample(64, 4))


def test_simplex_sampler_margin():
    pts = SimplexSampler(3, 0.05).sample(100, 1)
    assert np.allclose(pts.sum(axis=1), 1.0)
    assert np.all(pts >= 0.05 - 1e-15)
    m = MappedSampler(SimplexSampler(3), lambda q: q[:-1], 2)
    assert m.sample(4, 1).shape == (4, 2)


def test_certify_rosenbrock_report():
    p = rosenbrock_problem()
    rep = certify_region(p.flow(), p.M, p.sampler, 200, seed=42)
    assert rep.certified
    assert rep.min_rate == pytest.approx(2.0, abs=1e-5)
    assert rep.theorem1_max_residual <= 1e-6
    d = rep.to_dict()
    assert sum(d["histogram"]["counts"]) == 200
    assert d["verdict"] == "certified"
    json.dumps(d)


def test_certify_worker_invariance():
    p = get_problem("gp", n=2)
    sys = natural_gradient_system(p.f, p.M)
    r1 = certify_region(sys, p.M, p.sampler, 64, (0.0, 1.0), seed=3, workers=1).to_dict()
    r4 = certify_region(sys, p.M, p.sampler, 64, (0.0, 1.0), seed=3, workers=4).to_dict()
    assert json.dumps(r1) == json.dumps(r4)
    assert r1["n_evaluations"] == 128


def test_certify_counts_spd_violations():
    M = MetricField(2, lambda x: np.diag([x[0], 1.0]), lambda x: np.array([[[1.0, 0], [0, 0]], [[0, 0], [0, 0]]]))
    rep = certify_region(linear_system(-np.eye(2)), M, BoxSampler((-1.0, -1.0), (1.0, 1.0)), 64,
                         check_theorem1=False)
    assert rep.spd_violations > 0
    assert not rep.certified


def test_certify_detects_nonconvex_objective():
    # double well: negative curvature around the origin
    f = ScalarField(1, lambda x, t: (x[0] ** 2 - 1) ** 2, lambda x, t: 4 * x * (x ** 2 - 1),
                    lambda x, t: np.array([[12 * x[0] ** 2 - 4]]))
    M = identity_metric(1)
    rep = certify_region(natural_gradient_system(f, M), M, BoxSampler((-0.5,), (0.5,)), 32)
    assert not rep.certified
    assert rep.min_rate == pytest.approx(12 * rep.argmin_point[0] ** 2 - 4, abs=1e-6)
