"""Geodesic-convexity certificates through contraction of natural-gradient flows."""
from .calculus import DomainGuard, ScalarField, eval_gradient, eval_hessian, fd_check, fd_check_metric
from .contraction import (BoxSampler, ContractionReport, FlowSystem, certify_region, contraction_lhs,
                          contraction_rate, natural_gradient_system, theorem1_residual)
from .errors import DomainError, GConvexError, MetricError, ModelError, NumericalError
from .flows import IntegratorCfg, Trajectory, integrate, natural_gradient_flow
from .geometry import (GeoCfg, MetricField, christoffel, gconvexity_rate, geodesic_distance,
                       riemannian_hessian)
from .problems import PROBLEM_IDS, Problem, get_problem

__version__ = "0.1.0"
