"""Contraction condition ``Mdot + A^T M + M A <= -2 alpha M`` and its sampled certification."""
from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Protocol, Sequence

import numpy as np
from scipy.stats import qmc

from .calculus import (GRAD_STEP, DomainGuard, ScalarField, central_difference, eval_gradient,
                       fd_steps, metric_partials)
from .errors import MetricError, NumericalError
from .geometry import (MetricField, metric_at, pencil_eigvalsh, riemannian_hessian, spd_factor,
                       spd_solve)

ASYMMETRY_WARN = 1e-8
PROVENANCES = ("natural-gradient", "primal-dual", "game", "hierarchical", "modulated", "custom")


@dataclass(frozen=True)
class FlowSystem:
    """Vector field ``xdot = h(x, t)``.

    ``objective``/``metric`` are kept for natural-gradient flows so the
    Riemannian-Hessian identity can be checked against the same data.
    """

    dim: int
    h: Callable[[np.ndarray, float], np.ndarray]
    jac: Optional[Callable[[np.ndarray, float], np.ndarray]] = None
    domain: DomainGuard = field(default_factory=DomainGuard)
    provenance: str = "custom"
    objective: Optional[ScalarField] = None
    metric: Optional[MetricField] = None
    autonomous: bool = True
    name: str = "h"

    def __call__(self, x, t: float = 0.0) -> np.ndarray:
        x = self.domain.check(x)
        v = np.asarray(self.h(x, t), dtype=float).reshape(self.dim)
        if not np.all(np.isfinite(v)):
            raise NumericalError("non-finite vector field value")
        return v


def intersect_domains(*doms: DomainGuard) -> DomainGuard:
    doms = [d for d in doms if d is not None]
    if len(doms) == 1:
        return doms[0]
    return DomainGuard(margin=lambda x: min(d.margin(x) for d in doms),
                       contains_fn=lambda x: all(d.contains(x) for d in doms),
                       description=" & ".join(dict.fromkeys(d.description for d in doms)))


def natural_gradient_system(f: ScalarField, M: MetricField, autonomous: bool = True,
                            name: str = "") -> FlowSystem:
    """``h(x, t) = -M(x)^{-1} df/dx``; the Jacobian is left to finite differences."""

    def h(x, t):
        L = spd_factor(metric_at(M, x))
        return -spd_solve(L, eval_gradient(f, x, t))

    return FlowSystem(f.dim, h, None, intersect_domains(f.domain, M.domain), "natural-gradient",
                      f, M, autonomous, name or f"natgrad({f.name},{M.name})")


def linear_system(B, provenance: str = "custom") -> FlowSystem:
    B = np.array(B, dtype=float)
    return FlowSystem(B.shape[0], lambda x, t: B @ x, lambda x, t: B, provenance=provenance,
                      name="linear")


# ---------------------------------------------------------------------------
# pointwise quantities


def jacobian(sys: FlowSystem, x, t: float = 0.0) -> np.ndarray:
    x = sys.domain.check(x)
    if sys.jac is not None:
        A = np.asarray(sys.jac(x, t), dtype=float).reshape(sys.dim, sys.dim)
    else:
        steps = fd_steps(x, GRAD_STEP, sys.domain.margin(x))
        A = central_difference(lambda y: sys.h(y, t), x, steps).T
    if not np.all(np.isfinite(A)):
        raise NumericalError("non-finite Jacobian")
    return A


def contraction_lhs(sys: FlowSystem, M: MetricField, x, t: float = 0.0) -> np.ndarray:
    """``Q = Mdot + A^T M + M A`` with ``Mdot = sum_k dM/dx_k h_k``."""
    x = np.asarray(x, dtype=float)
    A = jacobian(sys, x, t)
    Mx = metric_at(M, x)
    Mdot = np.einsum("kij,k->ij", metric_partials(M, x), sys(x, t))
    Q = Mdot + A.T @ Mx + Mx @ A
    asym = np.max(np.abs(Q - Q.T)) / max(1.0, np.max(np.abs(Q)))
    if asym > ASYMMETRY_WARN:
        warnings.warn(f"contraction matrix asymmetry {asym:.2e} before symmetrization",
                      RuntimeWarning, stacklevel=2)
    return 0.5 * (Q + Q.T)


def contraction_rate(sys: FlowSystem, M: MetricField, x, t: float = 0.0) -> float:
    """Local rate ``-1/2 lambda_max(Q, M)``; positive means contracting at ``(x, t)``."""
    Q = contraction_lhs(sys, M, x, t)
    L = spd_factor(metric_at(M, x))
    return float(-0.5 * pencil_eigvalsh(Q, L)[-1])


def theorem1_residual(f: ScalarField, M: MetricField, x, t: float = 0.0) -> float:
    """``max|Q + 2H| / max(1, max|H|)`` for the natural-gradient flow of ``(f, M)``.

    ``Q`` comes from a finite-difference Jacobian of the flow and ``H`` from
    Christoffel symbols, so the two sides share no code beyond the gradient.
    """
    Q = contraction_lhs(natural_gradient_system(f, M), M, x, t)
    H = riemannian_hessian(f, M, x, t)
    return float(np.max(np.abs(Q + 2.0 * H)) / max(1.0, float(np.max(np.abs(H)))))


def lyapunov_value(f: ScalarField, M: MetricField, x, t: float = 0.0) -> float:
    """``V = df^T M^{-1} df``; zero exactly at stationary points."""
    g = eval_gradient(f, x, t)
    L = spd_factor(metric_at(M, x))
    return float(max(0.0, g @ spd_solve(L, g)))


def robustness_ball(rate: float, R: float) -> float:
    """Radius ``R / rate`` of the ball that disturbed trajectories settle into."""
    if not rate > 0:
        raise ValueError(f"robustness ball needs a positive contraction rate, got {rate}")
    if R < 0:
        raise ValueError("disturbance bound R must be non-negative")
    return R / rate


# ---------------------------------------------------------------------------
# samplers


def philox(seed: int) -> np.random.Generator:
    """The package-wide seeded generator (counter-based Philox4x64)."""
    return np.random.Generator(np.random.Philox(int(seed) & (2 ** 64 - 1)))


class RegionSampler(Protocol):
    dim: int

    def sample(self, n: int, seed: int) -> np.ndarray: ...

    def describe(self) -> dict: ...


def _sobol(d: int, n: int, seed: int) -> np.ndarray:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        return qmc.Sobol(d, scramble=True, rng=philox(seed)).random(n)


@dataclass(frozen=True)
class BoxSampler:
    lo: tuple
    hi: tuple

    @property
    def dim(self) -> int:
        return len(self.lo)

    def sample(self, n: int, seed: int) -> np.ndarray:
        lo, hi = np.asarray(self.lo, float), np.asarray(self.hi, float)
        return lo + (hi - lo) * _sobol(self.dim, n, seed)

    def describe(self) -> dict:
        return {"kind": "box", "lo": list(map(float, self.lo)), "hi": list(map(float, self.hi))}


@dataclass(frozen=True)
class SimplexSampler:
    """Probability-simplex interior with every coordinate at least ``margin``."""

    n: int
    margin: float = 0.05

    @property
    def dim(self) -> int:
        return self.n

    def sample(self, n: int, seed: int) -> np.ndarray:
        if self.n * self.margin >= 1:
            raise ValueError("margin too large for simplex dimension")
        e = -np.log1p(-_sobol(self.n, n, seed))
        w = e / np.maximum(e.sum(axis=1, keepdims=True), 1e-300)
        return self.margin + (1.0 - self.n * self.margin) * w

    def describe(self) -> dict:
        return {"kind": "simplex", "n": self.n, "margin": self.margin}


@dataclass(frozen=True)
class MappedSampler:
    """Applies ``fmap`` to points of a base sampler (e.g. a reduced chart)."""

    base: object
    fmap: Callable[[np.ndarray], np.ndarray]
    dim: int
    label: str = "mapped"

    def sample(self, n: int, seed: int) -> np.ndarray:
        return np.array([self.fmap(p) for p in self.base.sample(n, seed)])

    def describe(self) -> dict:
        return {"kind": self.label, "base": self.base.describe()}


# ---------------------------------------------------------------------------
# certification


@dataclass
class ContractionReport:
    n_samples: int
    min_rate: float
    argmin_point: np.ndarray
    argmin_time: float
    rate_histogram: dict
    spd_violations: int
    theorem1_max_residual: Optional[float]
    seed: int
    region: dict
    t_grid: list
    provenance: str
    n_evaluations: int = 0
    rates: np.ndarray = field(default=None, repr=False)

    @property
    def certified(self) -> bool:
        return self.spd_violations == 0 and self.min_rate > 0

    def to_dict(self) -> dict:
        return {
            "n_samples": self.n_samples,
            "n_evaluations": self.n_evaluations,
            "seed": self.seed,
            "region": self.region,
            "t_grid": list(map(float, self.t_grid)),
            "provenance": self.provenance,
            "min_rate": self.min_rate,
            "argmin_point": list(map(float, self.argmin_point)),
            "argmin_time": self.argmin_time,
            "spd_violations": self.spd_violations,
            "theorem1_max_residual": self.theorem1_max_residual,
            "histogram": self.rate_histogram,
            "verdict": "certified" if self.certified else "not-certified",
            "scope": "sampled points of the stated region only; not a proof over the continuum",
        }


def _evaluate(sys: FlowSystem, M: MetricField, with_residual: bool, x, t):
    try:
        rate = contraction_rate(sys, M, x, t)
    except MetricError:
        return None, None
    res = theorem1_residual(sys.objective, sys.metric, x, t) if with_residual else None
    return rate, res


def _histogram(rates: np.ndarray, bins: int = 10) -> dict:
    if rates.size == 0:
        return {"edges": [], "counts": []}
    lo, hi = float(rates.min()), float(rates.max())
    if hi - lo <= 1e-12 * max(1.0, abs(lo)):
        return {"edges": [lo, hi], "counts": [int(rates.size)]}
    counts, edges = np.histogram(rates, bins=bins, range=(lo, hi))
    return {"edges": edges.tolist(), "counts": counts.tolist()}


def certify_region(sys: FlowSystem, M: MetricField, sampler, n: int,
                   t_grid: Sequence[float] = (0.0,), seed: int = 0, workers: int = 1,
                   check_theorem1: bool = True) -> ContractionReport:
    """Evaluate the local contraction rate on ``n`` seeded low-discrepancy points times ``t_grid``.

    Results are reduced in sample order, so the worker count never changes
    the report.
    """
    pts = np.asarray(sampler.sample(n, seed), dtype=float)
    if len(pts) < n:
        raise ValueError("sampler exhausted")
    tasks = [(p, float(t)) for p in pts for t in t_grid]
    with_res = (check_theorem1 and sys.provenance == "natural-gradient"
                and sys.objective is not None and sys.metric is not None)

    def run(task):
        return _evaluate(sys, M, with_res, *task)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, tasks))
    else:
        results = [run(task) for task in tasks]

    rates = np.array([r for r, _ in results if r is not None])
    violations = sum(1 for r, _ in results if r is None)
    all_rates = np.array([np.inf if r is None else r for r, _ in results])
    k = int(np.argmin(all_rates)) if rates.size else 0
    residuals = [res for r, res in results if res is not None]
    return ContractionReport(
        n_samples=n,
        min_rate=float(all_rates[k]) if rates.size else float("nan"),
        argmin_point=tasks[k][0],
        argmin_time=tasks[k][1],
        rate_histogram=_histogram(rates),
        spd_violations=violations,
        theorem1_max_residual=float(max(residuals)) if residuals else None,
        seed=seed,
        region=sampler.describe(),
        t_grid=list(t_grid),
        provenance=sys.provenance,
        n_evaluations=len(tasks),
        rates=rates,
    )
