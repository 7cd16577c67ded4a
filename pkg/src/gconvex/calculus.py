"""Derivative evaluation for scalar objectives and metric fields.

Analytic oracles are used whenever a field supplies them; otherwise central
finite differences take over. Step sizes follow the usual truncation versus
round-off balance and shrink near the domain boundary so every stencil stays
inside the open domain.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DomainError, NumericalError

# relative step bases (times max(1, |x_i|))
GRAD_STEP = 6.1e-6  # ~eps^(1/3)
HESS_STEP = 1.2e-4  # ~eps^(1/4)
THIRD_STEP = 1e-3


def _whole_space_margin(x: np.ndarray) -> float:
    return np.inf


@dataclass(frozen=True)
class DomainGuard:
    """Open-set membership test with a distance-to-boundary proxy.

    ``contains`` defaults to ``margin(x) > 0`` so the two can never disagree.
    """

    margin: Callable[[np.ndarray], float] = _whole_space_margin
    contains_fn: Optional[Callable[[np.ndarray], bool]] = None
    description: str = "R^n"

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        if not np.all(np.isfinite(x)):
            return False
        if self.contains_fn is not None:
            return bool(self.contains_fn(x))
        return bool(self.margin(x) > 0)

    def check(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if not self.contains(x):
            raise DomainError(f"point {x.tolist()} outside domain {self.description}")
        return x

    @classmethod
    def whole_space(cls) -> "DomainGuard":
        return cls()

    @classmethod
    def positive_orthant(cls) -> "DomainGuard":
        return cls(margin=lambda x: float(np.min(x)), description="x_i > 0")


@dataclass(frozen=True)
class ScalarField:
    """Time-dependent scalar objective ``f(x, t)`` with optional derivative oracles.

    All callables take ``(x, t)``. ``third`` returns ``T[k, i, j] = d^3 f / dx_k dx_i dx_j``.
    """

    dim: int
    eval: Callable[[np.ndarray, float], float]
    grad: Optional[Callable[[np.ndarray, float], np.ndarray]] = None
    hess: Optional[Callable[[np.ndarray, float], np.ndarray]] = None
    third: Optional[Callable[[np.ndarray, float], np.ndarray]] = None
    domain: DomainGuard = field(default_factory=DomainGuard)
    name: str = "f"

    def __call__(self, x, t: float = 0.0) -> float:
        x = self.domain.check(x)
        return float(self.eval(x, t))


@dataclass
class CheckReport:
    max_abs_error: float
    max_rel_error: float
    worst_point: Optional[np.ndarray]
    passed: bool
    tol: float
    n_points: int
    checked: list = field(default_factory=list)
    worst_item: str = ""

    def to_dict(self) -> dict:
        return {
            "max_abs_error": self.max_abs_error,
            "max_rel_error": self.max_rel_error,
            "worst_point": None if self.worst_point is None else list(map(float, self.worst_point)),
            "worst_item": self.worst_item,
            "passed": self.passed,
            "tol": self.tol,
            "n_points": self.n_points,
            "checked": list(self.checked),
        }


# ---------------------------------------------------------------------------
# finite-difference kernels


def fd_steps(x: np.ndarray, base: float, margin: float) -> np.ndarray:
    """Per-coordinate central-difference steps, shrunk to margin/4 near the boundary."""
    h = base * np.maximum(1.0, np.abs(x))
    if np.isfinite(margin):
        h = np.where(margin < 2.0 * h, margin / 4.0, h)
    if np.any(h <= 0):
        raise DomainError("non-positive finite-difference step; point is on the boundary")
    return h


def central_difference(fun: Callable[[np.ndarray], np.ndarray], x: np.ndarray,
                       steps: np.ndarray) -> np.ndarray:
    """Stack of ``d fun / d x_k`` along the leading axis."""
    rows = []
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = steps[k]
        rows.append((np.asarray(fun(x + e), dtype=float) - np.asarray(fun(x - e), dtype=float))
                    / (2.0 * steps[k]))
    return np.array(rows)


def second_difference(fun: Callable[[np.ndarray], float], x: np.ndarray,
                      steps: np.ndarray) -> np.ndarray:
    n = x.size
    f0 = fun(x)
    H = np.empty((n, n))
    for i in range(n):
        ei = np.zeros(n)
        ei[i] = steps[i]
        H[i, i] = (fun(x + ei) - 2.0 * f0 + fun(x - ei)) / steps[i] ** 2
        for j in range(i):
            ej = np.zeros(n)
            ej[j] = steps[j]
            v = (fun(x + ei + ej) - fun(x + ei - ej) - fun(x - ei + ej) + fun(x - ei - ej))
            H[i, j] = H[j, i] = v / (4.0 * steps[i] * steps[j])
    return H


def symmetrize(A: np.ndarray) -> np.ndarray:
    return 0.5 * (A + A.T)


def symmetrize3(T: np.ndarray) -> np.ndarray:
    """Average over all index permutations of a rank-3 array."""
    return sum(np.transpose(T, p) for p in itertools.permutations(range(3))) / 6.0


def _finite(v, what: str):
    v = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(v)):
        raise NumericalError(f"non-finite {what}")
    return v


# ---------------------------------------------------------------------------
# public derivative operations


def eval_gradient(f: ScalarField, x, t: float = 0.0) -> np.ndarray:
    x = f.domain.check(x)
    if f.grad is not None:
        return _finite(f.grad(x, t), "gradient").reshape(f.dim)
    h = fd_steps(x, GRAD_STEP, f.domain.margin(x))
    g = central_difference(lambda y: f.eval(y, t), x, h)
    return _finite(g, "gradient")


def eval_hessian(f: ScalarField, x, t: float = 0.0) -> np.ndarray:
    """Euclidean Hessian, exactly symmetric.

    Without an analytic Hessian, an analytic gradient is differenced once;
    failing that, ``eval`` is differenced twice with the larger step.
    """
    x = f.domain.check(x)
    if f.hess is not None:
        H = np.asarray(f.hess(x, t), dtype=float).reshape(f.dim, f.dim)
    elif f.grad is not None:
        h = fd_steps(x, GRAD_STEP, f.domain.margin(x))
        H = central_difference(lambda y: f.grad(y, t), x, h)
    else:
        h = fd_steps(x, HESS_STEP, f.domain.margin(x))
        H = second_difference(lambda y: f.eval(y, t), x, h)
    return _finite(symmetrize(H), "Hessian")


def eval_third(f: ScalarField, x, t: float = 0.0) -> np.ndarray:
    x = f.domain.check(x)
    if f.third is not None:
        T = np.asarray(f.third(x, t), dtype=float).reshape((f.dim,) * 3)
    else:
        h = fd_steps(x, THIRD_STEP, f.domain.margin(x))
        T = central_difference(lambda y: eval_hessian(f, y, t), x, h)
    return _finite(symmetrize3(T), "third derivative")


def metric_partials(M, x) -> np.ndarray:
    """``T[k, i, j] = dM_ij / dx_k`` for a metric field (anything with eval/partials/domain)."""
    x = M.domain.check(x)
    n = x.size
    if M.partials is not None:
        T = np.asarray(M.partials(x), dtype=float).reshape(n, n, n)
    else:
        h = fd_steps(x, GRAD_STEP, M.domain.margin(x))
        T = central_difference(M.eval, x, h)
    T = 0.5 * (T + T.transpose(0, 2, 1))
    return _finite(T, "metric partials")


# ---------------------------------------------------------------------------
# oracle harness


def _rel_err(a: np.ndarray, ref: np.ndarray) -> tuple[float, float]:
    abs_err = float(np.max(np.abs(a - ref))) if a.size else 0.0
    return abs_err, abs_err / max(1.0, float(np.max(np.abs(ref))) if ref.size else 1.0)


class _Worst:
    def __init__(self):
        self.abs = 0.0
        self.rel = 0.0
        self.point = None
        self.item = ""

    def update(self, a, ref, x, item):
        ea, er = _rel_err(np.asarray(a, float), np.asarray(ref, float))
        self.abs = max(self.abs, ea)
        if er > self.rel or self.point is None:
            self.rel, self.point, self.item = er, np.array(x, dtype=float), item


def fd_check(f: ScalarField, points: Sequence, tol: float = 1e-5, t: float = 0.0) -> CheckReport:
    """Compare every supplied analytic derivative of ``f`` against central differences.

    Each reference is built one derivative order down from the quantity being
    checked (gradient from ``eval``, Hessian from the analytic gradient, third
    derivatives from the analytic Hessian), so a fault cannot hide behind the
    value it is compared against. Errors are normwise: ``max|a - ref| / max(1, max|ref|)``.
    """
    worst = _Worst()
    checked = [name for name in ("grad", "hess", "third") if getattr(f, name) is not None]
    for x in points:
        x = f.domain.check(x)
        margin = f.domain.margin(x)
        h = fd_steps(x, GRAD_STEP, margin)
        if f.grad is not None:
            ref = central_difference(lambda y: f.eval(y, t), x, h)
            worst.update(f.grad(x, t), ref, x, "grad")
        if f.hess is not None:
            if f.grad is not None:
                ref = symmetrize(central_difference(lambda y: f.grad(y, t), x, h))
            else:
                ref = second_difference(lambda y: f.eval(y, t), x, fd_steps(x, HESS_STEP, margin))
            worst.update(f.hess(x, t), ref, x, "hess")
        if f.third is not None:
            if f.hess is not None:
                ref = central_difference(lambda y: f.hess(y, t), x, h)
            else:
                ref = central_difference(lambda y: eval_hessian(f, y, t), x,
                                         fd_steps(x, THIRD_STEP, margin))
            worst.update(f.third(x, t), ref, x, "third")
    return CheckReport(worst.abs, worst.rel, worst.point, worst.rel <= tol, tol,
                       len(points), checked, worst.item)


def fd_check_metric(M, points: Sequence, tol: float = 1e-5) -> CheckReport:
    """Check analytic metric partials against central differences of ``M.eval``."""
    worst = _Worst()
    checked = ["partials"] if M.partials is not None else []
    for x in points:
        x = M.domain.check(x)
        if M.partials is None:
            continue
        h = fd_steps(x, GRAD_STEP, M.domain.margin(x))
        worst.update(M.partials(x), central_difference(M.eval, x, h), x, "partials")
    return CheckReport(worst.abs, worst.rel, worst.point, worst.rel <= tol, tol,
                       len(points), checked, worst.item)


def restrict(f: ScalarField, base, idx) -> ScalarField:
    """``f`` as a function of the coordinates ``idx`` only, the rest frozen at ``base``."""
    base = np.array(base, dtype=float)
    idx = np.asarray(idx, dtype=int)

    def lift(y):
        z = base.copy()
        z[idx] = y
        return z

    grad = None if f.grad is None else (lambda y, t: np.asarray(f.grad(lift(y), t))[idx])
    hess = None if f.hess is None else (lambda y, t: np.asarray(f.hess(lift(y), t))[np.ix_(idx, idx)])
    third = None if f.third is None else (
        lambda y, t: np.asarray(f.third(lift(y), t))[np.ix_(idx, idx, idx)])
    dom = DomainGuard(margin=lambda y: f.domain.margin(lift(y)),
                      contains_fn=lambda y: f.domain.contains(lift(y)),
                      description=f.domain.description)
    return ScalarField(idx.size, lambda y, t: f.eval(lift(y), t), grad, hess, third, dom,
                       f"{f.name}|block")
