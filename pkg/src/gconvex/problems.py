"""Ready-made ``(f, M)`` pairs, SPD-matrix chart utilities and Bregman constructions.

Matrix problems live in the symmetric chart: row-major lower triangle with the
diagonal, off-diagonal entries scaled by sqrt(2) so that the Euclidean inner
product of chart vectors equals the Frobenius inner product of the matrices.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .calculus import DomainGuard, ScalarField, eval_gradient, eval_hessian, eval_third, symmetrize
from .contraction import BoxSampler, FlowSystem, MappedSampler, SimplexSampler, natural_gradient_system, philox
from .errors import DomainError
from .geometry import MetricField, constant_metric, identity_metric

EIG_FLOOR = 1e-14
SQRT2 = np.sqrt(2.0)


@dataclass(frozen=True)
class Problem:
    id: str
    f: ScalarField
    M: MetricField
    known_optimum: Optional[np.ndarray] = None
    known_rate: Optional[float] = None
    sampler: object = None
    natural_flow: Optional[FlowSystem] = None
    params: dict = field(default_factory=dict)
    rate_lower_bound: Optional[float] = None
    solution: Optional[Callable] = None  # closed-form x(t) given (x0, t), when known
    x_star: Optional[Callable] = None  # time-varying optimum
    x_star_dot: Optional[Callable] = None

    @property
    def dim(self) -> int:
        return self.f.dim

    @property
    def analytic(self) -> bool:
        """True when every derivative used by the Hessian identity is analytic."""
        return self.f.grad is not None and self.f.hess is not None and self.M.partials is not None

    def flow(self) -> FlowSystem:
        if self.natural_flow is not None:
            return self.natural_flow
        return natural_gradient_system(self.f, self.M, autonomous=self.x_star is None)


# ---------------------------------------------------------------------------
# Rosenbrock


def _rosen_f(x, t):
    return 100.0 * (x[0] ** 2 - x[1]) ** 2 + (x[0] - 1.0) ** 2


def _rosen_grad(x, t):
    u = x[0] ** 2 - x[1]
    return np.array([400.0 * u * x[0] + 2.0 * (x[0] - 1.0), -200.0 * u])


def _rosen_hess(x, t):
    return np.array([[1200.0 * x[0] ** 2 - 400.0 * x[1] + 2.0, -400.0 * x[0]],
                     [-400.0 * x[0], 200.0]])


def _rosen_third(x, t):
    T = np.zeros((2, 2, 2))
    T[0, 0, 0] = 2400.0 * x[0]
    T[0, 0, 1] = T[0, 1, 0] = T[1, 0, 0] = -400.0
    return T


def rosenbrock_metric() -> MetricField:
    def ev(x):
        return np.array([[400.0 * x[0] ** 2 + 1.0, -200.0 * x[0]], [-200.0 * x[0], 100.0]])

    def parts(x):
        T = np.zeros((2, 2, 2))
        T[0] = [[800.0 * x[0], -200.0], [-200.0, 0.0]]
        return T

    return MetricField(2, ev, parts, name="rosenbrock-metric")


def rosenbrock_theta(x) -> np.ndarray:
    """Differential change of variables with ``Theta^T Theta = M(x)``."""
    x = np.asarray(x, dtype=float)
    return np.array([[20.0 * x[0], -10.0], [1.0, 0.0]])


def rosenbrock_z(x) -> np.ndarray:
    """Flat coordinates of the Rosenbrock metric, in which ``f = |z|^2``."""
    x = np.asarray(x, dtype=float)
    return np.array([10.0 * x[0] ** 2 - 10.0 * x[1], x[0] - 1.0])


def rosenbrock_problem() -> Problem:
    f = ScalarField(2, _rosen_f, _rosen_grad, _rosen_hess, _rosen_third, name="rosenbrock")
    M = rosenbrock_metric()
    flow = FlowSystem(
        2,
        lambda x, t: -2.0 * np.array([x[0] - 1.0, x[0] ** 2 - 2.0 * x[0] + x[1]]),
        lambda x, t: -2.0 * np.array([[1.0, 0.0], [2.0 * x[0] - 2.0, 1.0]]),
        provenance="natural-gradient", objective=f, metric=M, name="rosenbrock-natgrad")
    return Problem("rosenbrock", f, M, np.array([1.0, 1.0]), 2.0,
                   BoxSampler((-2.0, -1.0), (2.0, 3.0)), flow)


# ---------------------------------------------------------------------------
# geometric-programming metric


def gp_metric(n: int) -> MetricField:
    """``ds^2 = sum (dx_i / x_i)^2`` on the positive orthant."""
    if n < 1:
        raise ValueError("n must be positive")

    def parts(x):
        T = np.zeros((n, n, n))
        i = np.arange(n)
        T[i, i, i] = -2.0 / x ** 3
        return T

    return MetricField(n, lambda x: np.diag(1.0 / x ** 2), parts, DomainGuard.positive_orthant(), "gp")


def gp_problem(n: int = 2) -> Problem:
    """Posynomial ``sum(x_i + 1/x_i)``: ``2 cosh(log x_i)`` per coordinate, rate 2 at x = 1."""

    def third(x, t):
        T = np.zeros((n, n, n))
        i = np.arange(n)
        T[i, i, i] = -6.0 / x ** 4
        return T

    f = ScalarField(n, lambda x, t: float(np.sum(x + 1.0 / x)), lambda x, t: 1.0 - 1.0 / x ** 2,
                    lambda x, t: np.diag(2.0 / x ** 3), third, DomainGuard.positive_orthant(), "posynomial")
    return Problem("gp", f, gp_metric(n), np.ones(n), 2.0, BoxSampler((0.5,) * n, (2.0,) * n),
                   params={"n": n})


# ---------------------------------------------------------------------------
# symmetric chart and SPD matrix functions


def sym_dim(n: int) -> int:
    return n * (n + 1) // 2


def sym_n(p: int) -> int:
    n = int(round((np.sqrt(8 * p + 1) - 1) / 2))
    if sym_dim(n) != p:
        raise ValueError(f"{p} is not a triangular number")
    return n


def _tril(n: int):
    return np.tril_indices(n)  # row-major lower triangle incl. diagonal


def sym_to_vec(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    r, c = _tril(X.shape[0])
    return X[r, c] * np.where(r == c, 1.0, SQRT2)


def vec_to_sym(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = sym_n(v.size)
    r, c = _tril(n)
    vals = v / np.where(r == c, 1.0, SQRT2)
    X = np.zeros((n, n))
    X[r, c] = vals
    X[c, r] = vals
    return X


def sym_basis(n: int) -> np.ndarray:
    """Orthonormal basis ``E[a]`` of symmetric matrices matching the chart."""
    r, c = _tril(n)
    E = np.zeros((r.size, n, n))
    for a, (i, j) in enumerate(zip(r, c)):
        if i == j:
            E[a, i, i] = 1.0
        else:
            E[a, i, j] = E[a, j, i] = 1.0 / SQRT2
    return E


def _eigh_spd(X) -> tuple[np.ndarray, np.ndarray]:
    X = symmetrize(np.asarray(X, dtype=float))
    w, V = np.linalg.eigh(X)
    if not np.all(np.isfinite(w)) or w[0] <= EIG_FLOOR:
        raise DomainError(f"matrix not positive definite (smallest eigenvalue {w[0]:.3e})")
    return w, V


def _spectral(V, vals):
    return symmetrize((V * vals) @ V.T)


def spd_sqrt(X):
    w, V = _eigh_spd(X)
    return _spectral(V, np.sqrt(w))


def spd_invsqrt(X):
    w, V = _eigh_spd(X)
    return _spectral(V, 1.0 / np.sqrt(w))


def spd_log(X):
    w, V = _eigh_spd(X)
    return _spectral(V, np.log(w))


def sym_exp(S):
    w, V = np.linalg.eigh(symmetrize(np.asarray(S, dtype=float)))
    return _spectral(V, np.exp(w))


def spd_inv(X):
    w, V = _eigh_spd(X)
    return _spectral(V, 1.0 / w)


def is_spd(X) -> bool:
    try:
        _eigh_spd(X)
    except DomainError:
        return False
    return True


def spd_log_pair(A, X) -> np.ndarray:
    """Principal ``log(A^{-1} X) = A^{-1/2} log(A^{-1/2} X A^{-1/2}) A^{1/2}``."""
    Ais = spd_invsqrt(A)
    _eigh_spd(X)
    return Ais @ spd_log(Ais @ X @ Ais) @ spd_sqrt(A)


def spd_geometric_mean(A, B) -> np.ndarray:
    """``A # B = A^{1/2} (A^{-1/2} B A^{-1/2})^{1/2} A^{1/2}``, the midpoint of the geodesic."""
    As, Ais = spd_sqrt(A), spd_invsqrt(A)
    return symmetrize(As @ spd_sqrt(Ais @ B @ Ais) @ As)


def random_spd(n: int, rng: np.random.Generator, lo: float = 0.5, hi: float = 2.0) -> np.ndarray:
    """Random orthogonal frame with log-uniform eigenvalues in ``[lo, hi]``."""
    Q, R = np.linalg.qr(rng.standard_normal((n, n)))
    Q = Q * np.sign(np.diag(R))
    w = lo * (hi / lo) ** rng.uniform(size=n)
    return symmetrize((Q * w) @ Q.T)


@dataclass(frozen=True)
class SpdSampler:
    n: int
    eig_lo: float = 0.5
    eig_hi: float = 2.0

    @property
    def dim(self) -> int:
        return sym_dim(self.n)

    def sample(self, count: int, seed: int) -> np.ndarray:
        rng = philox(seed)
        return np.array([sym_to_vec(random_spd(self.n, rng, self.eig_lo, self.eig_hi))
                         for _ in range(count)])

    def describe(self) -> dict:
        return {"kind": "spd", "n": self.n, "eig_lo": self.eig_lo, "eig_hi": self.eig_hi}


def spd_domain(n: int) -> DomainGuard:
    def margin(x):
        w = np.linalg.eigvalsh(vec_to_sym(x))
        return float(w[0]) if w[0] > EIG_FLOOR else 0.0

    return DomainGuard(margin=margin, description=f"X in S^{n}_+")


def pd_cone_metric(n: int) -> MetricField:
    """Chart form of ``ds^2 = tr((dX X^{-1})^2)``: ``M_ab = tr(W E_a W E_b)``, ``W = X^{-1}``."""
    E = sym_basis(n)
    p = sym_dim(n)

    def ev(x):
        WE = np.einsum("ij,ajk->aik", spd_inv(vec_to_sym(x)), E)
        return symmetrize(np.einsum("aij,bji->ab", WE, WE))

    def parts(x):
        WE = np.einsum("ij,ajk->aik", spd_inv(vec_to_sym(x)), E)
        # d/dx_c tr(W E_a W E_b) = -tr(WE_c WE_a WE_b) - tr(WE_a WE_c WE_b)
        t1 = np.einsum("cij,ajk,bki->cab", WE, WE, WE)
        T = -(t1 + t1.transpose(0, 2, 1))
        return T.reshape(p, p, p)

    return MetricField(p, ev, parts, spd_domain(n), "pd-cone")


# ---------------------------------------------------------------------------
# Karcher mean and LogDet divergence


def karcher_problem(As: Sequence) -> Problem:
    """``f(X) = 1/2 sum_i tr(log(A_i^{-1} X)^2)`` in the PD-cone metric.

    ``tr(log(A^{-1}X)^2) = ||log(A^{-1/2} X A^{-1/2})||_F^2`` because the two
    logarithms are similar; the gradient is ``sum_i log(A_i^{-1}X) X^{-1}``.
    """
    As = [symmetrize(np.asarray(A, dtype=float)) for A in As]
    if not As:
        raise ValueError("need at least one matrix")
    n = As[0].shape[0]
    if any(A.shape != (n, n) for A in As):
        raise ValueError("all matrices must have the same size")
    for A in As:
        _eigh_spd(A)
    m = len(As)
    Ais = [spd_invsqrt(A) for A in As]

    def ev(x, t):
        X = vec_to_sym(x)
        return 0.5 * sum(np.sum(spd_log(S @ X @ S) ** 2) for S in Ais)

    def grad(x, t):
        X = vec_to_sym(x)
        G = np.zeros((n, n))
        for S in Ais:
            w, V = _eigh_spd(S @ X @ S)
            G += S @ _spectral(V, np.log(w) / w) @ S
        return sym_to_vec(symmetrize(G))

    def h(x, t):
        X = vec_to_sym(x)
        return -sym_to_vec(symmetrize(sum(X @ spd_log_pair(A, X) for A in As)))

    dom = spd_domain(n)
    f = ScalarField(sym_dim(n), ev, grad, None, None, dom, f"karcher(m={m})")
    M = pd_cone_metric(n)
    flow = FlowSystem(sym_dim(n), h, None, dom, "natural-gradient", f, M, name="karcher-natgrad")
    opt = None
    if m == 1:
        opt = sym_to_vec(As[0])
    elif m == 2:
        opt = sym_to_vec(spd_geometric_mean(As[0], As[1]))
    # each 1/2 d^2(A_i, .) has unit-rate directions (diagonal in its eigenframe); for n = 2 two
    # such 2-dim subspaces of the 3-dim tangent space always intersect, so the bound m is attained
    known = float(m) if (m == 1 or (m == 2 and n == 2)) else None
    return Problem("karcher", f, M, opt, known, SpdSampler(n), flow,
                   {"m": m, "n": n}, rate_lower_bound=float(m))


def logdet_problem(A) -> Problem:
    """``d(A||X) = logdet(A^{-1}X) + tr(X^{-1}A)`` with natural-gradient flow ``-X + A``."""
    A = symmetrize(np.asarray(A, dtype=float))
    _eigh_spd(A)
    n = A.shape[0]
    p = sym_dim(n)
    E = sym_basis(n)
    a = sym_to_vec(A)
    logdetA = float(np.sum(np.log(np.linalg.eigvalsh(A))))

    def ev(x, t):
        X = vec_to_sym(x)
        w, _ = _eigh_spd(X)
        return float(np.sum(np.log(w)) - logdetA + np.trace(spd_inv(X) @ A))

    def grad(x, t):
        W = spd_inv(vec_to_sym(x))
        return sym_to_vec(W - W @ A @ W)

    def hess(x, t):
        W = spd_inv(vec_to_sym(x))
        WE = np.einsum("ij,ajk->aik", W, E)
        WA = W @ A
        H = -np.einsum("aij,bji->ab", WE, WE)
        K = np.einsum("aij,bjk,ki->ab", WE, WE, WA)
        return symmetrize(H + K + K.T)

    dom = spd_domain(n)
    f = ScalarField(p, ev, grad, hess, None, dom, "logdet-divergence")
    M = pd_cone_metric(n)
    flow = FlowSystem(p, lambda x, t: a - x, lambda x, t: -np.eye(p), dom, "natural-gradient",
                      f, M, name="logdet-natgrad")

    def solution(x0, t):
        return a + np.exp(-t) * (np.asarray(x0, float) - a)

    return Problem("logdet", f, M, a.copy(), None, SpdSampler(n), flow, {"n": n},
                   solution=solution)


# ---------------------------------------------------------------------------
# Bregman divergences


def _diag3(v):
    n = v.size
    T = np.zeros((n, n, n))
    i = np.arange(n)
    T[i, i, i] = v
    return T


def negative_entropy(n: int) -> ScalarField:
    return ScalarField(n, lambda x, t: float(np.sum(x * np.log(x))), lambda x, t: np.log(x) + 1.0,
                       lambda x, t: np.diag(1.0 / x), lambda x, t: _diag3(-1.0 / x ** 2),
                       DomainGuard.positive_orthant(), "neg-entropy")


def burg_entropy(n: int) -> ScalarField:
    return ScalarField(n, lambda x, t: float(-np.sum(np.log(x))), lambda x, t: -1.0 / x,
                       lambda x, t: np.diag(1.0 / x ** 2), lambda x, t: _diag3(-2.0 / x ** 3),
                       DomainGuard.positive_orthant(), "burg-entropy")


def half_squared_norm(n: int) -> ScalarField:
    return ScalarField(n, lambda x, t: 0.5 * float(x @ x), lambda x, t: np.array(x, float),
                       lambda x, t: np.eye(n), lambda x, t: np.zeros((n, n, n)), name="half-sq-norm")


def bregman_divergence(phi: ScalarField, p, q) -> float:
    p = phi.domain.check(p)
    q = phi.domain.check(q)
    return float(phi.eval(p, 0.0) - phi.eval(q, 0.0) - eval_gradient(phi, q) @ (p - q))


def bregman_riemannian_hessian(phi: ScalarField, p, q) -> np.ndarray:
    """Closed form ``d2phi(q) - 1/2 d3phi(q) . (p - q)`` in the Hessian metric of ``phi``."""
    p = phi.domain.check(p)
    q = phi.domain.check(q)
    H = eval_hessian(phi, q) - 0.5 * np.einsum("kij,k->ij", eval_third(phi, q), p - q)
    return symmetrize(H)


def hessian_metric(phi: ScalarField) -> MetricField:
    parts = (lambda x: eval_third(phi, x)) if phi.third is not None else None
    return MetricField(phi.dim, lambda x: eval_hessian(phi, x), parts, phi.domain, f"hess({phi.name})")


def bregman_problem(phi: ScalarField, p, pid: str = "bregman") -> Problem:
    """Minimize ``d_phi(p || q)`` over ``q`` in the metric ``d2phi``."""
    p = phi.domain.check(np.array(p, dtype=float))

    def grad(q, t):
        return -eval_hessian(phi, q) @ (p - q)

    hess = None
    if phi.third is not None:
        def hess(q, t):
            return symmetrize(eval_hessian(phi, q) - np.einsum("kij,k->ij", eval_third(phi, q), p - q))

    f = ScalarField(phi.dim, lambda q, t: bregman_divergence(phi, p, q), grad, hess, None,
                    phi.domain, f"bregman[{phi.name}]")
    return Problem(pid, f, hessian_metric(phi), p.copy(), None, None, params={"p": p.tolist()})


def _affine_pullback(f: ScalarField, L: np.ndarray, c: np.ndarray, dom: DomainGuard) -> ScalarField:
    """``g(y) = f(L y + c)`` with derivatives pulled back through ``L``."""
    lift = lambda y: L @ y + c  # noqa: E731
    grad = None if f.grad is None else (lambda y, t: L.T @ f.grad(lift(y), t))
    hess = None if f.hess is None else (lambda y, t: L.T @ f.hess(lift(y), t) @ L)
    return ScalarField(L.shape[1], lambda y, t: f.eval(lift(y), t), grad, hess, None, dom,
                       f"{f.name}|reduced")


def kl_problem(p, reduced: bool = False) -> Problem:
    """KL divergence ``sum p_i log(p_i/q_i) - p_i + q_i`` minimized over ``q``, metric ``diag(1/q)``.

    The default treats all coordinates as free on the positive orthant. With
    ``reduced`` the last coordinate is eliminated through ``q_n = 1 - sum(q_i)``
    and the metric is pulled back onto the simplex chart.
    """
    p = np.array(p, dtype=float)
    if np.any(p <= 0) or abs(p.sum() - 1.0) > 1e-12:
        raise ValueError("p must be strictly positive and sum to one")
    n = p.size
    full = bregman_problem(negative_entropy(n), p, "kl")
    if not reduced:
        return Problem("kl", full.f, full.M, p.copy(), None, SimplexSampler(n, 0.05),
                       params={"p": p.tolist(), "variant": "full"})

    L = np.vstack([np.eye(n - 1), -np.ones((1, n - 1))])
    c = np.zeros(n)
    c[-1] = 1.0
    dom = DomainGuard(margin=lambda y: float(min(np.min(y), 1.0 - np.sum(y))),
                      description="simplex chart (q_n = 1 - sum q_i)")
    f = _affine_pullback(full.f, L, c, dom)

    def ev(y):
        q = L @ y + c
        return L.T @ np.diag(1.0 / q) @ L

    def parts(y):
        q = L @ y + c
        return np.array([L.T @ np.diag(-L[:, k] / q ** 2) @ L for k in range(n - 1)])

    M = MetricField(n - 1, ev, parts, dom, "simplex-fisher")
    sampler = MappedSampler(SimplexSampler(n, 0.05), lambda q: q[:-1], n - 1, "simplex-chart")
    return Problem("kl", f, M, p[:-1].copy(), None, sampler,
                   params={"p": p.tolist(), "variant": "reduced"})


# ---------------------------------------------------------------------------
# time-varying tracking


def tracking_quadratic(c: Callable[[float], np.ndarray], c_dot: Callable[[float], np.ndarray],
                       dim: int, M: Optional[MetricField] = None, known_rate: Optional[float] = None) -> Problem:
    """``f(x, t) = 1/2 |x - c(t)|^2`` whose optimum ``x*(t) = c(t)`` moves with ``c``."""
    M = identity_metric(dim) if M is None else M
    f = ScalarField(dim, lambda x, t: 0.5 * float(np.sum((x - c(t)) ** 2)),
                    lambda x, t: x - c(t), lambda x, t: np.eye(dim),
                    lambda x, t: np.zeros((dim, dim, dim)), name="tracking-quadratic")
    return Problem("tracking-quadratic", f, M, None, known_rate,
                   BoxSampler((-2.0,) * dim, (2.0,) * dim), x_star=c, x_star_dot=c_dot)


def sinusoid_target(amplitude: float = 1.0, omega: float = 1.0, dim: int = 2):
    def c(t):
        v = np.zeros(dim)
        v[0] = amplitude * np.sin(omega * t)
        return v

    def c_dot(t):
        v = np.zeros(dim)
        v[0] = amplitude * omega * np.cos(omega * t)
        return v

    return c, c_dot


# ---------------------------------------------------------------------------
# demo models with derived solutions


def degenerate_quadratic() -> tuple[ScalarField, MetricField]:
    """``f = (x_1 - x_2)^2``: psd Hessian with nullspace ``(1, 1)``; every point of ``x_1 = x_2`` is optimal."""
    K = np.array([[2.0, -2.0], [-2.0, 2.0]])
    f = ScalarField(2, lambda x, t: float((x[0] - x[1]) ** 2), lambda x, t: K @ x,
                    lambda x, t: K, lambda x, t: np.zeros((2, 2, 2)), name="degenerate-quadratic")
    return f, identity_metric(2)


def linear_saddle(eps: float = 0.5):
    """Regularized Lagrangian ``1/2 x'Px + c'x + lam'(Bx - b) - eps/2 |lam|^2``.

    Returns ``(SaddleProblem, x*, lam*)`` with the saddle from the KKT system.
    """
    from .flows import SaddleProblem

    P = np.array([[2.0, 0.5], [0.5, 1.0]])
    c = np.array([-1.0, 0.5])
    B = np.array([[1.0, 1.0]])
    b = np.array([1.0])
    nx, nl = 2, 1

    def ev(z, t):
        x, lam = z[:nx], z[nx:]
        return float(0.5 * x @ P @ x + c @ x + lam @ (B @ x - b) - 0.5 * eps * lam @ lam)

    def grad(z, t):
        x, lam = z[:nx], z[nx:]
        return np.concatenate([P @ x + c + B.T @ lam, B @ x - b - eps * lam])

    H = np.block([[P, B.T], [B, -eps * np.eye(nl)]])
    L = ScalarField(nx + nl, ev, grad, lambda z, t: H, lambda z, t: np.zeros((3, 3, 3)),
                    name="linear-saddle")
    sol = np.linalg.solve(H, np.concatenate([-c, b]))
    Mx = constant_metric([[2.0, 0.5], [0.5, 1.0]])
    return SaddleProblem(L, Mx, identity_metric(nl)), sol[:nx], sol[nx:]


def skew_game(k: float = 2.0):
    """Two players coupled through ``B``; player 2's coupling is ``-B^T / k`` so the weighted cross terms cancel.

    Returns ``(GameProblem, nash_point)``.
    """
    from .flows import GameProblem

    P1 = np.array([[3.0, 1.0], [1.0, 2.0]])
    p2 = 1.5
    B = np.array([[1.0], [-0.5]])
    c1 = np.array([1.0, -1.0])
    c2 = np.array([0.5])

    def f1(z, t):
        x1, x2 = z[:2], z[2:]
        return float(0.5 * x1 @ P1 @ x1 + x1 @ B @ x2 - c1 @ x1)

    def f2(z, t):
        x1, x2 = z[:2], z[2:]
        return float(0.5 * p2 * x2 @ x2 - x2 @ B.T @ x1 / k - c2 @ x2)

    H1 = np.block([[P1, B], [B.T, np.zeros((1, 1))]])
    H2 = np.block([[np.zeros((2, 2)), -B / k], [-B.T / k, p2 * np.eye(1)]])
    zero3 = np.zeros((3, 3, 3))
    F1 = ScalarField(3, f1, lambda z, t: H1 @ z - np.concatenate([c1, [0.0]]), lambda z, t: H1,
                     lambda z, t: zero3, name="player1")
    F2 = ScalarField(3, f2, lambda z, t: H2 @ z - np.concatenate([[0.0, 0.0], c2]), lambda z, t: H2,
                     lambda z, t: zero3, name="player2")
    K = np.block([[P1, B], [-B.T / k, p2 * np.eye(1)]])
    nash = np.linalg.solve(K, np.concatenate([c1, c2]))
    game = GameProblem(((F1, constant_metric([[1.0, 0.2], [0.2, 0.5]])), (F2, identity_metric(1))),
                       (1.0, k))
    return game, nash


def three_stage_hierarchy(a=(0.5, -0.3, 0.8), scales=(1.0, 2.0, 0.5)):
    """Stages ``x1 -> a1``, ``x2 -> sin(x1) + a2``, ``x3 -> x1 x2 + a3`` with constant metrics.

    Returns ``(HierarchyProblem, stacked_solution)``.
    """
    from .flows import HierarchyProblem

    a1, a2, a3 = map(float, a)

    def g1(x, t):
        return np.array([x[0] - a1])

    def g2(x, t):
        r = x[1] - np.sin(x[0]) - a2
        return np.array([-np.cos(x[0]) * r, r])

    def g3(x, t):
        r = x[2] - x[0] * x[1] - a3
        return np.array([-x[1] * r, -x[0] * r, r])

    stages = (
        (ScalarField(1, lambda x, t: 0.5 * float(x[0] - a1) ** 2, g1, name="stage1"),
         identity_metric(1, scales[0])),
        (ScalarField(2, lambda x, t: 0.5 * float(x[1] - np.sin(x[0]) - a2) ** 2, g2, name="stage2"),
         identity_metric(1, scales[1])),
        (ScalarField(3, lambda x, t: 0.5 * float(x[2] - x[0] * x[1] - a3) ** 2, g3, name="stage3"),
         identity_metric(1, scales[2])),
    )
    x1 = a1
    x2 = np.sin(x1) + a2
    return HierarchyProblem(stages), np.array([x1, x2, x1 * x2 + a3])


# ---------------------------------------------------------------------------
# registry


PROBLEM_IDS = ("rosenbrock", "gp", "karcher", "logdet", "kl", "tracking-quadratic")


def get_problem(pid: str, *, n: int = 2, m: int = 2, seed: int = 0, A=None, As=None,
                p=None, reduced: bool = False, metric_scale: float = 1.0,
                amplitude: float = 1.0, omega: float = 1.0) -> Problem:
    """Build a library problem by identifier; random matrices come from the seeded generator."""
    if pid == "rosenbrock":
        return rosenbrock_problem()
    if pid == "gp":
        return gp_problem(n)
    if pid == "karcher":
        if As is None:
            rng = philox(seed)
            As = [random_spd(n, rng) for _ in range(m)]
        return karcher_problem(As)
    if pid == "logdet":
        if A is None:
            A = random_spd(n, philox(seed))
        return logdet_problem(A)
    if pid == "kl":
        return kl_problem(np.array([0.2, 0.3, 0.5]) if p is None else p, reduced=reduced)
    if pid == "tracking-quadratic":
        c, c_dot = sinusoid_target(amplitude, omega, n)
        M = identity_metric(n, metric_scale)
        return tracking_quadratic(c, c_dot, n, M, known_rate=1.0 / metric_scale)
    raise KeyError(f"unknown problem id {pid!r}; choose from {', '.join(PROBLEM_IDS)}")
