"""Riemannian quantities on ``(R^n, M(x))`` computed in coordinates.

The metric is never inverted explicitly; every ``M^{-1} v`` goes through a
Cholesky factor, which doubles as the SPD test.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .calculus import (GRAD_STEP, DomainGuard, ScalarField, central_difference, eval_gradient, eval_hessian,
                       fd_steps, metric_partials, symmetrize)
from .errors import DomainError, MetricError, NumericalError

SPD_REL_TOL = 1e-10
SYMMETRY_TOL = 1e-12


@dataclass(frozen=True)
class MetricField:
    """Symmetric positive definite field ``M(x)``; ``partials`` gives ``T[k,i,j] = dM_ij/dx_k``."""

    dim: int
    eval: Callable[[np.ndarray], np.ndarray]
    partials: Optional[Callable[[np.ndarray], np.ndarray]] = None
    domain: DomainGuard = field(default_factory=DomainGuard)
    name: str = "M"

    def __call__(self, x) -> np.ndarray:
        return metric_at(self, x)

    def scaled(self, c: float) -> "MetricField":
        """The metric ``c * M`` (same domain)."""
        if c <= 0:
            raise ValueError("metric scale must be positive")
        partials = None if self.partials is None else (lambda x: c * np.asarray(self.partials(x)))
        return MetricField(self.dim, lambda x: c * np.asarray(self.eval(x)), partials,
                           self.domain, f"{c:g}*{self.name}")


def identity_metric(n: int, scale: float = 1.0) -> MetricField:
    eye = scale * np.eye(n)
    return MetricField(n, lambda x: eye, lambda x: np.zeros((n, n, n)), name="I" if scale == 1 else f"{scale:g}I")


def constant_metric(A) -> MetricField:
    A = np.array(A, dtype=float)
    n = A.shape[0]
    spd_factor(A)
    return MetricField(n, lambda x: A, lambda x: np.zeros((n, n, n)), name="const")


def block_diag_metric(blocks: list[MetricField], weights=None) -> MetricField:
    """``BlkDiag(k_1 M_1, ..., k_r M_r)`` acting on the concatenated coordinates."""
    weights = [1.0] * len(blocks) if weights is None else [float(w) for w in weights]
    dims = [b.dim for b in blocks]
    offs = np.concatenate([[0], np.cumsum(dims)])
    n = int(offs[-1])

    def ev(x):
        out = np.zeros((n, n))
        for b, w, lo, hi in zip(blocks, weights, offs[:-1], offs[1:]):
            out[lo:hi, lo:hi] = w * metric_at(b, x[lo:hi])
        return out

    def parts(x):
        out = np.zeros((n, n, n))
        for b, w, lo, hi in zip(blocks, weights, offs[:-1], offs[1:]):
            out[lo:hi, lo:hi, lo:hi] = w * metric_partials(b, x[lo:hi])
        return out

    def margin(x):
        return min(b.domain.margin(x[lo:hi]) for b, lo, hi in zip(blocks, offs[:-1], offs[1:]))

    dom = DomainGuard(margin=margin, description=" x ".join(b.domain.description for b in blocks))
    return MetricField(n, ev, parts, dom, "blkdiag(" + ",".join(b.name for b in blocks) + ")")


# ---------------------------------------------------------------------------
# factorization helpers


def spd_factor(Mx: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor; raises ``MetricError`` if any pivot is below ``1e-10 ||M||_inf``."""
    Mx = np.asarray(Mx, dtype=float)
    if not np.all(np.isfinite(Mx)):
        raise MetricError("non-finite metric entries")
    tol = SPD_REL_TOL * np.max(np.sum(np.abs(Mx), axis=1))
    try:
        L = np.linalg.cholesky(Mx)
    except np.linalg.LinAlgError as exc:
        raise MetricError("metric is not positive definite") from exc
    if np.min(np.diag(L)) ** 2 < tol:
        raise MetricError(f"metric pivot {np.min(np.diag(L)) ** 2:.3e} below SPD tolerance {tol:.3e}")
    return L


def metric_at(M: MetricField, x) -> np.ndarray:
    x = M.domain.check(x)
    Mx = np.asarray(M.eval(x), dtype=float).reshape(M.dim, M.dim)
    scale = max(1.0, float(np.max(np.abs(Mx))))
    if np.max(np.abs(Mx - Mx.T)) > SYMMETRY_TOL * scale:
        raise MetricError("metric evaluation is not symmetric")
    return symmetrize(Mx)


def spd_solve(L: np.ndarray, b: np.ndarray) -> np.ndarray:
    # inputs are already checked finite by spd_factor and the callers
    return cho_solve((L, True), b, check_finite=False)


def pencil_eigvalsh(A: np.ndarray, L: np.ndarray) -> np.ndarray:
    """Ascending eigenvalues of the symmetric pencil ``(A, L L^T)`` via congruence."""
    Y = solve_triangular(L, A, lower=True)
    C = solve_triangular(L, Y.T, lower=True)
    return np.linalg.eigvalsh(symmetrize(C))


# ---------------------------------------------------------------------------
# Riemannian operations


def christoffel(M: MetricField, x) -> np.ndarray:
    """Second-kind symbols ``G[m, i, j]``, exactly symmetric in ``(i, j)``."""
    x = np.asarray(x, dtype=float)
    L = spd_factor(metric_at(M, x))
    T = metric_partials(M, x)
    # B[k,i,j] = dM_ik/dx_j + dM_jk/dx_i - dM_ij/dx_k
    B = T.transpose(2, 1, 0) + T.transpose(2, 0, 1) - T
    n = x.size
    G = 0.5 * spd_solve(L, B.reshape(n, n * n)).reshape(n, n, n)
    return 0.5 * (G + G.transpose(0, 2, 1))


def riemannian_hessian(f: ScalarField, M: MetricField, x, t: float = 0.0) -> np.ndarray:
    """Coordinates of the second covariant derivative: ``d2f_ij - G^k_ij df_k``."""
    g = eval_gradient(f, x, t)
    H = eval_hessian(f, x, t) - np.einsum("kij,k->ij", christoffel(M, x), g)
    return symmetrize(H)


def natural_gradient(f: ScalarField, M: MetricField, x, t: float = 0.0) -> np.ndarray:
    L = spd_factor(metric_at(M, x))
    return spd_solve(L, eval_gradient(f, x, t))


def gconvexity_rate(f: ScalarField, M: MetricField, x, t: float = 0.0) -> float:
    """Largest ``alpha`` with ``H(x) >= alpha M(x)``."""
    L = spd_factor(metric_at(M, x))
    return float(pencil_eigvalsh(riemannian_hessian(f, M, x, t), L)[0])


def differential_length(M: MetricField, x, dx) -> float:
    dx = np.asarray(dx, dtype=float)
    Mx = metric_at(M, x)
    spd_factor(Mx)
    return float(np.sqrt(max(0.0, dx @ Mx @ dx)))


# ---------------------------------------------------------------------------
# geodesic distance


@dataclass(frozen=True)
class GeoCfg:
    n_segments: int = 64
    tol: float = 1e-9
    max_sweeps: int = 10_000


@dataclass
class GeodesicResult:
    length: float
    energy: float
    path: np.ndarray
    sweeps: int
    grad_norm: float
    converged: bool
    note: str = "upper-bound estimate"


def _segment_terms(M: MetricField, X: np.ndarray, second: bool):
    D = np.diff(X, axis=0)
    mids = 0.5 * (X[:-1] + X[1:])
    Ms = np.array([metric_at(M, m) for m in mids])
    Ts = np.array([metric_partials(M, m) for m in mids])
    S = None
    if second:
        # S[s, l, k, i, j] = d^2 M_ij / dx_l dx_k at each midpoint
        S = np.array([central_difference(lambda y: metric_partials(M, y), m,
                                         fd_steps(m, GRAD_STEP, M.domain.margin(m))) for m in mids])
    MD = np.einsum("sij,sj->si", Ms, D)
    e = np.einsum("si,si->s", D, MD)
    q = np.einsum("si,skij,sj->sk", D, Ts, D)
    return D, Ms, Ts, S, MD, e, q


def _energy(M: MetricField, X: np.ndarray) -> float:
    D = np.diff(X, axis=0)
    mids = 0.5 * (X[:-1] + X[1:])
    return float(sum(d @ metric_at(M, m) @ d for d, m in zip(D, mids)))


def _energy_hessian(D, Ms, Ts, S, newton: bool) -> np.ndarray:
    """Banded Hessian of the discrete energy over interior nodes (dense storage)."""
    N, n = D.shape
    m = N - 1
    K = np.zeros((m * n, m * n))
    for s in range(N):
        EDD = 2.0 * Ms[s]
        if newton:
            EDm = 2.0 * np.einsum("kij,j->ik", Ts[s], D[s])
            Emm = np.einsum("i,lkij,j->kl", D[s], S[s], D[s])
        # segment s joins node s (D-coefficient -1) and node s+1 (+1); both enter the midpoint with 1/2
        ends = [(s - 1, -1.0), (s, 1.0)]  # interior indices are node - 1
        for ia, ca in ends:
            if not 0 <= ia < m:
                continue
            for ib, cb in ends:
                if not 0 <= ib < m:
                    continue
                blk = ca * cb * EDD
                if newton:
                    blk = blk + 0.5 * ca * EDm + 0.5 * cb * EDm.T + 0.25 * Emm
                K[ia * n:(ia + 1) * n, ib * n:(ib + 1) * n] += blk
    return 0.5 * (K + K.T)


def _length(e: np.ndarray) -> float:
    return float(np.sum(np.sqrt(np.maximum(e, 0.0))))


def geodesic_path(M: MetricField, a, b, cfg: GeoCfg = GeoCfg(), init=None) -> GeodesicResult:
    """Minimize the discrete path energy ``sum_s D_s^T M(mid_s) D_s`` over interior nodes.

    Each sweep takes a Newton step on the banded energy Hessian (metric second
    partials by differencing the first partials), regularized by a multiple of
    the metric-weighted Laplacian whenever that model is not positive definite,
    then backtracks until the energy decreases with every node in the domain.
    ``init`` is an optional starting path of ``n_segments + 1`` nodes; its
    ends are shifted onto ``a`` and ``b``.
    """
    a = M.domain.check(a)
    b = M.domain.check(b)
    N = int(cfg.n_segments)
    s = np.linspace(0.0, 1.0, N + 1)[:, None]
    X = (1 - s) * a + s * b
    for node in X:
        if not M.domain.contains(node):
            raise DomainError("straight path between endpoints leaves the domain")
    if init is None and N >= 16 and N % 2 == 0:
        # coarse-to-fine: solve on half the segments, then insert midpoints
        coarse = geodesic_path(M, a, b, GeoCfg(N // 2, max(cfg.tol, 1e-6), cfg.max_sweeps)).path
        init = np.empty_like(X)
        init[::2] = coarse
        init[1::2] = 0.5 * (coarse[:-1] + coarse[1:])
    if init is not None:
        P = np.array(init, dtype=float)
        if P.shape == X.shape:
            P = P + (1 - s) * (a - P[0]) + s * (b - P[-1])
            if all(M.domain.contains(p) for p in P):
                X = P

    gnorm = 0.0
    mu = 0.0
    for sweep in range(cfg.max_sweeps + 1):
        D, Ms, Ts, S, MD, e, q = _segment_terms(M, X, second=N >= 2)
        E = float(np.sum(e))
        if N < 2:
            return GeodesicResult(_length(e), E, X, sweep, 0.0, True)
        # node j in 1..N-1 ends segment j-1 and starts segment j
        g = 2.0 * MD[:-1] + 0.5 * q[:-1] - 2.0 * MD[1:] + 0.5 * q[1:]
        scale = 1.0 + float(np.max(np.abs(2.0 * MD)))
        gnorm = float(np.max(np.abs(g))) / scale
        if gnorm <= cfg.tol:
            return GeodesicResult(_length(e), E, X, sweep, gnorm, True)
        if sweep == cfg.max_sweeps:
            break
        rhs = g.ravel()
        K_newton = _energy_hessian(D, Ms, Ts, S, True)
        K_lap = _energy_hessian(D, Ms, Ts, S, False)
        while True:
            try:
                Lk = np.linalg.cholesky(K_newton + mu * K_lap)
                break
            except np.linalg.LinAlgError:
                mu = max(4.0 * mu, 1e-3)
        step = -cho_solve((Lk, True), rhs).reshape(N - 1, -1)
        slope = float(np.sum(g * step))
        lam = 1.0
        moved = False
        for _ in range(40):
            Xn = X.copy()
            Xn[1:-1] += lam * step
            if all(M.domain.contains(p) for p in Xn[1:-1]):
                En = _energy(M, Xn)
                if En <= E + 1e-4 * lam * slope:
                    X, moved = Xn, True
                    break
            lam *= 0.5
        # Levenberg-style damping: relax after full steps, stiffen after cut-back ones
        mu = mu / 4.0 if lam == 1.0 else max(4.0 * mu, 1e-3)
        if mu < 1e-8:
            mu = 0.0
        if not moved:
            # stalled at round-off level
            if gnorm <= 1e3 * cfg.tol:
                return GeodesicResult(_length(e), E, X, sweep, gnorm, True)
            raise NumericalError(f"geodesic line search stalled (sweep {sweep}, "
                                 f"relative gradient {gnorm:.3e}, energy {E:.6e})")
    raise NumericalError(f"geodesic solve did not converge in {cfg.max_sweeps} sweeps "
                         f"(relative gradient {gnorm:.3e})")


def geodesic_distance(M: MetricField, a, b, cfg: GeoCfg = GeoCfg()) -> float:
    """Length of the optimized discrete path; an upper-bound estimate of ``d_M(a, b)``."""
    return geodesic_path(M, a, b, cfg).length
