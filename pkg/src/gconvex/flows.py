"""Time integration of natural-gradient flows and their combinations.

All flows are integrated in coordinates with an explicit Runge-Kutta scheme
(Dormand-Prince 5(4) by default, classical RK4 for order checks). Steps whose
stages leave the open domain are retried at half size.
"""
from __future__ import annotations

import csv
import io
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .calculus import DomainGuard, ScalarField, eval_gradient, eval_hessian, metric_partials, restrict
from .contraction import (FlowSystem, contraction_rate, intersect_domains, jacobian,
                          natural_gradient_system, robustness_ball)
from .errors import DomainError, ModelError, NumericalError
from .geometry import (GeoCfg, MetricField, block_diag_metric, gconvexity_rate, geodesic_path,
                       metric_at, spd_factor, spd_solve)

EQUILIBRIUM_TOL = 1e-12


@dataclass(frozen=True)
class IntegratorCfg:
    method: str = "rk45"  # "rk45" (adaptive) or "rk4" (fixed step dt_init)
    rel_tol: float = 1e-8
    abs_tol: float = 1e-10
    dt_init: float = 1e-3
    dt_max: float = 0.1
    dt_min: float = 1e-12
    t_end: float = 1.0
    t_start: float = 0.0
    domain_policy: str = "reject-and-halve"  # or "error"
    max_steps: int = 1_000_000
    stop_at_equilibrium: bool = True

    def __post_init__(self):
        if self.method not in ("rk45", "rk4"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.domain_policy not in ("reject-and-halve", "error"):
            raise ValueError(f"unknown domain policy {self.domain_policy!r}")
        if not (0 < self.dt_min <= self.dt_init <= self.dt_max):
            raise ValueError("need 0 < dt_min <= dt_init <= dt_max")
        if self.rel_tol <= 0 or self.abs_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.t_end <= self.t_start:
            raise ValueError("t_end must exceed t_start")


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    f: Optional[np.ndarray] = None
    V: Optional[np.ndarray] = None
    alpha_local: Optional[np.ndarray] = None
    s: Optional[np.ndarray] = None
    metadata: dict = field(default_factory=dict)

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def columns(self) -> list[str]:
        return (["t"] + [f"x_{i + 1}" for i in range(self.states.shape[1])]
                + ["f", "V", "alpha_local", "s_dM"])

    def rows(self):
        def cell(arr, k):
            return "" if arr is None else fmt_float(arr[k])

        for k, t in enumerate(self.times):
            yield ([fmt_float(t)] + [fmt_float(v) for v in self.states[k]]
                   + [cell(self.f, k), cell(self.V, k), cell(self.alpha_local, k), cell(self.s, k)])

    def to_csv(self, target=None) -> str:
        """Write the trace (header row first); returns the CSV text."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns())
        w.writerows(self.rows())
        text = buf.getvalue()
        if target is not None:
            if hasattr(target, "write"):
                target.write(text)
            else:
                with open(target, "w", newline="") as fh:
                    fh.write(text)
        return text


def fmt_float(v) -> str:
    v = float(v)
    if math.isnan(v) or math.isinf(v):
        return ""
    return format(v, ".17g")


# ---------------------------------------------------------------------------
# integrators

_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_DP_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_DP_B5 = np.array(_DP_A[6] + [0.0])
_DP_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_DP_E = _DP_B5 - _DP_B4


def _dp_step(fun, t, y, k1, dt):
    K = [k1]
    for i in range(1, 7):
        yi = y + dt * sum(a * k for a, k in zip(_DP_A[i], K) if a != 0.0)
        K.append(fun(yi, t + _DP_C[i] * dt))
    y_new = y + dt * sum(b * k for b, k in zip(_DP_B5, K) if b != 0.0)
    err = dt * sum(e * k for e, k in zip(_DP_E, K) if e != 0.0)
    # K[6] was evaluated at y + dt * B5 . K == y_new (first-same-as-last)
    return y_new, err, K[6]


def _rk4_step(fun, t, y, dt):
    k1 = fun(y, t)
    k2 = fun(y + 0.5 * dt * k1, t + 0.5 * dt)
    k3 = fun(y + 0.5 * dt * k2, t + 0.5 * dt)
    k4 = fun(y + dt * k3, t + dt)
    return y + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def _rk4_guarded(fun, dom, t, y, dt, cfg):
    try:
        y_new = _rk4_step(fun, t, y, dt)
        dom.check(y_new)
        return y_new
    except DomainError:
        if cfg.domain_policy == "error" or dt / 2 < cfg.dt_min:
            raise DomainError(f"domain escape at t={t:.6g}: step underflow below dt_min") from None
        y_half = _rk4_guarded(fun, dom, t, y, dt / 2, cfg)
        return _rk4_guarded(fun, dom, t + dt / 2, y_half, dt / 2, cfg)


def _at_equilibrium(v, y) -> bool:
    return float(np.linalg.norm(v)) < EQUILIBRIUM_TOL * (1.0 + float(np.linalg.norm(y)))


def integrate_raw(sys: FlowSystem, x0, cfg: IntegratorCfg) -> tuple[np.ndarray, np.ndarray, dict]:
    """Integrate ``xdot = h(x, t)``; returns (times, states, info)."""
    fun = sys.__call__
    y = sys.domain.check(np.array(x0, dtype=float))
    t = cfg.t_start
    times, states = [t], [y.copy()]
    info = {"rejected_domain": 0, "rejected_error": 0, "stopped_at_equilibrium": False}
    stop_eq = cfg.stop_at_equilibrium and sys.autonomous

    if cfg.method == "rk4":
        n_steps = max(1, int(math.ceil((cfg.t_end - t) / cfg.dt_init - 1e-9)))
        if n_steps > cfg.max_steps:
            raise NumericalError("step-count cap exceeded")
        dt = (cfg.t_end - t) / n_steps
        for k in range(n_steps):
            y = _rk4_guarded(fun, sys.domain, t, y, dt, cfg)
            t = cfg.t_start + (k + 1) * dt
            times.append(t)
            states.append(y.copy())
            if stop_eq and _at_equilibrium(fun(y, t), y):
                info["stopped_at_equilibrium"] = True
                break
        return np.array(times), np.array(states), info

    k1 = fun(y, t)
    dt = cfg.dt_init
    steps = 0
    while cfg.t_end - t > 1e-14 * max(1.0, abs(cfg.t_end)):
        if stop_eq and _at_equilibrium(k1, y):
            info["stopped_at_equilibrium"] = True
            break
        if steps >= cfg.max_steps:
            raise NumericalError(f"step-count cap exceeded at t={t:.6g}")
        dt = min(dt, cfg.dt_max, cfg.t_end - t)
        try:
            y_new, err, k_new = _dp_step(fun, t, y, k1, dt)
        except DomainError:
            if cfg.domain_policy == "error":
                raise
            info["rejected_domain"] += 1
            dt *= 0.5
            if dt < cfg.dt_min:
                raise DomainError(f"domain escape at t={t:.6g}: step underflow below dt_min") from None
            continue
        scale = cfg.abs_tol + cfg.rel_tol * np.maximum(np.abs(y), np.abs(y_new))
        err_norm = float(np.sqrt(np.mean((err / scale) ** 2)))
        if err_norm <= 1.0:
            t = t + dt
            y, k1 = y_new, k_new
            times.append(t)
            states.append(y.copy())
            steps += 1
            factor = 5.0 if err_norm == 0 else min(5.0, max(0.2, 0.9 * err_norm ** -0.2))
            dt *= factor
        else:
            info["rejected_error"] += 1
            dt *= max(0.2, 0.9 * err_norm ** -0.2)
            if dt < cfg.dt_min:
                raise NumericalError(f"step size underflow at t={t:.6g}")
    return np.array(times), np.array(states), info


def attach_diagnostics(traj: Trajectory, sys: FlowSystem, M: Optional[MetricField] = None,
                       f: Optional[ScalarField] = None, alpha: bool = False) -> Trajectory:
    """Fill ``f``, ``V = h^T M h`` and optionally the local contraction rate per recorded step."""
    f = f if f is not None else sys.objective
    M = M if M is not None else sys.metric
    if f is not None:
        traj.f = np.array([f.eval(x, t) for t, x in zip(traj.times, traj.states)])
    if M is not None:
        vals = []
        for t, x in zip(traj.times, traj.states):
            v = sys(x, t)
            vals.append(float(v @ metric_at(M, x) @ v))
        traj.V = np.array(vals)
        if alpha:
            traj.alpha_local = np.array([contraction_rate(sys, M, x, t)
                                         for t, x in zip(traj.times, traj.states)])
    return traj


def integrate(sys: FlowSystem, x0, cfg: IntegratorCfg = IntegratorCfg(), *,
              metric: Optional[MetricField] = None, alpha: bool = False,
              diagnostics: bool = True) -> Trajectory:
    times, states, info = integrate_raw(sys, x0, cfg)
    traj = Trajectory(times, states, metadata={"flow": sys.name, "provenance": sys.provenance,
                                               "method": cfg.method, **info})
    if diagnostics:
        attach_diagnostics(traj, sys, metric, alpha=alpha)
    return traj


def natural_gradient_flow(f: ScalarField, M: MetricField, x0, cfg: IntegratorCfg = IntegratorCfg(),
                          autonomous: bool = True, alpha: bool = False) -> Trajectory:
    return integrate(natural_gradient_system(f, M, autonomous), x0, cfg, alpha=alpha)


# ---------------------------------------------------------------------------
# rate fitting


def fit_decay_rate(times, values, window: Optional[tuple] = None) -> float:
    """Least-squares exponent ``r`` of ``values ~ C exp(-r t)`` over ``window``.

    The default window is the second half of the recorded time span.
    """
    times = np.asarray(times, float)
    values = np.asarray(values, float)
    if window is None:
        window = (times[0] + 0.5 * (times[-1] - times[0]), times[-1])
    sel = (times >= window[0]) & (times <= window[1]) & (values > 0)
    if np.count_nonzero(sel) < 3:
        raise NumericalError("too few positive samples in the fitting window")
    slope = np.polyfit(times[sel], np.log(values[sel]), 1)[0]
    return float(-slope)


# ---------------------------------------------------------------------------
# differential displacements


def variational_system(sys: FlowSystem) -> FlowSystem:
    """Augmented system for ``(x, dx)`` with ``d/dt dx = A(x, t) dx``."""
    n = sys.dim

    def h(y, t):
        x, dx = y[:n], y[n:]
        return np.concatenate([sys(x, t), jacobian(sys, x, t) @ dx])

    dom = DomainGuard(margin=lambda y: sys.domain.margin(y[:n]),
                      contains_fn=lambda y: sys.domain.contains(y[:n]) and bool(np.all(np.isfinite(y))),
                      description=sys.domain.description)
    return FlowSystem(2 * n, h, None, dom, sys.provenance, None, None, sys.autonomous,
                      f"variational({sys.name})")


def variational_pair(sys: FlowSystem, M: MetricField, x0, dx0, cfg: IntegratorCfg = IntegratorCfg()) -> Trajectory:
    """Co-integrate a trajectory and a differential displacement; ``s(t) = sqrt(dx^T M dx)``."""
    n = sys.dim
    y0 = np.concatenate([np.asarray(x0, float), np.asarray(dx0, float)])
    times, ys, info = integrate_raw(variational_system(sys), y0, cfg)
    traj = Trajectory(times, ys[:, :n], metadata={"flow": sys.name, "provenance": sys.provenance,
                                                  "method": cfg.method, **info})
    traj.metadata["dx"] = ys[:, n:]
    traj.s = np.array([math.sqrt(max(0.0, float(d @ metric_at(M, x) @ d)))
                       for x, d in zip(ys[:, :n], ys[:, n:])])
    attach_diagnostics(traj, sys, M)
    return traj


def stacked_system(sys: FlowSystem, copies: int) -> FlowSystem:
    """``copies`` independent copies of ``sys`` integrated on a shared time grid."""
    n = sys.dim

    def h(y, t):
        return np.concatenate([sys(y[i * n:(i + 1) * n], t) for i in range(copies)])

    dom = DomainGuard(margin=lambda y: min(sys.domain.margin(y[i * n:(i + 1) * n]) for i in range(copies)),
                      contains_fn=lambda y: all(sys.domain.contains(y[i * n:(i + 1) * n]) for i in range(copies)),
                      description=sys.domain.description)
    return FlowSystem(copies * n, h, None, dom, sys.provenance, None, None, sys.autonomous,
                      f"{copies}x{sys.name}")


def pair_distance_history(sys: FlowSystem, M: MetricField, xa, xb, cfg: IntegratorCfg = IntegratorCfg(),
                          geo: GeoCfg = GeoCfg()) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Geodesic-distance estimates between two trajectories at every recorded time.

    Returns ``(times, distances, states)``; each geodesic solve is warm-started
    from the previous path.
    """
    n = sys.dim
    y0 = np.concatenate([np.asarray(xa, float), np.asarray(xb, float)])
    times, ys, _ = integrate_raw(stacked_system(sys, 2), y0, cfg)
    d, path = [], None
    for y in ys:
        res = geodesic_path(M, y[:n], y[n:], geo, init=path)
        d.append(res.length)
        path = res.path
    return times, np.array(d), ys


# ---------------------------------------------------------------------------
# primal-dual saddle dynamics


@dataclass(frozen=True)
class SaddleProblem:
    """``L(x, lam, t)`` over the concatenated coordinates ``z = (x, lam)``."""

    L: ScalarField
    Mx: MetricField
    Ml: MetricField

    @property
    def n_x(self) -> int:
        return self.Mx.dim

    @property
    def n_l(self) -> int:
        return self.Ml.dim

    def metric(self) -> MetricField:
        return block_diag_metric([self.Mx, self.Ml])

    def system(self, autonomous: bool = True) -> FlowSystem:
        nx = self.n_x

        def h(z, t):
            g = eval_gradient(self.L, z, t)
            vx = spd_solve(spd_factor(metric_at(self.Mx, z[:nx])), g[:nx])
            vl = spd_solve(spd_factor(metric_at(self.Ml, z[nx:])), g[nx:])
            return np.concatenate([-vx, vl])

        def block_jac(Mb, y, g_b, H_b, offset):
            # d(M^{-1} g)/dz_k = M^{-1} (H[:, k] - [k in block] dM/dy_k M^{-1} g)
            L = spd_factor(metric_at(Mb, y))
            v = spd_solve(L, g_b)
            R = H_b.copy()
            R[:, offset:offset + y.size] -= np.einsum("kij,j->ik", metric_partials(Mb, y), v)
            return spd_solve(L, R)

        def jac(z, t):
            g = eval_gradient(self.L, z, t)
            H = eval_hessian(self.L, z, t)
            Jx = block_jac(self.Mx, z[:nx], g[:nx], H[:nx], 0)
            Jl = block_jac(self.Ml, z[nx:], g[nx:], H[nx:], nx)
            return np.vstack([-Jx, Jl])

        dom = intersect_domains(self.L.domain, self.metric().domain)
        return FlowSystem(nx + self.n_l, h, jac if self.L.hess is not None else None, dom,
                          "primal-dual", autonomous=autonomous, name="primal-dual")

    def saddle_rates(self, z, t: float = 0.0) -> tuple[float, float]:
        """g-convexity rate of ``L`` in ``x`` and of ``-L`` in ``lam`` at ``z``."""
        z = np.asarray(z, float)
        nx = self.n_x
        Lx = restrict(self.L, z, np.arange(nx))
        neg = ScalarField(self.L.dim, lambda y, s: -self.L.eval(y, s),
                          None if self.L.grad is None else (lambda y, s: -np.asarray(self.L.grad(y, s))),
                          None if self.L.hess is None else (lambda y, s: -np.asarray(self.L.hess(y, s))),
                          None, self.L.domain)
        Ll = restrict(neg, z, np.arange(nx, nx + self.n_l))
        return (gconvexity_rate(Lx, self.Mx, z[:nx], t), gconvexity_rate(Ll, self.Ml, z[nx:], t))

    def check(self, points, t: float = 0.0) -> None:
        for z in points:
            rx, rl = self.saddle_rates(z, t)
            if rx <= 0 or rl <= 0:
                raise ModelError(f"L is not g-strongly convex-concave at {np.asarray(z).tolist()} "
                                 f"(rates {rx:.3g}, {rl:.3g})")


def primal_dual_flow(sp: SaddleProblem, x0, l0, cfg: IntegratorCfg = IntegratorCfg()) -> Trajectory:
    z0 = np.concatenate([np.atleast_1d(np.asarray(x0, float)), np.atleast_1d(np.asarray(l0, float))])
    sys = sp.system()
    traj = integrate(sys, z0, cfg, metric=sp.metric(), diagnostics=False)
    traj.f = np.array([sp.L.eval(z, t) for t, z in zip(traj.times, traj.states)])
    attach_diagnostics(traj, sys, sp.metric(), f=sp.L)
    return traj


# ---------------------------------------------------------------------------
# games


@dataclass(frozen=True)
class GameProblem:
    """Players ``(f_i, M_i)``; each ``f_i`` sees the full state, ``M_i`` acts on block ``i``."""

    players: tuple
    k: tuple = ()

    @property
    def dims(self) -> list[int]:
        return [M.dim for _, M in self.players]

    @property
    def weights(self) -> list[float]:
        k = list(self.k) if self.k else [1.0] * len(self.players)
        if len(k) != len(self.players) or any(v <= 0 for v in k) or k[0] != 1.0:
            raise ModelError("scalings k_i must be positive with k_1 = 1")
        return k

    def blocks(self) -> list[np.ndarray]:
        offs = np.concatenate([[0], np.cumsum(self.dims)])
        return [np.arange(lo, hi) for lo, hi in zip(offs[:-1], offs[1:])]

    def metric(self) -> MetricField:
        return block_diag_metric([M for _, M in self.players], self.weights)

    def system(self) -> FlowSystem:
        blocks = self.blocks()

        def h(x, t):
            out = []
            for (f, M), b in zip(self.players, blocks):
                g = eval_gradient(f, x, t)[b]
                out.append(-spd_solve(spd_factor(metric_at(M, x[b])), g))
            return np.concatenate(out)

        dom = intersect_domains(*[f.domain for f, _ in self.players], self.metric().domain)
        return FlowSystem(int(sum(self.dims)), h, None, dom, "game", name="game")

    def skew_residual(self, x, t: float = 0.0) -> float:
        """``max_{i<j} |k_i d2f_i/dx_i dx_j + k_j (d2f_j/dx_j dx_i)^T|``."""
        blocks, k = self.blocks(), self.weights
        hs = [eval_hessian(f, x, t) for f, _ in self.players]
        worst = 0.0
        for i in range(len(blocks)):
            for j in range(i + 1, len(blocks)):
                C = k[i] * hs[i][np.ix_(blocks[i], blocks[j])] + k[j] * hs[j][np.ix_(blocks[j], blocks[i])].T
                worst = max(worst, float(np.max(np.abs(C))))
        return worst

    def nash_residuals(self, x, t: float = 0.0) -> list[float]:
        return [float(np.linalg.norm(eval_gradient(f, x, t)[b]))
                for (f, _), b in zip(self.players, self.blocks())]


def game_flow(gp: GameProblem, x0s: Sequence, cfg: IntegratorCfg = IntegratorCfg(),
              skew_tol: float = 1e-6) -> Trajectory:
    x0 = np.concatenate([np.atleast_1d(np.asarray(v, float)) for v in x0s])
    res = gp.skew_residual(x0)
    if res > skew_tol:
        raise ModelError(f"scaled skew-symmetry violated: residual {res:.3e} > {skew_tol:.1e}")
    sys = gp.system()
    traj = integrate(sys, x0, cfg, metric=gp.metric())
    traj.metadata["skew_residual"] = res
    traj.metadata["nash_residuals"] = gp.nash_residuals(traj.final, traj.times[-1])
    return traj


# ---------------------------------------------------------------------------
# hierarchies


@dataclass(frozen=True)
class HierarchyProblem:
    """Stages ``(f_i, M_i)``; ``f_i`` takes the concatenation ``(x_1, ..., x_i)``."""

    stages: tuple

    @property
    def dims(self) -> list[int]:
        return [M.dim for _, M in self.stages]

    def blocks(self) -> list[np.ndarray]:
        offs = np.concatenate([[0], np.cumsum(self.dims)])
        return [np.arange(lo, hi) for lo, hi in zip(offs[:-1], offs[1:])]

    def validate(self) -> None:
        total = 0
        for f, M in self.stages:
            total += M.dim
            if f.dim != total:
                raise ModelError("stage objective must depend on exactly the preceding blocks and its own")

    def metric(self) -> MetricField:
        return block_diag_metric([M for _, M in self.stages])

    def system(self) -> FlowSystem:
        self.validate()
        blocks = self.blocks()

        def h(x, t):
            out = []
            for (f, M), b in zip(self.stages, blocks):
                prefix = x[:b[-1] + 1]
                g = eval_gradient(f, prefix, t)[b]
                out.append(-spd_solve(spd_factor(metric_at(M, x[b])), g))
            return np.concatenate(out)

        return FlowSystem(int(sum(self.dims)), h, None, self.metric().domain, "hierarchical",
                          name="hierarchy")

    def stage_rates(self, x, t: float = 0.0) -> list[float]:
        rates = []
        for (f, M), b in zip(self.stages, self.blocks()):
            prefix = np.asarray(x, float)[:b[-1] + 1]
            rates.append(gconvexity_rate(restrict(f, prefix, b), M, prefix[b], t))
        return rates

    def stationarity(self, x, t: float = 0.0) -> list[float]:
        return [float(np.linalg.norm(eval_gradient(f, np.asarray(x, float)[:b[-1] + 1], t)[b]))
                for (f, _), b in zip(self.stages, self.blocks())]

    def coupling_norm(self, x, t: float = 0.0) -> float:
        """Largest spectral norm of the off-diagonal Jacobian blocks ``dh_i/dx_j``, ``j < i``."""
        A = jacobian(self.system(), x, t)
        blocks = self.blocks()
        worst = 0.0
        for i, bi in enumerate(blocks):
            for bj in blocks[:i]:
                worst = max(worst, float(np.linalg.norm(A[np.ix_(bi, bj)], 2)))
        return worst


def hierarchical_flow(hp: HierarchyProblem, x0s: Sequence, cfg: IntegratorCfg = IntegratorCfg(),
                      coupling_bound: Optional[float] = None) -> Trajectory:
    x0 = np.concatenate([np.atleast_1d(np.asarray(v, float)) for v in x0s])
    rates = hp.stage_rates(x0)
    if min(rates) <= 0:
        raise ModelError(f"stage not strongly g-convex at x0 (rates {rates})")
    sys = hp.system()
    traj = integrate(sys, x0, cfg, metric=hp.metric())
    idx = np.unique(np.linspace(0, len(traj.times) - 1, min(len(traj.times), 20)).astype(int))
    coupling = max(hp.coupling_norm(traj.states[k], traj.times[k]) for k in idx)
    if coupling_bound is not None and coupling > coupling_bound:
        warnings.warn(f"coupling Jacobian norm {coupling:.3g} exceeds bound {coupling_bound:.3g}",
                      RuntimeWarning, stacklevel=2)
    traj.metadata.update(stage_rates_x0=rates, coupling_norm=coupling,
                         stationarity=hp.stationarity(traj.final, traj.times[-1]))
    return traj


# ---------------------------------------------------------------------------
# learning-rate modulation


@dataclass(frozen=True)
class RateModulator:
    p: Callable[[np.ndarray, float], float]
    p_min: float
    autonomous: bool = False

    def __call__(self, x, t) -> float:
        v = float(self.p(x, t))
        if not v >= self.p_min:
            raise ModelError(f"modulation p={v:.6g} below declared p_min={self.p_min:.6g} at t={t:.6g}")
        return v


def modulated_system(f: ScalarField, M: MetricField, mod: RateModulator) -> FlowSystem:
    if mod.p_min <= 0:
        raise ModelError("p_min must be positive")
    base = natural_gradient_system(f, M)
    return FlowSystem(f.dim, lambda x, t: mod(x, t) * base.h(x, t), None, base.domain, "modulated",
                      f, M, mod.autonomous, f"modulated({base.name})")


def modulated_flow(f: ScalarField, M: MetricField, mod: RateModulator, x0,
                   cfg: IntegratorCfg = IntegratorCfg()) -> Trajectory:
    """``xdot = -p(x, t) M^{-1} df``; guaranteed rate is ``alpha * p_min``."""
    return integrate(modulated_system(f, M, mod), x0, cfg)


# ---------------------------------------------------------------------------
# path families


@dataclass
class FamilyResult:
    endpoints: np.ndarray
    f_values: np.ndarray
    grad_norms: np.ndarray
    t_end: float
    trajectories: list = field(default_factory=list, repr=False)

    @property
    def max_grad_norm(self) -> float:
        return float(np.max(self.grad_norms))

    @property
    def f_spread(self) -> float:
        return float(np.max(self.f_values) - np.min(self.f_values))

    def to_dict(self) -> dict:
        return {
            "n_nodes": int(len(self.endpoints)),
            "t_end": self.t_end,
            "max_grad_norm": self.max_grad_norm,
            "f_spread": self.f_spread,
            "f_values": self.f_values.tolist(),
            "grad_norms": self.grad_norms.tolist(),
            "endpoints": self.endpoints.tolist(),
        }


def straight_path(a, b, nodes: int) -> np.ndarray:
    s = np.linspace(0.0, 1.0, nodes)[:, None]
    return (1 - s) * np.asarray(a, float) + s * np.asarray(b, float)


def path_family_flow(f: ScalarField, M: MetricField, path0: Sequence, cfg: IntegratorCfg = IntegratorCfg(),
                     workers: int = 1) -> FamilyResult:
    """Flow every node of a discretized path and summarize the family at ``t_end``."""
    sys = natural_gradient_system(f, M)
    nodes = [sys.domain.check(np.asarray(p, float)) for p in path0]

    def run(x0):
        return integrate(sys, x0, cfg, diagnostics=False)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            trajs = list(pool.map(run, nodes))
    else:
        trajs = [run(x) for x in nodes]
    ends = np.array([tr.final for tr in trajs])
    t_end = [tr.times[-1] for tr in trajs]
    fv = np.array([f.eval(x, t) for x, t in zip(ends, t_end)])
    gn = np.array([np.linalg.norm(eval_gradient(f, x, t)) for x, t in zip(ends, t_end)])
    return FamilyResult(ends, fv, gn, cfg.t_end, trajs)


# ---------------------------------------------------------------------------
# tracking a moving optimum


@dataclass
class TrackingReport:
    tail_error: float
    R: float
    alpha: float
    bound: float
    tail_start: float
    n_tail: int
    estimator: str = "geodesic_distance (upper-bound estimate)"

    @property
    def within_bound(self) -> bool:
        return self.tail_error <= self.bound

    def to_dict(self) -> dict:
        return {"tail_error": self.tail_error, "R": self.R, "alpha": self.alpha, "bound": self.bound,
                "within_bound": self.within_bound, "tail_start": self.tail_start,
                "n_tail": self.n_tail, "estimator": self.estimator}


def tracking_flow(f: ScalarField, M: MetricField, x0, cfg: IntegratorCfg,
                  x_star: Callable[[float], np.ndarray], x_star_dot: Callable[[float], np.ndarray],
                  rate: Optional[float] = None, tail_start: Optional[float] = None,
                  geo: GeoCfg = GeoCfg()) -> tuple[Trajectory, TrackingReport]:
    """Integrate the time-varying natural-gradient flow and compare the tail error with ``R / alpha``.

    ``R`` is the largest metric speed of the optimum seen along the run and
    ``alpha`` the smallest g-convexity rate along it unless ``rate`` is given.
    """
    sys = natural_gradient_system(f, M, autonomous=False)
    traj = integrate(sys, x0, cfg, alpha=False)
    R = max(math.sqrt(max(0.0, float(x_star_dot(t) @ metric_at(M, x) @ x_star_dot(t))))
            for t, x in zip(traj.times, traj.states))
    alpha = rate if rate is not None else min(gconvexity_rate(f, M, x, t)
                                              for t, x in zip(traj.times, traj.states))
    bound = robustness_ball(alpha, R)
    t0 = cfg.t_start + 0.5 * (cfg.t_end - cfg.t_start) if tail_start is None else tail_start
    errs, path = [], None
    s_col = np.full(len(traj.times), np.nan)
    for k, (t, x) in enumerate(zip(traj.times, traj.states)):
        if t < t0:
            continue
        res = geodesic_path(M, x, x_star(t), geo, init=path)
        path = res.path
        errs.append(res.length)
        s_col[k] = res.length
    traj.s = s_col
    traj.metadata["s_meaning"] = "geodesic distance to x*(t) (tail window only)"
    report = TrackingReport(float(max(errs)), float(R), float(alpha), float(bound), float(t0), len(errs))
    return traj, report
