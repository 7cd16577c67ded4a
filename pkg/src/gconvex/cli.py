"""Command-line front end.

Every subcommand writes one deterministic data payload (JSON report or CSV
trace) to ``--out`` or stdout; wall-clock timing only ever goes to stderr so
reruns with any worker count produce byte-identical payloads.

Exit codes: 0 pass, 1 certification/acceptance failure, 2 usage, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .calculus import fd_check, fd_check_metric
from .contraction import BoxSampler, certify_region, natural_gradient_system, theorem1_residual
from .errors import DomainError, ModelError, NumericalError
from .flows import (IntegratorCfg, Trajectory, attach_diagnostics, fit_decay_rate, game_flow,
                    hierarchical_flow, integrate, path_family_flow, primal_dual_flow,
                    straight_path, tracking_flow)
from .geometry import riemannian_hessian
from .problems import (PROBLEM_IDS, Problem, degenerate_quadratic, get_problem, is_spd,
                       linear_saddle, skew_game, sym_to_vec, three_stage_hierarchy, vec_to_sym)

EXIT_PASS, EXIT_FAIL, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2, 3
MATRIX_PROBLEMS = ("karcher", "logdet")


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# serialization


def _to_plain(obj):
    if isinstance(obj, dict):
        return {str(k): _to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _to_plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    return obj


def dumps17(obj, indent: int = 2) -> str:
    """JSON text with every float at 17 significant digits (non-finite values become null)."""

    def enc(v, depth):
        pad, inner = " " * (indent * depth), " " * (indent * (depth + 1))
        if isinstance(v, bool) or v is None:
            return json.dumps(v)
        if isinstance(v, int):
            return str(v)
        if isinstance(v, float):
            if not math.isfinite(v):
                return "null"
            s = format(v, ".17g")
            return s if any(c in s for c in ".en") else s + ".0"
        if isinstance(v, str):
            return json.dumps(v)
        if isinstance(v, list):
            if not v:
                return "[]"
            if all(isinstance(u, (int, float)) and not isinstance(u, bool) for u in v):
                return "[" + ", ".join(enc(u, 0) for u in v) + "]"
            return "[\n" + ",\n".join(inner + enc(u, depth + 1) for u in v) + "\n" + pad + "]"
        if isinstance(v, dict):
            if not v:
                return "{}"
            items = (inner + json.dumps(k) + ": " + enc(u, depth + 1) for k, u in v.items())
            return "{\n" + ",\n".join(items) + "\n" + pad + "}"
        raise TypeError(f"cannot serialize {type(v).__name__}")

    return enc(_to_plain(obj), 0) + "\n"


@dataclass
class RunConfig:
    command: str
    problem: Optional[str] = None
    params: dict = field(default_factory=dict)
    options: dict = field(default_factory=dict)
    seed: int = 0
    out: Optional[str] = None
    format: str = "json"
    workers: int = 1

    def payload(self) -> dict:
        """The part of the config that determines results (execution-only fields dropped)."""
        d = asdict(self)
        for k in ("out", "workers"):
            d.pop(k)
        return d

    def to_json(self) -> str:
        return dumps17(asdict(self))

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        return cls(**json.loads(text))


# ---------------------------------------------------------------------------
# argument parsing helpers


def parse_box(text: str) -> tuple[tuple, tuple]:
    """``"lo:hi,lo:hi,..."`` -> ``(lo, hi)``."""
    lo, hi = [], []
    try:
        for part in text.split(","):
            a, b = part.split(":")
            lo.append(float(a))
            hi.append(float(b))
    except ValueError:
        raise UsageError(f"malformed box {text!r}; expected lo:hi,lo:hi,...") from None
    if any(not (math.isfinite(a) and math.isfinite(b) and a < b) for a, b in zip(lo, hi)):
        raise UsageError(f"box {text!r} needs finite lo < hi in every coordinate")
    return tuple(lo), tuple(hi)


def parse_vector(text: str) -> np.ndarray:
    try:
        v = np.array([float(s) for s in text.split(",")])
    except ValueError:
        raise UsageError(f"malformed vector {text!r}") from None
    if not np.all(np.isfinite(v)):
        raise UsageError(f"non-finite entries in {text!r}")
    return v


def load_json(path: str):
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read {path}: {exc}") from None


def load_spd(path: str) -> np.ndarray:
    return _as_spd(load_json(path), path)


def _as_spd(data, where: str) -> np.ndarray:
    try:
        A = np.array(data, dtype=float)
    except (TypeError, ValueError):
        raise UsageError(f"{where}: not a numeric matrix") from None
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise UsageError(f"{where}: expected a square row-major matrix")
    if not np.allclose(A, A.T, rtol=0, atol=1e-12 * max(1.0, np.max(np.abs(A)))):
        raise UsageError(f"{where}: matrix is not symmetric")
    if not is_spd(A):
        raise UsageError(f"{where}: matrix is not positive definite")
    return 0.5 * (A + A.T)


def load_spd_list(path: str) -> list[np.ndarray]:
    data = load_json(path)
    if not isinstance(data, list) or not data:
        raise UsageError(f"{path}: expected a list of matrices")
    return [_as_spd(m, f"{path}[{i}]") for i, m in enumerate(data)]


def problem_from_args(args) -> tuple[Problem, dict]:
    pid = args.problem
    params = {"n": args.n, "m": args.m}
    kw = dict(n=args.n, m=args.m, seed=args.seed)
    if getattr(args, "A", None):
        kw["A"] = load_spd(args.A)
        params["A"] = kw["A"]
        kw["n"] = params["n"] = kw["A"].shape[0]
    if getattr(args, "As", None):
        kw["As"] = load_spd_list(args.As)
        params["As"] = kw["As"]
        kw["n"] = params["n"] = kw["As"][0].shape[0]
        params["m"] = len(kw["As"])
        if any(a.shape != kw["As"][0].shape for a in kw["As"]):
            raise UsageError("all matrices in --As must share one size")
    if getattr(args, "p", None):
        kw["p"] = parse_vector(args.p)
        params["p"] = kw["p"]
    if getattr(args, "reduced", False):
        kw["reduced"] = params["reduced"] = True
    for name in ("metric_scale", "amplitude", "omega"):
        v = getattr(args, name, None)
        if v is not None:
            kw[name] = params[name] = v
    try:
        return get_problem(pid, **kw), params
    except KeyError as exc:
        raise UsageError(str(exc.args[0])) from None
    except (ValueError, DomainError) as exc:
        raise UsageError(str(exc)) from None


def initial_state(args, prob: Problem) -> np.ndarray:
    src = getattr(args, "x0", None)
    if src is None:
        return default_x0(prob)
    if prob.id in MATRIX_PROBLEMS and not _looks_like_vector(src):
        x0 = sym_to_vec(load_spd(src))
    else:
        x0 = parse_vector(src)
    if x0.size != prob.dim:
        raise UsageError(f"x0 has {x0.size} entries, problem needs {prob.dim}")
    if not prob.f.domain.contains(x0) or not prob.M.domain.contains(x0):
        raise UsageError("x0 outside the problem domain")
    return x0


def _looks_like_vector(text: str) -> bool:
    try:
        parse_vector(text)
        return True
    except UsageError:
        return False


def default_x0(prob: Problem) -> np.ndarray:
    n = prob.params.get("n", 2)
    if prob.id == "rosenbrock":
        return np.array([-1.5, 2.0])
    if prob.id == "gp":
        return np.full(prob.dim, 3.0)
    if prob.id in MATRIX_PROBLEMS:
        return sym_to_vec(np.eye(n))
    if prob.id == "kl":
        return np.full(prob.dim, 1.0 / (prob.dim + (1 if prob.params.get("variant") == "reduced" else 0)))
    return np.ones(prob.dim)


def integrator_from_args(args, t_end: float, **overrides) -> IntegratorCfg:
    kw = dict(method=args.method, rel_tol=args.rel_tol, abs_tol=args.abs_tol, t_end=t_end,
              dt_max=args.dt_max, dt_init=min(args.dt, args.dt_max))
    kw.update(overrides)
    try:
        return IntegratorCfg(**kw)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


# ---------------------------------------------------------------------------
# output


class Output:
    def __init__(self, args):
        self.path = args.out
        self.format = args.format
        self.t0 = getattr(args, "t_start_wall", time.perf_counter())

    def write(self, text: str) -> None:
        if self.path:
            with open(self.path, "w", newline="") as fh:
                fh.write(text)
        else:
            sys.stdout.write(text)

    def summary(self, lines: list[str]) -> None:
        """Human summary: stdout when the payload goes to a file, stderr otherwise."""
        stream = sys.stdout if self.path else sys.stderr
        for line in lines:
            print(line, file=stream)
        print(f"elapsed: {time.perf_counter() - self.t0:.3f} s", file=sys.stderr)


def emit_trace(out: Output, traj: Trajectory, summary: dict, config: RunConfig) -> None:
    if out.format == "csv":
        out.write(traj.to_csv())
    else:
        out.write(dumps17({"run": config.payload(), "summary": summary,
                           "trace": {"columns": traj.columns(), "rows": [
                               [None if c == "" else float(c) for c in row] for row in traj.rows()]}}))


def _fmt_vec(v) -> str:
    return "[" + ", ".join(f"{float(x):.10g}" for x in np.ravel(v)) + "]"


# ---------------------------------------------------------------------------
# subcommands


def cmd_certify(args) -> int:
    prob, params = problem_from_args(args)
    sys_ = natural_gradient_system(prob.f, prob.M, autonomous=prob.x_star is None)
    sampler = prob.sampler
    if args.box:
        lo, hi = parse_box(args.box)
        if len(lo) != prob.dim:
            raise UsageError(f"box has {len(lo)} coordinates, problem needs {prob.dim}")
        sampler = BoxSampler(lo, hi)
        pts = sampler.sample(args.samples, args.seed)
        bad = [p for p in pts if not (sys_.domain.contains(p))]
        if bad:
            raise UsageError(f"{len(bad)} sampled points fall outside the problem domain")
    t_grid = tuple(parse_vector(args.t_grid)) if args.t_grid else (0.0,)
    rep = certify_region(sys_, prob.M, sampler, args.samples, t_grid, args.seed, args.workers)
    res_ok = rep.theorem1_max_residual is None or rep.theorem1_max_residual <= args.residual_max
    passed = rep.spd_violations == 0 and rep.min_rate >= args.min_rate and res_ok
    config = RunConfig("certify", prob.id, params,
                       {"box": args.box, "samples": args.samples, "t_grid": list(t_grid),
                        "min_rate": args.min_rate, "residual_max": args.residual_max},
                       args.seed, args.out, "json", args.workers)
    payload = {"problem": prob.id, "box": rep.region, **rep.to_dict(),
               "known_rate": prob.known_rate, "min_rate_threshold": args.min_rate,
               "residual_threshold": args.residual_max, "passed": passed, "run": config.payload()}
    payload.pop("region")
    out = Output(args)
    out.write(dumps17(payload))
    out.summary([f"certify {prob.id}: min_rate={rep.min_rate:.10g} at {_fmt_vec(rep.argmin_point)}",
                 f"spd_violations={rep.spd_violations} theorem1_max_residual={rep.theorem1_max_residual}",
                 f"verdict: {'PASS' if passed else 'FAIL'}"])
    return EXIT_PASS if passed else EXIT_FAIL


def cmd_flow(args) -> int:
    prob, params = problem_from_args(args)
    x0 = initial_state(args, prob)
    cfg = integrator_from_args(args, args.t_end)
    sys_ = natural_gradient_system(prob.f, prob.M, autonomous=prob.x_star is None)
    traj = integrate(sys_, x0, cfg, alpha=args.alpha)
    summary = {"endpoint": traj.final, "t_final": traj.times[-1], "n_steps": len(traj.times) - 1,
               "f_final": traj.f[-1], "V_final": traj.V[-1],
               "stopped_at_equilibrium": traj.metadata["stopped_at_equilibrium"]}
    try:
        summary["fitted_rate_V"] = fit_decay_rate(traj.times, traj.V) / 2.0
    except NumericalError:
        summary["fitted_rate_V"] = None
    if prob.known_optimum is not None:
        summary["optimum_error"] = float(np.max(np.abs(traj.final - prob.known_optimum)))
    if prob.solution is not None:
        summary["closed_form_error"] = float(np.max(np.abs(traj.final - prob.solution(x0, traj.times[-1]))))
    if prob.id in MATRIX_PROBLEMS:
        summary["endpoint_matrix"] = vec_to_sym(traj.final)
    config = RunConfig("flow", prob.id, params, {"x0": x0, "t_end": args.t_end, "method": args.method,
                                                  "alpha": args.alpha}, args.seed, args.out,
                       args.format, args.workers)
    out = Output(args)
    emit_trace(out, traj, summary, config)
    lines = [f"flow {prob.id}: endpoint {_fmt_vec(traj.final)} at t={traj.times[-1]:.6g}"]
    if summary["fitted_rate_V"] is not None:
        lines.append(f"fitted rate (from V) {summary['fitted_rate_V']:.6g}")
    for k in ("optimum_error", "closed_form_error"):
        if k in summary:
            lines.append(f"{k} {summary[k]:.3e}")
    out.summary(lines)
    return EXIT_PASS


def cmd_saddle(args) -> int:
    sp, xs, ls = linear_saddle(args.eps)
    z0 = parse_vector(args.z0) if args.z0 else np.array([2.0, -1.0, 1.0])
    if z0.size != 3:
        raise UsageError("z0 needs 3 entries (x_1, x_2, lambda)")
    traj = primal_dual_flow(sp, z0[:2], z0[2:], integrator_from_args(args, args.t_end))
    err = float(np.max(np.abs(traj.final - np.concatenate([xs, ls]))))
    passed = err <= args.tol
    summary = {"endpoint": traj.final, "saddle_point": np.concatenate([xs, ls]), "error": err,
               "tol": args.tol, "passed": passed}
    config = RunConfig("saddle", "linear-saddle", {"eps": args.eps}, {"z0": z0, "t_end": args.t_end},
                       args.seed, args.out, args.format, args.workers)
    out = Output(args)
    emit_trace(out, traj, summary, config)
    out.summary([f"saddle: endpoint {_fmt_vec(traj.final)} error {err:.3e}",
                 f"verdict: {'PASS' if passed else 'FAIL'}"])
    return EXIT_PASS if passed else EXIT_FAIL


def cmd_game(args) -> int:
    gp, nash = skew_game(args.k)
    x0 = parse_vector(args.x0) if args.x0 else np.array([1.0, 1.0, 0.0])
    if x0.size != 3:
        raise UsageError("x0 needs 3 entries (player 1: 2, player 2: 1)")
    traj = game_flow(gp, [x0[:2], x0[2:]], integrator_from_args(args, args.t_end))
    err = float(np.max(np.abs(traj.final - nash)))
    res = traj.metadata["nash_residuals"]
    passed = max(res) <= args.tol
    summary = {"endpoint": traj.final, "nash_point": nash, "error": err, "nash_residuals": res,
               "skew_residual": traj.metadata["skew_residual"], "tol": args.tol, "passed": passed}
    config = RunConfig("game", "skew-game", {"k": args.k}, {"x0": x0, "t_end": args.t_end},
                       args.seed, args.out, args.format, args.workers)
    out = Output(args)
    emit_trace(out, traj, summary, config)
    out.summary([f"game: endpoint {_fmt_vec(traj.final)} nash residuals {_fmt_vec(res)}",
                 f"verdict: {'PASS' if passed else 'FAIL'}"])
    return EXIT_PASS if passed else EXIT_FAIL


def cmd_hierarchy(args) -> int:
    hp, xs = three_stage_hierarchy()
    x0 = parse_vector(args.x0) if args.x0 else np.zeros(3)
    if x0.size != 3:
        raise UsageError("x0 needs 3 entries")
    traj = hierarchical_flow(hp, [x0[:1], x0[1:2], x0[2:]], integrator_from_args(args, args.t_end),
                             coupling_bound=args.coupling_bound)
    err = float(np.max(np.abs(traj.final - xs)))
    passed = err <= args.tol
    summary = {"endpoint": traj.final, "stacked_solution": xs, "error": err,
               "stationarity": traj.metadata["stationarity"],
               "stage_rates_x0": traj.metadata["stage_rates_x0"],
               "coupling_norm": traj.metadata["coupling_norm"], "coupling_bound": args.coupling_bound,
               "tol": args.tol, "passed": passed}
    config = RunConfig("hierarchy", "three-stage", {}, {"x0": x0, "t_end": args.t_end},
                       args.seed, args.out, args.format, args.workers)
    out = Output(args)
    emit_trace(out, traj, summary, config)
    out.summary([f"hierarchy: endpoint {_fmt_vec(traj.final)} error {err:.3e} "
                 f"coupling {traj.metadata['coupling_norm']:.4g}",
                 f"verdict: {'PASS' if passed else 'FAIL'}"])
    return EXIT_PASS if passed else EXIT_FAIL


def cmd_track(args) -> int:
    args.problem = args.problem or "tracking-quadratic"
    prob, params = problem_from_args(args)
    if prob.x_star is None:
        raise UsageError(f"problem {prob.id!r} has no moving optimum to track")
    x0 = initial_state(args, prob)
    cfg = integrator_from_args(args, args.t_end, stop_at_equilibrium=False)
    traj, rep = tracking_flow(prob.f, prob.M, x0, cfg, prob.x_star, prob.x_star_dot,
                              rate=prob.known_rate)
    config = RunConfig("track", prob.id, params, {"x0": x0, "t_end": args.t_end}, args.seed,
                       args.out, args.format, args.workers)
    out = Output(args)
    if args.format == "csv":
        out.write(traj.to_csv())
    else:
        out.write(dumps17({"run": config.payload(), **rep.to_dict(),
                           "trace": {"columns": traj.columns(),
                                     "rows": [[None if c == "" else float(c) for c in row]
                                              for row in traj.rows()]}}))
    out.summary([f"track {prob.id}: tail error {rep.tail_error:.6g} vs bound R/alpha = "
                 f"{rep.R:.6g}/{rep.alpha:.6g} = {rep.bound:.6g}",
                 f"verdict: {'PASS' if rep.within_bound else 'FAIL'}"])
    return EXIT_PASS if rep.within_bound else EXIT_FAIL


def cmd_family(args) -> int:
    f, M = degenerate_quadratic()
    a = parse_vector(args.a)
    b = parse_vector(args.b)
    if a.size != 2 or b.size != 2:
        raise UsageError("path endpoints need 2 entries")
    if args.nodes < 2:
        raise UsageError("need at least 2 path nodes")
    res = path_family_flow(f, M, straight_path(a, b, args.nodes),
                           integrator_from_args(args, args.t_end), workers=args.workers)
    passed = res.max_grad_norm <= args.grad_tol and res.f_spread <= args.spread_tol
    config = RunConfig("family", "degenerate-quadratic", {}, {"a": a, "b": b, "nodes": args.nodes,
                                                             "t_end": args.t_end},
                       args.seed, args.out, "json", args.workers)
    out = Output(args)
    out.write(dumps17({**res.to_dict(), "grad_tol": args.grad_tol, "spread_tol": args.spread_tol,
                       "passed": passed, "run": config.payload()}))
    out.summary([f"family: max |grad f| {res.max_grad_norm:.3e}, f spread {res.f_spread:.3e}",
                 f"verdict: {'PASS' if passed else 'FAIL'}"])
    return EXIT_PASS if passed else EXIT_FAIL


def kl_closed_form_hessian(p, q) -> np.ndarray:
    return np.diag((p + q) / (2.0 * q ** 2))


def cmd_check(args) -> int:
    prob, params = problem_from_args(args)
    pts = prob.sampler.sample(args.samples, args.seed)
    fd = fd_check(prob.f, pts, tol=args.fd_tol)
    fm = fd_check_metric(prob.M, pts, tol=args.fd_tol)
    res = [theorem1_residual(prob.f, prob.M, x) for x in pts]
    t1_max = float(max(res))
    checks = {"fd": fd.to_dict(), "metric_fd": fm.to_dict(),
              "theorem1": {"max_residual": t1_max, "tol": args.residual_max,
                           "worst_point": pts[int(np.argmax(res))], "passed": t1_max <= args.residual_max}}
    if prob.id == "kl" and prob.params.get("variant") == "full":
        p = np.asarray(prob.params["p"])
        errs = [float(np.max(np.abs(kl_closed_form_hessian(p, q) - riemannian_hessian(prob.f, prob.M, q))))
                for q in pts]
        checks["kl_closed_form"] = {"max_abs_error": max(errs), "tol": args.fd_tol,
                                    "passed": max(errs) <= args.fd_tol}
    passed = all(c["passed"] for c in checks.values())
    config = RunConfig("check", prob.id, params, {"samples": args.samples, "fd_tol": args.fd_tol,
                                                  "residual_max": args.residual_max},
                       args.seed, args.out, "json", args.workers)
    out = Output(args)
    out.write(dumps17({"problem": prob.id, "n_points": len(pts), "checks": checks, "passed": passed,
                       "run": config.payload()}))
    out.summary([f"check {prob.id}: " + ", ".join(f"{k}={'ok' if c['passed'] else 'FAIL'}"
                                                  for k, c in checks.items()),
                 f"theorem1 max residual {t1_max:.3e}",
                 f"verdict: {'PASS' if passed else 'FAIL'}"])
    return EXIT_PASS if passed else EXIT_FAIL


# ---------------------------------------------------------------------------
# parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_global(p):
    p.add_argument("--seed", type=int, default=0, help="seed for the Philox generator")
    p.add_argument("--out", default=None, help="payload destination (default stdout)")
    p.add_argument("--format", choices=("csv", "json"), default=None)
    p.add_argument("--workers", type=int, default=1)


def _add_problem(p, required=True):
    p.add_argument("--problem", required=required, choices=PROBLEM_IDS)
    p.add_argument("--n", type=int, default=2, help="dimension (matrix size for karcher/logdet)")
    p.add_argument("--m", type=int, default=2, help="number of Karcher anchors")
    p.add_argument("--A", default=None, help="JSON file with the LogDet anchor matrix")
    p.add_argument("--As", default=None, help="JSON file with a list of Karcher anchor matrices")
    p.add_argument("--p", default=None, help="KL target distribution, comma separated")
    p.add_argument("--reduced", action="store_true", help="KL on the simplex chart")
    p.add_argument("--metric-scale", type=float, default=None)
    p.add_argument("--amplitude", type=float, default=None)
    p.add_argument("--omega", type=float, default=None)


def _add_integrator(p, t_end):
    p.add_argument("--t-end", type=float, default=t_end)
    p.add_argument("--method", choices=("rk45", "rk4"), default="rk45")
    p.add_argument("--rel-tol", type=float, default=1e-8)
    p.add_argument("--abs-tol", type=float, default=1e-10)
    p.add_argument("--dt", type=float, default=1e-3, help="initial (rk45) or fixed (rk4) step")
    p.add_argument("--dt-max", type=float, default=0.1)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gconvex", description="Contraction certificates and natural-gradient flows.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("certify", help="sampled contraction certificate")
    _add_global(p)
    _add_problem(p)
    p.add_argument("--box", default=None, help='region "lo:hi,lo:hi,..." (default: problem region)')
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--t-grid", default=None, help="comma-separated sample times")
    p.add_argument("--min-rate", type=float, default=0.0)
    p.add_argument("--residual-max", type=float, default=1e-6)
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("flow", help="natural-gradient flow trace")
    _add_global(p)
    _add_problem(p)
    _add_integrator(p, 5.0)
    p.add_argument("--x0", default=None, help="comma-separated start, or JSON matrix file")
    p.add_argument("--alpha", action="store_true", help="record the local contraction rate")
    p.set_defaults(func=cmd_flow)

    p = sub.add_parser("saddle", help="primal-dual flow on a regularized linear saddle")
    _add_global(p)
    _add_integrator(p, 30.0)
    p.add_argument("--z0", default=None, help="x_1,x_2,lambda")
    p.add_argument("--eps", type=float, default=0.5)
    p.add_argument("--tol", type=float, default=1e-6)
    p.set_defaults(func=cmd_saddle)

    p = sub.add_parser("game", help="two-player game with scaled skew coupling")
    _add_global(p)
    _add_integrator(p, 40.0)
    p.add_argument("--x0", default=None)
    p.add_argument("--k", type=float, default=2.0, help="player-2 metric weight")
    p.add_argument("--tol", type=float, default=1e-8)
    p.set_defaults(func=cmd_game)

    p = sub.add_parser("hierarchy", help="three-stage hierarchical flow")
    _add_global(p)
    _add_integrator(p, 60.0)
    p.add_argument("--x0", default=None)
    p.add_argument("--coupling-bound", type=float, default=None)
    p.add_argument("--tol", type=float, default=1e-6)
    p.set_defaults(func=cmd_hierarchy)

    p = sub.add_parser("track", help="time-varying optimum tracking")
    _add_global(p)
    _add_problem(p, required=False)
    _add_integrator(p, 30.0)
    p.add_argument("--x0", default=None)
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("family", help="path family under a semi-contracting flow")
    _add_global(p)
    _add_integrator(p, 10.0)
    p.add_argument("--a", default="2,-1")
    p.add_argument("--b", default="-1,3")
    p.add_argument("--nodes", type=int, default=11)
    p.add_argument("--grad-tol", type=float, default=1e-6)
    p.add_argument("--spread-tol", type=float, default=1e-8)
    p.set_defaults(func=cmd_family)

    p = sub.add_parser("check", help="derivative oracles and the Hessian identity")
    _add_global(p)
    _add_problem(p)
    p.add_argument("--samples", type=int, default=50)
    p.add_argument("--fd-tol", type=float, default=1e-5)
    p.add_argument("--residual-max", type=float, default=1e-6)
    p.set_defaults(func=cmd_check)
    return parser


# options whose values may begin with "-" (negative coordinates)
_VALUE_OPTIONS = ("--box", "--x0", "--z0", "--a", "--b", "--p", "--t-grid")


def _glue_values(argv: list[str]) -> list[str]:
    out, i = [], 0
    while i < len(argv):
        tok = argv[i]
        if tok in _VALUE_OPTIONS and i + 1 < len(argv):
            out.append(f"{tok}={argv[i + 1]}")
            i += 2
        else:
            out.append(tok)
            i += 1
    return out


_DEFAULT_FORMAT = {"flow": "csv", "saddle": "csv", "game": "csv", "hierarchy": "csv", "track": "json"}


def main(argv=None) -> int:
    t0 = time.perf_counter()
    argv = _glue_values(list(sys.argv[1:] if argv is None else argv))
    try:
        args = build_parser().parse_args(argv)
        args.t_start_wall = t0
        if args.format is None:
            args.format = _DEFAULT_FORMAT.get(args.command, "json")
        elif args.format == "csv" and args.command in ("certify", "check", "family"):
            raise UsageError(f"{args.command} only writes JSON reports")
        if args.workers < 1:
            raise UsageError("--workers must be at least 1")
        if getattr(args, "samples", 1) < 1:
            raise UsageError("--samples must be at least 1")
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ModelError as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, DomainError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
