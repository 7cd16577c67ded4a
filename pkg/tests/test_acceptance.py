"""End-to-end exit criteria; each test prints one PASS/FAIL line."""
import json
import time

import numpy as np
import pytest

from gconvex.cli import main
from gconvex.contraction import (certify_region, contraction_rate, natural_gradient_system,
                                 theorem1_residual)
from gconvex.flows import (IntegratorCfg, RateModulator, fit_decay_rate, game_flow, hierarchical_flow,
                           integrate, modulated_flow, pair_distance_history, path_family_flow,
                           straight_path, tracking_flow, variational_pair)
from gconvex.geometry import gconvexity_rate, metric_at, riemannian_hessian
from gconvex.problems import (degenerate_quadratic, get_problem, karcher_problem, kl_problem,
                              linear_saddle, random_spd, rosenbrock_problem, rosenbrock_theta,
                              rosenbrock_z, skew_game, spd_geometric_mean, sym_to_vec,
                              three_stage_hierarchy)
from gconvex.contraction import philox

pytestmark = pytest.mark.acceptance


@pytest.fixture
def report(capsys):
    def emit(tag, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {tag}: {detail}")
        assert ok, detail

    return emit


def test_ac01_rosenbrock_certification(report):
    p = rosenbrock_problem()
    t0 = time.perf_counter()
    rep = certify_region(p.flow(), p.M, p.sampler, 1000, seed=42)
    dt = time.perf_counter() - t0
    ok = (abs(rep.min_rate - 2.0) <= 1e-5 and rep.theorem1_max_residual <= 1e-6
          and rep.spd_violations == 0 and dt < 5.0)
    report("AC1 Rosenbrock certification", ok,
           f"min_rate={rep.min_rate:.9f} residual={rep.theorem1_max_residual:.2e} "
           f"spd_violations={rep.spd_violations} runtime={dt:.2f}s")


LIBRARY = [("rosenbrock", {}), ("gp", {"n": 3}), ("karcher", {"n": 2, "m": 2}), ("karcher", {"n": 3, "m": 3}),
           ("logdet", {"n": 3}), ("kl", {}), ("kl", {"reduced": True}), ("tracking-quadratic", {})]


def test_ac02_theorem1_equivalence(report):
    t0 = time.perf_counter()
    worst = {}
    for pid, kw in LIBRARY:
        p = get_problem(pid, seed=11, **kw)
        sys = natural_gradient_system(p.f, p.M, autonomous=p.x_star is None)
        gap = max(abs(contraction_rate(sys, p.M, x) - gconvexity_rate(p.f, p.M, x))
                  for x in p.sampler.sample(100, 2))
        worst[f"{pid}{kw or ''}"] = gap
    dt = time.perf_counter() - t0
    ok = max(worst.values()) <= 1e-6 and dt < 30.0
    report("AC2 rate equivalence", ok,
           f"max gap {max(worst.values()):.2e} over {len(LIBRARY)} problems, runtime={dt:.2f}s")


def test_ac03_rosenbrock_coordinates(report):
    p = rosenbrock_problem()
    pts = p.sampler.sample(100, 3)
    e_theta = max(np.max(np.abs(rosenbrock_theta(x).T @ rosenbrock_theta(x) - p.M.eval(x))) for x in pts)
    e_f = max(abs(p.f.eval(x, 0) - np.sum(rosenbrock_z(x) ** 2)) for x in pts)
    report("AC3 Rosenbrock change of variables", e_theta <= 1e-12 and e_f <= 1e-10,
           f"|Theta'Theta - M|={e_theta:.1e} |f - |z|^2|={e_f:.1e}")


def test_ac04_logdet_closed_form(report):
    p = get_problem("logdet", n=3, seed=4)
    sys = natural_gradient_system(p.f, p.M)
    x0 = sym_to_vec(random_spd(3, philox(99)))
    err = np.max(np.abs(integrate(sys, x0, IntegratorCfg(t_end=3.0), diagnostics=False).final
                        - p.solution(x0, 3.0)))
    errs = []
    for h in (0.1, 0.05):
        cfg = IntegratorCfg(method="rk4", dt_init=h, dt_max=h, t_end=3.0)
        errs.append(np.max(np.abs(integrate(sys, x0, cfg, diagnostics=False).final - p.solution(x0, 3.0))))
    ratio = errs[0] / errs[1]
    report("AC4 LogDet flow", err <= 1e-7 and ratio >= 8.0,
           f"rk45 endpoint error={err:.2e}, rk4 halving ratio={ratio:.2f}")


def test_ac05_karcher(report):
    rng = philox(5)
    A = random_spd(2, rng)
    p1 = karcher_problem([A])
    x0 = sym_to_vec(random_spd(2, rng))
    e1 = np.max(np.abs(integrate(p1.flow(), x0, IntegratorCfg(t_end=40.0, dt_max=0.5), diagnostics=False).final
                       - sym_to_vec(A)))
    Da, Db = np.diag([0.5, 3.0]), np.diag([2.0, 1.5])
    p2 = karcher_problem([Da, Db])
    end = integrate(p2.flow(), sym_to_vec(np.eye(2)), IntegratorCfg(t_end=30.0, dt_max=0.5), diagnostics=False).final
    e2 = np.max(np.abs(end - sym_to_vec(np.diag(np.sqrt(np.diag(Da) * np.diag(Db))))))
    e2b = np.max(np.abs(sym_to_vec(spd_geometric_mean(Da, Db)) - sym_to_vec(np.diag([1.0, np.sqrt(4.5)]))))
    margins = []
    for n, m in ((2, 1), (2, 2), (2, 3), (3, 2)):
        p = get_problem("karcher", n=n, m=m, seed=8)
        margins.append(min(gconvexity_rate(p.f, p.M, x) for x in p.sampler.sample(30, 1)) - m)
    ok = e1 <= 1e-8 and e2 <= 1e-6 and e2b <= 1e-12 and min(margins) >= -1e-3
    report("AC5 Karcher mean", ok,
           f"m=1 error={e1:.1e}, m=2 geometric-mean error={e2:.1e}, min(rate - m)={min(margins):.2e}")


def test_ac06_kl_cross_validation(report):
    p = np.array([0.2, 0.3, 0.5])
    prob = kl_problem(p)
    err = max(np.max(np.abs(riemannian_hessian(prob.f, prob.M, q) - np.diag((p + q) / (2 * q ** 2))))
              for q in prob.sampler.sample(200, 6))
    report("AC6 KL Riemannian Hessian", err <= 1e-5, f"max error={err:.2e} over 200 samples")


def test_ac07_contraction_envelope(report):
    p = rosenbrock_problem()
    rng = philox(7)
    worst = 0.0
    for _ in range(10):
        a = rng.uniform([-2.0, -1.0], [2.0, 3.0])
        b = rng.uniform([-2.0, -1.0], [2.0, 3.0])
        t, d, _ = pair_distance_history(p.flow(), p.M, a, b, IntegratorCfg(t_end=2.0, dt_max=0.1))
        worst = max(worst, float(np.max(d / (d[0] * np.exp(-2 * t)))))
    report("AC7 contraction envelope", worst <= 1.05, f"max d(t)/(d(0)e^-2t)={worst:.6f} over 10 pairs")


def test_ac08_differential_decay(report):
    p = rosenbrock_problem()
    tr = variational_pair(p.flow(), p.M, [-1.5, 2.0], [0.3, -0.2],
                          IntegratorCfg(t_end=5.0, stop_at_equilibrium=False))
    r_s = fit_decay_rate(tr.times, tr.s ** 2)
    r_v = fit_decay_rate(tr.times, tr.V)
    ok = 3.96 <= r_s <= 4.04 and 3.96 <= r_v <= 4.04
    report("AC8 differential-length decay", ok, f"s^2 exponent={r_s:.5f}, V exponent={r_v:.5f}")


def test_ac09_primal_dual(report):
    t0 = time.perf_counter()
    sp, xs, ls = linear_saddle()
    sp.check([np.zeros(3)])
    # the state half of the variational pair is the primal-dual trajectory itself
    vp = variational_pair(sp.system(), sp.metric(), [2.0, -1.0, 1.0], [0.3, -0.1, 0.5],
                          IntegratorCfg(t_end=30.0, dt_max=0.5))
    err = np.max(np.abs(vp.final - np.concatenate([xs, ls])))
    rise = float(np.max(np.diff(vp.s)))
    dt = time.perf_counter() - t0
    ok = err <= 1e-6 and rise <= 1e-10 and dt < 2.0
    report("AC9 primal-dual", ok, f"saddle error={err:.1e}, max increase of |dz|={rise:.1e}, runtime={dt:.2f}s")


def test_ac10_game_hierarchy_modulation(report):
    game, nash = skew_game()
    tr = game_flow(game, [[1.0, 1.0], [0.0]], IntegratorCfg(t_end=40.0))
    res = max(tr.metadata["nash_residuals"])
    hp, xs = three_stage_hierarchy()
    e_h = np.max(np.abs(hierarchical_flow(hp, [[0.0], [0.0], [0.0]], IntegratorCfg(t_end=60.0)).final - xs))
    p = rosenbrock_problem()
    rates = []
    for pv in (1.0, 2.0):
        mod = RateModulator(lambda x, t, pv=pv: pv, p_min=pv)
        trm = modulated_flow(p.f, p.M, mod, [-1.5, 2.0], IntegratorCfg(t_end=4.0, stop_at_equilibrium=False))
        rates.append(fit_decay_rate(trm.times, trm.V))
    ratio = rates[1] / rates[0]
    ok = res < 1e-8 and e_h <= 1e-6 and abs(ratio - 2.0) <= 0.2
    report("AC10 game/hierarchy/modulation", ok,
           f"Nash residual={res:.1e}, hierarchy error={e_h:.1e}, rate ratio p=2/p=1={ratio:.4f}")


def test_ac11_semicontraction(report):
    f, M = degenerate_quadratic()
    cfg = IntegratorCfg(t_end=10.0)
    fam = path_family_flow(f, M, straight_path([2.0, -1.0], [-1.0, 3.0], 11), cfg)
    tr = variational_pair(natural_gradient_system(f, M), M, [2.0, -1.0], [1.0, 0.2], cfg)
    d = tr.metadata["dx"][-1]
    d = d / np.linalg.norm(d)
    null = np.array([1.0, 1.0]) / np.sqrt(2)
    angle_err = min(np.linalg.norm(d - null), np.linalg.norm(d + null))
    ok = fam.max_grad_norm < 1e-6 and fam.f_spread <= 1e-8 and angle_err <= 1e-3 and np.all(np.diff(tr.s) <= 1e-12)
    report("AC11 semi-contraction", ok,
           f"max |grad|={fam.max_grad_norm:.1e}, f spread={fam.f_spread:.1e}, nullspace misalignment={angle_err:.1e}")


def test_ac12_tracking(report):
    out = []
    for scale in (1.0, 0.5):
        p = get_problem("tracking-quadratic", metric_scale=scale)
        _, rep = tracking_flow(p.f, p.M, [1.0, 1.0], IntegratorCfg(t_end=30.0, stop_at_equilibrium=False),
                               p.x_star, p.x_star_dot, rate=p.known_rate)
        out.append(rep)
    base, fast = out
    ok = base.within_bound and fast.within_bound and fast.tail_error < base.tail_error and fast.bound < base.bound
    report("AC12 tracking", ok,
           f"alpha=1: {base.tail_error:.4f} <= {base.bound:.4f}; alpha=2: {fast.tail_error:.4f} <= {fast.bound:.4f}")


def test_ac13_determinism(report, tmp_path):
    cases = [["certify", "--problem", "rosenbrock", "--samples", "300", "--seed", "42"],
             ["certify", "--problem", "karcher", "--n", "2", "--m", "3", "--samples", "50", "--seed", "9"],
             ["flow", "--problem", "rosenbrock", "--x0", "-1.5,2.0", "--t-end", "2", "--seed", "3"],
             ["family", "--nodes", "9", "--seed", "1"]]
    same = []
    for k, argv in enumerate(cases):
        blobs = []
        for w in (1, 4):
            out = tmp_path / f"{k}-{w}"
            assert main(argv + ["--workers", str(w), "--out", str(out)]) == 0
            blobs.append(out.read_bytes())
        same.append(blobs[0] == blobs[1])
    report("AC13 determinism", all(same), f"{sum(same)}/{len(same)} payloads byte-identical across worker counts")
