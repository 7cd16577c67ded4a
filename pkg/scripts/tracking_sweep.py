"""Tail tracking error versus the R/alpha bound as the metric scale (and so alpha) varies."""
import argparse

from gconvex.flows import IntegratorCfg, tracking_flow
from gconvex.problems import get_problem


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--scales", default="2,1,0.5,0.25")
    ap.add_argument("--omega", type=float, default=1.0)
    ap.add_argument("--t-end", type=float, default=30.0)
    args = ap.parse_args()

    print(f"{'scale':>6} {'alpha':>6} {'R':>8} {'bound':>8} {'tail':>8}")
    for scale in map(float, args.scales.split(",")):
        p = get_problem("tracking-quadratic", metric_scale=scale, omega=args.omega)
        _, rep = tracking_flow(p.f, p.M, [1.0, 1.0], IntegratorCfg(t_end=args.t_end, stop_at_equilibrium=False),
                               p.x_star, p.x_star_dot, rate=p.known_rate)
        print(f"{scale:6.3g} {rep.alpha:6.3g} {rep.R:8.4f} {rep.bound:8.4f} {rep.tail_error:8.4f}")


if __name__ == "__main__":
    main()
