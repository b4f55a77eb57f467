"""Compare matrix-exponential moments with Monte Carlo for a zoo model.

    python3 scripts/moment_vs_mc.py --zoo garch --order 4 --paths 100000
"""
import argparse

from polyjump.generator import build_generator_matrix
from polyjump.mc import SimConfig, estimate, simulate
from polyjump.models import model_zoo
from polyjump.moments import conditional_moment
from polyjump.polyalg import Poly


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--zoo", default="garch")
    ap.add_argument("--order", type=int, default=4)
    ap.add_argument("--T", type=float, default=1.0)
    ap.add_argument("--paths", type=int, default=100_000)
    ap.add_argument("--steps", type=int, default=500)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    e = model_zoo(args.zoo)
    spec = e.generator
    gm = build_generator_matrix(spec, args.order)
    res = simulate(spec, args.T, SimConfig(args.paths, args.steps, args.seed), e.x0)
    x = Poly.var(0, spec.dim)
    print("order,formula,mc,se,z")
    for k in range(1, args.order + 1):
        exact = conditional_moment(gm, x ** k, args.T, e.x0)
        est = estimate(x ** k, res.x)
        print(f"{k},{exact:.8g},{est.mean:.8g},{est.se:.3g},{(est.mean - exact) / est.se:+.2f}")


if __name__ == "__main__":
    main()
