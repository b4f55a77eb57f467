"""Partial sums of the polynomial expansion price against the truncation order K.

    python3 scripts/price_convergence.py --zoo example_5_1 --strike 1 --K 20
"""
import argparse

from polyjump.models import model_zoo
from polyjump.pricer import Observation, Payoff, PricingRequest, price


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--zoo", default="example_5_1")
    ap.add_argument("--strike", type=float, default=1.0)
    ap.add_argument("--T", type=float, default=1.0)
    ap.add_argument("--K", type=int, default=20)
    ap.add_argument("--kind", default="call", choices=["call", "put"])
    args = ap.parse_args()

    e = model_zoo(args.zoo)
    if e.model is None:
        raise SystemExit(f"{args.zoo} has no return component")
    aug = e.model.augmented()
    z0 = tuple(e.x0) + (0.0,) * aug.e
    res = price(PricingRequest(aug, Payoff(args.kind, args.strike), Observation.terminal(args.T), z0, args.K))
    print("k,ell,F,contribution,partial_sum")
    for k in range(len(res.ell)):
        print(f"{k},{res.ell[k]:.6e},{res.F[k]:.6e},{res.contributions[k]:+.3e},{res.partial_sums[k]:.9f}")
    print(f"# price {res.value:.9f}  tail {res.diagnostics['tail']:.2e}")


if __name__ == "__main__":
    main()
