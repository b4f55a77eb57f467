"""Blow-up time of the Riccati system for the two-point affine model, u = i*pi.

The transform hits zero at tau = log(2)/lam.
"""
import math

import numpy as np

from polyjump.models import model_zoo
from polyjump.affine import solve_riccati


def main():
    print("lam,tau_star,log2_over_lam,abs_err,status")
    for lam in np.geomspace(0.25, 4.0, 9):
        spec = model_zoo("two_point_affine", lam=float(lam)).affine
        sol = solve_riccati(spec, [1j * math.pi], 2.0 / lam)
        want = math.log(2) / lam
        ts = sol.tau_star if sol.tau_star is not None else math.nan
        print(f"{lam:.4g},{ts:.10f},{want:.10f},{abs(ts - want):.2e},{sol.status}")


if __name__ == "__main__":
    main()
