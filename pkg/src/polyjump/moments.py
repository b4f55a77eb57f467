"""Conditional moments through the matrix exponential of the generator matrix.

E[p(X_T) | X_t = x] = v(x)' expm((T - t) G) vec(p), where v(x) holds the
basis monomials evaluated at x.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .generator import GeneratorMatrix
from .polyalg import Poly


def expm(A) -> np.ndarray:
    """Matrix exponential (Pade 13 with scaling and squaring)."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("expm needs a square matrix")
    if not np.all(np.isfinite(A)):
        raise ValueError("expm input has non-finite entries")
    out = scipy.linalg.expm(A)
    if not np.all(np.isfinite(out)):
        raise OverflowError("matrix exponential overflowed")
    return out


@dataclass(frozen=True)
class MomentQuery:
    p: Poly
    tau: float
    x: tuple

    def __post_init__(self):
        if not self.tau >= 0:
            raise ValueError("horizon must be nonnegative")
        object.__setattr__(self, "x", tuple(float(v) for v in np.atleast_1d(self.x)))


def moment_polynomial(gm: GeneratorMatrix, p: Poly, tau: float) -> Poly:
    """x -> E[p(X_tau) | X_0 = x] as a polynomial."""
    if tau < 0:
        raise ValueError("horizon must be nonnegative")
    v = gm.basis.to_coordinates(p)
    if tau == 0:
        return p
    return gm.basis.from_coordinates(expm(tau * gm.G) @ v)


def conditional_moment(gm: GeneratorMatrix, q, tau=None, x=None) -> float:
    """Moment formula.  Accepts a MomentQuery or (p, tau, x)."""
    if not isinstance(q, MomentQuery):
        q = MomentQuery(q, tau, x)
    x = np.array(q.x)
    vec = gm.basis.to_coordinates(q.p)
    if q.tau == 0:
        return float(q.p(x))
    return float(gm.basis.evaluate(x) @ (expm(q.tau * gm.G) @ vec))


def moment_path(gm: GeneratorMatrix, p: Poly, x, taus) -> np.ndarray:
    """Moment formula on a sorted grid of horizons.

    Equal steps reuse a single exponential; otherwise one exponential per
    distinct step length.
    """
    taus = np.asarray(taus, dtype=float)
    if np.any(np.diff(taus) < 0) or (taus.size and taus[0] < 0):
        raise ValueError("grid must be sorted and nonnegative")
    vec = gm.basis.to_coordinates(p)
    row = gm.basis.evaluate(np.asarray(x, float))
    out = np.empty(taus.size)
    cache = {}
    cur = vec
    prev = 0.0
    for i, t in enumerate(taus):
        h = t - prev
        if h > 0:
            key = round(h, 14)
            if key not in cache:
                cache[key] = expm(h * gm.G)
            cur = cache[key] @ cur
        out[i] = float(p(np.asarray(x, float))) if t == 0 else float(row @ cur)
        prev = t
    return out
