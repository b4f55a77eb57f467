"""Subordination of a polynomial process by an independent Levy clock.

At the matrix level the time-changed generator is

    G_sub = bZ G + sum_j rate_j (expm(size_j G) - I) + int (expm(z G) - I) nu_c(dz)

where nu_c is an optional gamma Levy measure  shape * z^-1 * exp(-rate z) dz.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import ExponentialMomentFailure, ValidationError
from .generator import GeneratorMatrix
from .moments import expm


@dataclass(frozen=True)
class GammaPart:
    shape: float  # Levy density shape * z^-1 exp(-rate z)
    rate: float
    nodes: int = 64

    def __post_init__(self):
        if not (self.shape > 0 and self.rate > 0 and self.nodes >= 2):
            raise ValidationError("gamma part needs shape > 0, rate > 0, nodes >= 2")


@dataclass(frozen=True)
class SubordinatorSpec:
    drift: float = 0.0
    atoms: tuple = ()  # ((rate, size), ...)
    gamma: GammaPart | None = None

    def __post_init__(self):
        atoms = tuple((float(r), float(z)) for r, z in self.atoms)
        if self.drift < 0:
            raise ValidationError("subordinator drift must be >= 0")
        for r, z in atoms:
            if not (r > 0 and z > 0):
                raise ValidationError("subordinator atoms need rate > 0 and size > 0")
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "drift", float(self.drift))

    def mean_rate(self) -> float:
        m = self.drift + sum(r * z for r, z in self.atoms)
        if self.gamma is not None:
            m += self.gamma.shape / self.gamma.rate
        return m

    def to_json(self):
        doc = {"drift": self.drift, "atoms": [{"rate": r, "size": z} for r, z in self.atoms]}
        if self.gamma is not None:
            doc["gamma"] = {"shape": self.gamma.shape, "rate": self.gamma.rate, "nodes": self.gamma.nodes}
        return doc

    @classmethod
    def from_json(cls, doc):
        if not isinstance(doc, dict) or not set(doc) <= {"drift", "atoms", "gamma"}:
            raise ValidationError("subordinator must have keys drift, atoms, gamma")
        atoms = []
        for a in doc.get("atoms", []):
            if not isinstance(a, dict) or set(a) != {"rate", "size"}:
                raise ValidationError("subordinator atom must be {rate, size}")
            atoms.append((a["rate"], a["size"]))
        g = doc.get("gamma")
        if g is not None:
            if not isinstance(g, dict) or not set(g) <= {"shape", "rate", "nodes"} or not {"shape", "rate"} <= set(g):
                raise ValidationError("gamma part must be {shape, rate, nodes?}")
            g = GammaPart(float(g["shape"]), float(g["rate"]), int(g.get("nodes", 64)))
        return cls(float(doc.get("drift", 0.0)), tuple(atoms), g)


@dataclass(frozen=True)
class ExponentialMomentReport:
    ok: bool
    top_eigenvalue: float
    margin: float
    markov_assumed: bool = True


def check_exponential_moments(sub: SubordinatorSpec, gm: GeneratorMatrix) -> ExponentialMomentReport:
    lam = float(np.max(np.linalg.eigvals(gm.G).real)) if gm.size else 0.0
    if sub.gamma is None:
        return ExponentialMomentReport(True, lam, np.inf)
    margin = sub.gamma.rate - lam
    return ExponentialMomentReport(bool(margin > 0), lam, float(margin))


def gamma_integral(G, part: GammaPart) -> np.ndarray:
    """int_0^inf (expm(z G) - I) shape z^-1 exp(-rate z) dz by Gauss-Laguerre."""
    G = np.asarray(G, float)
    t, w = special.roots_laguerre(part.nodes)
    I = np.eye(G.shape[0])
    out = np.zeros_like(G)
    for ti, wi in zip(t, w):
        out += wi * (expm(ti / part.rate * G) - I) / ti
    return part.shape * out


def subordinate_matrix(gm: GeneratorMatrix, sub: SubordinatorSpec) -> GeneratorMatrix:
    rep = check_exponential_moments(sub, gm)
    if not rep.ok:
        raise ExponentialMomentFailure(
            f"gamma rate {sub.gamma.rate} does not exceed top eigenvalue {rep.top_eigenvalue:.6g}",
            margin=rep.margin,
        )
    G = gm.G
    I = np.eye(G.shape[0])
    out = sub.drift * G
    for rate, size in sub.atoms:
        out = out + rate * (expm(size * G) - I)
    if sub.gamma is not None:
        out = out + gamma_integral(G, sub.gamma)
    return GeneratorMatrix(gm.n, gm.basis, out)


def subordinated_semigroup_check(gm: GeneratorMatrix, sub: SubordinatorSpec, t: float, truncation: int = 40) -> float:
    """Compare expm(t G_sub) with the Poisson mixture sum_k P(N_t=k) expm(k size G)."""
    if sub.drift != 0 or sub.gamma is not None or len(sub.atoms) != 1:
        raise ValidationError("semigroup check needs a pure Poisson subordinator with one atom")
    rate, size = sub.atoms[0]
    lhs = expm(t * subordinate_matrix(gm, sub).G)
    step = expm(size * gm.G)
    term = np.eye(gm.size)
    rhs = np.zeros_like(lhs)
    lt = rate * t
    for k in range(truncation):
        rhs += np.exp(-lt + special.xlogy(k, lt) - special.gammaln(k + 1)) * term
        term = term @ step
    return float(np.max(np.abs(lhs - rhs)))
