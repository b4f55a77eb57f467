"""Polynomial generators: coefficient specs, jump kernels, generator matrices.

A generator is stored through its polynomial coefficients

    drift b (degree <= 1), modified diffusion A = a + int xi xi' nu (degree <= 2),
    jump moments M_alpha = int xi^alpha nu (degree <= |alpha|, |alpha| >= 3),

and acts on a polynomial f as

    Gf = 1/2 sum A_ik d_ik f + b . grad f + sum_{|g|>=3} (d^g f / g!) M_g.

Two routes are provided.  ``PolynomialOperator.apply_monomial`` works on
monomials with multi-binomial coefficients and builds the matrix.
``PolynomialOperator.apply`` works on an arbitrary polynomial through
differentiation and the shifted polynomial f(x + xi).  Tests use one to
check the other.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import special

from .errors import (
    DegreeViolation,
    MissingJumpMoments,
    MomentMismatch,
    NegativeDiffusion,
    NegativeMoment,
    UnsupportedMarkFamily,
    ValidationError,
)
from .polyalg import (
    GradedBasis,
    MonomialBasis,
    Poly,
    degree_of,
    graded_exponents,
    multi_binomial,
    sub_indices,
)

QUAD_NODES = 64
REL_TOL = 1e-10
ABS_TOL = 1e-12


# ---------------------------------------------------------------- marks

class MarkFamily:
    family = "abstract"
    dim = 1

    def raw_moment(self, gamma) -> float:
        raise UnsupportedMarkFamily(f"{self.family} marks have no closed-form moments")

    def sample(self, rng, size) -> np.ndarray:
        raise NotImplementedError

    def quadrature(self):
        """Nodes (n, k) and probability weights (n,)."""
        raise NotImplementedError

    def expect(self, fn) -> np.ndarray:
        nodes, w = self.quadrature()
        vals = np.asarray(fn(nodes))
        return np.tensordot(w, vals, axes=(0, 0))

    def mgf(self, c) -> float:
        """E[exp(c . U)]; inf when it does not exist."""
        raise NotImplementedError

    def mean(self) -> np.ndarray:
        return np.array([self.raw_moment(tuple(int(i == j) for j in range(self.dim))) for i in range(self.dim)])


@dataclass(frozen=True)
class PointMasses(MarkFamily):
    atoms: tuple  # tuple of k-tuples
    probs: tuple
    family = "point"

    def __post_init__(self):
        atoms = tuple(tuple(float(v) for v in np.atleast_1d(a)) for a in self.atoms)
        probs = tuple(float(p) for p in self.probs)
        if len(atoms) != len(probs) or not atoms:
            raise ValidationError("point masses need matching atoms and probabilities")
        if min(probs) < 0 or abs(sum(probs) - 1.0) > 1e-12:
            raise ValidationError("point-mass probabilities must be nonnegative and sum to 1")
        if len({len(a) for a in atoms}) != 1:
            raise ValidationError("atoms must share a dimension")
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "probs", probs)

    @property
    def dim(self):
        return len(self.atoms[0])

    def raw_moment(self, gamma):
        return float(sum(p * np.prod([a ** g for a, g in zip(at, gamma)]) for at, p in zip(self.atoms, self.probs)))

    def sample(self, rng, size):
        idx = rng.choice(len(self.probs), size=size, p=np.array(self.probs))
        return np.array(self.atoms)[idx]

    def quadrature(self):
        return np.array(self.atoms), np.array(self.probs)

    def mgf(self, c):
        c = np.atleast_1d(np.asarray(c, float))
        return float(np.sum(np.array(self.probs) * np.exp(np.array(self.atoms) @ c)))

    def to_json(self):
        return {"family": "point", "params": {"atoms": [list(a) for a in self.atoms], "probs": list(self.probs)}}


@dataclass(frozen=True)
class GaussianMarks(MarkFamily):
    mean_: tuple
    cov: tuple
    family = "gaussian"

    def __post_init__(self):
        m = np.atleast_1d(np.asarray(self.mean_, float))
        c = np.atleast_2d(np.asarray(self.cov, float))
        if c.shape != (len(m), len(m)):
            raise ValidationError("gaussian mark covariance has wrong shape")
        if not np.allclose(c, c.T) or np.linalg.eigvalsh(c).min() < -1e-12:
            raise ValidationError("gaussian mark covariance must be symmetric PSD")
        object.__setattr__(self, "mean_", tuple(m.tolist()))
        object.__setattr__(self, "cov", tuple(map(tuple, c.tolist())))
        object.__setattr__(self, "_cache", {})

    @property
    def dim(self):
        return len(self.mean_)

    def raw_moment(self, gamma):
        gamma = tuple(int(g) for g in gamma)
        cache = self._cache
        if gamma in cache:
            return cache[gamma]
        if sum(gamma) == 0:
            val = 1.0
        else:
            # E[U_i U^g] = mu_i E[U^g] + sum_j S_ij g_j E[U^(g - e_j)]
            i = next(k for k, g in enumerate(gamma) if g > 0)
            g = list(gamma)
            g[i] -= 1
            val = self.mean_[i] * self.raw_moment(tuple(g))
            for j in range(self.dim):
                if g[j] > 0 and self.cov[i][j] != 0.0:
                    h = list(g)
                    h[j] -= 1
                    val += self.cov[i][j] * g[j] * self.raw_moment(tuple(h))
        cache[gamma] = val
        return val

    def _chol(self):
        c = np.array(self.cov)
        w, v = np.linalg.eigh(c)
        return v * np.sqrt(np.clip(w, 0.0, None))

    def sample(self, rng, size):
        z = rng.standard_normal((size, self.dim))
        return np.array(self.mean_) + z @ self._chol().T

    def quadrature(self, nodes=QUAD_NODES):
        z, w = special.roots_hermitenorm(nodes)
        w = w / w.sum()
        k = self.dim
        grid = np.array(list(itertools.product(z, repeat=k)))
        wts = np.prod(np.array(list(itertools.product(w, repeat=k))), axis=1)
        return np.array(self.mean_) + grid @ self._chol().T, wts

    def mgf(self, c):
        c = np.atleast_1d(np.asarray(c, float))
        return float(np.exp(c @ np.array(self.mean_) + 0.5 * c @ np.array(self.cov) @ c))

    def to_json(self):
        return {"family": "gaussian", "params": {"mean": list(self.mean_), "cov": [list(r) for r in self.cov]}}


@dataclass(frozen=True)
class ExponentialMarks(MarkFamily):
    rate: float
    family = "exponential"

    def __post_init__(self):
        if not self.rate > 0:
            raise ValidationError("exponential mark rate must be positive")
        object.__setattr__(self, "rate", float(self.rate))

    def raw_moment(self, gamma):
        k = int(gamma[0])
        return float(special.factorial(k) / self.rate ** k)

    def sample(self, rng, size):
        return rng.exponential(1.0 / self.rate, size=(size, 1))

    def quadrature(self, nodes=QUAD_NODES):
        t, w = special.roots_laguerre(nodes)
        return (t / self.rate)[:, None], w

    def mgf(self, c):
        c = float(np.atleast_1d(c)[0])
        return self.rate / (self.rate - c) if c < self.rate else np.inf

    def to_json(self):
        return {"family": "exponential", "params": {"rate": self.rate}}


@dataclass(frozen=True)
class UniformMarks(MarkFamily):
    low: float
    high: float
    family = "uniform"

    def __post_init__(self):
        if not self.high > self.low:
            raise ValidationError("uniform marks need low < high")
        object.__setattr__(self, "low", float(self.low))
        object.__setattr__(self, "high", float(self.high))

    def raw_moment(self, gamma):
        k = int(gamma[0])
        a, b = self.low, self.high
        return (b ** (k + 1) - a ** (k + 1)) / ((k + 1) * (b - a))

    def sample(self, rng, size):
        return rng.uniform(self.low, self.high, size=(size, 1))

    def quadrature(self, nodes=QUAD_NODES):
        t, w = special.roots_legendre(nodes)
        a, b = self.low, self.high
        return (0.5 * (b - a) * t + 0.5 * (a + b))[:, None], w / 2.0

    def mgf(self, c):
        c = float(np.atleast_1d(c)[0])
        a, b = self.low, self.high
        if c == 0.0:
            return 1.0
        return (np.exp(c * b) - np.exp(c * a)) / (c * (b - a))

    def to_json(self):
        return {"family": "uniform", "params": {"low": self.low, "high": self.high}}


def marks_from_json(doc) -> MarkFamily:
    if not isinstance(doc, dict) or set(doc) != {"family", "params"}:
        raise ValidationError("marks must be {family, params}")
    fam, p = doc["family"], doc["params"]
    if not isinstance(p, dict):
        raise ValidationError("marks.params must be an object")
    expected = {
        "point": {"atoms", "probs"},
        "gaussian": {"mean", "cov"},
        "exponential": {"rate"},
        "uniform": {"low", "high"},
    }
    if fam not in expected:
        raise UnsupportedMarkFamily(f"unsupported mark family {fam!r}", family=str(fam))
    if set(p) != expected[fam]:
        raise ValidationError(f"{fam} marks need params {sorted(expected[fam])}, got {sorted(p)}")
    if fam == "point":
        return PointMasses(tuple(tuple(np.atleast_1d(a)) for a in p["atoms"]), tuple(p["probs"]))
    if fam == "gaussian":
        return GaussianMarks(tuple(np.atleast_1d(p["mean"])), tuple(map(tuple, np.atleast_2d(p["cov"]))))
    if fam == "exponential":
        return ExponentialMarks(p["rate"])
    return UniformMarks(p["low"], p["high"])


# ---------------------------------------------------------------- kernels

@dataclass(frozen=True)
class JumpStream:
    """Poisson stream with intensity ``rate`` and affine size map.

    ``size`` has shape (1 + state_dim, dim, 1 + k): component r of the jump is
    sum_{i,l} size[i, r, l] * (1, x)_i * (1, u)_l.
    """

    rate: float
    marks: MarkFamily
    size: tuple

    def __post_init__(self):
        if not self.rate > 0:
            raise ValidationError("jump intensity must be positive")
        arr = np.asarray(self.size, dtype=float)
        if arr.ndim != 3 or arr.shape[2] != 1 + self.marks.dim:
            raise ValidationError("size map must have shape (1+state_dim, dim, 1+mark_dim)")
        object.__setattr__(self, "rate", float(self.rate))
        object.__setattr__(self, "size", tuple(map(lambda m: tuple(map(tuple, m)), arr.tolist())))

    @property
    def size_array(self) -> np.ndarray:
        return np.array(self.size)

    @property
    def state_dim(self):
        return len(self.size) - 1

    @property
    def dim(self):
        return len(self.size[0])

    def size_polys(self) -> list:
        """Jump components as polys in (x, u) of dim state_dim + mark_dim."""
        A = self.size_array
        d, k = self.state_dim, self.marks.dim
        nv = d + k
        xs = [Poly.constant(1.0, nv)] + [Poly.var(i, nv) for i in range(d)]
        us = [Poly.constant(1.0, nv)] + [Poly.var(d + l, nv) for l in range(k)]
        out = []
        for r in range(self.dim):
            p = Poly.zero(nv)
            for i in range(d + 1):
                for l in range(k + 1):
                    if A[i, r, l] != 0.0:
                        p = p + (xs[i] * us[l]).scale(A[i, r, l])
            out.append(p)
        return out

    def evaluate(self, x, u) -> np.ndarray:
        """Jump sizes for states x (P, d) and marks u (P, k); returns (P, dim)."""
        A = self.size_array
        xt = np.concatenate([np.ones((x.shape[0], 1)), x], axis=1)
        ut = np.concatenate([np.ones((u.shape[0], 1)), u], axis=1)
        return np.einsum("pi,irl,pl->pr", xt, A, ut)

    def state_independent(self, r) -> bool:
        return not np.any(self.size_array[1:, r, :])

    @classmethod
    def scalar(cls, rate, marks, delta0, delta=None):
        """Size linear in a scalar mark: u * (delta0 + sum_i x_i delta[i])."""
        delta0 = np.atleast_1d(np.asarray(delta0, float))
        D = len(delta0)
        delta = np.zeros((D, D)) if delta is None else np.atleast_2d(np.asarray(delta, float))
        A = np.zeros((1 + delta.shape[0], D, 2))
        A[0, :, 1] = delta0
        A[1:, :, 1] = delta
        return cls(rate, marks, A)

    def to_json(self):
        A = self.size_array
        return {
            "lambda": self.rate,
            "marks": self.marks.to_json(),
            "delta0": A[0].tolist(),
            "delta": A[1:].tolist(),
        }


@dataclass(frozen=True)
class MarkJumpSpec:
    """Finite-activity jump kernel: a list of independent Poisson streams."""

    streams: tuple
    dim: int
    state_dim: int

    def __post_init__(self):
        object.__setattr__(self, "streams", tuple(self.streams))
        for s in self.streams:
            if s.dim != self.dim or s.state_dim != self.state_dim:
                raise ValidationError("jump stream dimensions disagree with kernel")
        object.__setattr__(self, "_cache", {})

    def moment(self, gamma) -> Poly:
        """sum_j lambda_j E[delta(x, U_j)^gamma] as a Poly in the state_dim variables."""
        gamma = tuple(int(g) for g in gamma)
        if gamma in self._cache:
            return self._cache[gamma]
        d = self.state_dim
        total = Poly.zero(d)
        for s in self.streams:
            k = s.marks.dim
            prod = Poly.constant(1.0, d + k)
            for p, g in zip(s.size_polys(), gamma):
                if g:
                    prod = prod * p ** g
            out = {}
            for a, c in prod.items():
                m = s.marks.raw_moment(a[d:])
                out[a[:d]] = out.get(a[:d], 0.0) + c * m
            total = total + Poly(d, out).scale(s.rate)
        self._cache[gamma] = total
        return total

    def first_moments(self) -> list:
        return [self.moment(tuple(int(i == r) for i in range(self.dim))) for r in range(self.dim)]

    def second_moments(self) -> list:
        D = self.dim
        out = [[None] * D for _ in range(D)]
        for i in range(D):
            for j in range(D):
                g = [0] * D
                g[i] += 1
                g[j] += 1
                out[i][j] = self.moment(tuple(g))
        return out

    def total_rate(self) -> float:
        return sum(s.rate for s in self.streams)

    def to_json(self):
        return {"streams": [s.to_json() for s in self.streams]}

    @classmethod
    def from_json(cls, doc, dim, state_dim):
        if not isinstance(doc, dict) or set(doc) != {"streams"}:
            raise ValidationError("kernel must be {streams: [...]}")
        streams = []
        for s in doc["streams"]:
            if not isinstance(s, dict) or set(s) != {"lambda", "marks", "delta0", "delta"}:
                raise ValidationError("stream must have keys lambda, marks, delta0, delta")
            marks = marks_from_json(s["marks"])
            k = marks.dim
            A = np.zeros((1 + state_dim, dim, 1 + k))
            rows = [s["delta0"]] + list(s["delta"])
            if len(rows) != 1 + state_dim:
                raise ValidationError(f"delta must list {state_dim} state loadings")
            for i, row in enumerate(rows):
                if len(row) != dim:
                    raise ValidationError(f"size map rows need {dim} components")
                for r, v in enumerate(row):
                    if isinstance(v, list):
                        if len(v) != 1 + k:
                            raise ValidationError(f"size coefficients need {1 + k} entries (1, u)")
                        A[i, r] = v
                    else:
                        if k != 1:
                            raise ValidationError("scalar size shorthand needs a scalar mark")
                        A[i, r, 1] = float(v)
            streams.append(JumpStream(s["lambda"], marks, A))
        return cls(tuple(streams), dim, state_dim)


def moments_from_kernel(kernel: MarkJumpSpec, max_order: int) -> dict:
    out = {}
    for k in range(3, max_order + 1):
        for g in graded_exponents(kernel.dim, k, start=k):
            m = kernel.moment(g)
            if not m.is_zero():
                out[g] = m
    return out


# ---------------------------------------------------------------- state space

@dataclass(frozen=True)
class StateSpace:
    """Axis-aligned box; infinite bounds allowed.  Used for sampling only."""

    lower: tuple
    upper: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lower)
        hi = tuple(float(v) for v in self.upper)
        if len(lo) != len(hi) or any(not a < b for a, b in zip(lo, hi)):
            raise ValidationError("state space must have nonempty interior (lower < upper)")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def whole(cls, d):
        return cls((-np.inf,) * d, (np.inf,) * d)

    @property
    def dim(self):
        return len(self.lower)

    def sample(self, n, rng=None, scale=1.0) -> np.ndarray:
        rng = np.random.default_rng(0) if rng is None else rng
        out = np.empty((n, self.dim))
        for i, (a, b) in enumerate(zip(self.lower, self.upper)):
            if np.isfinite(a) and np.isfinite(b):
                out[:, i] = rng.uniform(a, b, n)
            elif np.isfinite(a):
                out[:, i] = a + rng.exponential(scale, n)
            elif np.isfinite(b):
                out[:, i] = b - rng.exponential(scale, n)
            else:
                out[:, i] = rng.normal(0.0, scale, n)
        return out

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, float)
        return np.all((x >= np.array(self.lower)) & (x <= np.array(self.upper)), axis=-1)

    def to_json(self):
        f = lambda v: None if not np.isfinite(v) else v
        return {"lower": [f(v) for v in self.lower], "upper": [f(v) for v in self.upper]}

    @classmethod
    def from_json(cls, doc, d):
        if not isinstance(doc, dict) or set(doc) != {"lower", "upper"}:
            raise ValidationError("state_space must be {lower, upper}")
        lo = [-np.inf if v is None else float(v) for v in doc["lower"]]
        hi = [np.inf if v is None else float(v) for v in doc["upper"]]
        if len(lo) != d or len(hi) != d:
            raise ValidationError(f"state_space bounds need {d} entries")
        return cls(tuple(lo), tuple(hi))


# ---------------------------------------------------------------- operator

class PolynomialOperator:
    """Generator acting on polynomials in ``dim`` variables.

    ``moment(gamma)`` returns the jump moment for |gamma| >= 3 as a Poly in
    the same variables.
    """

    def __init__(self, dim, drift, mod_diffusion, moment: Callable):
        self.dim = dim
        self.drift = list(drift)
        self.mod_diffusion = [list(r) for r in mod_diffusion]
        self.moment = moment

    def apply(self, f: Poly) -> Poly:
        d = self.dim
        out = Poly.zero(d)
        grads = [f.diff(i) for i in range(d)]
        for i in range(d):
            if not grads[i].is_zero():
                out = out + self.drift[i] * grads[i]
        for i in range(d):
            for k in range(d):
                A = self.mod_diffusion[i][k]
                if A.is_zero():
                    continue
                h = grads[i].diff(k)
                if not h.is_zero():
                    out = out + (A * h).scale(0.5)
        if f.degree >= 3:
            groups = f.shift().split_degrees(d)
            for g, coef in groups.items():
                if sum(g) >= 3:
                    out = out + coef * self.moment(g)
        return out

    def apply_monomial(self, alpha) -> Poly:
        d = self.dim
        alpha = tuple(alpha)
        out = {}

        def add(p: Poly, mono, c):
            for b, e in p.items():
                key = tuple(x + y for x, y in zip(b, mono))
                out[key] = out.get(key, 0.0) + c * e

        for i in range(d):
            if alpha[i]:
                m = list(alpha)
                m[i] -= 1
                add(self.drift[i], m, alpha[i])
        for i in range(d):
            for k in range(d):
                if i == k:
                    if alpha[i] < 2:
                        continue
                    m = list(alpha)
                    m[i] -= 2
                    c = 0.5 * alpha[i] * (alpha[i] - 1)
                else:
                    if not (alpha[i] and alpha[k]):
                        continue
                    m = list(alpha)
                    m[i] -= 1
                    m[k] -= 1
                    c = 0.5 * alpha[i] * alpha[k]
                add(self.mod_diffusion[i][k], m, c)
        if sum(alpha) >= 3:
            for g in sub_indices(alpha):
                if sum(g) < 3:
                    continue
                m = [a - b for a, b in zip(alpha, g)]
                add(self.moment(g), m, multi_binomial(alpha, g))
        return Poly(d, out)

    def matrix(self, basis: MonomialBasis, closure_error=DegreeViolation) -> np.ndarray:
        N = basis.size
        G = np.zeros((N, N))
        for j, alpha in enumerate(basis.order):
            p = self.apply_monomial(alpha)
            for b, c in p.items():
                i = basis.index.get(b)
                if i is None:
                    raise closure_error(
                        f"generator maps monomial {alpha} to {b}, outside the basis",
                        column=str(alpha),
                        monomial=str(b),
                    )
                G[i, j] = c
        return G

    def carre_du_champ(self, f: Poly, g: Poly) -> Poly:
        return self.apply(f * g) - f * self.apply(g) - g * self.apply(f)


# ---------------------------------------------------------------- spec

def _as_poly_vector(v, d):
    return tuple(p if isinstance(p, Poly) else Poly.constant(float(p), d) for p in v)


@dataclass(frozen=True, eq=False)
class GeneratorSpec:
    dim: int
    drift: tuple
    mod_diffusion: tuple
    jump_moments: dict = field(default_factory=dict)
    moment_order: int | None = None
    kernel: MarkJumpSpec | None = None
    state_space: StateSpace | None = None

    def __post_init__(self):
        d = self.dim
        drift = _as_poly_vector(self.drift, d)
        A = tuple(_as_poly_vector(r, d) for r in self.mod_diffusion)
        if len(drift) != d or len(A) != d or any(len(r) != d for r in A):
            raise ValidationError("drift and mod_diffusion must match dim")
        for p in list(drift) + [q for r in A for q in r]:
            if p.dim != d:
                raise ValidationError("coefficient polynomial has wrong dimension")
        jm = {}
        for a, p in dict(self.jump_moments).items():
            a = tuple(int(v) for v in a)
            if len(a) != d or sum(a) < 3:
                raise ValidationError(f"jump moment key {a} must have length {d} and order >= 3")
            jm[a] = p
        if self.kernel is not None and (self.kernel.dim != d or self.kernel.state_dim != d):
            raise ValidationError("kernel dimensions must equal the spec dimension")
        if jm and self.moment_order is None:
            raise ValidationError("declared jump moments need moment_order")
        object.__setattr__(self, "drift", drift)
        object.__setattr__(self, "mod_diffusion", A)
        object.__setattr__(self, "jump_moments", jm)
        object.__setattr__(self, "state_space", self.state_space or StateSpace.whole(d))

    @property
    def has_jumps(self) -> bool:
        return self.kernel is not None or bool(self.jump_moments)

    def jump_moment(self, gamma) -> Poly:
        gamma = tuple(gamma)
        k = sum(gamma)
        if gamma in self.jump_moments:
            return self.jump_moments[gamma]
        if self.kernel is not None:
            return self.kernel.moment(gamma)
        if self.moment_order is None or k <= self.moment_order:
            return Poly.zero(self.dim)
        raise MissingJumpMoments(
            f"jump moment of order {k} requested but only declared up to {self.moment_order}",
            order=k,
        )

    def operator(self) -> PolynomialOperator:
        return PolynomialOperator(self.dim, self.drift, self.mod_diffusion, self.jump_moment)

    def diffusion(self) -> list:
        """Raw a = A - int xi xi' nu; needs the kernel when there are jumps."""
        if self.kernel is None:
            if self.jump_moments:
                from .errors import KernelRequired

                raise KernelRequired("raw diffusion needs a jump kernel")
            return [list(r) for r in self.mod_diffusion]
        S = self.kernel.second_moments()
        return [[self.mod_diffusion[i][j] - S[i][j] for j in range(self.dim)] for i in range(self.dim)]

    def with_kernel_moments(self, max_order: int) -> "GeneratorSpec":
        """Copy with jump moments declared from the kernel up to max_order."""
        return GeneratorSpec(
            self.dim,
            self.drift,
            self.mod_diffusion,
            moments_from_kernel(self.kernel, max_order),
            max_order,
            None,
            self.state_space,
        )


@dataclass(frozen=True)
class GeneratorMatrix:
    n: int
    basis: MonomialBasis
    G: np.ndarray

    @property
    def size(self):
        return self.basis.size


def build_generator_matrix(spec: GeneratorSpec, n: int) -> GeneratorMatrix:
    basis = GradedBasis(spec.dim, n)
    G = spec.operator().matrix(basis)
    return GeneratorMatrix(n, basis, G)


def apply_generator(spec: GeneratorSpec, f: Poly) -> Poly:
    return spec.operator().apply(f)


def carre_du_champ(spec: GeneratorSpec, f: Poly, g: Poly) -> Poly:
    return spec.operator().carre_du_champ(f, g)


def carre_du_champ_kernel(spec: GeneratorSpec, f: Poly, g: Poly) -> Poly:
    """grad f . a grad g + sum_j lambda_j E[(f(x+delta)-f(x))(g(x+delta)-g(x))]."""
    d = spec.dim
    a = spec.diffusion()
    gf, gg = f.gradient(), g.gradient()
    out = Poly.zero(d)
    for i in range(d):
        for k in range(d):
            if not a[i][k].is_zero():
                out = out + gf[i] * a[i][k] * gg[k]
    if spec.kernel is not None:
        for s in spec.kernel.streams:
            k = s.marks.dim
            nv = d + k
            xs = [Poly.var(i, nv) for i in range(d)]
            shifted = [x + dp for x, dp in zip(xs, s.size_polys())]
            fe = f.embed(nv, range(d))
            ge = g.embed(nv, range(d))
            prod = (f.substitute(shifted) - fe) * (g.substitute(shifted) - ge)
            acc = {}
            for b, c in prod.items():
                acc[b[:d]] = acc.get(b[:d], 0.0) + c * s.marks.raw_moment(b[d:])
            out = out + Poly(d, acc).scale(s.rate)
    return out


def _gradient(f, x, h=None):
    x = np.asarray(x, float)
    if isinstance(f, Poly):
        return np.array([f.diff(i)(x) for i in range(len(x))])
    d = len(x)
    pts = []
    steps = []
    for i in range(d):
        hi = h if h is not None else 1e-6 * max(1.0, abs(x[i]))
        e = np.zeros(d)
        e[i] = hi
        pts += [x + e, x - e]
        steps.append(hi)
    vals = np.asarray(f(np.array(pts)), float)
    return np.array([(vals[2 * i] - vals[2 * i + 1]) / (2 * steps[i]) for i in range(d)])


def _fvals(f, pts):
    if isinstance(f, Poly):
        return f(pts)
    return np.asarray(f(pts), float)


def diffusion_at(spec: GeneratorSpec, x) -> np.ndarray:
    x = np.asarray(x, float)
    a = spec.diffusion()
    return np.array([[a[i][k](x) for k in range(spec.dim)] for i in range(spec.dim)])


def gamma_pointwise(spec: GeneratorSpec, f, g, x, diffusive_only: bool = False) -> float:
    """Carre-du-champ at a point for general functions.

    ``f`` and ``g`` are Polys or vectorized callables taking an (npts, d)
    array.  Needs a kernel unless the spec has no jumps.
    """
    x = np.asarray(x, float)
    amat = diffusion_at(spec, x)
    lam = np.linalg.eigvalsh(0.5 * (amat + amat.T))
    scale = max(1.0, np.abs(amat).max())
    if lam.min() < -1e-10 * scale:
        raise NegativeDiffusion(f"diffusion matrix not PSD at {x.tolist()} (min eig {lam.min():.3e})", min_eig=float(lam.min()))
    total = float(_gradient(f, x) @ amat @ _gradient(g, x))
    if diffusive_only or spec.kernel is None:
        return total
    fx = float(_fvals(f, x[None, :])[0])
    gx = float(_fvals(g, x[None, :])[0])
    for s in spec.kernel.streams:
        def integrand(u, s=s):
            xs = np.repeat(x[None, :], u.shape[0], axis=0)
            y = xs + s.evaluate(xs, u)
            return (_fvals(f, y) - fx) * (_fvals(g, y) - gx)

        total += s.rate * float(s.marks.expect(integrand))
    return total


# ---------------------------------------------------------------- validation

@dataclass(frozen=True)
class Check:
    name: str
    ok: bool
    margin: float
    detail: str = ""


def _degree_checks(spec: GeneratorSpec) -> list:
    checks = []
    for i, b in enumerate(spec.drift):
        checks.append(Check(f"deg drift[{i}] <= 1", b.degree <= 1, 1 - b.degree, b.to_string()))
    for i in range(spec.dim):
        for k in range(i, spec.dim):
            A = spec.mod_diffusion[i][k]
            checks.append(Check(f"deg mod_diffusion[{i}][{k}] <= 2", A.degree <= 2, 2 - A.degree))
            if k > i:
                sym = A.allclose(spec.mod_diffusion[k][i], atol=ABS_TOL, rtol=REL_TOL)
                checks.append(Check(f"mod_diffusion[{i}][{k}] symmetric", sym, 0.0 if sym else -1.0))
    for a, M in spec.jump_moments.items():
        checks.append(Check(f"deg jump_moments{list(a)} <= {sum(a)}", M.degree <= sum(a), sum(a) - M.degree))
    return checks


def validation_checks(spec: GeneratorSpec, n_points: int = 64, seed: int = 0) -> list:
    checks = _degree_checks(spec)
    d = spec.dim
    pts = spec.state_space.sample(n_points, np.random.default_rng(seed))
    if spec.kernel is not None and spec.jump_moments:
        worst = 0.0
        for a, M in spec.jump_moments.items():
            K = spec.kernel.moment(a)
            for p in pts:
                u, v = M(p), K(p)
                err = abs(u - v) - (ABS_TOL + REL_TOL * max(abs(u), abs(v)))
                worst = max(worst, err)
        checks.append(Check("declared moments match kernel", worst <= 0.0, -worst))
    # even pure-jump moments must be nonnegative
    even = {}
    if spec.kernel is not None:
        order = spec.moment_order or 4
        for k in range(4, order + 1, 2):
            for a in graded_exponents(d, k, start=k):
                if all(v % 2 == 0 for v in a):
                    even[a] = spec.jump_moment(a)
    for a, M in spec.jump_moments.items():
        if all(v % 2 == 0 for v in a):
            even[a] = M
    if even:
        low = min(float(np.min(M(pts))) for M in even.values())
        checks.append(Check("even jump moments >= 0", low >= -ABS_TOL, low))
    # diffusion PSD
    try:
        a = spec.diffusion()
        name = "diffusion a(x) PSD"
    except ValidationError:
        a = [list(r) for r in spec.mod_diffusion]
        name = "modified diffusion PSD"
    worst = np.inf
    for p in pts:
        m = np.array([[a[i][k](p) for k in range(d)] for i in range(d)])
        lam = np.linalg.eigvalsh(0.5 * (m + m.T)).min()
        worst = min(worst, lam + 1e-10 * max(1.0, np.abs(m).max()))
    checks.append(Check(name, worst >= 0.0, float(worst)))
    return checks


def validate_spec(spec: GeneratorSpec, n_points: int = 64, seed: int = 0) -> GeneratorSpec:
    for c in validation_checks(spec, n_points, seed):
        if c.ok:
            continue
        if c.name.startswith("deg") or "symmetric" in c.name:
            raise DegreeViolation(f"{c.name} fails ({c.detail})".strip(), coefficient=c.name)
        if "match kernel" in c.name:
            raise MomentMismatch("declared jump moments disagree with the kernel", margin=c.margin)
        if "even jump" in c.name:
            raise NegativeMoment("an even jump moment is negative on the state space", margin=c.margin)
        raise NegativeDiffusion(f"{c.name} fails (min eigenvalue {c.margin:.3e})", margin=c.margin)
    return spec


# ---------------------------------------------------------------- helpers

def linear_sde_spec(drift_const, drift_lin, vol_const, vol_lin, kernel=None, state_space=None, moment_order=None):
    """Spec of dX = (b0 + B x) dt + (S0 + sum_i x_i S_i) dW (+ jumps).

    ``drift_lin[i]`` is the column multiplying x_i; ``vol_lin[i]`` the
    d x m loading multiplying x_i.
    """
    b0 = np.atleast_1d(np.asarray(drift_const, float))
    d = len(b0)
    B = np.asarray(drift_lin, float).reshape(d, d)
    S0 = np.asarray(vol_const, float).reshape(d, -1)
    S = np.asarray(vol_lin, float).reshape(d, d, -1)
    xs = [Poly.constant(1.0, d)] + [Poly.var(i, d) for i in range(d)]
    drift = [Poly.constant(b0[r], d) + sum((xs[1 + i].scale(B[i][r]) for i in range(d)), Poly.zero(d)) for r in range(d)]
    loads = [S0] + [S[i] for i in range(d)]
    vol = [[sum((xs[i].scale(loads[i][r][c]) for i in range(d + 1)), Poly.zero(d)) for c in range(S0.shape[1])] for r in range(d)]
    A = [[sum((vol[r][c] * vol[q][c] for c in range(S0.shape[1])), Poly.zero(d)) for q in range(d)] for r in range(d)]
    if kernel is not None:
        S2 = kernel.second_moments()
        A = [[A[r][q] + S2[r][q] for q in range(d)] for r in range(d)]
    return GeneratorSpec(d, drift, A, {}, moment_order, kernel, state_space)
