"""Sparse multivariate polynomials and graded monomial bases.

A ``Poly`` maps exponent tuples to float coefficients.  Arithmetic prunes
coefficients below ``PRUNE_TOL``.  Bases enumerate monomials in graded
lexicographic order: degree-major, and within a degree the exponent
tuples in descending order, so for d=2 the order is 1, x1, x2, x1^2,
x1*x2, x2^2, ...
"""
from __future__ import annotations

import itertools
from math import comb, factorial, prod
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DegreeViolation, ValidationError

PRUNE_TOL = 1e-14

Exponent = tuple


def degree_of(alpha) -> int:
    return int(sum(alpha))


def multi_binomial(alpha, gamma) -> int:
    return prod(comb(a, g) for a, g in zip(alpha, gamma))


def multi_factorial(gamma) -> int:
    return prod(factorial(g) for g in gamma)


def sub_indices(alpha):
    """All gamma with gamma <= alpha componentwise."""
    return itertools.product(*(range(a + 1) for a in alpha))


def exponents_of_degree(d: int, k: int) -> list:
    """Exponent tuples of total degree k in descending lexicographic order."""
    if d == 1:
        return [(k,)]
    out = []
    for first in range(k, -1, -1):
        for rest in exponents_of_degree(d - 1, k - first):
            out.append((first,) + rest)
    return out


def graded_exponents(d: int, n: int, start: int = 0) -> list:
    out = []
    for k in range(start, n + 1):
        out.extend(exponents_of_degree(d, k))
    return out


class Poly:
    """Immutable sparse polynomial in ``dim`` variables."""

    __slots__ = ("dim", "_terms", "_hash")

    def __init__(self, dim: int, terms: Mapping | None = None, prune: bool = True):
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = int(dim)
        clean = {}
        if terms:
            for alpha, c in terms.items():
                alpha = tuple(int(a) for a in alpha)
                if len(alpha) != self.dim:
                    raise ValueError(f"exponent {alpha} has wrong length for dim={dim}")
                if min(alpha) < 0:
                    raise ValueError(f"negative exponent {alpha}")
                c = float(c)
                if prune and abs(c) < PRUNE_TOL:
                    continue
                if c == 0.0:
                    continue
                clean[alpha] = c
        self._terms = clean
        self._hash = None

    # constructors
    @classmethod
    def zero(cls, dim):
        return cls(dim)

    @classmethod
    def constant(cls, c, dim):
        return cls(dim, {(0,) * dim: c})

    @classmethod
    def var(cls, i, dim, coeff=1.0):
        alpha = [0] * dim
        alpha[i] = 1
        return cls(dim, {tuple(alpha): coeff})

    @classmethod
    def monomial(cls, alpha, coeff=1.0):
        alpha = tuple(alpha)
        return cls(len(alpha), {alpha: coeff})

    @classmethod
    def affine(cls, const, linear):
        """const + sum_i linear[i] * x_i."""
        linear = np.asarray(linear, dtype=float).ravel()
        dim = len(linear)
        terms = {(0,) * dim: float(const)}
        for i, v in enumerate(linear):
            alpha = [0] * dim
            alpha[i] = 1
            terms[tuple(alpha)] = float(v)
        return cls(dim, terms)

    # access
    @property
    def terms(self) -> dict:
        return dict(self._terms)

    def items(self):
        return self._terms.items()

    def __len__(self):
        return len(self._terms)

    def coeff(self, alpha) -> float:
        return self._terms.get(tuple(alpha), 0.0)

    @property
    def degree(self) -> int:
        if not self._terms:
            return 0
        return max(sum(a) for a in self._terms)

    def is_zero(self) -> bool:
        return not self._terms

    def is_constant(self) -> bool:
        return all(sum(a) == 0 for a in self._terms)

    def constant_term(self) -> float:
        return self._terms.get((0,) * self.dim, 0.0)

    # arithmetic
    def _check(self, other):
        if other.dim != self.dim:
            raise ValueError(f"dimension mismatch: {self.dim} vs {other.dim}")

    def _lift(self, other):
        if isinstance(other, Poly):
            self._check(other)
            return other
        if isinstance(other, (int, float, np.integer, np.floating)):
            return Poly.constant(float(other), self.dim)
        return NotImplemented

    def __add__(self, other):
        other = self._lift(other)
        if other is NotImplemented:
            return other
        out = dict(self._terms)
        for a, c in other._terms.items():
            out[a] = out.get(a, 0.0) + c
        return Poly(self.dim, out)

    __radd__ = __add__

    def __neg__(self):
        return Poly(self.dim, {a: -c for a, c in self._terms.items()}, prune=False)

    def __sub__(self, other):
        other = self._lift(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other):
        other = self._lift(other)
        if other is NotImplemented:
            return other
        return other + (-self)

    def scale(self, s):
        s = float(s)
        if s == 0.0:
            return Poly(self.dim)
        return Poly(self.dim, {a: s * c for a, c in self._terms.items()})

    def __mul__(self, other):
        if isinstance(other, (int, float, np.integer, np.floating)):
            return self.scale(other)
        if not isinstance(other, Poly):
            return NotImplemented
        self._check(other)
        out = {}
        for a, c in self._terms.items():
            for b, e in other._terms.items():
                key = tuple(x + y for x, y in zip(a, b))
                out[key] = out.get(key, 0.0) + c * e
        return Poly(self.dim, out)

    __rmul__ = __mul__

    def __truediv__(self, s):
        return self.scale(1.0 / float(s))

    def __pow__(self, k: int):
        k = int(k)
        if k < 0:
            raise ValueError("negative power")
        out = Poly.constant(1.0, self.dim)
        base = self
        while k:
            if k & 1:
                out = out * base
            k >>= 1
            if k:
                base = base * base
        return out

    def __eq__(self, other):
        if isinstance(other, (int, float)):
            other = Poly.constant(other, self.dim)
        if not isinstance(other, Poly):
            return NotImplemented
        return self.dim == other.dim and self._terms == other._terms

    def __hash__(self):
        if self._hash is None:
            self._hash = hash((self.dim, frozenset(self._terms.items())))
        return self._hash

    def allclose(self, other, atol=1e-12, rtol=0.0) -> bool:
        self._check(other)
        keys = set(self._terms) | set(other._terms)
        for k in keys:
            a, b = self.coeff(k), other.coeff(k)
            if abs(a - b) > atol + rtol * max(abs(a), abs(b)):
                return False
        return True

    def max_abs_coeff(self) -> float:
        return max((abs(c) for c in self._terms.values()), default=0.0)

    # calculus and substitution
    def diff(self, i: int, k: int = 1) -> Poly:
        out = {}
        for a, c in self._terms.items():
            if a[i] < k:
                continue
            f = 1
            for j in range(k):
                f *= a[i] - j
            b = list(a)
            b[i] -= k
            out[tuple(b)] = c * f
        return Poly(self.dim, out)

    def gradient(self) -> list:
        return [self.diff(i) for i in range(self.dim)]

    def substitute(self, polys: Sequence[Poly]) -> Poly:
        """Compose: replace variable i by ``polys[i]`` (all of a common dim)."""
        if len(polys) != self.dim:
            raise ValueError("need one polynomial per variable")
        new_dim = polys[0].dim
        powers = [dict() for _ in range(self.dim)]

        def power(i, k):
            cache = powers[i]
            if k not in cache:
                cache[k] = polys[i] ** k if k < 2 else power(i, k - 1) * polys[i]
            return cache[k]

        out = {}
        for a, c in self._terms.items():
            term = Poly.constant(c, new_dim)
            for i, ai in enumerate(a):
                if ai:
                    term = term * power(i, ai)
            for b, e in term._terms.items():
                out[b] = out.get(b, 0.0) + e
        return Poly(new_dim, out)

    def embed(self, new_dim: int, positions: Sequence[int]) -> Poly:
        """Relabel variable i as variable positions[i] of a new_dim space."""
        out = {}
        for a, c in self._terms.items():
            b = [0] * new_dim
            for i, ai in enumerate(a):
                b[positions[i]] += ai
            out[tuple(b)] = c
        return Poly(new_dim, out, prune=False)

    def shift(self) -> Poly:
        """p(x + xi) as a polynomial in the 2*dim variables (x, xi)."""
        d = self.dim
        out = {}
        for a, c in self._terms.items():
            for g in sub_indices(a):
                key = tuple(ai - gi for ai, gi in zip(a, g)) + tuple(g)
                out[key] = out.get(key, 0.0) + c * multi_binomial(a, g)
        return Poly(2 * d, out)

    def split_degrees(self, first: int) -> dict:
        """Group terms by the exponent of the trailing variables.

        Returns a dict mapping the trailing exponent to a Poly in the
        leading ``first`` variables.
        """
        groups = {}
        for a, c in self._terms.items():
            groups.setdefault(a[first:], {})[a[:first]] = c
        return {k: Poly(first, v, prune=False) for k, v in groups.items()}

    # evaluation
    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise ValueError(f"point has dimension {x.shape[-1]}, expected {self.dim}")
        if not self._terms:
            return np.zeros(x.shape[:-1]) if x.ndim > 1 else 0.0
        if x.ndim == 1:
            total = 0.0
            for a, c in self._terms.items():
                m = c
                for xi, ai in zip(x, a):
                    if ai:
                        m *= xi ** ai
                total += m
            return float(total)
        total = np.zeros(x.shape[:-1])
        for a, c in self._terms.items():
            m = np.full(x.shape[:-1], c)
            for i, ai in enumerate(a):
                if ai:
                    m = m * x[..., i] ** ai
            total += m
        return total

    # serialization
    def to_json(self) -> list:
        return [
            {"exponents": list(a), "coeff": c}
            for a, c in sorted(self._terms.items(), key=lambda t: (sum(t[0]), tuple(-v for v in t[0])))
        ]

    @classmethod
    def from_json(cls, records, dim: int) -> Poly:
        if isinstance(records, (int, float)) and not isinstance(records, bool):
            return cls.constant(float(records), dim)
        if not isinstance(records, list):
            raise ValidationError("polynomial must be a list of {exponents, coeff} records or a number")
        terms = {}
        for r in records:
            if not isinstance(r, dict) or set(r) != {"exponents", "coeff"}:
                raise ValidationError(f"bad polynomial term {r!r}")
            alpha = r["exponents"]
            if not isinstance(alpha, list) or len(alpha) != dim or not all(
                isinstance(a, int) and not isinstance(a, bool) and a >= 0 for a in alpha
            ):
                raise ValidationError(f"bad exponents {alpha!r} for dim={dim}")
            c = r["coeff"]
            if isinstance(c, bool) or not isinstance(c, (int, float)):
                raise ValidationError(f"bad coefficient {c!r}")
            key = tuple(alpha)
            terms[key] = terms.get(key, 0.0) + float(c)
        return cls(dim, terms)

    def __repr__(self):
        return f"Poly({self.dim}, {self.to_string()})"

    def to_string(self, names: Sequence[str] | None = None) -> str:
        if not self._terms:
            return "0"
        if names is None:
            names = ["x"] if self.dim == 1 else [f"x{i + 1}" for i in range(self.dim)]
        parts = []
        for a, c in sorted(self._terms.items(), key=lambda t: (sum(t[0]), tuple(-v for v in t[0]))):
            mono = "*".join(
                names[i] if ai == 1 else f"{names[i]}^{ai}" for i, ai in enumerate(a) if ai
            )
            parts.append(f"{c!r}" if not mono else (mono if c == 1.0 else f"{c!r}*{mono}"))
        return " + ".join(parts)


def x_vars(dim: int) -> list:
    return [Poly.var(i, dim) for i in range(dim)]


class MonomialBasis:
    """An ordered list of exponent tuples spanning a space of polynomials."""

    def __init__(self, dim: int, exponents: Iterable):
        self.dim = int(dim)
        self.order = [tuple(a) for a in exponents]
        self.index = {a: i for i, a in enumerate(self.order)}
        if len(self.index) != len(self.order):
            raise ValueError("duplicate monomials in basis")

    @property
    def size(self) -> int:
        return len(self.order)

    def __len__(self):
        return len(self.order)

    def __contains__(self, alpha):
        return tuple(alpha) in self.index

    def degrees(self) -> np.ndarray:
        return np.array([sum(a) for a in self.order])

    def to_coordinates(self, p: Poly, tol: float = 0.0) -> np.ndarray:
        if p.dim != self.dim:
            raise ValueError(f"dimension mismatch: poly dim {p.dim}, basis dim {self.dim}")
        v = np.zeros(self.size)
        for a, c in p.items():
            j = self.index.get(a)
            if j is None:
                if abs(c) <= tol:
                    continue
                raise DegreeViolation(f"monomial {a} lies outside the basis", monomial=str(a))
            v[j] = c
        return v

    def from_coordinates(self, v) -> Poly:
        v = np.asarray(v, dtype=float)
        if v.shape != (self.size,):
            raise ValueError("coordinate vector has wrong length")
        return Poly(self.dim, {a: c for a, c in zip(self.order, v) if c != 0.0}, prune=False)

    def evaluate(self, x) -> np.ndarray:
        """Vector of monomial values at a point (or matrix for many points)."""
        x = np.asarray(x, dtype=float)
        maxdeg = max((max(a) for a in self.order), default=0)
        pw = x[..., None] ** np.arange(maxdeg + 1)
        out = np.ones(x.shape[:-1] + (self.size,))
        for j, a in enumerate(self.order):
            for i, ai in enumerate(a):
                if ai:
                    out[..., j] *= pw[..., i, ai]
        return out


class GradedBasis(MonomialBasis):
    """All monomials of degree <= n in d variables, graded lexicographic."""

    def __init__(self, dim: int, degree: int):
        self.degree = int(degree)
        super().__init__(dim, graded_exponents(dim, self.degree))

    def to_coordinates(self, p: Poly, tol: float = 0.0) -> np.ndarray:
        if p.dim == self.dim and p.degree > self.degree:
            big = [a for a, c in p.items() if sum(a) > self.degree and abs(c) > tol]
            if big:
                raise DegreeViolation(
                    f"degree {p.degree} exceeds basis degree {self.degree}", degree=p.degree
                )
        return super().to_coordinates(p, tol)


def to_coordinates(p: Poly, basis: MonomialBasis) -> np.ndarray:
    return basis.to_coordinates(p)


def from_coordinates(v, basis: MonomialBasis) -> Poly:
    return basis.from_coordinates(v)


def binomial_shift(p: Poly) -> Poly:
    return p.shift()


class PolyEvaluator:
    """Evaluate many polynomials at many points through a shared monomial table."""

    def __init__(self, polys: Sequence[Poly]):
        polys = list(polys)
        if not polys:
            raise ValueError("need at least one polynomial")
        self.dim = polys[0].dim
        monos = sorted({a for p in polys for a in p._terms}, key=lambda a: (sum(a), a))
        self.monos = monos
        idx = {a: i for i, a in enumerate(monos)}
        self.coef = np.zeros((len(monos), len(polys)))
        for j, p in enumerate(polys):
            for a, c in p.items():
                self.coef[idx[a], j] = c
        self.maxdeg = max((max(a) for a in monos), default=0)
        self.n_out = len(polys)

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        npts = x.shape[0]
        if not self.monos:
            return np.zeros((npts, self.n_out))
        pw = [[np.ones(npts), x[:, i]] for i in range(self.dim)]
        for i in range(self.dim):
            for k in range(2, self.maxdeg + 1):
                pw[i].append(pw[i][-1] * x[:, i])
        table = np.empty((npts, len(self.monos)))
        for j, a in enumerate(self.monos):
            col = None
            for i, ai in enumerate(a):
                if ai:
                    col = pw[i][ai] if col is None else col * pw[i][ai]
            table[:, j] = 1.0 if col is None else col
        return table @ self.coef
