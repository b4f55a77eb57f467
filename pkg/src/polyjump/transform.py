"""Polynomial transformations and augmentations of a polynomial process.

``PowerAugmentation``: the process H(X) of all monomials of X up to degree n.
``AugmentedSpec``: a pair (X, Y) where Y has conditionally Levy increments
with coefficients polynomial in X.  Its generator maps the space V_m,
spanned by x^a y^b with |a| <= n (m - |b|), into itself.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ClosureViolation, DegreeViolation, MissingJumpMoments, ValidationError
from .generator import (
    Check,
    GeneratorMatrix,
    GeneratorSpec,
    JumpStream,
    MarkJumpSpec,
    PolynomialOperator,
    build_generator_matrix,
)
from .moments import conditional_moment
from .polyalg import GradedBasis, MonomialBasis, Poly, exponents_of_degree, graded_exponents


# ---------------------------------------------------------------- H(X)

def _chunk(alpha, H_index, n):
    """Factor x^alpha into a product of monomials of degree <= n."""
    rem = list(alpha)
    counts = [0] * len(H_index)
    while sum(rem) > 0:
        need = min(n, sum(rem))
        c = [0] * len(rem)
        for i in range(len(rem)):
            t = min(rem[i], need)
            c[i] = t
            rem[i] -= t
            need -= t
            if need == 0:
                break
        counts[H_index[tuple(c)]] += 1
    return tuple(counts)


def _jump_integral(p: Poly, d: int, mod_diffusion, moment: Callable) -> Poly:
    """Integrate a poly in (x, xi) against nu, xi^g -> moment for |g| >= 3.

    Degree-2 terms in xi are matched with the modified diffusion, which is
    valid when they come from products of terms linear in the jump.
    """
    out = Poly.zero(d)
    for g, coef in p.split_degrees(d).items():
        k = sum(g)
        if k == 0 or k == 1:
            if not coef.is_zero():
                raise ValueError("jump integrand has terms of order < 2")
            continue
        if k == 2:
            idx = [i for i, v in enumerate(g) for _ in range(v)]
            out = out + coef * mod_diffusion[idx[0]][idx[1]]
        else:
            out = out + coef * moment(g)
    return out


@dataclass
class PowerAugmentation:
    spec: GeneratorSpec
    n: int
    m: int
    H: list
    base: GeneratorMatrix

    @property
    def N(self) -> int:
        return len(self.H)

    @property
    def H_index(self):
        return {h: i for i, h in enumerate(self.H)}

    def H_polys(self) -> list:
        return [Poly.monomial(h) for h in self.H]

    def lift_state(self, x) -> np.ndarray:
        x = np.asarray(x, float)
        return np.array([np.prod(x ** np.array(h)) for h in self.H])

    def pullback(self, fbar: Poly) -> Poly:
        return fbar.substitute(self.H_polys())

    def pushforward(self, p: Poly) -> Poly:
        idx = self.H_index
        out = {}
        for a, c in p.items():
            key = _chunk(a, idx, self.n)
            out[key] = out.get(key, 0.0) + c
        return Poly(self.N, out)

    @property
    def basis_bar(self) -> list:
        return [self.pushforward(Poly.monomial(a)) for a in self.base.basis.order]

    @property
    def G(self) -> np.ndarray:
        """Matrix of the augmented generator w.r.t. ``basis_bar``."""
        return self.base.G

    def apply(self, fbar: Poly) -> Poly:
        return self.pushforward(self.spec.operator().apply(self.pullback(fbar)))

    def moment(self, fbar: Poly, tau: float, x) -> float:
        return conditional_moment(self.base, self.pullback(fbar), tau, x)

    def transformed_spec(self, moment_order: int | None = None) -> GeneratorSpec:
        """Coefficients of H(X) as a polynomial process on R^N."""
        op = self.spec.operator()
        hs = self.H_polys()
        d, N = self.spec.dim, self.N
        drift = [self.pushforward(op.apply(h)) for h in hs]
        A = [[self.pushforward(op.carre_du_champ(hs[k], hs[l])) for l in range(N)] for k in range(N)]
        moments = {}
        order = None
        if self.spec.has_jumps:
            order = self.m if moment_order is None else moment_order
            incr = []
            for h in hs:
                sh = h.shift()
                incr.append(sh - h.embed(2 * d, range(d)))
            for k in range(3, order + 1):
                for g in exponents_of_degree(N, k):
                    p = Poly.constant(1.0, 2 * d)
                    for i, gi in enumerate(g):
                        if gi:
                            p = p * incr[i] ** gi
                    M = self.pushforward(_jump_integral(p, d, self.spec.mod_diffusion, self.spec.jump_moment))
                    if not M.is_zero():
                        moments[g] = M
        return GeneratorSpec(N, drift, A, moments, order)


def power_augment(spec: GeneratorSpec, n: int, m: int = 1) -> PowerAugmentation:
    if n < 1 or m < 0:
        raise ValueError("need n >= 1 and m >= 0")
    H = graded_exponents(spec.dim, n, start=1)
    return PowerAugmentation(spec, n, m, H, build_generator_matrix(spec, n * m))


# ---------------------------------------------------------------- V_m

class VmBasis(MonomialBasis):
    """Monomials x^a y^b with |b| <= m and |a| <= n (m - |b|)."""

    def __init__(self, n: int, m: int, d: int, e: int):
        self.n, self.m, self.d, self.e = int(n), int(m), int(d), int(e)
        exps = []
        for kb in range(m + 1):
            for ka in range(n * (m - kb) + 1):
                block = [a + b for b in exponents_of_degree(e, kb) for a in exponents_of_degree(d, ka)]
                block.sort(reverse=True)
                exps.extend(block)
        super().__init__(d + e, exps)

    @property
    def pairs(self) -> list:
        return [(a[: self.d], a[self.d :]) for a in self.order]

    def to_coordinates(self, p: Poly, tol: float = 0.0) -> np.ndarray:
        try:
            return super().to_coordinates(p, tol)
        except DegreeViolation as exc:
            raise ClosureViolation(f"polynomial lies outside V_{self.m}: {exc}") from exc


def build_vm_basis(n: int, m: int, d: int, e: int) -> VmBasis:
    return VmBasis(n, m, d, e)


def vm_dimension(n: int, m: int, d: int, e: int) -> int:
    from math import comb

    return sum(comb(k + e - 1, e - 1) * comb(n * (m - k) + d, d) for k in range(m + 1))


@dataclass(frozen=True, eq=False)
class AugmentedSpec:
    base: GeneratorSpec
    n: int
    e: int
    bY: tuple
    modAY: tuple
    modAXY: tuple
    mixed_moments: dict = field(default_factory=dict)
    moment_order: int | None = None
    joint_kernel: MarkJumpSpec | None = None
    moment_fn: Callable | None = None

    def __post_init__(self):
        d, e = self.base.dim, self.e
        cast = lambda p: p if isinstance(p, Poly) else Poly.constant(float(p), d)
        bY = tuple(cast(p) for p in self.bY)
        AY = tuple(tuple(cast(p) for p in r) for r in self.modAY)
        AXY = tuple(tuple(cast(p) for p in r) for r in self.modAXY)
        if len(bY) != e or len(AY) != e or any(len(r) != e for r in AY):
            raise ValidationError("bY / modAY do not match e")
        if len(AXY) != d or any(len(r) != e for r in AXY):
            raise ValidationError("modAXY must be d x e")
        mm = {}
        for (a, b), p in dict(self.mixed_moments).items():
            a, b = tuple(a), tuple(b)
            if len(a) != d or len(b) != e or sum(a) + sum(b) < 3 or sum(b) == 0:
                raise ValidationError(f"bad mixed moment key {(a, b)}")
            mm[(a, b)] = p
        if mm and self.moment_order is None:
            raise ValidationError("declared mixed moments need moment_order")
        jk = self.joint_kernel
        if jk is not None:
            if jk.dim != d + e or jk.state_dim != d:
                raise ValidationError("joint kernel must have dim d+e and state_dim d")
            for s in jk.streams:
                for r in range(d, d + e):
                    if not s.state_independent(r):
                        raise ValidationError("Y jump sizes must not depend on the state")
        object.__setattr__(self, "bY", bY)
        object.__setattr__(self, "modAY", AY)
        object.__setattr__(self, "modAXY", AXY)
        object.__setattr__(self, "mixed_moments", mm)

    @property
    def d(self) -> int:
        return self.base.dim

    @property
    def dim(self) -> int:
        return self.base.dim + self.e

    @property
    def has_y_jumps(self) -> bool:
        return bool(self.mixed_moments) or self.moment_fn is not None or self.joint_kernel is not None

    def mixed_moment(self, alpha, beta) -> Poly:
        alpha, beta = tuple(alpha), tuple(beta)
        if sum(beta) == 0:
            return self.base.jump_moment(alpha)
        if (alpha, beta) in self.mixed_moments:
            return self.mixed_moments[(alpha, beta)]
        if self.moment_fn is not None:
            return self.moment_fn(alpha, beta)
        if self.joint_kernel is not None:
            return self.joint_kernel.moment(alpha + beta)
        k = sum(alpha) + sum(beta)
        if self.moment_order is None or k <= self.moment_order:
            return Poly.zero(self.d)
        raise MissingJumpMoments(f"mixed moment of order {k} not declared", order=k)

    def joint_drift(self) -> list:
        D = self.dim
        pos = range(self.d)
        return [p.embed(D, pos) for p in self.base.drift] + [p.embed(D, pos) for p in self.bY]

    def joint_mod_diffusion(self) -> list:
        d, e, D = self.d, self.e, self.dim
        pos = range(d)
        A = [[None] * D for _ in range(D)]
        for i in range(d):
            for j in range(d):
                A[i][j] = self.base.mod_diffusion[i][j].embed(D, pos)
            for l in range(e):
                A[i][d + l] = self.modAXY[i][l].embed(D, pos)
                A[d + l][i] = A[i][d + l]
        for l in range(e):
            for k in range(e):
                A[d + l][d + k] = self.modAY[l][k].embed(D, pos)
        return A

    def joint_moment(self, gamma) -> Poly:
        return self.mixed_moment(gamma[: self.d], gamma[self.d :]).embed(self.dim, range(self.d))

    def operator(self) -> PolynomialOperator:
        return PolynomialOperator(self.dim, self.joint_drift(), self.joint_mod_diffusion(), self.joint_moment)

    def joint_spec(self) -> GeneratorSpec:
        """The pair (X, Y) as one kernel-backed spec on R^(d+e).

        Used for pointwise evaluations and simulation; needs a kernel
        whenever there are jumps.
        """
        from .errors import KernelRequired

        kernel = self.joint_kernel_full()
        if kernel is None and (self.has_y_jumps or self.base.has_jumps):
            raise KernelRequired("joint evaluation of a jump model needs a kernel")
        return GeneratorSpec(self.dim, self.joint_drift(), self.joint_mod_diffusion(), {}, None, kernel)

    def joint_kernel_full(self) -> MarkJumpSpec | None:
        """Joint kernel re-indexed so sizes may depend on all d+e variables."""
        if self.joint_kernel is None:
            if self.base.kernel is not None and not self.has_y_jumps:
                streams = []
                for s in self.base.kernel.streams:
                    A = s.size_array
                    B = np.zeros((1 + self.dim, self.dim, A.shape[2]))
                    B[: 1 + self.d, : self.d] = A
                    streams.append(JumpStream(s.rate, s.marks, B))
                return MarkJumpSpec(tuple(streams), self.dim, self.dim)
            return None
        streams = []
        for s in self.joint_kernel.streams:
            A = s.size_array
            B = np.zeros((1 + self.dim, self.dim, A.shape[2]))
            B[: 1 + self.d] = A
            streams.append(JumpStream(s.rate, s.marks, B))
        return MarkJumpSpec(tuple(streams), self.dim, self.dim)


def augmented_checks(aug: AugmentedSpec) -> list:
    n = aug.n
    out = []
    for i, p in enumerate(aug.bY):
        out.append(Check(f"deg bY[{i}] <= {n}", p.degree <= n, n - p.degree))
    for i in range(aug.e):
        for k in range(aug.e):
            p = aug.modAY[i][k]
            out.append(Check(f"deg modAY[{i}][{k}] <= {2 * n}", p.degree <= 2 * n, 2 * n - p.degree))
    for i in range(aug.d):
        for k in range(aug.e):
            p = aug.modAXY[i][k]
            out.append(Check(f"deg modAXY[{i}][{k}] <= {1 + n}", p.degree <= 1 + n, 1 + n - p.degree))
    for (a, b), p in aug.mixed_moments.items():
        lim = sum(a) + n * sum(b)
        out.append(Check(f"deg mixed_moments{list(a)}{list(b)} <= {lim}", p.degree <= lim, lim - p.degree))
    return out


def validate_augmented(aug: AugmentedSpec) -> AugmentedSpec:
    for c in augmented_checks(aug):
        if not c.ok:
            raise DegreeViolation(f"{c.name} fails", coefficient=c.name)
    return aug


def build_augmented_matrix(aug: AugmentedSpec, m: int) -> GeneratorMatrix:
    basis = VmBasis(aug.n, m, aug.d, aug.e)
    G = aug.operator().matrix(basis, closure_error=ClosureViolation)
    return GeneratorMatrix(m, basis, G)


# ---------------------------------------------------------------- pullbacks

def phi_star(fbar: Poly, d: int, n: int, e: int) -> Poly:
    """Pull a polynomial in (H(x), y) back to (x, y)."""
    H = graded_exponents(d, n, start=1)
    D = d + e
    subs = [Poly.monomial(h + (0,) * e) for h in H] + [Poly.var(d + l, D) for l in range(e)]
    return fbar.substitute(subs)


def psi_star(p: Poly, d: int, n: int, e: int) -> Poly:
    """Low-degree representative of p(x, y) as a polynomial in (H(x), y)."""
    H = graded_exponents(d, n, start=1)
    idx = {h: i for i, h in enumerate(H)}
    out = {}
    for a, c in p.items():
        key = _chunk(a[:d], idx, n) + tuple(a[d:])
        out[key] = out.get(key, 0.0) + c
    return Poly(len(H) + e, out)


# ---------------------------------------------------------------- functionals

def functional_augment(spec: GeneratorSpec, P=None, Q=None, covariations=None, n: int | None = None) -> AugmentedSpec:
    """Augment X by Y = (int P(X) dt, int Q(X-) dX, [X_i, X_j]).

    ``P`` is a list of Polys, ``Q`` a list of rows of d Polys, and
    ``covariations`` a list of index pairs (i, j).
    """
    d = spec.dim
    P = list(P or [])
    Q = [list(r) for r in (Q or [])]
    cov = [tuple(c) for c in (covariations or [])]
    for r in Q:
        if len(r) != d:
            raise ValidationError("each row of Q needs d polynomials")
    need = max([1] + [p.degree for p in P] + [q.degree + 1 for r in Q for q in r] + ([2] if cov else []))
    if n is None:
        n = need
    elif n < need:
        raise DegreeViolation(f"functional needs augmentation degree {need} > {n}", degree=need)
    e = len(P) + len(Q) + len(cov)
    if e == 0:
        raise ValidationError("no functional requested")
    nv = 2 * d
    xs = [Poly.var(i, nv) for i in range(d)]
    xis = [Poly.var(d + i, nv) for i in range(d)]
    eta = [Poly.zero(nv) for _ in P]
    for r in Q:
        eta.append(sum((q.embed(nv, range(d)) * xis[i] for i, q in enumerate(r)), Poly.zero(nv)))
    for i, j in cov:
        eta.append(xis[i] * xis[j])
    A = spec.mod_diffusion
    J = lambda p: _jump_integral(p, d, A, spec.jump_moment)
    bY = list(P)
    for r in Q:
        bY.append(sum((q * spec.drift[i] for i, q in enumerate(r)), Poly.zero(d)))
    for i, j in cov:
        bY.append(A[i][j])
    AY = [[J(eta[l] * eta[k]) if not (eta[l].is_zero() or eta[k].is_zero()) else Poly.zero(d) for k in range(e)] for l in range(e)]
    AXY = [[J(xis[i] * eta[l]) if not eta[l].is_zero() else Poly.zero(d) for l in range(e)] for i in range(d)]

    def moment_fn(alpha, beta):
        p = Poly.constant(1.0, nv)
        for i, a in enumerate(alpha):
            if a:
                p = p * xis[i] ** a
        for l, b in enumerate(beta):
            if b:
                if eta[l].is_zero():
                    return Poly.zero(d)
                p = p * eta[l] ** b
        return J(p)

    jumps = spec.has_jumps
    return AugmentedSpec(spec, n, e, bY, AY, AXY, {}, None, None, moment_fn if jumps else None)


def project(aug: AugmentedSpec, P) -> AugmentedSpec:
    """Spec of (X, P Y) for a linear map P of shape (e', e)."""
    P = np.atleast_2d(np.asarray(P, float))
    if P.shape[1] != aug.e:
        raise ValueError(f"projection needs {aug.e} columns")
    ep = P.shape[0]
    if np.linalg.matrix_rank(P) < ep:
        warnings.warn("projection matrix does not have full row rank")
    d = aug.d
    zero = Poly.zero(d)
    bY = [sum((aug.bY[k].scale(P[l, k]) for k in range(aug.e)), zero) for l in range(ep)]
    AY = [
        [sum((aug.modAY[k][j].scale(P[l, k] * P[q, j]) for k in range(aug.e) for j in range(aug.e)), zero) for q in range(ep)]
        for l in range(ep)
    ]
    AXY = [[sum((aug.modAXY[i][k].scale(P[l, k]) for k in range(aug.e)), zero) for l in range(ep)] for i in range(d)]
    kernel = None
    moment_fn = None
    if aug.joint_kernel is not None:
        streams = []
        for s in aug.joint_kernel.streams:
            A = s.size_array
            B = np.zeros((A.shape[0], d + ep, A.shape[2]))
            B[:, :d] = A[:, :d]
            B[:, d:] = np.einsum("lk,ikm->ilm", P, A[:, d:])
            streams.append(JumpStream(s.rate, s.marks, B))
        kernel = MarkJumpSpec(tuple(streams), d + ep, d)
    elif aug.has_y_jumps:
        etas = [Poly.var(k, aug.e) for k in range(aug.e)]
        lin = [sum((etas[k].scale(P[l, k]) for k in range(aug.e)), Poly.zero(aug.e)) for l in range(ep)]

        def moment_fn(alpha, beta):
            p = Poly.constant(1.0, aug.e)
            for l, b in enumerate(beta):
                if b:
                    p = p * lin[l] ** b
            out = Poly.zero(d)
            for g, c in p.items():
                out = out + aug.mixed_moment(alpha, g).scale(c)
            return out

    return AugmentedSpec(aug.base, aug.n, ep, bY, AY, AXY, {}, None, kernel, moment_fn)
