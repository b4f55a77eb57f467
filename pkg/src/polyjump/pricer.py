"""Polynomial expansion pricing.

price = sum_k F_k l_k with q_k orthonormal under an auxiliary Gaussian (or
Gaussian mixture) w, l_k = E[q_k(X)] from the moment formula and
F_k = int F q_k dw.

Orthonormalization runs in a standardized Hermite pre-basis: with
z = L^-1 (x - mean(w)) and p_g(z) = prod He_{g_i}(z_i) / sqrt(g_i!), the
Gram matrix of p under w is the identity for a single Gaussian and is well
conditioned for moderate mixtures.  Raw monomials are available as
``prebasis="monomial"`` (Hankel route).
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from math import factorial, sqrt
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial import hermite_e as He
from numpy.polynomial import polynomial as Pm
from scipy import special

from .errors import IllConditioned, QuadratureDivergence, ValidationError
from .generator import GaussianMarks, GeneratorMatrix
from .moments import moment_polynomial
from .polyalg import Poly, graded_exponents
from .transform import AugmentedSpec, build_augmented_matrix

GRAM_COND_MAX = 1e12
DEFAULT_NODES = {1: 200, 2: 64, 3: 24}


# ---------------------------------------------------------------- auxiliary

@dataclass(frozen=True)
class AuxiliaryMeasure:
    weights: tuple
    means: tuple
    covs: tuple

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, float))
        mu = np.asarray(self.means, float).reshape(len(w), -1)
        m = mu.shape[1]
        C = np.asarray(self.covs, float).reshape(len(w), m, m)
        if np.any(w < 0) or abs(w.sum() - 1) > 1e-12:
            raise ValidationError("mixture weights must be nonnegative and sum to 1")
        for c in C:
            if not np.allclose(c, c.T) or np.linalg.eigvalsh(c).min() < -1e-14:
                raise ValidationError("auxiliary covariance must be symmetric PSD")
        object.__setattr__(self, "weights", tuple(w.tolist()))
        object.__setattr__(self, "means", tuple(map(tuple, mu.tolist())))
        object.__setattr__(self, "covs", tuple(tuple(map(tuple, c)) for c in C.tolist()))

    @classmethod
    def gaussian(cls, mean, cov):
        mean = np.atleast_1d(np.asarray(mean, float))
        cov = np.asarray(cov, float).reshape(len(mean), len(mean))
        return cls((1.0,), (tuple(mean),), (cov,))

    @property
    def family(self):
        return "gaussian" if len(self.weights) == 1 else "mixture"

    @property
    def m(self) -> int:
        return len(self.means[0])

    def mean(self) -> np.ndarray:
        return np.einsum("c,ci->i", np.array(self.weights), np.array(self.means))

    def cov(self) -> np.ndarray:
        mu = self.mean()
        out = np.zeros((self.m, self.m))
        for w, m, C in zip(self.weights, self.means, self.covs):
            dm = np.array(m) - mu
            out += w * (np.array(C) + np.outer(dm, dm))
        return out

    def raw_moment(self, gamma) -> float:
        return float(sum(w * GaussianMarks(m, C).raw_moment(gamma) for w, m, C in zip(self.weights, self.means, self.covs)))

    def quadrature(self, nodes_per_dim: int):
        z, wz = special.roots_hermitenorm(nodes_per_dim)
        wz = wz / wz.sum()
        grid = np.array(list(itertools.product(z, repeat=self.m)))
        gw = np.prod(np.array(list(itertools.product(wz, repeat=self.m))), axis=1)
        pts, wts = [], []
        for w, m, C in zip(self.weights, self.means, self.covs):
            L = _sqrtm_psd(np.array(C))
            pts.append(np.array(m) + grid @ L.T)
            wts.append(w * gw)
        return np.concatenate(pts), np.concatenate(wts)

    def to_json(self):
        return {
            "weights": list(self.weights),
            "means": [list(m) for m in self.means],
            "covs": [[list(r) for r in C] for C in self.covs],
        }


def _sqrtm_psd(C):
    try:
        return np.linalg.cholesky(C)
    except np.linalg.LinAlgError:
        w, v = np.linalg.eigh(C)
        return v * np.sqrt(np.clip(w, 0, None))


# ---------------------------------------------------------------- orthonormal system

def _hermite_table(z, K):
    """Normalized He_k(z)/sqrt(k!) for k = 0..K; z shape (P,) -> (P, K+1)."""
    out = np.empty(z.shape + (K + 1,))
    out[..., 0] = 1.0
    if K >= 1:
        out[..., 1] = z
    for k in range(2, K + 1):
        # h_k = (z h_{k-1} - sqrt(k-1) h_{k-2}) / sqrt(k)
        out[..., k] = (z * out[..., k - 1] - sqrt(k - 1) * out[..., k - 2]) / sqrt(k)
    return out


@dataclass
class OrthonormalSystem:
    K: int
    m: int
    index: list  # exponent tuples, graded
    prebasis: str  # "hermite" or "monomial"
    center: np.ndarray
    Linv: np.ndarray  # z = Linv (x - center)
    T: np.ndarray  # q = T p, lower triangular
    gram: np.ndarray
    gram_cond: float
    aux: AuxiliaryMeasure

    @property
    def size(self):
        return len(self.index)

    def prebasis_values(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, float))
        if self.prebasis == "monomial":
            return np.stack([np.prod(x ** np.array(g), axis=1) for g in self.index], axis=1)
        z = (x - self.center) @ self.Linv.T
        tabs = [_hermite_table(z[:, i], self.K) for i in range(self.m)]
        return np.stack([np.prod([tabs[i][:, g[i]] for i in range(self.m)], axis=0) for g in self.index], axis=1)

    def evaluate(self, x) -> np.ndarray:
        """q_k(x) for points x of shape (P, m); returns (P, size)."""
        return self.prebasis_values(x) @ self.T.T

    def prebasis_polys(self) -> list:
        """Pre-basis as Polys in x (m variables)."""
        m = self.m
        if self.prebasis == "monomial":
            return [Poly.monomial(g) for g in self.index]
        xs = [Poly.var(i, m) for i in range(m)]
        zs = [
            sum((xs[j].scale(self.Linv[i, j]) for j in range(m)), Poly.constant(-float(self.Linv[i] @ self.center), m))
            for i in range(m)
        ]
        herm = []
        for k in range(self.K + 1):
            c = He.herme2poly(np.eye(self.K + 1)[k]) / sqrt(factorial(k))
            herm.append(c)
        out = []
        cache = {}
        for g in self.index:
            p = Poly.constant(1.0, m)
            for i, gi in enumerate(g):
                if gi == 0:
                    continue
                key = (i, gi)
                if key not in cache:
                    cache[key] = _poly1(herm[gi]).substitute([zs[i]])
                p = p * cache[key]
            out.append(p)
        return out

    def polys(self) -> list:
        pre = self.prebasis_polys()
        out = []
        for k in range(self.size):
            p = Poly.zero(self.m)
            for j in range(k + 1):
                if self.T[k, j] != 0.0:
                    p = p + pre[j].scale(self.T[k, j])
            out.append(p)
        return out

    @property
    def coeffs(self) -> np.ndarray:
        """Row k: coordinates of q_k in the graded monomial basis of degree K."""
        from .polyalg import GradedBasis

        B = GradedBasis(self.m, self.K)
        return np.array([B.to_coordinates(p, tol=1e-300) for p in self.polys()])


def _poly1(c):
    return Poly(1, {(i,): v for i, v in enumerate(c)})


def build_orthonormal(w: AuxiliaryMeasure, K: int, prebasis: str = "hermite") -> OrthonormalSystem:
    if K < 0:
        raise ValidationError("truncation order must be >= 0")
    m = w.m
    index = graded_exponents(m, K)
    center = w.mean()
    cov = w.cov()
    if prebasis == "hermite":
        L = _sqrtm_psd(cov)
        if np.linalg.matrix_rank(L) < m:
            raise IllConditioned("auxiliary covariance is singular")
        Linv = np.linalg.inv(L)
        sysk = OrthonormalSystem(K, m, index, prebasis, center, Linv, np.eye(len(index)), None, 1.0, w)
        pts, wts = w.quadrature(K + 2)
        P = sysk.prebasis_values(pts)
        gram = (P * wts[:, None]).T @ P
    elif prebasis == "monomial":
        Linv = np.eye(m)
        center = np.zeros(m)
        gram = np.array([[w.raw_moment(tuple(a + b for a, b in zip(g, h))) for h in index] for g in index])
    else:
        raise ValidationError(f"unknown prebasis {prebasis!r}")
    gram[0, 0] = 1.0
    gram = 0.5 * (gram + gram.T)
    cond = float(np.linalg.cond(gram))
    if not np.isfinite(cond) or cond > GRAM_COND_MAX:
        raise IllConditioned(f"Gram matrix condition {cond:.3e} exceeds {GRAM_COND_MAX:.0e}; lower K", cond=cond)
    C = np.linalg.cholesky(gram)
    T = np.linalg.solve(C, np.eye(len(index)))
    T = np.tril(T)
    return OrthonormalSystem(K, m, index, prebasis, center, Linv, T, gram, cond, w)


# ---------------------------------------------------------------- payoffs

@dataclass(frozen=True)
class Payoff:
    """Discounted payoff of the observation.

    call / put: spot * (e^x - c)^+ and spot * (c - e^x)^+ with
    c = strike * discount / spot.  ``tabulated``: linear interpolation of
    (xs, values) with linear extrapolation.  ``custom``: vectorized callable
    on (P, m) arrays.
    """

    kind: str
    strike: float = 1.0
    spot: float = 1.0
    discount: float = 1.0
    xs: tuple = ()
    values: tuple = ()
    fn: Callable | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in ("call", "put", "tabulated", "custom"):
            raise ValidationError(f"unknown payoff kind {self.kind!r}")
        if self.kind in ("call", "put") and not (self.strike > 0 and self.spot > 0 and self.discount > 0):
            raise ValidationError("call/put need positive strike, spot and discount")
        if self.kind == "tabulated":
            xs = np.asarray(self.xs, float)
            if xs.size < 2 or len(self.values) != xs.size or np.any(np.diff(xs) <= 0):
                raise ValidationError("tabulated payoff needs >= 2 increasing abscissae with matching values")
        if self.kind == "custom" and self.fn is None:
            raise ValidationError("custom payoff needs a callable")

    @property
    def c(self) -> float:
        return self.strike * self.discount / self.spot

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, float)
        if x.ndim == 2:
            if self.kind == "custom":
                return np.asarray(self.fn(x), float)
            if x.shape[1] != 1:
                raise ValidationError(f"{self.kind} payoff is one-dimensional")
            x = x[:, 0]
        if self.kind == "call":
            return self.spot * np.maximum(np.exp(x) - self.c, 0.0)
        if self.kind == "put":
            return self.spot * np.maximum(self.c - np.exp(x), 0.0)
        if self.kind == "tabulated":
            xs, vs = np.asarray(self.xs), np.asarray(self.values, float)
            out = np.interp(x, xs, vs)
            lo, hi = x < xs[0], x > xs[-1]
            out[lo] = vs[0] + (x[lo] - xs[0]) * (vs[1] - vs[0]) / (xs[1] - xs[0])
            out[hi] = vs[-1] + (x[hi] - xs[-1]) * (vs[-1] - vs[-2]) / (xs[-1] - xs[-2])
            return out
        return np.asarray(self.fn(x[:, None]), float)


def _herme_in_component(K, alpha, beta):
    """Rows j: HermiteE-series (in w) of He_j(alpha + beta w)/sqrt(j!)."""
    out = np.zeros((K + 1, K + 1))
    for j in range(K + 1):
        c = He.herme2poly(np.eye(K + 1)[j]) / sqrt(factorial(j))
        # compose c(z) with z = alpha + beta w
        acc = np.zeros(1)
        lin = np.array([alpha, beta])
        powk = np.array([1.0])
        for ck in c:
            acc = Pm.polyadd(acc, ck * powk)
            powk = Pm.polymul(powk, lin)
        h = He.poly2herme(acc)
        out[j, : len(h)] = h
    return out


def _vanilla_integrals(kind, K, mu, s, c):
    """int F(mu + s w) He_i(w) phi(w) dw / spot for i = 0..K (spot factored out)."""
    a = (np.log(c) - mu) / s
    phi_a = np.exp(-0.5 * a * a) / np.sqrt(2 * np.pi)
    he_prev = np.array([He.hermeval(a, np.eye(K + 1)[i]) for i in range(K + 1)])
    J = np.zeros(K + 1)
    E = np.zeros(K + 1)
    ea = np.exp(s * a) * phi_a
    if kind == "call":
        J[0] = special.ndtr(-a)
        E[0] = np.exp(0.5 * s * s) * special.ndtr(s - a)
        for i in range(1, K + 1):
            J[i] = phi_a * he_prev[i - 1]
            E[i] = ea * he_prev[i - 1] + s * E[i - 1]
        return np.exp(mu) * E - c * J
    J[0] = special.ndtr(a)
    E[0] = np.exp(0.5 * s * s) * special.ndtr(a - s)
    for i in range(1, K + 1):
        J[i] = -phi_a * he_prev[i - 1]
        E[i] = -ea * he_prev[i - 1] + s * E[i - 1]
    return c * J - np.exp(mu) * E


def payoff_coefficients(payoff: Payoff, sys: OrthonormalSystem, w: AuxiliaryMeasure | None = None, nodes: int | None = None) -> np.ndarray:
    """F_k = int F q_k dw."""
    w = sys.aux if w is None else w
    if payoff.kind in ("call", "put") and sys.m == 1 and sys.prebasis == "hermite":
        s_glob = 1.0 / sys.Linv[0, 0]
        mu_glob = sys.center[0]
        pre = np.zeros(sys.size)
        for wc, mc, Cc in zip(w.weights, w.means, w.covs):
            sc = sqrt(Cc[0][0])
            if sc == 0.0:
                z = (mc[0] - mu_glob) / s_glob
                pre += wc * float(payoff(np.array([mc[0]]))[0]) * _hermite_table(np.array([z]), sys.K)[0]
                continue
            H = _herme_in_component(sys.K, (mc[0] - mu_glob) / s_glob, sc / s_glob)
            I = _vanilla_integrals(payoff.kind, sys.K, mc[0], sc, payoff.c)
            pre += wc * payoff.spot * (H @ I)
        return sys.T @ pre
    nq = nodes or DEFAULT_NODES.get(sys.m)
    if nq is None:
        raise ValidationError("quadrature supports observation dimension m <= 3")
    pts, wts = w.quadrature(nq)
    F = payoff(pts)
    pts2, wts2 = w.quadrature(max(2, nq // 2))
    e1 = float(wts @ F ** 2)
    e2 = float(wts2 @ payoff(pts2) ** 2)
    if not np.isfinite(e1) or e1 > 1.05 * e2 + 1e-300:
        raise QuadratureDivergence(f"payoff second moment grows with node count ({e2:.4g} -> {e1:.4g})")
    Q = sys.evaluate(pts)
    return (Q * (wts * F)[:, None]).sum(axis=0)


# ---------------------------------------------------------------- path moments

@dataclass(frozen=True)
class Observation:
    """X = sum_k maps[k] @ Y_{times[k]} (maps[k] has shape (m, e))."""

    times: tuple
    maps: tuple

    def __post_init__(self):
        times = tuple(float(t) for t in self.times)
        maps = tuple(np.atleast_2d(np.asarray(P, float)) for P in self.maps)
        if not times or len(times) != len(maps) or times[0] <= 0 or any(b <= a for a, b in zip(times, times[1:])):
            raise ValidationError("observation needs increasing positive times with one map each")
        if len({P.shape for P in maps}) != 1:
            raise ValidationError("observation maps must share a shape")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "maps", maps)

    @classmethod
    def terminal(cls, T, e=1, P=None):
        return cls((T,), (np.eye(e) if P is None else P,))

    @property
    def m(self):
        return self.maps[0].shape[0]


class PathMoments:
    """E[p(X)] for polynomials p of the observation, via the tower property."""

    def __init__(self, aug: AugmentedSpec, obs: Observation, z0):
        self.aug = aug
        self.obs = obs
        self.z0 = np.asarray(z0, float)
        if self.z0.shape != (aug.dim,):
            raise ValidationError(f"initial state needs {aug.dim} entries (x then y)")
        self._gm = {}

    def matrix(self, M) -> GeneratorMatrix:
        if M not in self._gm:
            self._gm[M] = build_augmented_matrix(self.aug, M)
        return self._gm[M]

    def expect(self, p: Poly) -> float:
        aug, obs = self.aug, self.obs
        d, e, D = aug.d, aug.e, aug.dim
        K = len(obs.times)
        nv = D + (K - 1) * e
        M = p.degree
        if M == 0:
            return p.constant_term()
        gm = self.matrix(M)

        def yvar(k, l):
            return d + l if k == K - 1 else D + k * e + l

        lin = []
        for j in range(obs.m):
            q = Poly.zero(nv)
            for k, P in enumerate(obs.maps):
                for l in range(e):
                    if P[j, l] != 0.0:
                        q = q + Poly.var(yvar(k, l), nv, P[j, l])
            lin.append(q)
        Q = p.substitute(lin)
        steps = [t - s for s, t in zip((0.0,) + obs.times[:-1], obs.times)]
        for k in range(K - 1, -1, -1):
            new = Poly.zero(nv)
            for tail, core in Q.split_degrees(D).items():
                cm = moment_polynomial(gm, core, steps[k]) if not core.is_constant() else core
                term = cm.embed(nv, range(D))
                t = list(tail)
                if k >= 1:
                    # Y at time k-1 becomes the current y
                    mono = [0] * nv
                    for l in range(e):
                        mono[d + l] = t[(k - 1) * e + l]
                        t[(k - 1) * e + l] = 0
                    for i, v in enumerate(t):
                        mono[D + i] += v
                    term = term * Poly.monomial(tuple(mono))
                else:
                    term = term * Poly.monomial((0,) * D + tuple(t))
                new = new + term
            Q = new
        return float(Q(np.concatenate([self.z0, np.zeros(nv - D)])))

    def mean_cov(self):
        m = self.obs.m
        xs = [Poly.var(i, m) for i in range(m)]
        mu = np.array([self.expect(x) for x in xs])
        S = np.array([[self.expect(xs[i] * xs[j]) for j in range(m)] for i in range(m)])
        return mu, S - np.outer(mu, mu)


def likelihood_coefficients(moments: PathMoments, sys: OrthonormalSystem) -> np.ndarray:
    pre = sys.prebasis_polys()
    vals = np.array([1.0] + [moments.expect(p) for p in pre[1:]])
    ell = sys.T @ vals
    ell[0] = 1.0
    return ell


# ---------------------------------------------------------------- price

@dataclass(frozen=True)
class PricingRequest:
    model: AugmentedSpec
    payoff: Payoff
    observation: Observation
    z0: tuple
    K: int = 20
    auxiliary: object = "auto"
    prebasis: str = "hermite"
    nodes: int | None = None


@dataclass
class PriceResult:
    value: float
    partial_sums: np.ndarray
    contributions: np.ndarray
    ell: np.ndarray
    F: np.ndarray
    diagnostics: dict


def auto_auxiliary(moments: PathMoments) -> AuxiliaryMeasure:
    mu, S = moments.mean_cov()
    return AuxiliaryMeasure.gaussian(mu, 0.5 * (S + S.T))


def price(req: PricingRequest) -> PriceResult:
    moments = PathMoments(req.model, req.observation, req.z0)
    w = auto_auxiliary(moments) if isinstance(req.auxiliary, str) and req.auxiliary == "auto" else req.auxiliary
    if not isinstance(w, AuxiliaryMeasure):
        raise ValidationError("auxiliary must be 'auto' or an AuxiliaryMeasure")
    if w.m != req.observation.m:
        raise ValidationError("auxiliary dimension differs from the observation dimension")
    diag = {"auxiliary": w.to_json(), "K": req.K}
    scale = 1.0 + float(np.abs(w.mean()).max())
    if len(w.weights) == 1 and np.max(np.abs(w.cov())) <= 1e-14 * scale * scale:
        # deterministic observation: only q_0 survives
        val = float(req.payoff(np.array([w.mean()]))[0])
        diag.update(degenerate=True, tail=0.0, gram_cond=1.0)
        one = np.array([1.0])
        return PriceResult(val, np.array([val]), np.array([val]), one, np.array([val]), diag)
    sys = build_orthonormal(w, req.K, req.prebasis)
    ell = likelihood_coefficients(moments, sys)
    F = payoff_coefficients(req.payoff, sys, w, req.nodes)
    contrib = F * ell
    degs = np.array([sum(g) for g in sys.index])
    by_deg = np.array([contrib[degs == k].sum() for k in range(req.K + 1)])
    partial = np.cumsum(by_deg)
    tail = float(np.abs(contrib[degs == req.K]).sum())
    diag.update(degenerate=False, tail=tail, gram_cond=sys.gram_cond, prebasis=sys.prebasis)
    return PriceResult(float(partial[-1]), partial, contrib, ell, F, diag)
