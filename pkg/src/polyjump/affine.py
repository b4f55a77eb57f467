"""Affine jump-diffusions: Levy exponents, Riccati equations, transform formula.

Coefficients are affine in the state,

    a(x) = a_0 + sum x_i a_i,  b(x) = b_0 + sum x_i b_i,  nu(x) = nu_0 + sum x_i nu_i,

with signed jump components built from weighted point masses and
weighted Gaussians.  The Riccati system phi' = F(psi), psi' = R(psi) is
integrated on real/imaginary pairs.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import RK45

from .errors import IncompleteSolution, ValidationError
from .generator import GaussianMarks, GeneratorSpec, StateSpace
from .polyalg import Poly, graded_exponents

BLOWUP_NORM = 1e8
MIN_STEP = 1e-12


@dataclass(frozen=True)
class PointJump:
    weight: float
    location: tuple

    def exponent(self, u):
        xi = np.array(self.location)
        s = u @ xi
        return self.weight * (np.exp(s) - 1 - s)

    def moment(self, alpha):
        return self.weight * float(np.prod([v ** a for v, a in zip(self.location, alpha)]))


@dataclass(frozen=True)
class GaussianJump:
    weight: float
    mean: tuple
    cov: tuple

    def exponent(self, u):
        m = np.array(self.mean)
        C = np.array(self.cov)
        s = u @ m
        return self.weight * (np.exp(s + 0.5 * u @ C @ u) - 1 - s)

    def moment(self, alpha):
        return self.weight * GaussianMarks(self.mean, self.cov).raw_moment(alpha)


def _jump_from_json(doc, d):
    if not isinstance(doc, dict):
        raise ValidationError("affine jump component must be an object")
    if set(doc) == {"weight", "location"}:
        loc = tuple(float(v) for v in np.atleast_1d(doc["location"]))
        if len(loc) != d:
            raise ValidationError("jump location has wrong dimension")
        return PointJump(float(doc["weight"]), loc)
    if set(doc) == {"weight", "mean", "cov"}:
        m = tuple(float(v) for v in np.atleast_1d(doc["mean"]))
        C = tuple(map(tuple, np.atleast_2d(np.asarray(doc["cov"], float)).tolist()))
        if len(m) != d or len(C) != d:
            raise ValidationError("gaussian jump has wrong dimension")
        return GaussianJump(float(doc["weight"]), m, C)
    raise ValidationError("affine jump must be {weight, location} or {weight, mean, cov}")


def _jump_to_json(j):
    if isinstance(j, PointJump):
        return {"weight": j.weight, "location": list(j.location)}
    return {"weight": j.weight, "mean": list(j.mean), "cov": [list(r) for r in j.cov]}


@dataclass(frozen=True, eq=False)
class AffineSpec:
    d: int
    a: tuple  # d+1 matrices
    b: tuple  # d+1 vectors
    jumps: tuple = ()  # d+1 tuples of jump components
    state_space: StateSpace | None = None

    def __post_init__(self):
        d = self.d
        a = tuple(np.asarray(m, float).reshape(d, d) for m in self.a)
        b = tuple(np.asarray(v, float).reshape(d) for v in self.b)
        jumps = tuple(tuple(js) for js in self.jumps) if self.jumps else tuple(() for _ in range(d + 1))
        if len(a) != d + 1 or len(b) != d + 1 or len(jumps) != d + 1:
            raise ValidationError("affine spec needs d+1 entries for a, b and jumps")
        for m in a:
            if not np.allclose(m, m.T):
                raise ValidationError("affine diffusion matrices must be symmetric")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "jumps", jumps)
        object.__setattr__(self, "state_space", self.state_space or StateSpace.whole(d))

    def to_json(self):
        return {
            "d": self.d,
            "a": [m.tolist() for m in self.a],
            "b": [v.tolist() for v in self.b],
            "jumps": [[_jump_to_json(j) for j in js] for js in self.jumps],
            "state_space": self.state_space.to_json(),
        }

    @classmethod
    def from_json(cls, doc):
        keys = {"d", "a", "b", "jumps", "state_space"}
        if not isinstance(doc, dict) or not set(doc) <= keys or not {"d", "a", "b"} <= set(doc):
            raise ValidationError(f"affine spec keys must be within {sorted(keys)}")
        d = int(doc["d"])
        jumps = doc.get("jumps") or [[] for _ in range(d + 1)]
        ss = StateSpace.from_json(doc["state_space"], d) if "state_space" in doc else None
        try:
            return cls(d, tuple(doc["a"]), tuple(doc["b"]), tuple(tuple(_jump_from_json(j, d) for j in js) for js in jumps), ss)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ValidationError):
                raise
            raise ValidationError(f"bad affine spec: {exc}") from exc


def eval_FR(spec: AffineSpec, u):
    """F(u) and R(u) for complex u."""
    u = np.atleast_1d(np.asarray(u, dtype=complex))
    vals = []
    for i in range(spec.d + 1):
        v = 0.5 * u @ spec.a[i] @ u + spec.b[i] @ u
        for j in spec.jumps[i]:
            v = v + j.exponent(u)
        vals.append(complex(v))
    return vals[0], np.array(vals[1:], dtype=complex)


@dataclass(frozen=True)
class RiccatiSolution:
    u: np.ndarray
    grid: np.ndarray
    phi: np.ndarray
    psi: np.ndarray
    status: str  # "complete" or "blowup"
    tau_star: float | None = None

    @property
    def complete(self) -> bool:
        return self.status == "complete"

    def at(self, tau):
        idx = np.flatnonzero(np.abs(self.grid - tau) <= 1e-12 * max(1.0, abs(tau)))
        if idx.size == 0:
            raise ValueError(f"horizon {tau} is not on the solution grid")
        k = idx[0]
        return self.phi[k], self.psi[k]


def solve_riccati(spec: AffineSpec, u, T: float, grid=None, rtol: float = 1e-10, atol: float = 1e-12) -> RiccatiSolution:
    """Integrate the generalized Riccati equations from 0 to T.

    Output is reported on ``grid`` (default: 0 and T).  On blow-up the
    solution is truncated and ``tau_star`` holds the last accepted time.
    """
    if not T > 0:
        raise ValueError("horizon must be positive")
    d = spec.d
    u = np.atleast_1d(np.asarray(u, dtype=complex))
    grid = np.array([0.0, T]) if grid is None else np.asarray(grid, float)
    if grid[0] != 0.0 or np.any(np.diff(grid) <= 0) or grid[-1] > T + 1e-15:
        raise ValueError("grid must start at 0, increase strictly and end by T")

    def rhs(t, y):
        psi = y[1 : 1 + d] + 1j * y[2 + d :]
        with np.errstate(all="ignore"):
            F, R = eval_FR(spec, psi)
        return np.concatenate([[F.real], R.real, [F.imag], R.imag])

    y = np.concatenate([[0.0], u.real, [0.0], u.imag])
    phis = [0j]
    psis = [u.copy()]
    t = 0.0
    status, tau_star = "complete", None
    for target in grid[1:]:
        solver = RK45(rhs, t, y, target, rtol=rtol, atol=atol)
        while solver.status == "running":
            msg = solver.step()
            bad = (
                msg is not None
                or not np.all(np.isfinite(solver.y))
                or np.linalg.norm(solver.y[1 : 1 + d] + 1j * solver.y[2 + d :]) > BLOWUP_NORM
                or (solver.status == "running" and solver.step_size < MIN_STEP)
            )
            if bad:
                status, tau_star = "blowup", float(solver.t_old if solver.t_old is not None else t)
                break
        if status != "complete":
            break
        t, y = target, solver.y.copy()
        phis.append(y[0] + 1j * y[1 + d])
        psis.append(y[1 : 1 + d] + 1j * y[2 + d :])
    n = len(phis)
    return RiccatiSolution(u, grid[:n], np.array(phis), np.array(psis), status, tau_star)


def affine_transform(spec: AffineSpec, sol: RiccatiSolution, x, t: float, T: float) -> complex:
    if not sol.complete:
        raise IncompleteSolution(f"Riccati solution blew up at tau* = {sol.tau_star}", tau_star=sol.tau_star)
    phi, psi = sol.at(T - t)
    x = np.atleast_1d(np.asarray(x, float))
    re = phi.real + psi.real @ x
    if re > 1e-10:
        warnings.warn(f"necessary bound Re phi + Re psi'x <= 0 fails ({re:.3e})")
    return complex(np.exp(phi + psi @ x))


def affine_checks(spec: AffineSpec, n_points: int = 64, seed: int = 0) -> list:
    """Sampled admissibility: a(x) PSD and point-mass weights of nu(x) >= 0."""
    from .generator import Check

    pts = spec.state_space.sample(n_points, np.random.default_rng(seed))
    worst_a = np.inf
    worst_w = np.inf
    for x in pts:
        A = spec.a[0] + sum(x[i] * spec.a[i + 1] for i in range(spec.d))
        worst_a = min(worst_a, np.linalg.eigvalsh(A).min())
        w = {}
        for i, js in enumerate(spec.jumps):
            c = 1.0 if i == 0 else x[i - 1]
            for j in js:
                key = ("p", j.location) if isinstance(j, PointJump) else ("g", j.mean, j.cov)
                w[key] = w.get(key, 0.0) + c * j.weight
        if w:
            worst_w = min(worst_w, min(w.values()))
    out = [Check("affine diffusion PSD", worst_a >= -1e-10, float(worst_a))]
    if np.isfinite(worst_w):
        out.append(Check("affine jump measure nonnegative", worst_w >= -1e-12, float(worst_w)))
    return out


def affine_to_generator(spec: AffineSpec, max_order: int = 8) -> GeneratorSpec:
    d = spec.d
    xs = [Poly.constant(1.0, d)] + [Poly.var(i, d) for i in range(d)]

    def lin(vals):
        return sum((xs[i].scale(v) for i, v in enumerate(vals)), Poly.zero(d))

    def jump_moment(alpha):
        return lin([sum(j.moment(alpha) for j in js) for js in spec.jumps])

    drift = [lin([spec.b[i][r] for i in range(d + 1)]) for r in range(d)]
    A = []
    for r in range(d):
        row = []
        for c in range(d):
            g = [0] * d
            g[r] += 1
            g[c] += 1
            row.append(lin([spec.a[i][r, c] for i in range(d + 1)]) + jump_moment(tuple(g)))
        A.append(row)
    has_jumps = any(len(js) for js in spec.jumps)
    moments = {}
    if has_jumps:
        for k in range(3, max_order + 1):
            for alpha in graded_exponents(d, k, start=k):
                m = jump_moment(alpha)
                if not m.is_zero():
                    moments[alpha] = m
    return GeneratorSpec(d, drift, A, moments, max_order if has_jumps else None, None, spec.state_space)
