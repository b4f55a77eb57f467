"""Linear volatility asset models, risk measures, measure changes and the model zoo.

A ``LinearVolModel`` has a factor X solving a linear SDE and excess log
returns Y driven by the same Brownian motion and jump streams:

    dX = bX(X) dt + sigX(X) dW + sum_j deltaX_j(X-, U) (dN_j - rate_j dt)
    dY = bY(X) dt + sigY(X) dW + sum_j deltaY_j(U) (dN_j - rate_j dt)

with bX, sigX, sigY affine in x and deltaY independent of the state.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .affine import AffineSpec, PointJump
from .errors import DegenerateVariance, ExponentialMomentFailure, NonpositivePsi, ValidationError
from .generator import (
    GaussianMarks,
    GeneratorSpec,
    JumpStream,
    MarkJumpSpec,
    PointMasses,
    StateSpace,
    gamma_pointwise,
    linear_sde_spec,
)
from .polyalg import Poly
from .timechange import SubordinatorSpec
from .transform import AugmentedSpec

LEV_TOL = 1e-8


@dataclass(frozen=True)
class ModelStream:
    """Jump stream of a linear volatility model.

    ``delta_x`` has shape (1+d, d, 1+k) (affine in (1, x) and (1, u));
    ``delta_y`` has shape (e, 1+k) (affine in (1, u)).
    """

    rate: float
    marks: object
    delta_x: tuple
    delta_y: tuple

    def __post_init__(self):
        k = self.marks.dim
        dx = np.asarray(self.delta_x, float)
        dy = np.asarray(self.delta_y, float)
        if dx.ndim != 3 or dx.shape[2] != 1 + k or dy.ndim != 2 or dy.shape[1] != 1 + k:
            raise ValidationError("stream size maps have wrong shapes")
        if not self.rate > 0:
            raise ValidationError("stream intensity must be positive")
        object.__setattr__(self, "delta_x", dx.tolist())
        object.__setattr__(self, "delta_y", dy.tolist())

    def joint(self, d, e) -> JumpStream:
        dx = np.asarray(self.delta_x)
        dy = np.asarray(self.delta_y)
        A = np.zeros((1 + d, d + e, dx.shape[2]))
        A[:, :d] = dx
        A[0, d:] = dy
        return JumpStream(self.rate, self.marks, A)

    def y_exponent(self, i) -> float:
        """E[exp(eta_i) - 1 - eta_i] for this stream's marks."""
        dy = np.asarray(self.delta_y)[i]
        mgf = self.marks.mgf(dy[1:])
        if not np.isfinite(mgf):
            raise ExponentialMomentFailure(f"exponential moment of Y jump {i} is infinite")
        mean = dy[0] + dy[1:] @ self.marks.mean()
        return math.exp(dy[0]) * mgf - 1.0 - mean

    def to_json(self):
        return {
            "lambda": self.rate,
            "marks": self.marks.to_json(),
            "delta_x": self.delta_x,
            "delta_y": self.delta_y,
        }


@dataclass(frozen=True, eq=False)
class LinearVolModel:
    d: int
    e: int
    beta: np.ndarray  # (1+d, d): bX = beta[0] + sum x_i beta[i]
    sig_x: np.ndarray  # (1+d, d, m)
    sig_y: np.ndarray  # (1+d, e, m)
    streams: tuple = ()
    rate: float = 0.0
    b_y: tuple | None = None
    risk_neutral: bool = False
    state_space: StateSpace | None = None

    def __post_init__(self):
        d, e = self.d, self.e
        beta = np.asarray(self.beta, float).reshape(1 + d, d)
        sx = np.asarray(self.sig_x, float)
        sy = np.asarray(self.sig_y, float)
        if sx.ndim != 3 or sx.shape[:2] != (1 + d, d) or sy.shape[:2] != (1 + d, e) or sy.shape[2] != sx.shape[2]:
            raise ValidationError("volatility loadings have wrong shapes")
        for s in self.streams:
            if np.asarray(s.delta_x).shape[:2] != (1 + d, d) or np.asarray(s.delta_y).shape[0] != e:
                raise ValidationError("stream size maps do not match model dimensions")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "sig_x", sx)
        object.__setattr__(self, "sig_y", sy)
        object.__setattr__(self, "streams", tuple(self.streams))
        if self.b_y is not None:
            object.__setattr__(self, "b_y", tuple(self.b_y))
        object.__setattr__(self, "state_space", self.state_space or StateSpace.whole(d))

    @property
    def m(self):
        return self.sig_x.shape[2]

    def _vol_polys(self, S) -> list:
        d = self.d
        xs = [Poly.constant(1.0, d)] + [Poly.var(i, d) for i in range(d)]
        rows, cols = S.shape[1], S.shape[2]
        return [[sum((xs[i].scale(S[i, r, c]) for i in range(d + 1)), Poly.zero(d)) for c in range(cols)] for r in range(rows)]

    def vol_x(self):
        return self._vol_polys(self.sig_x)

    def vol_y(self):
        return self._vol_polys(self.sig_y)

    @staticmethod
    def _outer(A, B):
        d = A[0][0].dim if A and A[0] else 1
        return [[sum((a * b for a, b in zip(ra, rb)), Poly.zero(d)) for rb in B] for ra in A]

    def kernel(self) -> MarkJumpSpec | None:
        if not self.streams:
            return None
        return MarkJumpSpec(tuple(s.joint(self.d, self.e) for s in self.streams), self.d + self.e, self.d)

    def x_kernel(self) -> MarkJumpSpec | None:
        live = [s for s in self.streams if np.any(np.asarray(s.delta_x))]
        if not live:
            return None
        return MarkJumpSpec(tuple(JumpStream(s.rate, s.marks, s.delta_x) for s in live), self.d, self.d)

    def factor_spec(self) -> GeneratorSpec:
        return linear_sde_spec(
            self.beta[0], self.beta[1:], self.sig_x[0], self.sig_x[1:], kernel=self.x_kernel(), state_space=self.state_space
        )

    def diffusion_blocks(self):
        vx, vy = self.vol_x(), self.vol_y()
        return self._outer(vx, vx), self._outer(vx, vy), self._outer(vy, vy)

    def augmented(self, n: int = 2) -> AugmentedSpec:
        if self.b_y is None:
            raise ValidationError("return drift not set; call risk_neutral_drift or give b_y")
        _, aXY, aY = self.diffusion_blocks()
        kern = self.kernel()
        if kern is not None:
            S = kern.second_moments()
            d = self.d
            aY = [[aY[l][k] + S[d + l][d + k] for k in range(self.e)] for l in range(self.e)]
            aXY = [[aXY[i][l] + S[i][d + l] for l in range(self.e)] for i in range(d)]
        return AugmentedSpec(self.factor_spec(), n, self.e, self.b_y, aY, aXY, {}, None, kern, None)

    def to_json(self):
        doc = {
            "d": self.d,
            "e": self.e,
            "beta": self.beta.tolist(),
            "sig_x": self.sig_x.tolist(),
            "sig_y": self.sig_y.tolist(),
            "streams": [s.to_json() for s in self.streams],
            "rate": self.rate,
            "risk_neutral": self.risk_neutral,
            "state_space": self.state_space.to_json(),
        }
        if self.b_y is not None and not self.risk_neutral:
            doc["b_y"] = [p.to_json() for p in self.b_y]
        return doc

    @classmethod
    def from_json(cls, doc):
        from .generator import marks_from_json

        keys = {"d", "e", "beta", "sig_x", "sig_y", "streams", "rate", "risk_neutral", "state_space", "b_y"}
        if not isinstance(doc, dict) or not set(doc) <= keys or not {"d", "e", "beta", "sig_x", "sig_y"} <= set(doc):
            raise ValidationError(f"model keys must be within {sorted(keys)}")
        d, e = int(doc["d"]), int(doc["e"])
        streams = []
        for s in doc.get("streams", []):
            if not isinstance(s, dict) or set(s) != {"lambda", "marks", "delta_x", "delta_y"}:
                raise ValidationError("model stream needs lambda, marks, delta_x, delta_y")
            streams.append(ModelStream(float(s["lambda"]), marks_from_json(s["marks"]), s["delta_x"], s["delta_y"]))
        ss = StateSpace.from_json(doc["state_space"], d) if "state_space" in doc else None
        b_y = tuple(Poly.from_json(p, d) for p in doc["b_y"]) if "b_y" in doc else None
        try:
            model = cls(d, e, doc["beta"], doc["sig_x"], doc["sig_y"], tuple(streams), float(doc.get("rate", 0.0)), b_y, False, ss)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ValidationError):
                raise
            raise ValidationError(f"bad model: {exc}") from exc
        if doc.get("risk_neutral", False):
            if b_y is not None:
                raise ValidationError("risk-neutral models derive b_y; do not give it")
            model = risk_neutral_drift(model)
        return model


def risk_neutral_drift(model: LinearVolModel) -> LinearVolModel:
    """bY_i = -a^Y_ii / 2 - sum_j rate_j E[exp(eta_i) - 1 - eta_i]."""
    _, _, aY = model.diffusion_blocks()
    b = []
    for i in range(model.e):
        corr = sum(s.rate * s.y_exponent(i) for s in model.streams)
        b.append(aY[i][i].scale(-0.5) - corr)
    return replace(model, b_y=tuple(b), risk_neutral=True)


# ---------------------------------------------------------------- risk metrics

@dataclass(frozen=True)
class RiskReport:
    v: tuple
    vol: tuple
    volvol: tuple
    lev: tuple  # clamped to [-1, 1]; None when the variance is constant
    lev_raw: tuple


def risk_metrics(model: LinearVolModel, x, diffusive_only: bool = False) -> RiskReport:
    x = np.atleast_1d(np.asarray(x, float))
    d, e = model.d, model.e
    aug = model.augmented() if model.b_y is not None else risk_neutral_drift(model).augmented()
    joint = aug.joint_spec()
    D = d + e
    z = np.concatenate([x, np.zeros(e)])
    vs, vols, vvs, levs, raws = [], [], [], [], []
    for i in range(e):
        y = Poly.var(d + i, D)
        v_poly = _gamma_poly(aug, joint, y, y, diffusive_only)
        v = float(v_poly(z))
        if v <= 1e-14:
            raise DegenerateVariance(f"spot variance of asset {i} is {v:.3e} at {x.tolist()}", asset=i)
        vol_fn = lambda pts, p=v_poly: np.sqrt(np.maximum(p(pts), 0.0))
        vv = gamma_pointwise(joint, vol_fn, vol_fn, z, diffusive_only)
        gyv = float(_gamma_poly(aug, joint, y, v_poly, diffusive_only)(z))
        gvv = float(_gamma_poly(aug, joint, v_poly, v_poly, diffusive_only)(z))
        if gvv <= 1e-14:
            lev = raw = None
        else:
            raw = gyv / (math.sqrt(v) * math.sqrt(gvv))
            if abs(raw) > 1 + LEV_TOL:
                raise ValidationError(f"leverage {raw} outside [-1, 1]")
            lev = max(-1.0, min(1.0, raw))
        vs.append(v)
        vols.append(math.sqrt(v))
        vvs.append(math.sqrt(max(vv, 0.0)))
        levs.append(lev)
        raws.append(raw)
    return RiskReport(tuple(vs), tuple(vols), tuple(vvs), tuple(levs), tuple(raws))


def _gamma_poly(aug, joint, f, g, diffusive_only):
    if diffusive_only:
        a = joint.diffusion()
        gf, gg = f.gradient(), g.gradient()
        out = Poly.zero(f.dim)
        for i in range(f.dim):
            for k in range(f.dim):
                if not a[i][k].is_zero() and not gf[i].is_zero() and not gg[k].is_zero():
                    out = out + gf[i] * a[i][k] * gg[k]
        return out
    return aug.operator().carre_du_champ(f, g)


# ---------------------------------------------------------------- measure change

@dataclass(frozen=True)
class PsiFamily:
    """Jump risk premium: per-stream constants or an exponential tilt exp(theta' zeta)."""

    kind: str  # "constant" or "tilt"
    values: tuple = ()  # per stream constants
    theta: tuple = ()  # tilt vector over (x, y) components


@dataclass
class QCoefficients:
    drift: list  # Polys over d+e variables (compensated form)
    diffusion: list  # raw a, (d+e) x (d+e) Polys
    kernel: MarkJumpSpec | None
    state_dim: int
    report: dict = field(default_factory=dict)


def _tilt_stream(s: JumpStream, theta, d) -> JumpStream:
    """Stream under nu/psi with psi = exp(theta' zeta); zeta must not depend on x where theta loads."""
    A = s.size_array
    theta = np.asarray(theta, float)
    loads = np.flatnonzero(theta)
    if np.any(A[1:, loads, :]):
        raise ValidationError("exponential tilt needs state-independent sizes on the tilted components")
    c0 = float(theta @ A[0, :, 0])
    cu = -(theta @ A[0, :, 1:])  # exp(-theta' zeta) = exp(-c0) exp(cu . u)
    marks = s.marks
    if isinstance(marks, PointMasses):
        at = np.array(marks.atoms)
        wts = np.array(marks.probs) * np.exp(at @ cu)
        scale = wts.sum()
        new = PointMasses(marks.atoms, tuple(wts / scale))
    elif isinstance(marks, GaussianMarks):
        C = np.array(marks.cov)
        mu = np.array(marks.mean_) + C @ cu
        scale = marks.mgf(cu)
        new = GaussianMarks(tuple(mu), marks.cov)
    else:
        from .errors import UnsupportedMarkFamily

        raise UnsupportedMarkFamily(f"exponential tilt not available for {marks.family} marks")
    return JumpStream(s.rate * math.exp(-c0) * scale, new, A)


def measure_change(model: LinearVolModel, phi, psi: PsiFamily | None = None) -> QCoefficients:
    """Coefficients under Q: a^Q = a, b^Q = b - a phi - int (1 - 1/psi) zeta nu, nu^Q = nu / psi."""
    d, e = model.d, model.e
    D = d + e
    if model.b_y is None:
        raise ValidationError("measure change needs the return drift b_y")
    aXX, aXY, aY = model.diffusion_blocks()
    pos = range(d)
    a = [[None] * D for _ in range(D)]
    for i in range(D):
        for j in range(D):
            if i < d and j < d:
                p = aXX[i][j]
            elif i < d:
                p = aXY[i][j - d]
            elif j < d:
                p = aXY[j][i - d]
            else:
                p = aY[i - d][j - d]
            a[i][j] = p.embed(D, pos)
    fs = model.factor_spec()
    b = [p.embed(D, pos) for p in fs.drift] + [p.embed(D, pos) for p in model.b_y]
    phi = [p if isinstance(p, Poly) else Poly.constant(float(p), D) for p in phi]
    if len(phi) != D:
        raise ValidationError(f"phi needs {D} components")
    for i in range(D):
        b[i] = b[i] - sum((a[i][j] * phi[j] for j in range(D)), Poly.zero(D))
    kern = model.kernel()
    report = {}
    new_streams = []
    if kern is not None:
        psi = psi or PsiFamily("constant", tuple(1.0 for _ in kern.streams))
        for j, s in enumerate(kern.streams):
            if psi.kind == "constant":
                c = float(psi.values[j])
                if not c > 0:
                    raise NonpositivePsi(f"psi for stream {j} is {c}", stream=j)
                ns = JumpStream(s.rate / c, s.marks, s.size)
            elif psi.kind == "tilt":
                ns = _tilt_stream(s, psi.theta, d)
            else:
                raise ValidationError(f"unknown psi family {psi.kind!r}")
            new_streams.append(ns)
        # int (1 - 1/psi) zeta nu = int zeta nu - int zeta nu^Q
        old = MarkJumpSpec(kern.streams, D, d).first_moments()
        new = MarkJumpSpec(tuple(new_streams), D, d).first_moments()
        for i in range(D):
            b[i] = b[i] - (old[i] - new[i]).embed(D, pos)
        kern = MarkJumpSpec(tuple(new_streams), D, d)
    return QCoefficients(b, a, kern, d, report)


# ---------------------------------------------------------------- zoo

@dataclass
class ZooEntry:
    name: str
    description: str
    params: dict
    x0: tuple
    generator: GeneratorSpec
    model: LinearVolModel | None = None
    affine: AffineSpec | None = None
    subordinator: SubordinatorSpec | None = None


ZOO_DEFAULTS = {
    "ou": {"kappa": 1.0, "theta": 0.0, "sigma": math.sqrt(2.0), "x0": 1.0},
    "garch": {"kappa": 0.1, "theta": 1.0, "x0": 1.0},
    "square_root": {"b": 1.0, "beta": -1.0, "sigma": 0.5, "x0": 1.0},
    "jacobi": {"kappa": 1.0, "theta": 0.5, "sigma": 0.5, "x0": 0.3},
    "example_5_1": {"kappa": 2.0, "theta": 0.2, "gamma": 0.3, "x0": 0.2},
    "linear_vol_jumps": {
        "kappa": 2.0,
        "theta": 0.2,
        "gamma": 0.3,
        "rho": -0.5,
        "x0": 0.2,
        "y_jump_rate": 0.5,
        "y_jump_mean": -0.05,
        "y_jump_std": 0.1,
        "co_jump_rate": 0.3,
        "co_jump_x": 0.05,
        "co_jump_y": -0.03,
    },
    "ou_poisson_timechange": {"kappa": 1.0, "theta": 0.0, "sigma": math.sqrt(2.0), "x0": 1.0, "clock_rate": 1.0, "clock_size": 1.0},
    "two_point_affine": {"lam": 1.0, "x0": 1.0},
}

ZOO_NAMES = tuple(ZOO_DEFAULTS)


def _ou_affine(kappa, theta, sigma):
    return AffineSpec(1, ([[sigma ** 2]], [[0.0]]), ([kappa * theta], [-kappa]))


def model_zoo(name: str, **overrides) -> ZooEntry:
    if name not in ZOO_DEFAULTS:
        raise ValidationError(f"unknown zoo model {name!r}; choose from {', '.join(ZOO_NAMES)}")
    p = dict(ZOO_DEFAULTS[name])
    for k, v in overrides.items():
        if k not in p:
            raise ValidationError(f"zoo model {name} has no parameter {k!r}")
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ValidationError(f"parameter {k} must be a number")
        p[k] = float(v)
    pos = StateSpace((0.0,), (np.inf,))
    if name in ("ou", "ou_poisson_timechange"):
        k, th, s = p["kappa"], p["theta"], p["sigma"]
        gen = linear_sde_spec([k * th], [[-k]], [[s]], [[[0.0]]])
        sub = SubordinatorSpec(0.0, ((p["clock_rate"], p["clock_size"]),)) if name == "ou_poisson_timechange" else None
        desc = "Ornstein-Uhlenbeck dX = kappa(theta - X)dt + sigma dW"
        if sub is not None:
            desc += ", run on a Poisson clock with unit jumps"
        return ZooEntry(name, desc, p, (p["x0"],), gen, None, _ou_affine(k, th, s), sub)
    if name == "garch":
        k, th = p["kappa"], p["theta"]
        gen = linear_sde_spec([k * th], [[-k]], [[0.0]], [[[math.sqrt(2 * k)]]], state_space=pos)
        return ZooEntry(name, "GARCH diffusion dX = kappa(theta - X)dt + sqrt(2 kappa) X dW on (0, inf)", p, (p["x0"],), gen)
    if name == "square_root":
        b, beta, s = p["b"], p["beta"], p["sigma"]
        x = Poly.var(0, 1)
        gen = GeneratorSpec(1, [x.scale(beta) + b], [[x.scale(s * s)]], state_space=pos)
        aff = AffineSpec(1, ([[0.0]], [[s * s]]), ([b], [beta]), state_space=pos)
        return ZooEntry(name, "square-root process dX = (b + beta X)dt + sigma sqrt(X) dW on [0, inf)", p, (p["x0"],), gen, None, aff)
    if name == "jacobi":
        k, th, s = p["kappa"], p["theta"], p["sigma"]
        x = Poly.var(0, 1)
        gen = GeneratorSpec(1, [x.scale(-k) + k * th], [[(x - x * x).scale(s * s)]], state_space=StateSpace((0.0,), (1.0,)))
        return ZooEntry(name, "Jacobi process dX = kappa(theta - X)dt + sigma sqrt(X(1 - X)) dW on [0, 1]", p, (p["x0"],), gen)
    if name == "example_5_1":
        k, th, g = p["kappa"], p["theta"], p["gamma"]
        model = LinearVolModel(
            1, 1, [[k * th], [-k]], [[[0.0, 0.0]], [[g, 0.0]]], [[[0.0, 0.0]], [[0.0, 1.0]]], state_space=pos
        )
        model = risk_neutral_drift(model)
        desc = "dX = kappa(theta - X)dt + gamma X dW1, dY = -X^2/2 dt + X dW2"
        return ZooEntry(name, desc, p, (p["x0"],), model.factor_spec(), model)
    if name == "linear_vol_jumps":
        k, th, g, rho = p["kappa"], p["theta"], p["gamma"], p["rho"]
        sy = [[[0.0, 0.0]], [[rho, math.sqrt(1 - rho * rho)]]]
        isolated = ModelStream(
            p["y_jump_rate"], GaussianMarks((p["y_jump_mean"],), ((p["y_jump_std"] ** 2,),)), [[[0.0, 0.0]], [[0.0, 0.0]]], [[0.0, 1.0]]
        )
        co = ModelStream(p["co_jump_rate"], PointMasses(((1.0,),), (1.0,)), [[[0.0, p["co_jump_x"]]], [[0.0, 0.0]]], [[0.0, p["co_jump_y"]]])
        sx = [[[0.0, 0.0]], [[g, 0.0]]]
        model = LinearVolModel(1, 1, [[k * th], [-k]], sx, sy, (isolated, co), state_space=pos)
        model = risk_neutral_drift(model)
        desc = "linear volatility with leverage, isolated Gaussian return jumps and joint vol/return jumps"
        return ZooEntry(name, desc, p, (p["x0"],), model.factor_spec(), model)
    lam = p["lam"]
    aff = AffineSpec(1, ([[0.0]], [[0.0]]), ([0.0], [-lam]), ((), (PointJump(lam, (-1.0,)),)), StateSpace((0.0,), (1.0,)))
    from .affine import affine_to_generator

    return ZooEntry(name, "two-point absorption: jumps from 1 to 0 at rate lam", p, (p["x0"],), affine_to_generator(aff), None, aff)


def black_scholes_model(sigma: float) -> LinearVolModel:
    """Constant volatility returns with an inert one-dimensional factor."""
    if not sigma > 0:
        raise ValidationError("volatility must be positive")
    model = LinearVolModel(1, 1, [[0.0], [0.0]], [[[0.0]], [[0.0]]], [[[sigma]], [[0.0]]])
    return risk_neutral_drift(model)
