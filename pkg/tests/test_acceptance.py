"""Acceptance criteria 1-12, one PASS/FAIL line each.

Run with ``pytest tests/test_acceptance.py -v`` (lines print even without -s).
"""
import io
import math
import time
from fractions import Fraction

import numpy as np
import pytest
import sympy as sp

from polyjump.affine import AffineSpec, PointJump, affine_to_generator, affine_transform, solve_riccati
from polyjump.cli import run
from polyjump.generator import JumpStream, MarkJumpSpec, PointMasses, StateSpace, build_generator_matrix, linear_sde_spec
from polyjump.mc import BLOCK, SimConfig, estimate, simulate, simulate_subordinated
from polyjump.models import ZOO_NAMES, black_scholes_model, model_zoo, risk_metrics
from polyjump.moments import conditional_moment
from polyjump.polyalg import Poly
from polyjump.pricer import AuxiliaryMeasure, Observation, Payoff, PricingRequest, price
from polyjump.timechange import subordinate_matrix, subordinated_semigroup_check
from polyjump.transform import build_augmented_matrix

x = Poly.var(0, 1)
PATHS = 100_000


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, detail

    return emit


@pytest.fixture(scope="module")
def example_paths():
    e = model_zoo("example_5_1")
    return simulate(e.model, 1.0, SimConfig(paths=PATHS, seed=2), e.x0)


# ---------------------------------------------------------------- 1

def test_c01_ou_closed_form(report):
    t0 = time.perf_counter()
    kappa, sigma, x0, tau = 1.0, math.sqrt(2.0), 1.0, math.log(2.0)
    gm = build_generator_matrix(linear_sde_spec([0.0], [[-kappa]], [[sigma]], [[[0.0]]]), 2)
    m1 = conditional_moment(gm, x, tau, [x0])
    m2 = conditional_moment(gm, x * x, tau, [x0])
    mean = x0 * math.exp(-kappa * tau)
    var = sigma ** 2 / (2 * kappa) * (1 - math.exp(-2 * kappa * tau))
    elapsed = time.perf_counter() - t0
    err = max(abs(m1 - mean), abs(m2 - (mean ** 2 + var)), abs(m2 - 1.0))
    report(1, err <= 1e-10 and elapsed < 1.0, f"max err {err:.2e}, second moment {m2:.15f}, {elapsed:.3f}s")


# ---------------------------------------------------------------- 2

def test_c02_moments_vs_mc(report):
    t0 = time.perf_counter()
    worst = 0.0
    for seed, name in enumerate(("garch", "square_root"), start=1):
        e = model_zoo(name)
        res = simulate(e.generator, 1.0, SimConfig(paths=PATHS, seed=seed), e.x0)
        gm = build_generator_matrix(e.generator, 4)
        for k in range(1, 5):
            est = estimate(x ** k, res.x)
            worst = max(worst, abs(est.mean - conditional_moment(gm, x ** k, 1.0, e.x0)) / est.se)
    elapsed = time.perf_counter() - t0
    report(2, worst <= 3.0 and elapsed < 300, f"worst |z| = {worst:.2f} over orders 1-4, {elapsed:.1f}s")


# ---------------------------------------------------------------- 3

B0, B1, S0, S1 = Fraction(1, 2), Fraction(-3, 4), Fraction(1, 2), Fraction(1, 4)
LAM = Fraction(3, 2)
MARKS = ((Fraction(1), Fraction(1, 4)), (Fraction(-2), Fraction(3, 4)))
D0, D1 = Fraction(1, 2), Fraction(1, 4)


def _table(i, j):
    if i > j:
        return Fraction(0)
    F = lambda fn: LAM * sum(p * fn(u * D0, u * D1) for u, p in MARKS)
    c = Fraction(j * (j - 1), 2)
    if i <= j - 3:
        return math.comb(j, i) * F(lambda d0, d1: d0 ** (j - i) * (1 + d1) ** i)
    if i == j - 2:
        return c * S0 ** 2 + c * F(lambda d0, d1: d0 ** 2 * (1 + d1) ** (j - 2))
    if i == j - 1:
        return j * B0 + 2 * c * S0 * S1 + j * F(lambda d0, d1: d0 * ((1 + d1) ** (j - 1) - 1))
    return j * B1 + c * S1 ** 2 + F(lambda d0, d1: (1 + d1) ** j - 1 - j * d1)


def _symbolic(j):
    X = sp.Symbol("x")
    R = lambda q: sp.Rational(q.numerator, q.denominator)
    f = X ** j
    g = sp.Rational(1, 2) * (R(S0) + R(S1) * X) ** 2 * sp.diff(f, X, 2) + (R(B0) + R(B1) * X) * sp.diff(f, X)
    for u, p in MARKS:
        dl = R(u * D0) + R(u * D1) * X
        g += R(LAM) * R(p) * (f.subs(X, X + dl) - f - dl * sp.diff(f, X))
    poly = sp.Poly(sp.expand(g), X)
    return [Fraction(str(poly.coeff_monomial(X ** i))) for i in range(6)]


def test_c03_univariate_table(report):
    exact = all(_table(i, j) == _symbolic(j)[i] for j in range(6) for i in range(6))
    marks = PointMasses(tuple((float(u),) for u, _ in MARKS), tuple(float(p) for _, p in MARKS))
    stream = JumpStream(float(LAM), marks, [[[0.0, float(D0)]], [[0.0, float(D1)]]])
    spec = linear_sde_spec([float(B0)], [[float(B1)]], [[float(S0)]], [[[float(S1)]]], kernel=MarkJumpSpec((stream,), 1, 1))
    G = build_generator_matrix(spec, 5).G
    sym = np.array([[float(_symbolic(j)[i]) for j in range(6)] for i in range(6)])
    err = np.max(np.abs(G - sym)) / max(1.0, np.abs(sym).max())
    report(3, exact and err <= 1e-12, f"rational table == symbolic: {exact}, float rel err {err:.2e}")


# ---------------------------------------------------------------- 4

def test_c04_riccati_blowup(report):
    t0 = time.perf_counter()
    errs = []
    for lam in (0.5, 1.0, 2.0):
        spec = AffineSpec(1, ([[0.0]], [[0.0]]), ([0.0], [-lam]), ((), (PointJump(lam, (-1.0,)),)), StateSpace((0.0,), (1.0,)))
        sol = solve_riccati(spec, [1j * math.pi], 2.0 / lam)
        errs.append(math.inf if sol.complete else abs(sol.tau_star - math.log(2) / lam))
    elapsed = time.perf_counter() - t0
    report(4, max(errs) <= 1e-3 and elapsed < 1.0, f"tau* errors {[f'{e:.1e}' for e in errs]}, {elapsed:.3f}s")


# ---------------------------------------------------------------- 5

def test_c05_charfn_derivatives(report):
    kappa, theta, sigma, x0, T, h = 0.7, 0.4, 0.9, 0.5, 0.8, 1e-2
    spec = AffineSpec(1, ([[sigma ** 2]], [[0.0]]), ([kappa * theta], [-kappa]))
    gm = build_generator_matrix(affine_to_generator(spec), 3)
    v = {k: affine_transform(spec, solve_riccati(spec, [1j * k * h], T), [x0], 0.0, T) for k in range(-3, 4)}
    d = {
        1: (-v[2] + 8 * v[1] - 8 * v[-1] + v[-2]) / (12 * h),
        2: (-v[2] + 16 * v[1] - 30 * v[0] + 16 * v[-1] - v[-2]) / (12 * h ** 2),
        3: (-v[3] + 8 * v[2] - 13 * v[1] + 13 * v[-1] - 8 * v[-2] + v[-3]) / (8 * h ** 3),
    }
    rel = max(abs(d[k] / 1j ** k - m) / abs(m) for k in d for m in [conditional_moment(gm, x ** k, T, [x0])])
    report(5, rel <= 1e-5, f"max relative error {rel:.2e} over orders 1-3")


# ---------------------------------------------------------------- 6

def _sympy_generator(model):
    """Generator of (X, Y) for a one-factor diffusive linear-vol model, built from raw coefficients."""
    X, Yv = sp.symbols("x y")
    one = [sp.Integer(1), X]
    R = lambda v: sp.nsimplify(float(v), rational=True)
    sx = [sum(R(model.sig_x[i, 0, c]) * one[i] for i in range(2)) for c in range(model.sig_x.shape[2])]
    sy = [sum(R(model.sig_y[i, 0, c]) * one[i] for i in range(2)) for c in range(model.sig_y.shape[2])]
    bx = R(model.beta[0, 0]) + R(model.beta[1, 0]) * X
    by = sum(R(c) * X ** a[0] for a, c in model.b_y[0].items())
    axx = sum(u * u for u in sx)
    axy = sum(u * v for u, v in zip(sx, sy))
    ayy = sum(v * v for v in sy)

    def apply(f):
        return sp.expand(
            bx * sp.diff(f, X) + by * sp.diff(f, Yv)
            + sp.Rational(1, 2) * (axx * sp.diff(f, X, 2) + 2 * axy * sp.diff(f, X, Yv) + ayy * sp.diff(f, Yv, 2))
        )

    return X, Yv, apply


def test_c06_augmentation(report, example_paths):
    e = model_zoo("example_5_1")
    aug = e.model.augmented()
    assert not e.model.streams  # the symbolic route below is diffusive only
    X, Yv, apply = _sympy_generator(e.model)
    worst = 0.0
    for m in (1, 2, 3):
        gm = build_augmented_matrix(aug, m)
        for j, a in enumerate(gm.basis.order):
            via_matrix = gm.basis.from_coordinates(gm.G[:, j])
            sym = sp.Poly(apply(X ** a[0] * Yv ** a[1]), X, Yv)
            via_pullback = Poly(2, {tuple(k): float(c) for k, c in sym.terms()})
            worst = max(worst, (via_matrix - via_pullback).max_abs_coeff())
    gm = build_augmented_matrix(aug, 2)
    z0 = np.array([e.x0[0], 0.0])
    Y = Poly.var(1, 2)
    zs = []
    for p in (Y, Y * Y):
        est = estimate(p, example_paths.x)
        zs.append(abs(est.mean - conditional_moment(gm, p, 1.0, z0)) / est.se)
    report(6, worst <= 1e-12 and max(zs) <= 3.0, f"diagram err {worst:.1e} (m<=3), E[Y], E[Y^2] |z| = {zs[0]:.2f}, {zs[1]:.2f}")


# ---------------------------------------------------------------- 7

def test_c07_time_change(report):
    e = model_zoo("ou_poisson_timechange")
    gm = build_generator_matrix(e.generator, 3)
    mix = 0.0
    for rate, t in ((1.0, 1.0), (2.5, 2.0), (0.5, 3.0)):
        mix = max(mix, subordinated_semigroup_check(gm, type(e.subordinator)(0.0, ((rate, 1.0),)), t, 40))
    gsub = subordinate_matrix(gm, e.subordinator)
    res = simulate_subordinated(e.generator, e.subordinator, 1.0, SimConfig(paths=PATHS, steps=50, seed=7, scheme="exact_ou"), e.x0)
    zs = [abs((est := estimate(x ** k, res.x)).mean - conditional_moment(gsub, x ** k, 1.0, e.x0)) / est.se for k in (1, 2, 3)]
    report(7, mix <= 1e-10 and max(zs) <= 3.0, f"mixture err {mix:.1e}, two-stage MC |z| max {max(zs):.2f}")


# ---------------------------------------------------------------- 8

def test_c08_black_scholes(report):
    sigma, T = 0.2, 1.0
    model = black_scholes_model(sigma).augmented()
    w = AuxiliaryMeasure.gaussian([-0.5 * sigma ** 2 * T], [[sigma ** 2 * T]])
    perr, lerr = 0.0, 0.0
    for K in range(0, 21):
        res = price(PricingRequest(model, Payoff("call", 1.0), Observation.terminal(T), (0.0, 0.0), K, w))
        perr = max(perr, abs(res.value - 0.0796557))
        lerr = max(lerr, np.max(np.abs(res.ell[1:]), initial=0.0))
    report(8, perr <= 1e-6 and lerr <= 1e-10, f"max |price - 0.0796557| {perr:.1e}, max |ell_k| {lerr:.1e} (K=0..20)")


# ---------------------------------------------------------------- 9

def test_c09_pricer_vs_mc(report, example_paths):
    e = model_zoo("example_5_1")
    res = price(PricingRequest(e.model.augmented(), Payoff("call", 1.0), Observation.terminal(1.0), (e.x0[0], 0.0), 20))
    mc = estimate(lambda s: np.maximum(np.exp(s[:, 1]) - 1.0, 0.0), example_paths.x)
    z = abs(mc.mean - res.value) / mc.se
    tail = res.diagnostics["tail"]
    report(9, z <= 3.0 and tail < 1e-4 * res.value, f"price {res.value:.7f}, MC {mc.mean:.7f} +- {mc.se:.1e} (|z| {z:.2f}), tail/price {tail / res.value:.1e}")


# ---------------------------------------------------------------- 10

def test_c10_martingale(report, example_paths):
    zs = {}
    for name in ZOO_NAMES:
        e = model_zoo(name)
        if e.model is None or not e.model.risk_neutral:
            continue
        paths = example_paths if name == "example_5_1" else simulate(e.model, 1.0, SimConfig(paths=PATHS, seed=3), e.x0)
        est = estimate(lambda s: np.exp(s[:, e.model.d]), paths.x)
        zs[name] = abs(est.mean - 1.0) / est.se
    ok = len(zs) >= 2 and max(zs.values()) <= 3.0
    report(10, ok, ", ".join(f"{k} |z| {v:.2f}" for k, v in zs.items()))


# ---------------------------------------------------------------- 11

def _sample_states(spec, n, rng):
    lo = np.maximum(np.array(spec.state_space.lower), -3.0)
    hi = np.minimum(np.array(spec.state_space.upper), 3.0)
    return rng.uniform(lo, hi, size=(n, spec.dim))


def test_c11_gamma_psd_and_leverage(report):
    rng = np.random.default_rng(11)
    worst_gamma = np.inf
    for name in ZOO_NAMES:
        e = model_zoo(name)
        spec = e.model.augmented().joint_spec() if e.model is not None else e.generator
        op = spec.operator()
        z = _sample_states(spec, 1000, rng)
        if e.model is not None:
            z[:, 0] = np.abs(z[:, 0])
        for _ in range(4):
            f = Poly(spec.dim, {tuple(rng.integers(0, 3, spec.dim)): float(rng.normal()) for _ in range(4)})
            worst_gamma = min(worst_gamma, float(np.min(op.carre_du_champ(f, f)(z))))
    worst_lev = 0.0
    for name in ("example_5_1", "linear_vol_jumps"):
        m = model_zoo(name).model
        for v in rng.uniform(0.01, 3.0, 1000):
            lev = risk_metrics(m, [v]).lev[0]
            if lev is not None:
                worst_lev = max(worst_lev, abs(lev))
    report(11, worst_gamma >= -1e-10 and worst_lev <= 1 + 1e-8, f"min Gamma(f,f) {worst_gamma:.2e}, max |lev| {worst_lev:.6f}")


# ---------------------------------------------------------------- 12

def test_c12_cli_determinism(report):
    runs = {
        "euler": ["simulate", "--zoo", "linear_vol_jumps", "--T", "1", "--steps", "8", "--p", "x", "--p", "y"],
        "subordinated": ["simulate", "--zoo", "ou_poisson_timechange", "--subordinated", "--scheme", "exact_ou", "--steps", "4", "--p", "x"],
    }
    ok = True
    for argv in runs.values():
        outs = set()
        for threads in ("1", "2", "8", "8", "1"):
            buf = io.StringIO()
            code = run(argv + ["--paths", str(3 * BLOCK + 17), "--seed", "2024", "--threads", threads, "--format", "csv"], buf, io.StringIO())
            ok &= code == 0
            outs.add(buf.getvalue())
        ok &= len(outs) == 1
    report(12, ok, "byte-identical CSV under threads 1, 2, 8 and repeated runs")
