import math
from fractions import Fraction

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import ou_spec, sym_jump_kernel
from polyjump.errors import DegreeViolation, MissingJumpMoments, MomentMismatch, NegativeDiffusion, UnsupportedMarkFamily
from polyjump.generator import (
    ExponentialMarks,
    GaussianMarks,
    GeneratorSpec,
    JumpStream,
    MarkFamily,
    MarkJumpSpec,
    PointMasses,
    StateSpace,
    UniformMarks,
    build_generator_matrix,
    carre_du_champ,
    carre_du_champ_kernel,
    gamma_pointwise,
    linear_sde_spec,
    marks_from_json,
    moments_from_kernel,
    validate_spec,
)
from polyjump.polyalg import GradedBasis, Poly

x = Poly.var(0, 1)


# ---------------------------------------------------------------- univariate table

# exactly representable parameters
B0, B1, S0, S1 = Fraction(1, 2), Fraction(-3, 4), Fraction(1, 2), Fraction(1, 4)
LAM = Fraction(3, 2)
MARKS = ((Fraction(1), Fraction(1, 4)), (Fraction(-2), Fraction(3, 4)))  # (u, prob)
D0, D1 = Fraction(1, 2), Fraction(1, 4)  # delta(x, u) = u*D0 + u*D1*x


def _table_entry(i, j):
    """Univariate table with the cross diffusion term j(j-1) S0 S1."""
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


def _sympy_column(j):
    """Apply the generator to x^j symbolically (independent route)."""
    X = sp.Symbol("x")
    f = X ** j
    R = lambda q: sp.Rational(q.numerator, q.denominator)
    a = (R(S0) + R(S1) * X) ** 2
    b = R(B0) + R(B1) * X
    g = sp.Rational(1, 2) * a * sp.diff(f, X, 2) + b * sp.diff(f, X)
    for u, p in MARKS:
        dl = R(u * D0) + R(u * D1) * X
        g += R(LAM) * R(p) * (f.subs(X, X + dl) - f - dl * sp.diff(f, X))
    poly = sp.Poly(sp.expand(g), X)
    return [Fraction(int(sp.fraction(poly.coeff_monomial(X ** i))[0]), int(sp.fraction(poly.coeff_monomial(X ** i))[1])) for i in range(j + 1)]


def _table_spec():
    marks = PointMasses(tuple((float(u),) for u, _ in MARKS), tuple(float(p) for _, p in MARKS))
    stream = JumpStream(float(LAM), marks, [[[0.0, float(D0)]], [[0.0, float(D1)]]])
    kernel = MarkJumpSpec((stream,), 1, 1)
    return linear_sde_spec([float(B0)], [[float(B1)]], [[float(S0)]], [[[float(S1)]]], kernel=kernel)


@pytest.mark.parametrize("j", range(6))
def test_table_matches_symbolic_generator_exactly(j):
    col = _sympy_column(j)
    for i in range(6):
        expect = col[i] if i <= j else Fraction(0)
        assert _table_entry(i, j) == expect


def test_generator_matrix_matches_table():
    gm = build_generator_matrix(_table_spec(), 5)
    T = np.array([[float(_table_entry(i, j)) for j in range(6)] for i in range(6)])
    assert np.max(np.abs(gm.G - T)) <= 1e-12 * max(1.0, np.abs(T).max())


def test_printed_cross_term_is_off_by_two():
    # the cross term j(j-1)/2 * S0*S1 as printed disagrees with the symbolic route for j >= 2
    j = 3
    printed = _table_entry(j - 1, j) - Fraction(j * (j - 1), 2) * S0 * S1
    assert printed != _sympy_column(j)[j - 1]


# ---------------------------------------------------------------- spec examples

def test_ou_matrix_example():
    spec = GeneratorSpec(1, [-x], [[Poly.constant(2.0, 1)]])
    G = build_generator_matrix(spec, 2).G
    assert np.array_equal(G, np.array([[0, 0, 2], [0, -1, 0], [0, 0, -2]], float))


def test_mean_reverting_example():
    spec = GeneratorSpec(1, [1 - x], [[Poly.constant(0.5, 1)]])
    assert np.array_equal(build_generator_matrix(spec, 1).G, np.array([[0.0, 1.0], [0.0, -1.0]]))


def test_pure_compound_poisson_example():
    spec = linear_sde_spec([0.0], [[0.0]], [[0.0]], [[[0.0]]], kernel=sym_jump_kernel())
    G = build_generator_matrix(spec, 2).G
    assert np.allclose(G[:, 1], 0.0)
    assert np.allclose(G[:, 2], [1.0, 0.0, 0.0])


def test_validate_examples():
    validate_spec(ou_spec())
    with pytest.raises(DegreeViolation) as err:
        validate_spec(GeneratorSpec(1, [x * x], [[Poly.constant(1.0, 1)]]))
    assert "drift[0]" in str(err.value)
    k = sym_jump_kernel()
    spec = GeneratorSpec(1, [Poly.zero(1)], [[Poly.constant(1.0, 1)]], {(4,): Poly.constant(1.0, 1)}, 4, k)
    validate_spec(spec)
    bad = GeneratorSpec(1, [Poly.zero(1)], [[Poly.constant(1.0, 1)]], {(4,): Poly.constant(1.5, 1)}, 4, k)
    with pytest.raises(MomentMismatch):
        validate_spec(bad)


def test_negative_diffusion_detected():
    spec = GeneratorSpec(1, [Poly.zero(1)], [[Poly.constant(0.5, 1)]], kernel=sym_jump_kernel())
    with pytest.raises(NegativeDiffusion):
        validate_spec(spec)


def test_moments_from_kernel_examples():
    one = MarkJumpSpec((JumpStream.scalar(1.0, PointMasses(((1.0,),), (1.0,)), [1.0]),), 1, 1)
    assert one.moment((2,)) == Poly.constant(1.0, 1) and one.moment((3,)) == Poly.constant(1.0, 1)
    two = sym_jump_kernel(2.0)
    assert two.moment((2,)) == Poly.constant(2.0, 1) and two.moment((3,)).is_zero()
    lin = MarkJumpSpec((JumpStream.scalar(1.0, PointMasses(((1.0,),), (1.0,)), [0.0], [[1.0]]),), 1, 1)
    assert lin.moment((2,)) == x * x and lin.moment((3,)) == x ** 3
    table = moments_from_kernel(lin, 5)
    assert set(table) == {(3,), (4,), (5,)}


def test_missing_moments():
    spec = GeneratorSpec(1, [Poly.zero(1)], [[Poly.constant(1.0, 1)]], {(3,): Poly.constant(1.0, 1)}, 3)
    with pytest.raises(MissingJumpMoments):
        build_generator_matrix(spec, 4)


def test_carre_du_champ_examples():
    s = 1.3
    ou = ou_spec(sigma=s)
    assert carre_du_champ(ou, x, x).allclose(Poly.constant(s * s, 1))
    assert carre_du_champ(ou, x, x * x).allclose(x.scale(2 * s * s))
    jumpy = linear_sde_spec([0.0], [[-1.0]], [[s]], [[[0.0]]], kernel=sym_jump_kernel())
    assert carre_du_champ(jumpy, x, x).allclose(Poly.constant(s * s + 1, 1))


def test_gamma_pointwise_examples():
    s = 1.3
    assert gamma_pointwise(ou_spec(sigma=s), x, x, [0.7]) == pytest.approx(s * s, abs=1e-12)
    garch = linear_sde_spec([0.5], [[-1.0]], [[0.0]], [[[0.5]]], state_space=StateSpace((0.0,), (np.inf,)))
    vol = lambda p: np.sqrt(p[:, 0] ** 2)
    assert gamma_pointwise(garch, vol, vol, [2.0]) == pytest.approx(1.0, rel=1e-8)
    const = lambda p: np.ones(len(p))
    assert gamma_pointwise(garch, const, x, [2.0]) == 0.0


def test_gamma_pointwise_jump_quadrature():
    k = MarkJumpSpec((JumpStream.scalar(0.7, GaussianMarks((0.1,), ((0.04,),)), [1.0]),), 1, 1)
    spec = linear_sde_spec([0.0], [[-1.0]], [[0.5]], [[[0.0]]], kernel=k)
    f = lambda p: np.exp(p[:, 0])
    got = gamma_pointwise(spec, f, f, [0.3])
    # exact: a f'^2 + lam E[(e^{x+U} - e^x)^2]
    m1 = math.exp(0.1 + 0.02)
    m2 = math.exp(0.2 + 0.08)
    expect = 0.25 * math.exp(0.6) + 0.7 * math.exp(0.6) * (m2 - 2 * m1 + 1)
    assert got == pytest.approx(expect, rel=1e-8)


# ---------------------------------------------------------------- properties

def _jumpy_2d():
    marks = GaussianMarks((0.1, -0.2), ((0.04, 0.01), (0.01, 0.09)))
    A = np.zeros((3, 2, 3))
    A[0, 0, 1] = 1.0
    A[0, 1, 2] = 0.5
    A[1, 0, 1] = 0.3
    A[2, 1, 0] = 0.1
    k = MarkJumpSpec((JumpStream(0.8, marks, A), JumpStream.scalar(0.4, ExponentialMarks(2.0), [0.2, 0.1])), 2, 2)
    return linear_sde_spec(
        [0.2, 0.1],
        [[-1.0, 0.2], [0.1, -0.5]],
        [[0.3, 0.0], [0.1, 0.2]],
        [[[0.1, 0.0], [0.0, 0.0]], [[0.0, 0.0], [0.0, 0.2]]],
        kernel=k,
    )


ZOO_SPECS = {
    "ou": lambda: ou_spec(),
    "jumpy": _jumpy_2d,
    "sqrt": lambda: GeneratorSpec(1, [1 - x], [[x.scale(0.25)]], state_space=StateSpace((0.0,), (np.inf,))),
    "jacobi": lambda: GeneratorSpec(1, [0.5 - x], [[(x - x * x).scale(0.25)]], state_space=StateSpace((0.0,), (1.0,))),
}


@pytest.mark.parametrize("name", sorted(ZOO_SPECS))
@pytest.mark.parametrize("n", range(1, 7))
def test_block_triangular_and_first_column(name, n):
    spec = ZOO_SPECS[name]()
    gm = build_generator_matrix(spec, n)
    degs = gm.basis.degrees()
    assert np.all(gm.G[:, 0] == 0.0)
    for j, dj in enumerate(degs):
        assert np.all(gm.G[degs > dj, j] == 0.0)


def test_kernel_vs_declared_moments_matrix():
    spec = _jumpy_2d()
    declared = spec.with_kernel_moments(6)
    G1 = build_generator_matrix(spec, 6).G
    G2 = build_generator_matrix(declared, 6).G
    assert np.max(np.abs(G1 - G2)) <= 1e-12 * max(1.0, np.abs(G1).max())


def poly2(max_deg=3):
    expo = st.tuples(st.integers(0, max_deg), st.integers(0, max_deg)).filter(lambda a: sum(a) <= max_deg)
    return st.dictionaries(expo, st.integers(-3, 3).map(float), min_size=1, max_size=4).map(lambda t: Poly(2, t))


@given(poly2(), poly2())
@settings(max_examples=30, deadline=None)
def test_product_rule_and_kernel_route(f, g):
    spec = _jumpy_2d()
    op = spec.operator()
    lhs = op.apply(f * g)
    gam = carre_du_champ(spec, f, g)
    assert lhs.allclose(f * op.apply(g) + g * op.apply(f) + gam, atol=1e-9, rtol=1e-9)
    assert gam.allclose(carre_du_champ_kernel(spec, f, g), atol=1e-9, rtol=1e-9)


@given(poly2())
@settings(max_examples=20, deadline=None)
def test_gamma_psd_sampled(f):
    spec = _jumpy_2d()
    gam = carre_du_champ(spec, f, f)
    pts = np.random.default_rng(1).normal(size=(1000, 2)) * 2
    assert gam(pts).min() >= -1e-10 * max(1.0, f.max_abs_coeff() ** 2)


@pytest.mark.parametrize(
    "marks",
    [
        PointMasses(((0.5,), (-1.0,)), (0.3, 0.7)),
        GaussianMarks((0.2,), ((0.3,),)),
        ExponentialMarks(1.5),
        UniformMarks(-0.5, 2.0),
    ],
)
def test_mark_quadrature_matches_raw_moments(marks):
    for k in range(1, 7):
        q = marks.expect(lambda u: u[:, 0] ** k)
        assert q == pytest.approx(marks.raw_moment((k,)), rel=1e-10, abs=1e-12)
    assert marks_from_json(marks.to_json()) == marks


def test_unsupported_family():
    with pytest.raises(UnsupportedMarkFamily):
        marks_from_json({"family": "cauchy", "params": {}})
    with pytest.raises(UnsupportedMarkFamily):
        MarkFamily().raw_moment((1,))
