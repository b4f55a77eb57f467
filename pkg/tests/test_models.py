import math

import numpy as np
import pytest

from polyjump.errors import DegenerateVariance, ExponentialMomentFailure, NonpositivePsi, ValidationError
from polyjump.generator import GaussianMarks, PointMasses, StateSpace, UniformMarks
from polyjump.models import (
    ZOO_NAMES,
    LinearVolModel,
    ModelStream,
    PsiFamily,
    black_scholes_model,
    measure_change,
    model_zoo,
    risk_metrics,
    risk_neutral_drift,
)
from polyjump.polyalg import Poly

x = Poly.var(0, 1)
UNIT = PointMasses(((1.0,),), (1.0,))


def pure_jump_model(lam=0.8, c=-0.2):
    stream = ModelStream(lam, UNIT, [[[0.0, 0.0]], [[0.0, 0.0]]], [[0.0, c]])
    return LinearVolModel(1, 1, [[0.0], [-1.0]], [[[0.0]], [[0.0]]], [[[0.0]], [[0.0]]], (stream,))


def shared_driver_model(gamma=0.3, rho=1.0):
    return LinearVolModel(1, 1, [[0.4], [-2.0]], [[[0.0]], [[gamma]]], [[[0.0]], [[rho]]], state_space=StateSpace((0.0,), (np.inf,)))


# ---------------------------------------------------------------- risk-neutral drift

def test_risk_neutral_drift_examples():
    m = model_zoo("example_5_1").model
    assert m.risk_neutral and m.b_y[0].allclose((x * x).scale(-0.5), atol=1e-15)
    lam, c = 0.8, -0.2
    rn = risk_neutral_drift(pure_jump_model(lam, c))
    assert rn.b_y[0].allclose(Poly.constant(-lam * (math.exp(c) - 1 - c), 1), atol=1e-15)
    rn0 = risk_neutral_drift(pure_jump_model(lam, 0.0))
    assert rn0.b_y[0].is_zero()


def test_gaussian_jump_correction():
    m = model_zoo("linear_vol_jumps").model
    p = model_zoo("linear_vol_jumps").params
    mu, s = p["y_jump_mean"], p["y_jump_std"]
    corr = p["y_jump_rate"] * (math.exp(mu + 0.5 * s * s) - 1 - mu)
    corr += p["co_jump_rate"] * (math.exp(p["co_jump_y"]) - 1 - p["co_jump_y"])
    # a^Y = x^2 (rho^2 + 1 - rho^2)
    assert m.b_y[0].allclose((x * x).scale(-0.5) - corr, atol=1e-15)
    assert m.b_y[0].degree <= 2


def test_exponential_moment_failure():
    class HeavyMarks(UniformMarks):
        def mgf(self, c):
            return math.inf

    stream = ModelStream(1.0, HeavyMarks(0.0, 1.0), [[[0.0, 0.0]], [[0.0, 0.0]]], [[0.0, 1.0]])
    m = LinearVolModel(1, 1, [[0.0], [0.0]], [[[0.0]], [[0.0]]], [[[1.0]], [[0.0]]], (stream,))
    with pytest.raises(ExponentialMomentFailure):
        risk_neutral_drift(m)


# ---------------------------------------------------------------- risk metrics

def test_example_model_metrics():
    m = model_zoo("example_5_1").model
    r = risk_metrics(m, [0.7])
    assert r.v[0] == pytest.approx(0.49, abs=1e-14)
    assert r.vol[0] == pytest.approx(0.7, abs=1e-14)
    assert r.lev[0] == 0.0
    assert r.volvol[0] == pytest.approx(0.3 * 0.7, rel=1e-8)


def test_shared_driver_volvol():
    gamma = 0.3
    r = risk_metrics(shared_driver_model(gamma, 1.0), [1.5])
    assert r.volvol[0] == pytest.approx(gamma * 1.5, rel=1e-8)
    assert r.lev[0] == pytest.approx(1.0, abs=1e-12)
    r = risk_metrics(shared_driver_model(gamma, -0.5), [1.5])
    assert r.lev[0] == pytest.approx(-1.0, abs=1e-12)


def test_pure_jump_variance():
    lam, c = 0.8, -0.2
    r = risk_metrics(pure_jump_model(lam, c), [0.3])
    assert r.v[0] == pytest.approx(lam * c * c, abs=1e-15)
    assert r.lev[0] is None
    with pytest.raises(DegenerateVariance):
        risk_metrics(pure_jump_model(lam, c), [0.3], diffusive_only=True)


def test_degenerate_variance_at_zero():
    with pytest.raises(DegenerateVariance):
        risk_metrics(model_zoo("example_5_1").model, [0.0])


def test_diffusive_only_toggle():
    m = model_zoo("linear_vol_jumps").model
    full = risk_metrics(m, [0.3])
    diff = risk_metrics(m, [0.3], diffusive_only=True)
    assert diff.v[0] == pytest.approx(0.09, abs=1e-14)
    assert full.v[0] > diff.v[0]


def test_leverage_bounds_sampled():
    m = model_zoo("linear_vol_jumps").model
    pts = np.random.default_rng(3).uniform(0.01, 3.0, size=1000)
    aug = m.augmented()
    op = aug.operator()
    Y = Poly.var(1, 2)
    v = op.carre_du_champ(Y, Y)
    assert v.degree <= 4
    gyv = op.carre_du_champ(Y, v)
    gvv = op.carre_du_champ(v, v)
    z = np.column_stack([pts, np.zeros_like(pts)])
    lev = gyv(z) / np.sqrt(v(z) * gvv(z))
    assert np.all(np.abs(lev) <= 1 + 1e-8)
    assert np.all(lev < 0)
    for x0 in pts[:25]:
        r = risk_metrics(m, [x0])
        assert -1.0 <= r.lev[0] <= 1.0


# ---------------------------------------------------------------- measure change

def test_measure_change_identity_exact():
    m = model_zoo("linear_vol_jumps").model
    q = measure_change(m, [0.0, 0.0])
    aug = m.augmented()
    for i in range(2):
        assert q.drift[i] == aug.joint_drift()[i]
    for s_old, s_new in zip(m.kernel().streams, q.kernel.streams):
        assert s_old.rate == s_new.rate and s_old.marks == s_new.marks and s_old.size == s_new.size
    aXX, aXY, aY = m.diffusion_blocks()
    assert q.diffusion[0][0] == aXX[0][0].embed(2, [0])
    assert q.diffusion[1][1] == aY[0][0].embed(2, [0])


def test_measure_change_constant_phi():
    m = model_zoo("example_5_1").model
    phi = [0.5, -1.5]
    q = measure_change(m, phi)
    ref = measure_change(m, [0.0, 0.0])
    for i in range(2):
        shift = sum((q.diffusion[i][j].scale(phi[j]) for j in range(2)), Poly.zero(2))
        assert q.drift[i].allclose(ref.drift[i] - shift, atol=1e-15)


def test_measure_change_halved_intensity():
    lam, c = 0.8, -0.2
    m = risk_neutral_drift(pure_jump_model(lam, c))
    q = measure_change(m, [0.0, 0.0], PsiFamily("constant", (2.0,)))
    ref = measure_change(m, [0.0, 0.0])
    assert q.kernel.streams[0].rate == pytest.approx(lam / 2)
    assert q.drift[1].allclose(ref.drift[1] - Poly.constant(0.5 * lam * c, 2), atol=1e-15)
    assert q.drift[0] == ref.drift[0]


def test_measure_change_rejects_nonpositive_psi():
    with pytest.raises(NonpositivePsi):
        measure_change(risk_neutral_drift(pure_jump_model()), [0.0, 0.0], PsiFamily("constant", (0.0,)))


def test_exponential_tilt_point_masses_and_gaussian():
    m = model_zoo("linear_vol_jumps").model
    theta = 1.5
    q = measure_change(m, [0.0, 0.0], PsiFamily("tilt", theta=(0.0, theta)))
    iso_old, co_old = m.kernel().streams
    iso_new, co_new = q.kernel.streams
    # point mass: nu/psi scales the rate by exp(-theta * size)
    assert co_new.rate == pytest.approx(co_old.rate * math.exp(-theta * m.streams[1].delta_y[0][1]), rel=1e-14)
    # Gaussian: rate * E[exp(-theta U)], mean shifted by -theta * var
    mu, var = iso_old.marks.mean_[0], iso_old.marks.cov[0][0]
    assert iso_new.rate == pytest.approx(iso_old.rate * math.exp(-theta * mu + 0.5 * theta ** 2 * var), rel=1e-14)
    assert iso_new.marks.mean_[0] == pytest.approx(mu - theta * var, rel=1e-14)


# ---------------------------------------------------------------- zoo

@pytest.mark.parametrize("name", ZOO_NAMES)
def test_zoo_entries(name):
    e = model_zoo(name)
    assert e.name == name and e.description
    assert e.generator.state_space.contains(np.array([e.x0]))[0]


def test_zoo_anchors():
    g = model_zoo("garch", kappa=0.3, theta=2.0).generator
    assert g.drift[0].allclose(0.6 - x.scale(0.3))
    assert g.diffusion()[0][0].allclose((x * x).scale(0.6))
    ex = model_zoo("example_5_1").model
    assert ex.vol_x()[0][0].allclose(x.scale(0.3)) and ex.vol_y()[0][1].allclose(x)
    tp = model_zoo("two_point_affine", lam=1.5).generator
    op = tp.operator()
    # G f = lam x (f(x-1) - f(x)) on f = x^3
    f = x ** 3
    assert op.apply(f).allclose(x.scale(1.5) * ((x - 1) ** 3 - f), atol=1e-14)


def test_zoo_errors():
    with pytest.raises(ValidationError):
        model_zoo("heston")
    with pytest.raises(ValidationError):
        model_zoo("ou", nu=1.0)
    with pytest.raises(ValidationError):
        model_zoo("ou", kappa="fast")


def test_model_json_round_trip():
    for name in ("example_5_1", "linear_vol_jumps"):
        m = model_zoo(name).model
        back = LinearVolModel.from_json(m.to_json())
        assert back.to_json() == m.to_json()
        assert all(p == q for p, q in zip(back.b_y, m.b_y))


def test_black_scholes_helper():
    bs = black_scholes_model(0.2)
    assert bs.b_y[0].allclose(Poly.constant(-0.02, 1), atol=1e-16)
    with pytest.raises(ValidationError):
        black_scholes_model(0.0)
