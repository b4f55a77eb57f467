import math

import numpy as np
import pytest

from conftest import ou_spec, sym_jump_kernel
from polyjump.errors import KernelRequired, StateExit, ValidationError
from polyjump.generator import GeneratorSpec, build_generator_matrix, linear_sde_spec
from polyjump.mc import BLOCK, EstimateWithSE, SimConfig, estimate, estimate_antithetic, sample_clock, simulate, simulate_subordinated
from polyjump.models import black_scholes_model, model_zoo
from polyjump.moments import conditional_moment
from polyjump.polyalg import Poly
from polyjump.timechange import GammaPart, SubordinatorSpec, subordinate_matrix

x = Poly.var(0, 1)
BS_PRICE = 0.0796557


def test_ode_limit():
    spec = linear_sde_spec([0.0], [[-1.0]], [[0.0]], [[[0.0]]])
    res = simulate(spec, 1.0, SimConfig(paths=10, steps=10_000), [1.0])
    assert np.all(np.abs(res.x[:, 0] - math.exp(-1)) < 1e-3)


def test_poisson_count():
    spec = linear_sde_spec([0.0], [[0.0]], [[0.0]], [[[0.0]]], kernel=sym_jump_kernel(3.0))
    res = simulate(spec, 2.0, SimConfig(paths=20_000, steps=10, seed=1), [0.0])
    est = estimate(None, res.jumps.astype(float))
    assert est.within(6.0)
    # compensated symmetric jumps: X_T has mean 0 and variance 6
    assert estimate(x * x, res.x).within(6.0)


def test_exact_ou_matches_moment_formula():
    spec = ou_spec(1.0, 0.3, 0.8)
    gm = build_generator_matrix(spec, 2)
    res = simulate(spec, 1.0, SimConfig(paths=100_000, steps=1, seed=7, scheme="exact_ou"), [1.0])
    for p in (x, x * x):
        assert estimate(p, res.x).within(conditional_moment(gm, p, 1.0, [1.0]))


def test_exact_ou_rejects_nonlinear():
    with pytest.raises(ValidationError):
        simulate(model_zoo("square_root").generator, 1.0, SimConfig(paths=10, scheme="exact_ou"), [1.0])


def test_deterministic_clock_reproduces_simulate():
    spec = ou_spec()
    cfg = SimConfig(paths=1000, steps=50, seed=3)
    a = simulate(spec, 1.0, cfg, [1.0]).x
    b = simulate_subordinated(spec, SubordinatorSpec(1.0), 1.0, cfg, [1.0]).x
    assert np.array_equal(a, b)


def test_subordinated_ou_against_matrix():
    e = model_zoo("ou_poisson_timechange")
    cfg = SimConfig(paths=40_000, steps=100, seed=11, scheme="exact_ou")
    res = simulate_subordinated(e.generator, e.subordinator, 1.0, cfg, e.x0)
    gm = subordinate_matrix(build_generator_matrix(e.generator, 2), e.subordinator)
    for p in (x, x * x):
        assert estimate(p, res.x).within(conditional_moment(gm, p, 1.0, e.x0))


def test_clock_mean():
    sub = SubordinatorSpec(0.5, ((1.0, 2.0), (3.0, 0.25)))
    z = sample_clock(sub, 2.0, np.random.default_rng(0), 50_000)
    assert estimate(None, z).within(sub.mean_rate() * 2.0)
    with pytest.raises(ValidationError):
        sample_clock(SubordinatorSpec(0.0, (), GammaPart(1.0, 1.0)), 1.0, np.random.default_rng(0), 10)


def test_estimate_examples():
    const = estimate(lambda s: np.full(len(s), 2.5), np.zeros((100, 1)))
    assert const.mean == 2.5 and const.se == 0.0
    z = np.random.default_rng(5).standard_normal((50_000, 1))
    assert estimate(x * x, z).within(1.0)
    with pytest.raises(ValidationError):
        estimate(None, np.zeros(0))


def test_black_scholes_call_mc():
    bs = black_scholes_model(0.2)
    res = simulate(bs, 1.0, SimConfig(paths=100_000, steps=1, seed=2), [0.0])
    call = lambda s: np.maximum(np.exp(s[:, 1]) - 1.0, 0.0)
    est = estimate(call, res.x)
    assert est.within(BS_PRICE)
    assert estimate(lambda s: np.exp(s[:, 1]), res.x).within(1.0)


def test_antithetic_reduces_error():
    bs = black_scholes_model(0.2)
    plain = simulate(bs, 1.0, SimConfig(paths=20_000, steps=1, seed=4), [0.0])
    anti = simulate(bs, 1.0, SimConfig(paths=20_000, steps=1, seed=4, antithetic=True), [0.0])
    f = lambda s: np.exp(s[:, 1])
    e1 = estimate(f, plain.x)
    e2 = estimate_antithetic(f, anti.x)
    assert e2.se < 0.5 * e1.se
    assert e2.within(1.0)


@pytest.mark.parametrize("scheme,model", [("euler", "linear_vol_jumps"), ("exact_ou", "ou")])
def test_seed_determinism_across_threads(scheme, model):
    e = model_zoo(model)
    target = e.model if e.model is not None else e.generator
    outs = []
    for threads in (1, 2, 8):
        cfg = SimConfig(paths=2 * BLOCK + 123, steps=5, seed=99, scheme=scheme, threads=threads)
        outs.append(simulate(target, 1.0, cfg, e.x0).x)
    assert np.array_equal(outs[0], outs[1]) and np.array_equal(outs[0], outs[2])
    again = simulate(target, 1.0, SimConfig(paths=2 * BLOCK + 123, steps=5, seed=99, scheme=scheme), e.x0).x
    assert np.array_equal(outs[0], again)


def test_se_scales_with_paths():
    spec = ou_spec()
    se = [estimate(x, simulate(spec, 1.0, SimConfig(paths=n, steps=1, seed=8, scheme="exact_ou"), [0.0]).x).se for n in (10_000, 40_000)]
    assert 1.6 < se[0] / se[1] < 2.4


def test_euler_convergence():
    spec = ou_spec()
    exact = math.exp(-1)
    errs = []
    for steps in (2, 4, 8):
        res = simulate(spec, 1.0, SimConfig(paths=100_000, steps=steps, seed=21), [1.0])
        errs.append(abs(estimate(x, res.x).mean - exact))
    r1, r2 = errs[0] / errs[1], errs[1] / errs[2]
    assert 1.5 < r1 < 3.0 and 1.5 < r2 < 3.0


def test_functionals_integral_of_ou():
    theta, T, x0 = 0.4, 1.5, 1.2
    spec = ou_spec(1.0, theta, 0.6)
    res = simulate(spec, T, SimConfig(paths=20_000, steps=200, seed=5), [x0], P=[x], Q=[[Poly.constant(1.0, 1)]])
    want = theta * T + (x0 - theta) * (1 - math.exp(-T))
    est = estimate(None, res.time_integrals[:, 0])
    assert abs(est.mean - want) < 3 * est.se + 2e-3
    assert np.allclose(res.stochastic_integrals[:, 0], res.x[:, 0] - x0, atol=1e-10)


def test_kernel_required():
    spec = GeneratorSpec(1, [Poly.zero(1)], [[Poly.constant(1.0, 1)]], {(3,): Poly.constant(1.0, 1)}, 3)
    with pytest.raises(KernelRequired):
        simulate(spec, 1.0, SimConfig(paths=10), [0.0])


def test_state_exit_warning():
    spec = model_zoo("square_root", sigma=3.0, b=0.01).generator
    with pytest.warns(StateExit):
        res = simulate(spec, 1.0, SimConfig(paths=2000, steps=10, seed=0), [0.05])
    assert res.exits > 0


def test_sim_config_validation():
    with pytest.raises(ValidationError):
        SimConfig(paths=0)
    with pytest.raises(ValidationError):
        SimConfig(scheme="milstein")
    with pytest.raises(ValidationError):
        SimConfig(seed=-1)


def test_within_helper():
    e = EstimateWithSE(1.0, 0.1, 100)
    assert e.within(1.29) and not e.within(1.31)
