"""Monte Carlo oracle: Euler paths with exact Poisson jump times.

Paths are simulated in fixed blocks of ``BLOCK`` paths.  Each block draws
from its own counter-based Philox stream keyed by (seed, block index), so
results do not depend on how blocks are spread over threads.
"""
from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import KernelRequired, StateExit, ValidationError
from .generator import GeneratorSpec, StateSpace
from .polyalg import Poly, PolyEvaluator
from .timechange import SubordinatorSpec

BLOCK = 8192
SCHEMES = ("euler", "exact_ou")


@dataclass(frozen=True)
class SimConfig:
    paths: int = 100_000
    steps: int = 500  # per unit time
    seed: int = 0
    scheme: str = "euler"
    antithetic: bool = False
    threads: int | None = None

    def __post_init__(self):
        if self.paths < 1 or self.steps < 1:
            raise ValidationError("paths and steps must be >= 1")
        if self.scheme not in SCHEMES:
            raise ValidationError(f"scheme must be one of {SCHEMES}")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ValidationError("seed must be a 64-bit unsigned integer")


@dataclass(frozen=True)
class EstimateWithSE:
    mean: float
    se: float
    paths: int

    def within(self, target, k=3.0) -> bool:
        return abs(self.mean - target) <= k * self.se + 1e-12 * max(1.0, abs(target))


@dataclass
class SimResult:
    x: np.ndarray  # (P, D) terminal states
    time_integrals: np.ndarray  # (P, nP) integrals of P(X) dt
    stochastic_integrals: np.ndarray  # (P, nQ) integrals of Q(X-) . dX
    jumps: np.ndarray  # (P,) number of jump events
    clock: np.ndarray  # (P,) simulated horizon (Z_T for subordinated runs)
    exits: int  # paths that left the state space at a grid time


def default_threads() -> int:
    env = os.environ.get("POLYJUMP_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ValidationError("POLYJUMP_THREADS must be an integer") from exc
    return 1


def block_rng(seed: int, block: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(block),))
    return np.random.Generator(np.random.Philox(ss))


# ---------------------------------------------------------------- model plumbing

class _Dynamics:
    """Vectorized coefficient evaluation for a kernel-backed spec."""

    def __init__(self, spec: GeneratorSpec, state_space: StateSpace | None = None):
        if spec.has_jumps and spec.kernel is None:
            raise KernelRequired("simulation needs a jump kernel, not only moments")
        self.spec = spec
        self.D = D = spec.dim
        self.kernel = spec.kernel
        a = spec.diffusion()
        drift = list(spec.drift)
        if self.kernel is not None:
            comp = self.kernel.first_moments()
            drift = [drift[i] - comp[i] for i in range(D)]
        self.drift = PolyEvaluator(drift)
        self.diff = PolyEvaluator([a[i][j] for i in range(D) for j in range(D)])
        self.const_diff = all(p.degree <= 0 for r in a for p in r)
        self.state_space = state_space or spec.state_space
        self.rates = np.array([s.rate for s in self.kernel.streams]) if self.kernel is not None else np.zeros(0)
        self.total_rate = float(self.rates.sum())

    def vol(self, x) -> np.ndarray:
        """Square root of a(x) for each row; shape (P, D, D)."""
        P, D = x.shape
        if self.const_diff:
            A = self.diff(x[:1]).reshape(1, D, D)
        else:
            A = self.diff(x).reshape(P, D, D)
        if D == 1:
            return np.sqrt(np.maximum(A, 0.0))
        A = 0.5 * (A + np.swapaxes(A, 1, 2))
        lam, V = np.linalg.eigh(A)
        return V * np.sqrt(np.maximum(lam, 0.0))[:, None, :]

    def jump(self, x, rng) -> np.ndarray:
        """Sizes of one jump per row of x, stream picked by relative intensity."""
        P = x.shape[0]
        which = rng.choice(len(self.rates), size=P, p=self.rates / self.total_rate)
        out = np.zeros_like(x)
        for j, s in enumerate(self.kernel.streams):
            idx = np.flatnonzero(which == j)
            if idx.size:
                u = np.asarray(s.marks.sample(rng, idx.size), float).reshape(idx.size, -1)
                out[idx] = s.evaluate(x[idx], u)
        return out


def _linear_parts(spec: GeneratorSpec):
    """(b0, B, Sigma) with drift b0 + B x and constant diffusion Sigma; None otherwise."""
    D = spec.dim
    if spec.has_jumps or any(p.degree > 1 for p in spec.drift):
        return None
    a = spec.diffusion()
    if any(p.degree > 0 for r in a for p in r):
        return None
    b0 = np.array([p.constant_term() for p in spec.drift])
    B = np.array([[p.coeff(tuple(int(k == j) for k in range(D))) for j in range(D)] for p in spec.drift])
    S = np.array([[a[i][j].constant_term() for j in range(D)] for i in range(D)])
    return b0, B, S


def _ou_transition(parts, h):
    """Exact Gaussian transition over a scalar step h: (mean map M, offset c, covariance chol L)."""
    from .moments import expm

    b0, B, S = parts
    D = len(b0)
    # Van Loan block for covariance and an augmented block for the offset
    VL = np.zeros((2 * D, 2 * D))
    VL[:D, :D] = -B
    VL[:D, D:] = S
    VL[D:, D:] = B.T
    E = expm(VL * h)
    M = E[D:, D:].T
    C = M @ E[:D, D:]
    Aug = np.zeros((D + 1, D + 1))
    Aug[:D, :D] = B
    Aug[:D, D] = b0
    c = expm(Aug * h)[:D, D]
    C = 0.5 * (C + C.T)
    lam, V = np.linalg.eigh(C)
    L = V * np.sqrt(np.maximum(lam, 0.0))
    return M, c, L


# ---------------------------------------------------------------- block kernel

def _simulate_block(dyn: _Dynamics, x0, horizon, cfg: SimConfig, P: int, block: int, funcs, parts):
    rng = block_rng(cfg.seed, block)
    D = dyn.D
    x = np.repeat(np.asarray(x0, float)[None, :], P, axis=0)
    horizon = np.broadcast_to(np.asarray(horizon, float), (P,)).copy()
    hmax = float(horizon.max()) if P else 0.0
    n_steps = max(1, int(math.ceil(cfg.steps * hmax - 1e-9)))
    dt = horizon / n_steps
    Pf, Qf = funcs
    ti = np.zeros((P, Pf.n_out if Pf else 0))
    si = np.zeros((P, Qf.n_out // D if Qf else 0))
    njumps = np.zeros(P, dtype=np.int64)
    exited = np.zeros(P, dtype=bool)
    half = (P + 1) // 2

    def normals(n, shape):
        if cfg.antithetic:
            z = rng.standard_normal((half,) + shape)
            return np.concatenate([z, -z])[:n]
        return rng.standard_normal((n,) + shape)

    def advance(xs, h, z):
        """Euler step of length h (per row) with standard normals z."""
        h = h[:, None]
        return dyn.drift(xs) * h + np.einsum("pij,pj->pi", dyn.vol(xs), z) * np.sqrt(h)

    def accumulate(rows, xs, dx, h):
        if Pf is not None:
            ti[rows] += Pf(xs) * h[:, None]
        if Qf is not None:
            q = Qf(xs).reshape(len(rows), -1, D)
            si[rows] += np.einsum("pkd,pd->pk", q, dx)

    all_rows = np.arange(P)
    if parts is not None and cfg.scheme == "exact_ou":
        uniq = np.unique(dt)
        for _ in range(n_steps):
            z = normals(P, (D,))
            xn = np.empty_like(x)
            for h in uniq:
                rows = all_rows if uniq.size == 1 else np.flatnonzero(dt == h)
                M, c, L = _ou_transition(parts, float(h))
                xn[rows] = x[rows] @ M.T + c + z[rows] @ L.T
            accumulate(all_rows, x, xn - x, dt)
            x = xn
            exited |= ~dyn.state_space.contains(x)
        return x, ti, si, njumps, horizon, exited

    for _ in range(n_steps):
        z = normals(P, (D,))
        if dyn.total_rate > 0:
            counts = rng.poisson(dyn.total_rate * dt)
        else:
            counts = np.zeros(P, dtype=np.int64)
        quiet = np.flatnonzero(counts == 0)
        busy = np.flatnonzero(counts > 0)
        if quiet.size:
            xs = x[quiet]
            dx = advance(xs, dt[quiet], z[quiet])
            accumulate(quiet, xs, dx, dt[quiet])
            x[quiet] = xs + dx
        if busy.size:
            # exact event times inside the step: Euler to each event, jump, continue
            cnt = counts[busy]
            kmax = int(cnt.max())
            u = np.sort(rng.uniform(size=(busy.size, kmax)), axis=1)
            u[np.arange(kmax)[None, :] >= cnt[:, None]] = 1.0
            stops = np.concatenate([u, np.ones((busy.size, 1))], axis=1) * dt[busy][:, None]
            t_prev = np.zeros(busy.size)
            for r in range(kmax + 1):
                h = stops[:, r] - t_prev
                zr = rng.standard_normal((busy.size, D)) if r > 0 else z[busy]
                xs = x[busy]
                dx = advance(xs, h, zr)
                accumulate(busy, xs, dx, h)
                x[busy] = xs + dx
                if r < kmax:
                    hit = np.flatnonzero(r < cnt)
                    rows = busy[hit]
                    xs = x[rows]
                    jx = dyn.jump(xs, rng)
                    accumulate(rows, xs, jx, np.zeros(rows.size))
                    x[rows] = xs + jx
                    njumps[rows] += 1
                t_prev = stops[:, r]
        exited |= ~dyn.state_space.contains(x)
    return x, ti, si, njumps, horizon, exited


def _run(dyn, x0, horizons_fn, T, cfg: SimConfig, P_funcs=None, Q_funcs=None, report_exit=True) -> SimResult:
    D = dyn.D
    Pf = PolyEvaluator(P_funcs) if P_funcs else None
    Qf = None
    if Q_funcs:
        rows = [q if isinstance(q, (list, tuple)) else [q] for q in Q_funcs]
        if any(len(r) != D for r in rows):
            raise ValidationError(f"each Q must have {D} components")
        Qf = PolyEvaluator([p for r in rows for p in r])
    parts = _linear_parts(dyn.spec) if cfg.scheme == "exact_ou" else None
    if cfg.scheme == "exact_ou" and parts is None:
        raise ValidationError("exact_ou scheme needs linear drift, constant diffusion and no jumps")
    n_blocks = (cfg.paths + BLOCK - 1) // BLOCK
    sizes = [min(BLOCK, cfg.paths - b * BLOCK) for b in range(n_blocks)]

    def work(b):
        P = sizes[b]
        hz = horizons_fn(b, P) if horizons_fn is not None else np.full(P, float(T))
        return _simulate_block(dyn, x0, hz, cfg, P, b, (Pf, Qf), parts)

    threads = cfg.threads or default_threads()
    if threads > 1 and n_blocks > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            outs = list(ex.map(work, range(n_blocks)))
    else:
        outs = [work(b) for b in range(n_blocks)]
    cat = [np.concatenate([o[i] for o in outs]) for i in range(6)]
    exits = int(cat[5].sum())
    if exits and report_exit:
        warnings.warn(f"{exits} of {cfg.paths} paths left the state space", StateExit)
    return SimResult(cat[0], cat[1], cat[2], cat[3], cat[4], exits)


def _as_spec(model):
    """Spec to simulate and its state space; linear volatility models run jointly in (X, Y)."""
    from .models import LinearVolModel, risk_neutral_drift
    from .transform import AugmentedSpec

    if isinstance(model, GeneratorSpec):
        return model, model.state_space
    if isinstance(model, LinearVolModel):
        if model.b_y is None:
            model = risk_neutral_drift(model)
        model = model.augmented()
    if isinstance(model, AugmentedSpec):
        spec = model.joint_spec()
        ss = model.base.state_space
        e = model.e
        return spec, StateSpace(tuple(ss.lower) + (-np.inf,) * e, tuple(ss.upper) + (np.inf,) * e)
    raise ValidationError(f"cannot simulate object of type {type(model).__name__}")


def _initial(spec, x0):
    x0 = np.atleast_1d(np.asarray(x0, float))
    if x0.size < spec.dim:
        x0 = np.concatenate([x0, np.zeros(spec.dim - x0.size)])
    if x0.size != spec.dim:
        raise ValidationError(f"initial state needs {spec.dim} components")
    return x0


def simulate(model, T: float, cfg: SimConfig, x0, P=None, Q=None) -> SimResult:
    """Terminal states and path functionals int P(X) dt, int Q(X-) . dX.

    ``model`` is a GeneratorSpec, an AugmentedSpec or a LinearVolModel (the
    latter two are simulated jointly in (X, Y), Y starting at 0 unless x0
    gives it).
    """
    if not T >= 0:
        raise ValidationError("horizon must be >= 0")
    spec, ss = _as_spec(model)
    dyn = _Dynamics(spec, ss)
    return _run(dyn, _initial(spec, x0), None, T, cfg, P, Q)


def sample_clock(sub: SubordinatorSpec, T: float, rng, P: int) -> np.ndarray:
    if sub.gamma is not None:
        raise ValidationError("path simulation supports finite-activity subordinators only")
    z = np.full(P, sub.drift * T)
    for rate, size in sub.atoms:
        z += size * rng.poisson(rate * T, size=P)
    return z


def simulate_subordinated(model, sub: SubordinatorSpec, T: float, cfg: SimConfig, x0) -> SimResult:
    """Terminal sample of X at the random time Z_T."""
    spec, ss = _as_spec(model)
    dyn = _Dynamics(spec, ss)

    def horizons(b, P):
        # clock draws use a stream disjoint from the path stream of the block
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(int(cfg.seed), spawn_key=(int(b), 1))))
        return sample_clock(sub, T, rng, P)

    return _run(dyn, _initial(spec, x0), horizons, T, cfg)


def estimate(payoff, samples) -> EstimateWithSE:
    """Sample mean and standard error of payoff(samples).

    ``payoff`` is a Poly, a callable on the sample array, or None (use the
    samples themselves, which must be one-dimensional).
    """
    samples = np.asarray(samples, float)
    if samples.size == 0:
        raise ValidationError("no samples")
    if payoff is None:
        vals = samples.reshape(samples.shape[0], -1)[:, 0] if samples.ndim > 1 else samples
    elif isinstance(payoff, Poly):
        pts = samples.reshape(samples.shape[0], -1)
        vals = payoff(pts)
    else:
        vals = np.asarray(payoff(samples), float)
    vals = np.asarray(vals, float).reshape(-1)
    n = vals.size
    mean = float(vals.mean())
    se = float(vals.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return EstimateWithSE(mean, se, n)


def estimate_antithetic(payoff, samples) -> EstimateWithSE:
    """Standard error from averaged antithetic pairs.

    Within each simulation block row i is paired with row i + ceil(P/2);
    an unpaired middle row of an odd block is dropped.
    """
    samples = np.asarray(samples, float)
    vals = np.asarray(payoff(samples) if payoff is not None else samples, float).reshape(samples.shape[0], -1)[:, 0]
    pairs = []
    for start in range(0, vals.size, BLOCK):
        v = vals[start : start + BLOCK]
        half = (v.size + 1) // 2
        k = v.size - half
        pairs.append(0.5 * (v[:k] + v[half : half + k]))
    pairs = np.concatenate(pairs)
    if pairs.size < 2:
        raise ValidationError("antithetic estimate needs at least 4 samples")
    return EstimateWithSE(float(pairs.mean()), float(pairs.std(ddof=1) / math.sqrt(pairs.size)), 2 * pairs.size)
