"""Command-line front end.

    polyjump moments    --zoo garch --p "x" --tau 0:5:0.5
    polyjump price      --zoo example_5_1 --payoff call --strike 1 --T 1 --K 20
    polyjump charfn     --zoo two_point_affine --u 3.14159j --T 1
    polyjump timechange --zoo ou_poisson_timechange --p "x" --tau 0:2:0.5
    polyjump simulate   --zoo garch --T 1 --paths 10000 --seed 7
    polyjump validate   --model doc.json
    polyjump zoo        [name] [--dump]

Exit codes: 0 success, 2 validation error (error JSON on stdout), 1 internal failure.
"""
from __future__ import annotations

import argparse
import io
import json
import math
import sys

import numpy as np

from . import __version__
from .config import (
    LoadedModel,
    apply_override,
    canonical_json,
    config_hash,
    load_document,
    parse_poly,
    read_document,
    split_assignment,
    zoo_document,
)
from .errors import ConfigError, ValidationError

FORMATS = ("csv", "json")


# ---------------------------------------------------------------- helpers

def parse_taus(text: str) -> np.ndarray:
    """``a:b:h`` (inclusive grid) or a comma list."""
    try:
        if ":" in text:
            a, b, h = (float(v) for v in text.split(":"))
            if not h > 0 or b < a:
                raise ConfigError("tau grid needs start <= stop and step > 0")
            n = int(math.floor((b - a) / h + 1e-9))
            return a + h * np.arange(n + 1)
        return np.array([float(v) for v in text.split(",")])
    except ValueError as exc:
        raise ConfigError(f"bad tau specification {text!r}") from exc


def parse_vector(text: str, complex_ok=False):
    conv = complex if complex_ok else float
    try:
        return np.array([conv(v.strip()) for v in text.split(",")])
    except ValueError as exc:
        raise ConfigError(f"bad vector {text!r}") from exc


def load_model(args) -> LoadedModel:
    if (args.zoo is None) == (args.model is None):
        raise ConfigError("give exactly one of --zoo NAME or --model FILE")
    if args.zoo is not None:
        overrides = dict(split_assignment(s) for s in args.set or [])
        doc = zoo_document(args.zoo, overrides)
    else:
        doc = read_document(args.model)
        for item in args.set or []:
            key, val = split_assignment(item)
            doc = apply_override(doc, key, val)
    doc = {k: v for k, v in doc.items() if k != "provenance"}
    loaded = load_document(doc)
    if getattr(args, "x0", None):
        x0 = parse_vector(args.x0)
        if x0.size != loaded.generator.dim:
            raise ConfigError(f"--x0 needs {loaded.generator.dim} components")
        loaded.x0 = tuple(float(v) for v in x0)
    return loaded


def provenance(loaded: LoadedModel | None, args) -> dict:
    return {
        "config_hash": config_hash(loaded.doc) if loaded is not None else None,
        "seed": getattr(args, "seed", None),
        "version": __version__,
    }


def emit_json(payload: dict, prov: dict, out):
    body = dict(payload)
    body["provenance"] = prov
    out.write(canonical_json(_jsonable(body)) + "\n")


def emit_csv(header, rows, prov: dict, out):
    out.write(f"# polyjump {prov['version']} config_hash={prov['config_hash']} seed={prov['seed']}\n")
    out.write(",".join(header) + "\n")
    for r in rows:
        out.write(",".join(format(float(v), ".17g") for v in r) + "\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (complex, np.complexfloating)):
        return [float(obj.real), float(obj.imag)]
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _moment_matrix(loaded: LoadedModel, p_text: str):
    """Generator matrix, polynomial and state for a moment query."""
    from .generator import build_generator_matrix
    from .transform import build_augmented_matrix

    if loaded.model is not None:
        aug = loaded.model.augmented()
        p = parse_poly(p_text, aug.dim, aug.e)
        need = 0
        for a, _ in p.items():
            ay, ax = sum(a[aug.d :]), sum(a[: aug.d])
            need = max(need, ay + -(-ax // aug.n))
        gm = build_augmented_matrix(aug, max(need, 1))
        z = np.concatenate([loaded.x0, np.zeros(aug.e)])
        return gm, p, z
    spec = loaded.generator
    p = parse_poly(p_text, spec.dim)
    return build_generator_matrix(spec, max(p.degree, 1)), p, np.array(loaded.x0)


# ---------------------------------------------------------------- subcommands

def cmd_moments(args, out):
    from .moments import moment_path

    loaded = load_model(args)
    taus = parse_taus(args.tau)
    gm, p, z = _moment_matrix(loaded, args.p)
    vals = moment_path(gm, p, z, taus)
    prov = provenance(loaded, args)
    if args.format == "json":
        emit_json({"p": args.p, "tau": taus, "value": vals}, prov, out)
    else:
        emit_csv(["tau", "value"], zip(taus, vals), prov, out)


def cmd_timechange(args, out):
    from .moments import moment_path
    from .timechange import SubordinatorSpec, check_exponential_moments, subordinate_matrix

    loaded = load_model(args)
    sub = loaded.subordinator
    if args.clock_rate is not None or args.clock_drift is not None:
        atoms = ((args.clock_rate, args.clock_size),) if args.clock_rate is not None else ()
        sub = SubordinatorSpec(args.clock_drift or 0.0, atoms)
    if sub is None:
        raise ConfigError("model has no subordinator; give --clock-rate/--clock-size or --clock-drift")
    gm, p, z = _moment_matrix(loaded, args.p)
    rep = check_exponential_moments(sub, gm)
    gsub = subordinate_matrix(gm, sub)
    if args.matrix:
        names = [p.monomial(a).to_string() if any(a) else "1" for a in gsub.basis.order]
        emit_csv(names, gsub.G, provenance(loaded, args), out)
        return
    taus = parse_taus(args.tau)
    vals = moment_path(gsub, p, z, taus)
    prov = provenance(loaded, args)
    if args.format == "json":
        report = {"ok": rep.ok, "top_eigenvalue": rep.top_eigenvalue, "margin": rep.margin if math.isfinite(rep.margin) else None}
        emit_json({"p": args.p, "tau": taus, "value": vals, "exponential_moments": report, "subordinator": sub.to_json()}, prov, out)
    else:
        emit_csv(["tau", "value"], zip(taus, vals), prov, out)


def cmd_price(args, out):
    from .pricer import Observation, Payoff, PricingRequest, price

    loaded = load_model(args)
    if loaded.model is None:
        raise ConfigError("pricing needs a linear volatility model (kind linear_vol)")
    model = loaded.model
    disc = math.exp(-model.rate * args.T)
    payoff = Payoff(args.payoff, strike=args.strike, spot=args.spot, discount=disc)
    aug = model.augmented()
    z0 = tuple(loaded.x0) + (0.0,) * aug.e
    P = None
    if aug.e > 1:
        P = np.zeros((1, aug.e))
        P[0, args.asset] = 1.0
    req = PricingRequest(aug, payoff, Observation.terminal(args.T, aug.e, P), z0, K=args.K, prebasis=args.prebasis)
    res = price(req)
    payload = {
        "price": res.value,
        "partial_sums": res.partial_sums,
        "ell": res.ell,
        "F": res.F,
        "diagnostics": res.diagnostics,
        "request": {"payoff": args.payoff, "strike": args.strike, "spot": args.spot, "T": args.T, "K": args.K, "discount": disc},
    }
    emit_json(payload, provenance(loaded, args), out)


def cmd_charfn(args, out):
    from .affine import affine_transform, solve_riccati

    loaded = load_model(args)
    aff = loaded.affine
    if aff is None:
        raise ConfigError("model has no affine representation")
    us = [parse_vector(t, complex_ok=True) for t in args.u.split(";")]
    if any(u.size != aff.d for u in us):
        raise ConfigError(f"each --u vector needs {aff.d} components")
    grid = np.linspace(0.0, args.T, args.grid + 1)
    x = np.array(loaded.x0)
    results = []
    for u in us:
        sol = solve_riccati(aff, u, args.T, grid)
        value = affine_transform(aff, sol, x, 0.0, args.T) if sol.complete else None
        results.append((u, sol, value))
    prov = provenance(loaded, args)
    if args.format == "csv":
        header = [f"u{i + 1}_re" for i in range(aff.d)] + [f"u{i + 1}_im" for i in range(aff.d)] + ["re", "im", "complete", "tau_star"]
        rows = []
        for u, sol, value in results:
            v = value if value is not None else complex("nan")
            tau = sol.tau_star if sol.tau_star is not None else float("nan")
            rows.append(list(u.real) + list(u.imag) + [v.real, v.imag, float(sol.complete), tau])
        emit_csv(header, rows, prov, out)
        return
    payload = {"T": args.T, "results": []}
    for u, sol, value in results:
        payload["results"].append(
            {"u": u, "status": sol.status, "tau_star": sol.tau_star, "tau": sol.grid, "phi": sol.phi, "psi": sol.psi, "value": value}
        )
    emit_json(payload, prov, out)


def cmd_simulate(args, out):
    from .mc import SimConfig, estimate, simulate, simulate_subordinated

    loaded = load_model(args)
    cfg = SimConfig(args.paths, args.steps, args.seed, args.scheme, args.antithetic, args.threads)
    target = loaded.model if loaded.model is not None else loaded.generator
    if args.subordinated:
        if loaded.subordinator is None:
            raise ConfigError("model has no subordinator")
        res = simulate_subordinated(target, loaded.subordinator, args.T, cfg, loaded.x0)
    else:
        res = simulate(target, args.T, cfg, loaded.x0)
    prov = provenance(loaded, args)
    D = res.x.shape[1]
    if args.format == "csv":
        cols = [f"x{i + 1}" for i in range(D)]
        emit_csv(cols, res.x, prov, out)
        return
    e = 0 if loaded.model is None else loaded.model.e
    summary = {"T": args.T, "paths": args.paths, "steps": args.steps, "scheme": args.scheme, "exits": res.exits}
    comps = []
    for i in range(D):
        est = estimate(None, res.x[:, i])
        comps.append({"mean": est.mean, "se": est.se})
    summary["state"] = comps
    summary["jump_rate"] = float(res.jumps.mean())
    polys = []
    for text in args.p or []:
        p = parse_poly(text, D, e)
        est = estimate(p, res.x)
        polys.append({"p": text, "mean": est.mean, "se": est.se})
    summary["estimates"] = polys
    emit_json(summary, prov, out)


def cmd_validate(args, out):
    from .affine import affine_checks
    from .generator import validation_checks
    from .models import risk_neutral_drift
    from .timechange import check_exponential_moments
    from .generator import build_generator_matrix
    from .transform import augmented_checks

    loaded = load_model(args)
    rows = []

    def add(name, ok, margin, detail=""):
        rows.append({"check": name, "ok": bool(ok), "margin": float(margin) if margin is not None and math.isfinite(margin) else None, "detail": detail})

    for c in validation_checks(loaded.generator):
        add(c.name, c.ok, c.margin, c.detail)
    if loaded.model is not None:
        aug = loaded.model.augmented()
        for c in augmented_checks(aug):
            add(c.name, c.ok, c.margin, c.detail)
        if loaded.model.risk_neutral:
            ref = risk_neutral_drift(loaded.model).b_y
            err = max(float((p - q).max_abs_coeff()) for p, q in zip(ref, loaded.model.b_y))
            add("risk-neutral drift", err <= 1e-12, -err)
    if loaded.affine is not None:
        for c in affine_checks(loaded.affine):
            add(c.name, c.ok, c.margin, c.detail)
    if loaded.subordinator is not None:
        gm = build_generator_matrix(loaded.generator, 2)
        rep = check_exponential_moments(loaded.subordinator, gm)
        add("subordinator exponential moments", rep.ok, rep.margin, "Markov property of the time-changed process assumed")
    failed = [r for r in rows if not r["ok"]]
    prov = provenance(loaded, args)
    if args.format == "csv":
        out.write(f"# polyjump {prov['version']} config_hash={prov['config_hash']} seed={prov['seed']}\n")
        out.write("check,ok,margin\n")
        for r in rows:
            out.write(f"\"{r['check']}\",{'pass' if r['ok'] else 'fail'},{'' if r['margin'] is None else format(r['margin'], '.17g')}\n")
    else:
        emit_json({"checks": rows, "ok": not failed}, prov, out)
    if failed:
        from .generator import validate_spec

        validate_spec(loaded.generator)  # raises the specific error for generator rows
        raise ValidationError(f"check failed: {failed[0]['check']}", check=failed[0]["check"])


def cmd_zoo(args, out):
    from .models import ZOO_DEFAULTS, model_zoo

    if args.name is None:
        emit_json({"models": {n: model_zoo(n).description for n in ZOO_DEFAULTS}}, provenance(None, args), out)
        return
    overrides = dict(split_assignment(s) for s in args.set or [])
    doc = zoo_document(args.name, overrides)
    if args.dump:
        body = dict(doc)
        body["provenance"] = {"config_hash": config_hash(doc), "seed": None, "version": __version__}
        out.write(canonical_json(body) + "\n")
        return
    entry = model_zoo(args.name, **overrides)
    emit_json({"name": entry.name, "description": entry.description, "params": entry.params, "x0": entry.x0}, provenance(load_document(doc), args), out)


# ---------------------------------------------------------------- parser

def _model_args(p):
    p.add_argument("--zoo", help="zoo model name")
    p.add_argument("--model", help="model document (JSON)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="parameter override (zoo) or dotted-path override (document)")
    p.add_argument("--x0", help="initial factor state, comma separated")
    p.add_argument("--out", help="output file (default stdout)")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="polyjump", description="moments, pricing and simulation for polynomial jump-diffusions")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("moments", help="conditional moment path")
    _model_args(p)
    p.add_argument("--p", required=True, help="polynomial, e.g. 'x^2' or 'y1*x'")
    p.add_argument("--tau", required=True, help="a:b:h or comma list")
    p.add_argument("--format", choices=FORMATS, default="csv")

    p = sub.add_parser("timechange", help="moments of the subordinated process")
    _model_args(p)
    p.add_argument("--p", required=True, help="polynomial; its degree sets the matrix size")
    p.add_argument("--tau", default="1", help="a:b:h or comma list")
    p.add_argument("--matrix", action="store_true", help="emit the subordinated generator matrix instead")
    p.add_argument("--clock-rate", type=float)
    p.add_argument("--clock-size", type=float, default=1.0)
    p.add_argument("--clock-drift", type=float)
    p.add_argument("--format", choices=FORMATS, default="csv")

    p = sub.add_parser("price", help="likelihood-ratio expansion price")
    _model_args(p)
    p.add_argument("--payoff", choices=("call", "put"), default="call")
    p.add_argument("--strike", type=float, default=1.0)
    p.add_argument("--spot", type=float, default=1.0)
    p.add_argument("--T", type=float, default=1.0)
    p.add_argument("--K", type=int, default=20)
    p.add_argument("--asset", type=int, default=0)
    p.add_argument("--prebasis", choices=("hermite", "monomial"), default="hermite")

    p = sub.add_parser("charfn", help="affine transform via Riccati equations")
    _model_args(p)
    p.add_argument("--u", required=True, help="complex vectors separated by ';', e.g. '3.14159j;1j'")
    p.add_argument("--T", type=float, default=1.0)
    p.add_argument("--grid", type=int, default=10, help="number of reporting intervals")
    p.add_argument("--format", choices=FORMATS, default="json")

    p = sub.add_parser("simulate", help="Monte Carlo simulation")
    _model_args(p)
    p.add_argument("--T", type=float, default=1.0)
    p.add_argument("--paths", type=int, default=100_000)
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--scheme", choices=("euler", "exact_ou"), default="euler")
    p.add_argument("--antithetic", action="store_true")
    p.add_argument("--subordinated", action="store_true")
    p.add_argument("--threads", type=int, default=None, help="worker threads (default $POLYJUMP_THREADS or 1)")
    p.add_argument("--p", action="append", help="polynomial to estimate (repeatable)")
    p.add_argument("--format", choices=FORMATS, default="json")

    p = sub.add_parser("validate", help="run model checks")
    _model_args(p)
    p.add_argument("--format", choices=FORMATS, default="json")

    p = sub.add_parser("zoo", help="list or dump zoo models")
    p.add_argument("name", nargs="?")
    p.add_argument("--dump", action="store_true")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--out")
    p.add_argument("--seed", type=int, default=None)
    return ap


COMMANDS = {
    "moments": cmd_moments,
    "timechange": cmd_timechange,
    "price": cmd_price,
    "charfn": cmd_charfn,
    "simulate": cmd_simulate,
    "validate": cmd_validate,
    "zoo": cmd_zoo,
}


def run(argv=None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and 2
    buf = io.StringIO()
    try:
        COMMANDS[args.command](args, buf)
    except ValidationError as exc:
        stdout.write(buf.getvalue())
        stdout.write(canonical_json(_jsonable(exc.to_dict())) + "\n")
        return 2
    except Exception as exc:  # internal failure, reported not raised
        stderr.write(canonical_json({"error": "InternalError", "type": type(exc).__name__, "message": str(exc)}) + "\n")
        return 1
    text = buf.getvalue()
    if getattr(args, "out", None):
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        stdout.write(text)
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
