"""Model documents: strict JSON schemas, canonical serialization, overrides.

A document is a JSON object

    {"kind": "generator" | "linear_vol" | "affine",
     "spec": {...}, "x0": [...],
     "affine": {...}?, "subordinator": {...}?,
     "name": str?, "params": {...}?, "provenance": {...}?}

``provenance`` is informational and ignored when hashing.  Polynomials are
either lists of {exponents, coeff} records, plain numbers, or expression
strings such as "0.4 - 2*x" (variables x or x1..xd, y or y1..ye).
"""
from __future__ import annotations

import ast
import copy
import hashlib
import json
import math
from dataclasses import dataclass

import numpy as np

from .affine import AffineSpec, affine_to_generator
from .errors import ConfigError, ValidationError
from .generator import GeneratorSpec, MarkJumpSpec, StateSpace
from .polyalg import Poly
from .timechange import SubordinatorSpec

KINDS = ("generator", "linear_vol", "affine")
DOC_KEYS = {"kind", "spec", "x0", "affine", "subordinator", "name", "params", "provenance"}
GEN_KEYS = {"dim", "drift", "mod_diffusion", "jump_moments", "moment_order", "kernel", "state_space"}


# ---------------------------------------------------------------- canonical JSON

def canonical_json(obj) -> str:
    """Sorted keys, no whitespace, floats with 17 significant digits."""
    if isinstance(obj, dict):
        return "{" + ",".join(json.dumps(str(k)) + ":" + canonical_json(obj[k]) for k in sorted(obj)) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ",".join(canonical_json(v) for v in obj) + "]"
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if not math.isfinite(v):
            return json.dumps(str(v))
        return format(v, ".17g")
    if isinstance(obj, str):
        return json.dumps(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def config_hash(doc: dict) -> str:
    body = {k: v for k, v in doc.items() if k != "provenance"}
    return hashlib.sha256(canonical_json(body).encode()).hexdigest()


def load_json_text(text: str, source: str = "<document>"):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}: {exc.msg} at line {exc.lineno} column {exc.colno}", line=exc.lineno, column=exc.colno) from exc


def read_document(path: str) -> dict:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from exc
    doc = load_json_text(text, path)
    if not isinstance(doc, dict):
        raise ConfigError("document must be a JSON object")
    return doc


# ---------------------------------------------------------------- polynomial expressions

def _var_names(dim: int, e: int = 0) -> dict:
    d = dim - e
    names = {}
    if d == 1:
        names["x"] = 0
    for i in range(d):
        names[f"x{i + 1}"] = i
    if e == 1:
        names["y"] = d
    for l in range(e):
        names[f"y{l + 1}"] = d + l
    return names


def parse_poly(text: str, dim: int, e: int = 0) -> Poly:
    """Parse an arithmetic expression in x (or x1..xd) and y (or y1..ye)."""
    names = _var_names(dim, e)
    try:
        tree = ast.parse(text.replace("^", "**"), mode="eval")
    except SyntaxError as exc:
        raise ConfigError(f"cannot parse polynomial {text!r}: {exc.msg} at column {exc.offset}") from exc

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
            return Poly.constant(float(node.value), dim)
        if isinstance(node, ast.Name):
            if node.id not in names:
                raise ConfigError(f"unknown variable {node.id!r} in {text!r}; use {sorted(names)}")
            return Poly.var(names[node.id], dim)
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            v = ev(node.operand)
            return -v if isinstance(node.op, ast.USub) else v
        if isinstance(node, ast.BinOp):
            left, right = ev(node.left), ev(node.right)
            if isinstance(node.op, ast.Add):
                return left + right
            if isinstance(node.op, ast.Sub):
                return left - right
            if isinstance(node.op, ast.Mult):
                return left * right
            if isinstance(node.op, ast.Div):
                if not right.is_constant() or right.constant_term() == 0:
                    raise ConfigError(f"division by a non-constant or zero in {text!r}")
                return left.scale(1.0 / right.constant_term())
            if isinstance(node.op, ast.Pow):
                k = right.constant_term() if right.is_constant() else -1
                if k < 0 or k != int(k):
                    raise ConfigError(f"exponent must be a nonnegative integer in {text!r}")
                return left ** int(k)
        raise ConfigError(f"unsupported syntax in polynomial {text!r}")

    return ev(tree)


def poly_from_doc(obj, dim: int, e: int = 0) -> Poly:
    if isinstance(obj, str):
        return parse_poly(obj, dim, e)
    return Poly.from_json(obj, dim)


# ---------------------------------------------------------------- generator specs

def generator_to_json(spec: GeneratorSpec) -> dict:
    doc = {
        "dim": spec.dim,
        "drift": [p.to_json() for p in spec.drift],
        "mod_diffusion": [[p.to_json() for p in r] for r in spec.mod_diffusion],
        "state_space": spec.state_space.to_json(),
    }
    if spec.jump_moments:
        doc["jump_moments"] = [{"exponents": list(a), "poly": p.to_json()} for a, p in sorted(spec.jump_moments.items())]
    if spec.moment_order is not None:
        doc["moment_order"] = spec.moment_order
    if spec.kernel is not None:
        doc["kernel"] = spec.kernel.to_json()
    return doc


def generator_from_json(doc) -> GeneratorSpec:
    if not isinstance(doc, dict):
        raise ConfigError("generator spec must be an object")
    unknown = sorted(set(doc) - GEN_KEYS)
    if unknown:
        raise ConfigError(f"unknown generator spec keys {unknown}; allowed {sorted(GEN_KEYS)}")
    if not {"dim", "drift", "mod_diffusion"} <= set(doc):
        raise ConfigError("generator spec must include dim, drift, mod_diffusion")
    d = doc["dim"]
    if isinstance(d, bool) or not isinstance(d, int) or d < 1:
        raise ConfigError("dim must be a positive integer")
    if not isinstance(doc["drift"], list) or len(doc["drift"]) != d:
        raise ConfigError(f"drift needs {d} entries")
    A = doc["mod_diffusion"]
    if not isinstance(A, list) or len(A) != d or any(not isinstance(r, list) or len(r) != d for r in A):
        raise ConfigError(f"mod_diffusion must be {d} x {d}")
    drift = [poly_from_doc(p, d) for p in doc["drift"]]
    A = [[poly_from_doc(p, d) for p in r] for r in A]
    jm = {}
    for rec in doc.get("jump_moments", []) or []:
        if not isinstance(rec, dict) or set(rec) != {"exponents", "poly"}:
            raise ConfigError("jump moment entries must be {exponents, poly}")
        jm[tuple(rec["exponents"])] = poly_from_doc(rec["poly"], d)
    order = doc.get("moment_order")
    if order is not None and (isinstance(order, bool) or not isinstance(order, int)):
        raise ConfigError("moment_order must be an integer")
    kernel = MarkJumpSpec.from_json(doc["kernel"], d, d) if doc.get("kernel") is not None else None
    ss = StateSpace.from_json(doc["state_space"], d) if "state_space" in doc else None
    return GeneratorSpec(d, drift, A, jm, order, kernel, ss)


# ---------------------------------------------------------------- documents

@dataclass
class LoadedModel:
    kind: str
    x0: tuple
    generator: GeneratorSpec
    model: object = None  # LinearVolModel
    affine: AffineSpec | None = None
    subordinator: SubordinatorSpec | None = None
    name: str = ""
    doc: dict | None = None

    @property
    def hash(self) -> str:
        return config_hash(self.doc)


def entry_to_document(entry) -> dict:
    """Document for a zoo entry (or anything with the same fields)."""
    if entry.model is not None:
        kind, spec = "linear_vol", entry.model.to_json()
    elif entry.affine is not None and entry.name == "two_point_affine":
        kind, spec = "affine", entry.affine.to_json()
    else:
        kind, spec = "generator", generator_to_json(entry.generator)
    doc = {"kind": kind, "spec": spec, "x0": list(entry.x0), "name": entry.name, "params": dict(entry.params)}
    if entry.affine is not None and kind != "affine":
        doc["affine"] = entry.affine.to_json()
    if entry.subordinator is not None:
        doc["subordinator"] = entry.subordinator.to_json()
    return json.loads(canonical_json(doc))


def load_document(doc: dict) -> LoadedModel:
    from .models import LinearVolModel

    if not isinstance(doc, dict):
        raise ConfigError("document must be a JSON object")
    unknown = set(doc) - DOC_KEYS
    if unknown:
        raise ConfigError(f"unknown document keys {sorted(unknown)}; allowed {sorted(DOC_KEYS)}")
    for key in ("kind", "spec", "x0"):
        if key not in doc:
            raise ConfigError(f"document needs {key!r}")
    kind = doc["kind"]
    if kind not in KINDS:
        raise ConfigError(f"kind must be one of {KINDS}")
    x0 = doc["x0"]
    if not isinstance(x0, list) or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in x0):
        raise ConfigError("x0 must be a list of numbers")
    model = aff = None
    if kind == "generator":
        gen = generator_from_json(doc["spec"])
    elif kind == "linear_vol":
        model = LinearVolModel.from_json(doc["spec"])
        gen = model.factor_spec()
    else:
        aff = AffineSpec.from_json(doc["spec"])
        gen = affine_to_generator(aff)
    if "affine" in doc:
        aff = AffineSpec.from_json(doc["affine"])
    if len(x0) != gen.dim:
        raise ConfigError(f"x0 needs {gen.dim} components")
    sub = SubordinatorSpec.from_json(doc["subordinator"]) if "subordinator" in doc else None
    name = doc.get("name", "")
    if not isinstance(name, str):
        raise ConfigError("name must be a string")
    return LoadedModel(kind, tuple(float(v) for v in x0), gen, model, aff, sub, name, doc)


def zoo_document(name: str, overrides: dict | None = None) -> dict:
    from .models import model_zoo

    return entry_to_document(model_zoo(name, **(overrides or {})))


# ---------------------------------------------------------------- overrides

def parse_value(text: str):
    """Override value: JSON literal if it parses, else the raw string."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def split_assignment(item: str):
    if "=" not in item:
        raise ConfigError(f"override {item!r} must look like key=value")
    key, val = item.split("=", 1)
    return key.strip(), parse_value(val.strip())


def apply_override(doc: dict, path: str, value) -> dict:
    """Set a dotted path (list indices are integers); the target must exist and keep its type."""
    out = copy.deepcopy(doc)
    parts = path.split(".")
    node = out
    for i, part in enumerate(parts):
        last = i == len(parts) - 1
        if isinstance(node, dict):
            if part not in node:
                raise ConfigError(f"override path {path!r}: no key {part!r}")
            if last:
                _check_type(node[part], value, path)
                node[part] = value
            else:
                node = node[part]
        elif isinstance(node, list):
            try:
                k = int(part)
                node[k]
            except (ValueError, IndexError) as exc:
                raise ConfigError(f"override path {path!r}: bad index {part!r}") from exc
            if last:
                _check_type(node[k], value, path)
                node[k] = value
            else:
                node = node[k]
        else:
            raise ConfigError(f"override path {path!r} descends into a scalar")
    return out


def _check_type(old, new, path):
    num = lambda v: isinstance(v, (int, float)) and not isinstance(v, bool)
    if num(old) and num(new):
        return
    if isinstance(old, bool) and isinstance(new, bool):
        return
    if isinstance(old, str) and isinstance(new, str):
        return
    if isinstance(old, (list, dict)) and type(old) is type(new):
        return
    if old is None:
        return
    raise ConfigError(f"override {path!r}: expected {type(old).__name__}, got {type(new).__name__}")
