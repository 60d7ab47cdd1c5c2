"""JSON model and observable specifications.

Model specs come in two kinds::

    {"type": "ising_competing", "beta": 1.0, "J": 1.0, "k": 2, "depth": 3,
     "overrides": {"1": {"beta": 2.0}}, "weight_scale": 1.0}

    {"type": "custom", "k": 2, "depth": 3, "phi0": [...records on "o"...],
     "default": KERNEL, "levels": {"2": KERNEL}, "kernels": {"1.2": KERNEL}}

A ``KERNEL`` is ``{"amplitude": RECORDS, "weight": 0.5 | RECORDS,
"check_identity": true}``. Its records use fork-relative labels: ``"o"``
is the target vertex and ``"1" .. "k"`` its successors. Operator records are
``{"coefficient": [re, im] | re, "letters": {"1.2": "Z", ...}}``.

Observable specs are either a bare list of records or
``{"observables": [{"name": ..., "terms": RECORDS, "volume": 3}]}``.

Parsing is strict: unknown keys are rejected by name.
"""

from __future__ import annotations

import json
import math
from collections.abc import Mapping
from dataclasses import dataclass, field

import numpy as np

from .engine import PAULI_N_MAX, QmsHandle
from .errors import ConfigError, TreeError
from .ising import ModelSpec, build_amplitude, build_qms, closed_form_alpha, solve_fixed_point
from .kernels import TransitionExpectation
from .operators import RegionOperator, from_records, site_vector, site_vector_to_matrix
from .tree import ROOT, Vertex, direct_successors, format_vertex, level_set, parse_vertex

ISING_KEYS = {"type", "beta", "J", "k", "depth", "overrides", "weight_scale"}
OVERRIDE_KEYS = {"beta", "J"}
CUSTOM_KEYS = {"type", "k", "depth", "phi0", "default", "levels", "kernels"}
KERNEL_KEYS = {"amplitude", "weight", "check_identity"}
OBSERVABLE_KEYS = {"name", "terms", "volume"}


def _strict(obj, allowed: set[str], where: str) -> Mapping:
    if not isinstance(obj, Mapping):
        raise ConfigError(f"{where}: expected an object, got {type(obj).__name__}")
    unknown = sorted(set(obj) - allowed)
    if unknown:
        raise ConfigError(f"{where}: unknown field {unknown[0]!r}")
    return obj


def _number(obj: Mapping, key: str, where: str, default=None, kind=float):
    if key not in obj:
        if default is None:
            raise ConfigError(f"{where}: missing field {key!r}")
        return default
    val = obj[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(f"{where}.{key}: expected a number, got {val!r}")
    if kind is int:
        if float(val) != int(val):
            raise ConfigError(f"{where}.{key}: expected an integer, got {val!r}")
        return int(val)
    return float(val)


def _vertex(text: str, where: str) -> Vertex:
    try:
        return parse_vertex(text)
    except (TreeError, ValueError) as err:
        raise ConfigError(f"{where}: bad vertex {text!r} ({err})") from None


def _records(obj, where: str, region=None) -> RegionOperator:
    if not isinstance(obj, list):
        raise ConfigError(f"{where}: expected a list of operator records")
    try:
        return from_records(obj, region)
    except (ValueError, KeyError, TypeError) as err:
        raise ConfigError(f"{where}: {err}") from None


@dataclass(frozen=True)
class CustomSpec:
    k: int
    depth: int
    phi0: np.ndarray
    default: TransitionExpectation | None
    kernels: dict[Vertex, TransitionExpectation]
    levels: dict[int, TransitionExpectation]


@dataclass(frozen=True)
class ParsedModel:
    """A validated model spec that can build a handle."""

    kind: str
    depth: int
    k: int
    ising: ModelSpec | None = None
    overrides: dict[Vertex, ModelSpec] = field(default_factory=dict)
    weight_scale: float = 1.0
    custom: CustomSpec | None = None

    def build(self, n_max: int = PAULI_N_MAX) -> QmsHandle:
        if self.kind == "ising_competing":
            if self.weight_scale == 1.0:
                return build_qms(self.ising, n_max, self.overrides)
            return _scaled_ising(self, n_max)
        c = self.custom
        kernels = dict(c.kernels)
        for lvl, ker in c.levels.items():
            for v in _level(lvl, c.k, n_max):
                kernels.setdefault(v, ker.relocate(v))
        return QmsHandle(c.k, c.phi0, c.default, kernels, n_max)

    def fork_amplitude(self) -> RegionOperator:
        """Amplitude of the root kernel (what the boundary equation is solved for)."""
        if self.kind == "ising_competing":
            return build_amplitude(self.ising).operator
        c = self.custom
        ker = c.default if c.default is not None else c.kernels.get(ROOT) or c.levels.get(0)
        if ker is None:
            raise ConfigError("custom model has no kernel at the root")
        return ker.amplitude

    def describe(self) -> dict:
        if self.kind == "ising_competing":
            out = {"type": self.kind, "beta": self.ising.beta, "J": self.ising.J, "k": self.k, "depth": self.depth}
            if self.overrides:
                out["overrides"] = {format_vertex(v): {"beta": m.beta, "J": m.J}
                                    for v, m in sorted(self.overrides.items())}
            if self.weight_scale != 1.0:
                out["weight_scale"] = self.weight_scale
            return out
        return {"type": self.kind, "k": self.k, "depth": self.depth,
                "kernels": sorted(format_vertex(v) for v in self.custom.kernels),
                "levels": sorted(self.custom.levels)}


def _level(lvl: int, k: int, n_max: int):
    return level_set(lvl, k) if lvl <= n_max else ()


def _scaled_ising(p: ParsedModel, n_max: int) -> QmsHandle:
    """Ising kernels with the weight multiplied by ``weight_scale`` (no longer identity preserving)."""
    def raw(m: ModelSpec, x: Vertex) -> TransitionExpectation:
        amp = build_amplitude(m, x)
        alpha = solve_fixed_point(amp, x).alpha
        return TransitionExpectation(x, direct_successors(x, 2), amp.operator,
                                     np.eye(2) * alpha * p.weight_scale)
    kernels = {v: raw(m, v) for v, m in p.overrides.items()}
    return QmsHandle(p.k, np.eye(2, dtype=complex), raw(p.ising, ROOT), kernels, n_max)


def _relative(records, k: int, where: str) -> RegionOperator:
    """Operator on the fork at the root from fork-relative labels ``o, 1..k``."""
    fork = (ROOT,) + direct_successors(ROOT, k)
    op = _records(records, where)
    if set(op.region) - set(fork):
        bad = sorted(set(op.region) - set(fork))[0]
        raise ConfigError(f"{where}: label {format_vertex(bad)!r} is not o or a successor 1..{k}")
    return op.embed(fork)


def _parse_kernel(obj, k: int, where: str, target: Vertex = ROOT) -> TransitionExpectation:
    _strict(obj, KERNEL_KEYS, where)
    if "amplitude" not in obj:
        raise ConfigError(f"{where}: missing field 'amplitude'")
    amp = _relative(obj["amplitude"], k, f"{where}.amplitude")
    w = obj.get("weight", 1.0)
    if isinstance(w, (int, float)) and not isinstance(w, bool):
        weight = np.eye(2, dtype=complex) * float(w)
    else:
        wop = _records(w, f"{where}.weight")
        if set(wop.region) - {ROOT}:
            raise ConfigError(f"{where}.weight: must act on 'o' only")
        weight = site_vector_to_matrix(site_vector(wop.embed((ROOT,))))
    check = obj.get("check_identity", True)
    if not isinstance(check, bool):
        raise ConfigError(f"{where}.check_identity: expected true or false")
    succ = direct_successors(ROOT, k)
    if check:
        ker = TransitionExpectation.from_amplitude(amp, weight, target=ROOT, successors=succ)
    else:
        ker = TransitionExpectation(ROOT, succ, amp, weight)
    return ker.relocate(target)


def parse_model_spec(text: str | Mapping) -> ParsedModel:
    """Validate a model spec given as JSON text or an already-decoded object.

    Raises:
        ConfigError: malformed JSON, unknown keys or invalid values (field named).
    """
    obj = _decode(text, "model")
    kind = obj.get("type") if isinstance(obj, Mapping) else None
    if kind == "ising_competing":
        _strict(obj, ISING_KEYS, "model")
        beta = _number(obj, "beta", "model")
        J = _number(obj, "J", "model", default=0.0)
        k = _number(obj, "k", "model", default=2, kind=int)
        depth = _number(obj, "depth", "model", default=3, kind=int)
        scale = _number(obj, "weight_scale", "model", default=1.0)
        if not (math.isfinite(scale) and scale > 0):
            raise ConfigError(f"model.weight_scale: must be a positive number, got {scale}")
        m = ModelSpec(beta, J, k, 2, depth)
        if k != 2:
            raise ConfigError(f"model.k: the competing-interaction model needs k = 2, got {k}")
        overrides = {}
        for key, ov in (obj.get("overrides") or {}).items():
            where = f"model.overrides[{key}]"
            _strict(ov, OVERRIDE_KEYS, where)
            v = _vertex(key, where)
            try:
                overrides[v] = ModelSpec(_number(ov, "beta", where, default=beta), _number(ov, "J", where, default=J))
            except ConfigError as err:
                raise ConfigError(f"{where}: {err}") from None
        return ParsedModel(kind, depth, k, m, overrides, scale)
    if kind == "custom":
        _strict(obj, CUSTOM_KEYS, "model")
        k = _number(obj, "k", "model", default=2, kind=int)
        depth = _number(obj, "depth", "model", default=3, kind=int)
        if k < 1 or depth < 1:
            raise ConfigError("model: k and depth must be >= 1")
        if "phi0" in obj:
            rop = _records(obj["phi0"], "model.phi0")
            if set(rop.region) - {ROOT}:
                raise ConfigError("model.phi0: must act on 'o' only")
            phi0 = site_vector_to_matrix(site_vector(rop.embed((ROOT,))))
        else:
            phi0 = np.eye(2, dtype=complex)
        default = _parse_kernel(obj["default"], k, "model.default") if "default" in obj else None
        kernels = {}
        for key, spec in (obj.get("kernels") or {}).items():
            v = _vertex(key, f"model.kernels[{key}]")
            kernels[v] = _parse_kernel(spec, k, f"model.kernels[{key}]", v)
        levels = {}
        for key, spec in (obj.get("levels") or {}).items():
            try:
                lvl = int(key)
            except ValueError:
                raise ConfigError(f"model.levels: bad level {key!r}") from None
            levels[lvl] = _parse_kernel(spec, k, f"model.levels[{key}]", ROOT)
        if default is None and not kernels and not levels:
            raise ConfigError("model: a custom model needs 'default', 'levels' or 'kernels'")
        return ParsedModel(kind, depth, k, custom=CustomSpec(k, depth, phi0, default, kernels, levels))
    raise ConfigError(f"model.type: expected 'ising_competing' or 'custom', got {kind!r}")


@dataclass(frozen=True)
class ObservableSpec:
    name: str
    operator: RegionOperator
    volume: int | None = None


def parse_observable_spec(text: str | Mapping | list) -> list[ObservableSpec]:
    obj = _decode(text, "observable")
    if isinstance(obj, list):
        return [ObservableSpec("observable", _records(obj, "observable"))]
    _strict(obj, {"observables"}, "observable")
    items = obj.get("observables")
    if not isinstance(items, list) or not items:
        raise ConfigError("observable.observables: expected a non-empty list")
    out = []
    for i, item in enumerate(items):
        where = f"observable.observables[{i}]"
        _strict(item, OBSERVABLE_KEYS, where)
        if "terms" not in item:
            raise ConfigError(f"{where}: missing field 'terms'")
        vol = _number(item, "volume", where, default=-1, kind=int)
        if vol != -1 and vol < 0:
            raise ConfigError(f"{where}.volume: must be >= 0")
        out.append(ObservableSpec(str(item.get("name", f"observable_{i}")), _records(item["terms"], f"{where}.terms"),
                                  None if vol == -1 else vol))
    return out


def _decode(text, what: str):
    if isinstance(text, (Mapping, list)):
        return text
    try:
        return json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError(f"{what} spec is not valid JSON: {err}") from None


def ising_alpha_report(p: ParsedModel) -> dict:
    """Solver and closed-form boundary constants of an Ising spec."""
    fp = solve_fixed_point(build_amplitude(p.ising))
    return {"alpha_solver": fp.alpha, "alpha_closed_form": closed_form_alpha(p.ising),
            "residual": fp.residual, "iterations": fp.iterations}
