"""Scenario files: schema, registries and task runners.

A scenario is a JSON document naming measures, regions and charts, followed
by a list of tasks.  Each task writes CSV tables into the output directory
and contributes one entry to ``summary.json``.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Callable, Optional

import jsonschema
import numpy as np

from . import __version__
from . import density, lattice, scatter, schwarz, surfaces
from .measures import (Dirac, FrameBounds, Measure, QuadratureOptions, Restriction, Sum,
                       WeightedLebesgue, ball_measure)
from .regions import PREDICATES, Predicate, Region, region_from_dict, register_predicate

SCHEMA_VERSION = 1
PASS, FAIL, INFO = "PASS", "FAIL", "INFO"


class ScenarioError(ValueError):
    """Schema or reference problem in a scenario file."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


# ---------------------------------------------------------------------------
# Registries


@dataclass(frozen=True)
class DensitySpec:
    func: Callable
    partials: tuple      # one callable per axis


def _ipow(t, k: int):
    # repeated squaring; numpy's general pow is slow on large cell arrays
    out = np.ones_like(t)
    base = t
    while k:
        if k & 1:
            out = out * base
        base = base * base
        k >>= 1
    return out


def _one_plus_power(power: int, dim: int) -> DensitySpec:
    def h(Y):
        return 1.0 + _ipow(Y[:, 0], power)

    def d1(Y):
        return power * _ipow(Y[:, 0], power - 1)

    zero = lambda Y: np.zeros(len(Y))  # noqa: E731
    return DensitySpec(h, (d1,) + (zero,) * (dim - 1))


DENSITIES: dict[str, Callable[..., DensitySpec]] = {
    "one_plus_x1_squared": lambda dim=2: _one_plus_power(2, dim),
    "one_plus_x1_fourth": lambda dim=2: _one_plus_power(4, dim),
}


@dataclass(frozen=True)
class Field:
    """``f``, ``G``, ``H`` in the plane with ``D_1 H`` and ``D_2 G`` supplied."""

    f: Callable
    G: Callable
    H: Callable
    dH_p: Callable
    dG_q: Callable
    gamma: Callable      # exact D_1 H - D_2 G


def _zero(Y):
    return np.zeros(len(Y))


FIELDS: dict[str, Field] = {
    "sin_product": Field(
        f=lambda Y: np.sin(Y[:, 0]) * np.sin(Y[:, 1]),
        G=lambda Y: np.cos(Y[:, 0]) * np.sin(Y[:, 1]),
        H=lambda Y: np.sin(Y[:, 0]) * np.cos(Y[:, 1]),
        dH_p=lambda Y: np.cos(Y[:, 0]) * np.cos(Y[:, 1]),
        dG_q=lambda Y: np.cos(Y[:, 0]) * np.cos(Y[:, 1]),
        gamma=_zero),
    "rotation": Field(f=_zero, G=lambda Y: -Y[:, 1], H=lambda Y: Y[:, 0],
                      dH_p=lambda Y: np.ones(len(Y)), dG_q=lambda Y: -np.ones(len(Y)),
                      gamma=lambda Y: np.full(len(Y), 2.0)),
    "cubic_rotation": Field(f=_zero, G=lambda Y: -Y[:, 1], H=lambda Y: Y[:, 0] + Y[:, 0] ** 3,
                            dH_p=lambda Y: 1.0 + 3.0 * Y[:, 0] ** 2, dG_q=lambda Y: -np.ones(len(Y)),
                            gamma=lambda Y: 2.0 + 3.0 * Y[:, 0] ** 2),
}

_FIELD_PARTIALS = {
    "sin_product": (lambda Y: np.cos(Y[:, 0]) * np.sin(Y[:, 1]), lambda Y: np.sin(Y[:, 0]) * np.cos(Y[:, 1])),
    "rotation": (_zero, _zero),
    "cubic_rotation": (_zero, _zero),
}


@register_predicate("coincidence")
def coincidence_set(field: str = "rotation", atol: float = 1e-12) -> Predicate:
    """``{y : (D_1 f, D_2 f)(y) = (G, H)(y)}`` for a registered field."""
    F = FIELDS[field]
    d1, d2 = _FIELD_PARTIALS[field]

    def func(Y):
        return (np.abs(d1(Y) - F.G(Y)) <= atol) & (np.abs(d2(Y) - F.H(Y)) <= atol)

    return Predicate(dim=2, func=func, name="coincidence", params={"field": field, "atol": atol})


BUNDLED = ("scatter-lebesgue", "thin-subset", "density-cusp", "lattice-grid", "surfaces",
           "schwarz-classical", "schwarz-counterexample")


def bundled_path(name: str) -> Path:
    stem = name[:-5] if name.endswith(".json") else name
    if stem not in BUNDLED:
        raise FileNotFoundError(f"no bundled scenario named {name!r}")
    return Path(str(resources.files("superdensity") / "scenarios" / f"{stem}.json"))


def resolve_path(path: str) -> Path:
    p = Path(path)
    if p.exists():
        return p
    try:
        return bundled_path(p.name)
    except FileNotFoundError:
        raise FileNotFoundError(f"scenario not found: {path}") from None


# ---------------------------------------------------------------------------
# Schema

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_INT1 = {"type": "integer", "minimum": 1}
_POINT = {"type": "array", "items": _NUM, "minItems": 1}
_POINTS = {"type": "array", "items": _POINT, "minItems": 1}
_REF = {"oneOf": [{"type": "string"}, {"type": "object"}]}
_RADII = {"oneOf": [
    {"type": "array", "items": _POS, "minItems": 1},
    {"type": "object", "additionalProperties": False, "required": ["r_max"],
     "properties": {"r_max": _POS, "gamma": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                    "count": _INT1}}]}
_FRAME = {"type": "object", "additionalProperties": False, "required": ["C", "p", "q", "r_bar"],
          "properties": {"C": _POS, "p": _POS, "q": _POS, "r_bar": _POS}}
_COMMON = {"id": {"type": "string", "pattern": "^[A-Za-z0-9_.-]+$"}, "op": {"type": "string"},
           "tol": _POS, "description": {"type": "string"}}


def _task(op: str, required: list, props: dict) -> dict:
    return {"type": "object", "additionalProperties": False, "required": ["id", "op"] + required,
            "properties": {**_COMMON, "op": {"const": op}, **props}}


TASK_SCHEMAS = {
    "ball_measure": _task("ball_measure", ["measure", "points", "radii"], {
        "measure": _REF, "points": _POINTS, "radii": _RADII,
        "expect": {"type": "object", "additionalProperties": False, "required": ["scale", "power"],
                   "properties": {"scale": _NUM, "power": _NUM, "rel_tol": _POS}}}),
    "density_degree": _task("density_degree", ["measure", "region", "points", "radii"], {
        "measure": _REF, "region": _REF, "points": _POINTS, "radii": _RADII,
        "params": {"type": "object"}, "h": {"type": "number", "minimum": 0},
        "expect": {"type": "object", "additionalProperties": False,
                   "properties": {"classification": {"type": "string"}, "degree": _NUM,
                                  "tolerance": _POS, "superdensity": {"type": "string"}}}}),
    "base_statistic": _task("base_statistic", ["measure", "region", "points", "h", "radii"], {
        "measure": _REF, "region": _REF, "points": _POINTS, "radii": _RADII,
        "h": {"type": "number", "minimum": 0}, "threshold": _POS,
        "expect": {"type": "string", "enum": ["Member", "NonMember", "Inconclusive"]}}),
    "lambda_distribution": _task("lambda_distribution", ["n", "R", "beta", "K", "cloud"], {
        "n": _INT1, "R": _INT1, "beta": {"type": "integer", "minimum": 2},
        "K": {"type": "integer", "minimum": 0},
        "cloud": {"type": "object", "additionalProperties": False, "required": ["kind"],
                  "properties": {"kind": {"enum": ["grid", "halton", "cells"]}, "per_axis": _INT1,
                                 "count": _INT1, "region": _REF, "level": _INT1}}}),
    "scatter_build": _task("scatter_build", ["measure", "omega", "frame", "epsilon", "h", "K_max"], {
        "measure": _REF, "omega": _REF, "frame": _FRAME, "epsilon": _POS, "h": _NUM,
        "K_max": {"type": "integer", "minimum": 0}, "R": _INT1}),
    "scatter_verify": _task("scatter_verify", ["measure", "omega", "frame", "epsilon", "h", "K_max"], {
        "measure": _REF, "omega": _REF, "frame": _FRAME, "epsilon": _POS, "h": _NUM,
        "K_max": {"type": "integer", "minimum": 0}, "R": _INT1, "samples": _INT1}),
    "thin_subset": _task("thin_subset", ["measure", "omega", "omega_prime", "frame", "H", "J_max", "K_max"], {
        "measure": _REF, "omega": _REF, "omega_prime": _REF, "frame": _FRAME, "H": _POS, "J_max": _INT1,
        "K_max": _INT1, "samples": _INT1, "margin": _POS}),
    "frame_constants": _task("frame_constants", ["chart"], {
        "chart": _REF, "audit_samples": {"type": "integer", "minimum": 0},
        "expect": {"type": "object", "additionalProperties": False,
                   "properties": {"m00": _NUM, "m1": _NUM, "C": _NUM, "rel_tol": _POS}}}),
    "pullback_check": _task("pullback_check", ["chart", "region", "y"], {
        "chart": _REF, "region": _REF, "y": _POINT, "radii": _RADII, "tolerance": _POS,
        "expect": {"type": "string"}}),
    "schwarz_estimator": _task("schwarz_estimator", ["measure", "derivatives", "field", "x", "radii"], {
        "measure": _REF, "derivatives": {"enum": ["density_form", "disk_flux"]},
        "field": {"type": "string"}, "p": _INT1, "q": _INT1, "x": _POINT, "radii": _RADII,
        "rho": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "check": {"type": "object", "additionalProperties": False, "required": ["r"],
                  "properties": {"r": _POS, "max_width": _POS, "slack": {"type": "number", "minimum": 0}}}}),
    "schwarz_hypotheses": _task("schwarz_hypotheses", ["measure", "derivatives", "x"], {
        "measure": _REF, "derivatives": {"enum": ["density_form", "disk_flux"]}, "x": _POINT,
        "radii": _RADII, "rho_grid": {"type": "array", "items": _POS, "minItems": 2}, "region": _REF,
        "expect": {"type": "object", "additionalProperties": False,
                   "properties": {"verdict": {"type": "string"},
                                  "failures": {"type": "array", "items": {"type": "string"}}}}}),
    "counterexample": _task("counterexample", ["jmax"], {"jmax": _INT1}),
}

SCENARIO_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["version", "name", "tasks"],
    "properties": {
        "version": {"type": "integer"},
        "name": {"type": "string"},
        "description": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0},
        "output": {"type": "string"},
        "tolerances": {"type": "object", "additionalProperties": False,
                       "properties": {"tol": _POS, "max_depth": _INT1}},
        "measures": {"type": "object", "additionalProperties": {"type": "object"}},
        "regions": {"type": "object", "additionalProperties": {"type": "object"}},
        "charts": {"type": "object", "additionalProperties": {"type": "object"}},
        "tasks": {"type": "array", "minItems": 1, "items": {"type": "object", "required": ["id", "op"]}},
    },
}

OP_GROUPS = {
    "scatter build": {"scatter_build"},
    "scatter verify": {"scatter_verify"},
    "scatter thin": {"thin_subset"},
    "schwarz check": {"schwarz_estimator", "schwarz_hypotheses"},
}


def _schema_errors(instance, schema, where: str) -> list[str]:
    v = jsonschema.Draft202012Validator(schema)
    out = []
    for e in sorted(v.iter_errors(instance), key=lambda e: list(e.absolute_path)):
        path = "/".join(str(p) for p in e.absolute_path)
        out.append(f"{where}{': ' + path if path else ''}: {e.message}")
    return out


def validate_document(doc) -> list[str]:
    """All schema and reference errors; an empty list means the scenario is valid."""
    if not isinstance(doc, dict):
        return ["scenario must be a JSON object"]
    version = doc.get("version")
    if version != SCHEMA_VERSION:
        return [f"unsupported schema version {version!r} (this build reads version {SCHEMA_VERSION})"]
    errors = _schema_errors(doc, SCENARIO_SCHEMA, "scenario")
    if not isinstance(doc.get("tasks"), list):
        return errors
    seen = set()
    for i, task in enumerate(doc["tasks"]):
        if not isinstance(task, dict):
            continue
        tid = task.get("id", f"#{i}")
        where = f"task {tid!r}"
        op = task.get("op")
        if op not in TASK_SCHEMAS:
            errors.append(f"{where}: field 'op': unknown operation {op!r}")
            continue
        if tid in seen:
            errors.append(f"{where}: duplicate task id")
        seen.add(tid)
        errs = _schema_errors(task, TASK_SCHEMAS[op], where)
        errors.extend(errs)
        if not errs:
            errors.extend(_reference_errors(doc, task, where))
    for name, spec in doc.get("charts", {}).items():
        if spec.get("name") not in surfaces.CHARTS:
            errors.append(f"chart {name!r}: field 'name': unregistered chart {spec.get('name')!r}")
    return errors


def _reference_errors(doc, task, where) -> list[str]:
    errs = []
    sections = {"measure": "measures", "region": "regions", "omega": "regions", "omega_prime": "regions",
                "chart": "charts"}
    for key, section in sections.items():
        ref = task.get(key)
        if isinstance(ref, str) and ref not in doc.get(section, {}):
            kind = section[:-1]
            errs.append(f"{where}: field {key!r}: unknown {kind} {ref!r}")
        if key == "chart" and isinstance(ref, dict) and ref.get("name") not in surfaces.CHARTS:
            errs.append(f"{where}: field 'chart': unregistered chart {ref.get('name')!r}")
        if key in ("region", "omega", "omega_prime") and isinstance(ref, dict):
            errs.extend(_region_ref_errors(ref, f"{where}: field {key!r}"))
    if "field" in task and task["field"] not in FIELDS:
        errs.append(f"{where}: field 'field': unregistered field {task['field']!r}")
    return errs


def _region_ref_errors(d, where) -> list[str]:
    if d.get("type") == "predicate" and d.get("name") not in PREDICATES:
        return [f"{where}: unregistered predicate {d.get('name')!r}"]
    return []


def load_scenario(path) -> dict:
    """Read and validate; raises :class:`ScenarioError` or ``OSError``."""
    p = resolve_path(str(path))
    with open(p, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ScenarioError([f"invalid JSON: {exc}"]) from None
    errors = validate_document(doc)
    if errors:
        raise ScenarioError(errors)
    return doc


def validate_scenario(path) -> list[str]:
    """Schema diagnostics for a scenario file; empty means OK.  ``OSError`` propagates."""
    try:
        load_scenario(path)
    except ScenarioError as exc:
        return list(exc.errors)
    return []


# ---------------------------------------------------------------------------
# Building objects


class Context:
    def __init__(self, doc: dict, tol: Optional[float] = None, max_depth: Optional[int] = None,
                 seed: Optional[int] = None):
        self.doc = doc
        tols = doc.get("tolerances", {})
        self.tol_override = tol
        self.tol_default = tols.get("tol")
        self.max_depth = max_depth or tols.get("max_depth", 12)
        self.seed = doc.get("seed", 0) if seed is None else seed
        self._charts = {}

    def tol(self, task: dict, default: float) -> float:
        if self.tol_override is not None:
            return self.tol_override
        return task.get("tol", self.tol_default if self.tol_default is not None else default)

    def opts(self, task: dict, default_tol: float = 1e-4, closed_form: bool = True) -> QuadratureOptions:
        return QuadratureOptions(tol=self.tol(task, default_tol), max_depth=self.max_depth, seed=self.seed,
                                 closed_form=closed_form)

    def region(self, ref) -> Region:
        if isinstance(ref, str):
            ref = self.doc["regions"][ref]
        return region_from_dict(ref)

    def chart(self, ref) -> surfaces.SurfaceChart:
        key = ref if isinstance(ref, str) else json.dumps(ref, sort_keys=True)
        if key not in self._charts:
            spec = self.doc["charts"][ref] if isinstance(ref, str) else ref
            self._charts[key] = surfaces.chart_from_dict(spec)
        return self._charts[key]

    def measure(self, ref) -> Measure:
        if isinstance(ref, str):
            ref = self.doc["measures"][ref]
        return self._measure(ref)

    def _measure(self, d) -> Measure:
        kind = d["type"]
        if kind == "lebesgue":
            return WeightedLebesgue(d["dim"], box=d.get("box"))
        if kind == "weighted_lebesgue":
            spec = DENSITIES[d["density"]](dim=d["dim"], **d.get("params", {}))
            return WeightedLebesgue(d["dim"], density=spec.func, box=d.get("box"), name=d["density"],
                                    params=d.get("params", {}))
        if kind == "restriction":
            return Restriction(self._measure(d["base"]), self.region(d["region"]))
        if kind == "dirac":
            return Dirac(d["atom"])
        if kind == "surface":
            return surfaces.surface_measure(self.chart(d["chart"]))
        if kind == "sum":
            return Sum([self._measure(p) for p in d["parts"]])
        raise ScenarioError([f"unknown measure type {kind!r}"])

    def density_spec(self, ref) -> Optional[DensitySpec]:
        d = self.doc["measures"][ref] if isinstance(ref, str) else ref
        if d["type"] != "weighted_lebesgue":
            return None
        return DENSITIES[d["density"]](dim=d["dim"], **d.get("params", {}))


def _radii(spec) -> list[float]:
    if isinstance(spec, list):
        return [float(r) for r in spec]
    return density.geometric_radii(spec["r_max"], spec.get("gamma", 0.7), spec.get("count", 24))


def _fmt(v) -> str:
    if isinstance(v, (list, tuple, np.ndarray)):
        return " ".join(repr(float(a)) for a in v)
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _num(x):
    """JSON-safe float."""
    x = float(x)
    return x if math.isfinite(x) else str(x)


# ---------------------------------------------------------------------------
# Task runners: each returns (verdict, numbers, thresholds, files)


def _frame(d) -> FrameBounds:
    return FrameBounds(d["C"], d["p"], d["q"], d["r_bar"])


def run_ball_measure(ctx, task, out):
    mu = ctx.measure(task["measure"])
    opts = ctx.opts(task, closed_form=False)
    exp = task.get("expect")
    rows, ok = [], True
    for x in task["points"]:
        for r in _radii(task["radii"]):
            iv = ball_measure(mu, x, r, opts=opts)
            row = [x, r, iv.lower, iv.upper, iv.estimate]
            if exp:
                target = exp["scale"] * r ** exp["power"]
                good = iv.contains(target, exp.get("rel_tol", 0.0) * target)
                ok &= good
                row += [target, good]
            rows.append(row)
    header = ["x", "r", "lower", "upper", "estimate"] + (["expected", "ok"] if exp else [])
    f = f"{task['id']}_ball_measure.csv"
    write_rows(out / f, header, rows)
    verdict = INFO if not exp else (PASS if ok else FAIL)
    return verdict, {"rows": len(rows)}, {"tol": opts.tol, **(exp or {})}, [f]


def run_density_degree(ctx, task, out):
    mu = ctx.measure(task["measure"])
    E = ctx.region(task["region"])
    radii = _radii(task["radii"])
    params = replace(density.DEFAULT_PARAMS, **task.get("params", {}))
    opts = ctx.opts(task)
    exp = task.get("expect", {})
    profiles, estimates, verdicts, ok = [], [], [], True
    for x in task["points"]:
        prof = density.ratio_profile(mu, E, x, radii, tol=opts.tol, opts=opts)
        est = density.estimate_density_degree(prof, params)
        profiles.append(prof)
        estimates.append(est)
        if "h" in task:
            v = density.superdensity_test(prof, task["h"], params, est)
            verdicts.append(v)
            if "superdensity" in exp:
                ok &= v == exp["superdensity"]
        if "classification" in exp:
            ok &= est.classification == exp["classification"]
        if "degree" in exp:
            ok &= abs(est.value - exp["degree"]) <= exp.get("tolerance", params.margin)
    f1, f2 = f"{task['id']}_profiles.csv", f"{task['id']}_estimates.csv"
    density.write_profiles_csv(out / f1, profiles)
    density.write_estimates_csv(out / f2, estimates)
    numbers = {"estimates": [{"x": list(e.x), "class": e.classification, "value": _num(e.value),
                              "slope": _num(e.slope), "r2": _num(e.r2), "window": list(e.window)}
                             for e in estimates]}
    if verdicts:
        numbers["superdensity"] = verdicts
    verdict = INFO if not exp else (PASS if ok else FAIL)
    return verdict, numbers, {"tol": opts.tol, **asdict(params), **exp}, [f1, f2]


def run_base_statistic(ctx, task, out):
    mu = ctx.measure(task["measure"])
    A = ctx.region(task["region"])
    radii = _radii(task["radii"])
    opts = ctx.opts(task)
    thr = task.get("threshold", 1e-6)
    rows, verdicts = [], []
    for x in task["points"]:
        st = density.base_statistic(mu, A, x, task["h"], radii, tol=opts.tol, threshold=thr, opts=opts)
        verdicts.append(st.verdict)
        rows += [[x, r, s.lower, s.upper, st.verdict] for r, s in zip(st.radii, st.s)]
    f = f"{task['id']}_base_statistic.csv"
    write_rows(out / f, ["x", "r", "s_lo", "s_hi", "verdict"], rows)
    exp = task.get("expect")
    verdict = INFO if exp is None else (PASS if all(v == exp for v in verdicts) else FAIL)
    return verdict, {"verdicts": verdicts}, {"threshold": thr, "h": task["h"], "tol": opts.tol}, [f]


def _cloud(ctx, task):
    c = task["cloud"]
    n, R = task["n"], task["R"]
    if c["kind"] == "grid":
        m = c.get("per_axis", 10)
        axis = -R + (np.arange(m) + 0.5) * (2 * R / m)
        return np.stack([g.reshape(-1) for g in np.meshgrid(*[axis] * n, indexing="ij")], axis=1)
    if c["kind"] == "halton":
        return scatter.halton_points(c.get("count", 100), n, [-R] * n, [R] * n) * (1 - 1e-12)
    omega = ctx.region(c["region"])
    spec = lattice.LatticeSpec(n, R, task["beta"], c.get("level", task["K"]))
    return scatter.support_cloud(omega, spec)


def run_lambda_distribution(ctx, task, out):
    spec = lattice.LatticeSpec(task["n"], task["R"], task["beta"], task["K"])
    S = _cloud(ctx, task)
    dist = lattice.lambda_distribution(S, spec)
    bad = lattice.exactly_one_violations(dist, S)
    f = f"{task['id']}_distribution.csv"
    lattice.write_distribution_csv(out / f, dist)
    return (PASS if not bad else FAIL), {"counts": list(dist.counts), "violations": len(bad)}, {}, [f]


def _scatter_setup(ctx, task):
    mu = ctx.measure(task["measure"])
    omega = ctx.region(task["omega"])
    bb = omega.bbox()
    R = task.get("R") or max(1, int(math.ceil(max(np.max(np.abs(bb[0])), np.max(np.abs(bb[1]))))))
    params = scatter.scatter_parameters(_frame(task["frame"]), omega.dim, R, task["epsilon"], task["h"])
    spec = lattice.LatticeSpec(omega.dim, R, params.beta, task["K_max"])
    cloud = scatter.support_cloud(omega, spec)
    S = scatter.construct_scattered_set(params, omega, cloud, task["K_max"], mu=mu,
                                        tol=ctx.tol(task, 1e-4))
    return mu, omega, params, cloud, S


def _scatter_numbers(params, S):
    chain = scatter.proof_chain(params, [lv.count for lv in S.levels])
    numbers = {"m": params.m, "beta": params.beta, "lower_bound_constant": params.lower_bound_constant,
               "measure_upper_bound": S.measure_upper_bound, "frame_upper_bound": S.frame_upper_bound,
               "gamma_counts": [lv.count for lv in S.levels],
               "beta_checks": [{"name": n, "beta": b, "bound": _num(bd), "ok": ok}
                               for n, b, bd, ok in scatter.check_beta(params)],
               "chain": {k: (_num(v) if isinstance(v, float) else v) for k, v in chain.items()}}
    return numbers, chain


def run_scatter_build(ctx, task, out):
    mu, omega, params, cloud, S = _scatter_setup(ctx, task)
    f = f"{task['id']}_levels.csv"
    scatter.write_levels_csv(out / f, S)
    numbers, chain = _scatter_numbers(params, S)
    ok = S.measure_upper_bound < params.epsilon and chain["links_ok"]
    return (PASS if ok else FAIL), numbers, {"epsilon": params.epsilon, "tol": ctx.tol(task, 1e-4)}, [f]


def run_scatter_verify(ctx, task, out):
    mu, omega, params, cloud, S = _scatter_setup(ctx, task)
    xs = scatter.interior_samples(omega, cloud, task.get("samples", 25))
    rep = scatter.verify_scattered_set(mu, S, xs, tol=ctx.tol(task, 0.25))
    f1, f2 = f"{task['id']}_levels.csv", f"{task['id']}_verify.csv"
    scatter.write_levels_csv(out / f1, S)
    scatter.write_verify_csv(out / f2, rep)
    numbers, chain = _scatter_numbers(params, S)
    numbers.update({"samples": len(xs), "rows": len(rep.rows), "skipped": rep.skipped,
                    "min_statistic_lo": min((r["statistic_lo"] for r in rep.rows), default=None),
                    "truncation_scale": rep.truncation_scale})
    ok = rep.passed and chain["links_ok"]
    return (PASS if ok else FAIL), numbers, {"epsilon": params.epsilon, "constant": rep.constant,
                                             "tol": ctx.tol(task, 0.25)}, [f1, f2]


def run_thin_subset(ctx, task, out):
    mu = ctx.measure(task["measure"])
    res = scatter.thin_closed_subset(mu, _frame(task["frame"]), ctx.region(task["omega"]),
                                     ctx.region(task["omega_prime"]), task["H"], task["J_max"],
                                     task["K_max"], samples=task.get("samples", 20), tol=ctx.tol(task, 1e-4),
                                     margin=task.get("margin", 0.2))
    f1, f2 = f"{task['id']}_sets.csv", f"{task['id']}_degrees.csv"
    write_rows(out / f1, ["j", "h", "epsilon", "beta", "K", "delta", "scatter_bound", "collar_bound", "total"],
               [[j, h, e, a.scattered.params.beta, K, a.delta, a.scattered.measure_upper_bound,
                 a.collar.measure.upper, a.total_upper_bound]
                for j, (h, e, a, K) in enumerate(zip(res.exponents, res.epsilons, res.sets,
                                                    res.truncation_levels), start=1)])
    write_rows(out / f2, ["x", "slope", "class", "r_min", "r_max", "bound", "ok"],
               [[r["x"], r["slope"], r["class"], r["r_min"], r["r_max"], r["bound"], r["ok"]]
                for r in res.degree_rows])
    numbers = {"omega_measure": [res.omega_measure.lower, res.omega_measure.upper],
               "measure_lower_bound": res.measure_lower_bound, "truncation_levels": res.truncation_levels,
               "max_slope": max((_num(r["slope"]) for r in res.degree_rows), default=None),
               "samples": len(res.degree_rows), "flags": sorted(res.flags)}
    ok = res.measure_ok and res.degrees_ok and len(res.degree_rows) == task.get("samples", 20)
    return (PASS if ok else FAIL), numbers, {"H": res.H, "mbar": res.mbar, "margin": res.margin,
                                             "window": list(res.window)}, [f1, f2]


def run_frame_constants(ctx, task, out):
    chart = ctx.chart(task["chart"])
    fc = surfaces.frame_constants(chart)
    n_audit = task.get("audit_samples", 50)
    audit = surfaces.frame_bound_audit(chart, fc, n_audit, ctx.seed, ctx.tol(task, 1e-2))
    rows = [[a["x"], a["r"], a["lower"], a["upper"], a["bound_lo"], a["bound_hi"], a["ok"]] for a in audit]
    rng = np.random.default_rng(ctx.seed)
    ys = chart.G.lo + rng.random((10, chart.k)) * (chart.G.hi - chart.G.lo)
    viol = surfaces.inclusion_violations(chart, fc, ys, [fc.r0, fc.r0 / 2, fc.r0 / 4])
    f = f"{task['id']}_audit.csv"
    write_rows(out / f, ["x", "r", "lower", "upper", "bound_lo", "bound_hi", "ok"], rows)
    ok = all(r[-1] for r in rows) and viol == 0 and fc.m00 <= fc.m1
    exp = task.get("expect", {})
    rel = exp.get("rel_tol", 1e-6)
    for key, val in (("m00", fc.m00), ("m1", fc.m1), ("C", fc.bounds.C)):
        if key in exp:
            ok &= abs(val - exp[key]) <= rel * abs(exp[key])
    numbers = {**fc.to_dict(), "audit_rows": len(rows), "inclusion_violations": viol}
    return (PASS if ok else FAIL), numbers, {"label": fc.label, **exp}, [f]


def run_pullback_check(ctx, task, out):
    chart = ctx.chart(task["chart"])
    E = ctx.region(task["region"])
    radii = _radii(task["radii"]) if "radii" in task else None
    rep = surfaces.pullback_degree_check(chart, E, task["y"], radii, tol=ctx.tol(task, 1e-4),
                                         tolerance=task.get("tolerance", 0.25))
    f = f"{task['id']}_estimates.csv"
    density.write_estimates_csv(out / f, [rep.ambient, rep.parameter])
    ok = rep.consistent
    if "expect" in task:
        ok &= rep.ambient.classification == task["expect"]
    numbers = {"ambient": {"class": rep.ambient.classification, "slope": _num(rep.ambient.slope)},
               "parameter": {"class": rep.parameter.classification, "slope": _num(rep.parameter.slope)},
               "degree_gap": _num(rep.degree_gap)}
    return (PASS if ok else FAIL), numbers, {"tolerance": rep.tolerance,
                                             **asdict(surfaces.PULLBACK_PARAMS)}, [f]


def _derivatives(ctx, task, mu, p, q):
    if task["derivatives"] == "disk_flux":
        return schwarz.disk_boundary_flux(p), schwarz.disk_boundary_flux(q)
    spec = ctx.density_spec(task["measure"])
    grads = spec.partials if spec else (None,) * mu.dim
    return (schwarz.DensityForm(p, mu, grads[p - 1]), schwarz.DensityForm(q, mu, grads[q - 1]))


def run_schwarz_estimator(ctx, task, out):
    mu = ctx.measure(task["measure"])
    p, q = task.get("p", 1), task.get("q", 2)
    F = FIELDS[task["field"]]
    dp, dq = _derivatives(ctx, task, mu, p, q)
    radii = _radii(task["radii"])
    rho = task.get("rho", 0.9)
    rows = schwarz.estimator_schedule(mu, dp, dq, F.f, F.G, F.H, p, q, task["x"], radii, rho,
                                      tol=ctx.tol(task, 1e-6), dH_p=F.dH_p, dG_q=F.dG_q)
    f = f"{task['id']}_estimator.csv"
    schwarz.write_estimator_csv(out / f, rows)
    exact = float(F.gamma(np.asarray([task["x"]], float))[0])
    numbers = {"gamma_exact": exact,
               "rows": [{"r": r.r, "gamma": [r.gamma.lower, r.gamma.upper]} for r in rows]}
    verdict = INFO
    chk = task.get("check")
    if chk:
        row = min(rows, key=lambda r: abs(r.r - chk["r"]))
        slack = chk.get("slack", 0.0)
        ok = row.gamma.contains(exact, slack) and row.gamma.width <= chk.get("max_width", math.inf)
        verdict = PASS if ok else FAIL
    return verdict, numbers, {"rho": rho, "tol": ctx.tol(task, 1e-6), **(chk or {})}, [f]


def run_schwarz_hypotheses(ctx, task, out):
    mu = ctx.measure(task["measure"])
    dp, dq = _derivatives(ctx, task, mu, 1, 2)
    A = ctx.region(task["region"]) if "region" in task else None
    radii = _radii(task["radii"]) if "radii" in task else None
    rho_grid = task.get("rho_grid", (0.5, 0.7, 0.9, 0.95, 0.99))
    rep = schwarz.hypothesis_report(mu, dp, dq, task["x"], radii, rho_grid, A,
                                    opts=ctx.opts(task, 1e-6))
    f1, f2 = f"{task['id']}_sigma.csv", f"{task['id']}_ratios.csv"
    write_rows(out / f1, ["rho", "sigma_lo", "sigma_hi", "sigma"],
               [[s.rho, s.value.lower, s.value.upper, s.value.estimate] for s in rep.sigma])
    write_rows(out / f2, ["axis", "r", "ratio_lo", "ratio_hi"],
               [[row.axis, r, iv.lower, iv.upper] for row in rep.derivative_ratios
                for r, iv in zip(row.radii, row.ratios)])
    exp = task.get("expect", {})
    ok = True
    if "verdict" in exp:
        ok &= rep.verdict == exp["verdict"]
    if "failures" in exp:
        ok &= sorted(rep.failures) == sorted(exp["failures"])
    numbers = {"verdict": rep.verdict, "failures": rep.failures,
               "sigma": {str(s.rho): s.value.estimate for s in rep.sigma},
               "decay_slopes": {str(r.axis): _num(r.slope) for r in rep.derivative_ratios},
               "tangency": rep.tangency_verdict}
    verdict = INFO if not exp else (PASS if ok else FAIL)
    return verdict, numbers, {**rep.thresholds, **exp}, [f1, f2]


def run_counterexample(ctx, task, out):
    tol = ctx.tol(task, 1e-6)
    rows = [schwarz.diagonal_counterexample(j, tol) for j in range(1, task["jmax"] + 1)]
    f = f"{task['id']}_counterexample.csv"
    schwarz.write_counterexample_csv(out / f, rows)
    ok = all(r.holds for r in rows)
    return (PASS if ok else FAIL), {"values": [r.value for r in rows], "bounds": [r.bound for r in rows]}, \
        {"tol": tol}, [f]


RUNNERS = {
    "ball_measure": run_ball_measure,
    "density_degree": run_density_degree,
    "base_statistic": run_base_statistic,
    "lambda_distribution": run_lambda_distribution,
    "scatter_build": run_scatter_build,
    "scatter_verify": run_scatter_verify,
    "thin_subset": run_thin_subset,
    "frame_constants": run_frame_constants,
    "pullback_check": run_pullback_check,
    "schwarz_estimator": run_schwarz_estimator,
    "schwarz_hypotheses": run_schwarz_hypotheses,
    "counterexample": run_counterexample,
}


def run_task(doc: dict, index: int, out: str, tol=None, max_depth=None, seed=None) -> dict:
    """Run one task; failures become FAIL entries carrying the error message."""
    task = doc["tasks"][index]
    ctx = Context(doc, tol, max_depth, seed)
    entry = {"id": task["id"], "op": task["op"]}
    try:
        verdict, numbers, thresholds, files = RUNNERS[task["op"]](ctx, task, Path(out))
        entry.update(verdict=verdict, numbers=numbers, thresholds=thresholds, files=files)
    except (scatter.HypothesisError, scatter.ConstructionError, ValueError, ArithmeticError) as exc:
        entry.update(verdict=FAIL, error=f"{type(exc).__name__}: {exc}")
    return entry


@dataclass
class RunResult:
    summary: dict
    out: Path

    @property
    def passed(self) -> bool:
        return all(t["verdict"] != FAIL for t in self.summary["tasks"])


def output_dir(doc: dict, out: Optional[str]) -> Path:
    if out:
        return Path(out)
    env = os.environ.get("SUPERDENSITY_OUT")
    if env:
        return Path(env)
    return Path(doc.get("output", "superdensity-out")) / doc["name"]


def run_scenario(path, out: Optional[str] = None, tol: Optional[float] = None,
                 max_depth: Optional[int] = None, seed: Optional[int] = None, fail_fast: bool = False,
                 jobs: int = 1, ops: Optional[set] = None) -> RunResult:
    src = resolve_path(str(path))
    doc = load_scenario(src)
    target = output_dir(doc, out)
    target.mkdir(parents=True, exist_ok=True)
    indices = [i for i, t in enumerate(doc["tasks"]) if ops is None or t["op"] in ops]
    entries = []
    if jobs > 1 and not fail_fast and len(indices) > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            futs = [ex.submit(run_task, doc, i, str(target), tol, max_depth, seed) for i in indices]
            entries = [f.result() for f in futs]
    else:
        for i in indices:
            entry = run_task(doc, i, str(target), tol, max_depth, seed)
            entries.append(entry)
            if fail_fast and entry["verdict"] == FAIL:
                break
    ctx = Context(doc, tol, max_depth, seed)
    digest = hashlib.sha256(src.read_bytes()).hexdigest()
    summary = {"scenario": doc["name"], "tasks": entries,
               "provenance": {"version": __version__, "schema_version": SCHEMA_VERSION, "seed": ctx.seed,
                              "tol": tol if tol is not None else ctx.tol_default,
                              "max_depth": ctx.max_depth, "scenario_sha256": digest}}
    with open(target / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(_strict(summary), fh, indent=2, sort_keys=True, default=_json_default, allow_nan=False)
        fh.write("\n")
    return RunResult(summary, target)


def _strict(o):
    """Non-finite floats become strings so the report stays strict JSON."""
    if isinstance(o, dict):
        return {k: _strict(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_strict(v) for v in o]
    if isinstance(o, (float, np.floating)):
        return _num(o)
    return o


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return _num(o)
    if isinstance(o, (np.bool_,)):
        return bool(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)
