"""Scenario-driven batch runner.

Usage::

    numinv {static,choice,decompose,market,mc,all} SCENARIO [--seed N] [--out-dir DIR]
           [--tol-scale X] [--parallel [N]] [--backend {compiled,python}]

``SCENARIO`` is a JSON file or the name of a bundled scenario. The subcommand
selects which of the scenario's checks run. Outputs are ``report.json``,
``tables/*.csv`` and ``summary.txt`` in the output directory. Exit status is 0
when every selected check passes, 1 when any fails and 2 for unusable input.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import platform
import re
import sys
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
import scipy

from . import __version__, canonical, choice, market, static, suites
from . import montecarlo as mc
from .static import DomainError, FiniteSpace
from .tree import build_tree, dual_optional_projection, is_stopping_time, random_time

GROUPS = ("static", "choice", "decompose", "market", "mc")
EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2


class ScenarioError(Exception):
    """The scenario file cannot be parsed, validated or resolved."""


# ---------------------------------------------------------------------------
# loading
# ---------------------------------------------------------------------------


def bundled_scenarios() -> list[str]:
    root = resources.files("numinv") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def load_schema() -> dict:
    return json.loads((resources.files("numinv") / "schema" / "scenario.schema.json").read_text())


def _locate(text: str, path) -> str:
    """Best-effort ``line N`` for a JSON path, following its object keys in order."""
    pos = 0
    for part in path:
        if isinstance(part, str):
            m = re.compile(r'"%s"\s*:' % re.escape(part)).search(text, pos)
            if m is None:
                break
            pos = m.start()
    return f"line {text.count(chr(10), 0, pos) + 1}"


def read_scenario(ref: str) -> tuple[dict, str, str]:
    """Return ``(scenario, text, display name)`` for a path or a bundled name."""
    p = Path(ref)
    if p.is_file():
        text, name = p.read_text(), p.name
    else:
        stem = ref[:-5] if ref.endswith(".json") else ref
        if stem not in bundled_scenarios():
            raise ScenarioError(f"{ref}: no such file or bundled scenario (bundled: {', '.join(bundled_scenarios())})")
        text = (resources.files("numinv") / "scenarios" / f"{stem}.json").read_text()
        name = f"{stem}.json"
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{name}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    validator = jsonschema.Draft202012Validator(load_schema())
    errors = sorted(validator.iter_errors(data), key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        lines = []
        for e in errors[:10]:
            where = "/".join(map(str, e.absolute_path)) or "<root>"
            lines.append(f"{name}: {_locate(text, e.absolute_path)}: {where}: {e.message}")
        raise ScenarioError("\n".join(lines))
    return data, text, name


def _vec(x) -> np.ndarray:
    return np.asarray(x, dtype=float)


@dataclass
class Scenario:
    """Resolved objects of a validated scenario file."""

    data: dict
    text: str
    name: str
    space: FiniteSpace | None = None
    outcomes: dict = field(default_factory=dict)
    polytopes: dict = field(default_factory=dict)
    simplices: dict = field(default_factory=dict)
    tree: object = None
    measure: np.ndarray | None = None
    H: np.ndarray | None = None
    random_time: np.ndarray | None = None
    market: market.Market | None = None

    def fail(self, section, msg) -> ScenarioError:
        return ScenarioError(f"{self.name}: {_locate(self.text, section)}: {'/'.join(map(str, section))}: {msg}")


def _node_values(sc: Scenario, spec, key):
    tree = sc.tree
    if isinstance(spec, dict):
        labels = tree.labels or tuple(str(i) for i in range(tree.n_nodes))
        index = {str(lab): i for i, lab in enumerate(labels)}
        unknown = set(spec) - set(index)
        if unknown:
            raise sc.fail([key], f"unknown node ids {sorted(unknown)}")
        out = [0.0] * tree.n_nodes
        for k, v in spec.items():
            out[index[k]] = v
        return out
    if len(spec) != tree.n_nodes:
        raise sc.fail([key], f"need {tree.n_nodes} node values, got {len(spec)}")
    return spec


def resolve(data: dict, text: str, name: str) -> Scenario:
    """Build library objects from a validated scenario, failing fast on bad references."""
    sc = Scenario(data, text, name)
    if "space" in data:
        try:
            sc.space = FiniteSpace(_vec(data["space"]["weights"]), tuple(data["space"].get("labels", ())))
        except DomainError as exc:
            raise sc.fail(["space"], exc) from None
    n = sc.space.n if sc.space else None
    for key in ("outcomes", "polytopes", "simplices"):
        if key in data and sc.space is None:
            raise sc.fail([key], "needs a 'space' section")
    for k, v in data.get("outcomes", {}).items():
        try:
            sc.outcomes[k] = static.as_outcome(v, n)
        except DomainError as exc:
            raise sc.fail(["outcomes", k], exc) from None
    for k, v in data.get("polytopes", {}).items():
        try:
            poly = choice.Polytope.from_vertices(v["vertices"]) if "vertices" in v else choice.Polytope.from_halfspaces(v["A"], v["b"])
        except (DomainError, ValueError) as exc:
            raise sc.fail(["polytopes", k], exc) from None
        if poly.dim != n:
            raise sc.fail(["polytopes", k], f"polytope lives in dimension {poly.dim}, the space has {n} atoms")
        sc.polytopes[k] = poly
    for k, v in data.get("simplices", {}).items():
        try:
            sc.simplices[k] = choice.FullSimplex(_vec(v["mu"]))
        except DomainError as exc:
            raise sc.fail(["simplices", k], exc) from None
        if sc.simplices[k].n != n:
            raise sc.fail(["simplices", k], f"simplex has {sc.simplices[k].n} atoms, the space has {n}")
    if "tree" in data:
        spec = dict(data["tree"])
        cap = spec.pop("max_nodes", None)
        try:
            sc.tree = build_tree(spec, **({"max_nodes": cap} if cap else {}))
        except (DomainError, ValueError) as exc:
            raise sc.fail(["tree"], exc) from None
    for key in ("optional_measure", "H", "random_time", "market"):
        if key in data and sc.tree is None:
            raise sc.fail([key], "needs a 'tree' section")
    if "optional_measure" in data and "H" in data:
        raise sc.fail(["H"], "give either 'optional_measure' or 'H', not both")
    try:
        if "random_time" in data:
            rt = data["random_time"]
            if isinstance(rt, dict):
                labels = sc.tree.labels or tuple(str(i) for i in range(sc.tree.n_nodes))
                leaf_ids = [str(labels[i]) for i in sc.tree.leaves]
                missing = set(leaf_ids) - set(rt)
                if missing or set(rt) - set(leaf_ids):
                    raise sc.fail(["random_time"], "need exactly one time per leaf id")
                rt = [rt[i] for i in leaf_ids]
            sc.random_time = random_time(sc.tree, np.asarray(rt, dtype=np.int64))
        if "optional_measure" in data:
            sc.measure = canonical.validate_measure(sc.tree, _node_values(sc, data["optional_measure"], "optional_measure"))
            sc.H = canonical.measure_to_H(sc.tree, sc.measure)
        elif "H" in data:
            sc.H = np.asarray(_node_values(sc, data["H"], "H"), dtype=float)
            canonical.decompose(sc.tree, sc.H)  # validates monotonicity and unit mass
            sc.measure = canonical.H_to_measure(sc.tree, sc.H)
        elif sc.random_time is not None:
            sc.H = dual_optional_projection(sc.tree, sc.random_time)
            sc.measure = canonical.H_to_measure(sc.tree, sc.H)
    except DomainError as exc:
        key = next(k for k in ("optional_measure", "H", "random_time") if k in data)
        raise sc.fail([key], exc) from None
    if "market" in data:
        m = data["market"]
        prices = m["prices"]
        if isinstance(prices, dict):
            prices = _node_values_any(sc, prices)
        prices = [p if isinstance(p, list) else [p] for p in prices]
        try:
            S = np.asarray(prices, dtype=float)
            cons = None
            if "constraints" in m:
                c = dict(m["constraints"])
                cons = market.constraint_set(c.pop("type"), S.shape[1], **c)
            sc.market = market.Market(sc.tree, S, cons)
        except (DomainError, KeyError, ValueError) as exc:
            raise sc.fail(["market"], exc) from None
    return sc


def _node_values_any(sc: Scenario, spec: dict) -> list:
    tree = sc.tree
    labels = tree.labels or tuple(str(i) for i in range(tree.n_nodes))
    index = {str(lab): i for i, lab in enumerate(labels)}
    if set(spec) != set(index):
        raise sc.fail(["market", "prices"], "need one price entry per node id")
    return [spec[str(lab)] for lab in labels]


# ---------------------------------------------------------------------------
# checks
# ---------------------------------------------------------------------------


@dataclass
class CheckResult:
    index: int
    name: str
    type: str
    group: str
    status: str  # "pass", "fail" or "error"
    slack: float | None  # tolerance minus worst violation; negative on failure
    values: dict
    tables: dict = field(default_factory=dict)  # table name -> (columns, rows)
    message: str = ""

    def record(self) -> dict:
        return {
            "index": self.index,
            "name": self.name,
            "type": self.type,
            "group": self.group,
            "status": self.status,
            "slack": self.slack,
            "message": self.message,
            "values": self.values,
            "tables": {k: {"columns": list(c), "rows": [list(r) for r in rows]} for k, (c, rows) in self.tables.items()},
        }


@dataclass
class Outcome:
    ok: bool
    slack: float | None
    values: dict
    tables: dict = field(default_factory=dict)
    message: str = ""


class RunContext:
    """Scenario plus run flags; caches Monte Carlo ensembles across checks."""

    def __init__(self, sc: Scenario, seed: int, tol_scale: float, backend: str | None):
        self.sc = sc
        self.seed = seed
        self.tol_scale = tol_scale
        self.backend = backend
        self._ensembles: dict = {}
        self._lock = threading.Lock()
        self._ens_locks: dict = {}

    def tol(self, base: float) -> float:
        return base * self.tol_scale

    def ensemble(self, name: str | None):
        configs = self.sc.data.get("mc", {})
        if name is None:
            if len(configs) != 1:
                raise DomainError("the scenario has several mc configs; name one with 'ensemble'")
            name = next(iter(configs))
        if name not in configs:
            raise DomainError(f"unknown mc config {name!r}")
        with self._lock:
            lock = self._ens_locks.setdefault(name, threading.Lock())
        with lock:
            if name not in self._ensembles:
                cfg = dict(configs[name])
                seed = cfg.pop("seed", self.seed)
                self._ensembles[name] = mc.simulate(
                    cfg.pop("generator"), cfg.pop("n_paths"), cfg.pop("n_steps"), cfg.pop("dt"), seed, backend=self.backend, **cfg
                )
            return self._ensembles[name]


def _need(ctx: RunContext, *sections):
    for s in sections:
        if getattr(ctx.sc, s) is None:
            raise DomainError(f"this check needs the scenario section {s!r}")


def _outcome(ctx: RunContext, name: str) -> np.ndarray:
    _need(ctx, "space")
    if name not in ctx.sc.outcomes:
        raise DomainError(f"unknown outcome {name!r}")
    return ctx.sc.outcomes[name]


def _num(x):
    """JSON-safe float: infinities and NaN become strings."""
    if x is None or isinstance(x, (bool, str)):
        return x
    if isinstance(x, (int, np.integer)):
        return int(x)
    x = float(x)
    if math.isfinite(x):
        return x
    return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (float, int, np.floating, np.integer, bool, np.bool_)) or obj is None:
        return bool(obj) if isinstance(obj, np.bool_) else _num(obj)
    return str(obj)


def _expected_float(v) -> float:
    return math.inf if v == "inf" else float(v)


# static --------------------------------------------------------------------


def check_counterexamples(ctx, spec, rng):
    ps = spec.get("p", [0.5])
    ps = ps if isinstance(ps, list) else [ps]
    tol = ctx.tol(1e-12)
    rows, worst, flips = [], 0.0, True
    for p in ps:
        for ex in static.counterexample_suite(float(p)).values():
            for key, exp in ex.expected.items():
                got = ex.computed[key]
                err = 0.0 if (math.isinf(exp) and got == exp) else abs(got - exp)
                worst = max(worst, err)
                rows.append([p, ex.name, key, _num(exp), _num(got), err])
            if ex.name == "addition_flip":
                flips &= ex.computed["rel(1+g|1+f)"] < 0
    ok = worst <= tol and flips
    return Outcome(ok, tol - worst, {"max_error": worst, "sign_flip_for_p_le_half": flips, "p": ps},
                   {"values": (("p", "example", "quantity", "expected", "computed", "abs_error"), rows)})


def check_rel(ctx, spec, rng):
    f, g = _outcome(ctx, spec["f"]), _outcome(ctx, spec["g"])
    r = static.rel(ctx.sc.space, f, g)
    vals = {"rel": r}
    if "expected" not in spec:
        return Outcome(True, None, vals)
    exp = _expected_float(spec["expected"])
    err = 0.0 if r == exp else abs(r - exp)
    tol = ctx.tol(1e-12)
    vals.update(expected=exp, abs_error=err)
    return Outcome(err <= tol, tol - err, vals)


def check_prefers(ctx, spec, rng):
    res = static.prefers(ctx.sc.space, _outcome(ctx, spec["f"]), _outcome(ctx, spec["g"]))
    vals = {"relation": res.value, "rel": static.rel(ctx.sc.space, _outcome(ctx, spec["f"]), _outcome(ctx, spec["g"]))}
    if "expected" in spec:
        return Outcome(res.value == spec["expected"], None, vals)
    return Outcome(True, None, vals)


def check_chain(ctx, spec, rng):
    fs = [_outcome(ctx, k) for k in spec["outcomes"]]
    expect = spec.get("expect", "collapses")
    try:
        collapsed = static.chain_check(ctx.sc.space, fs, atol=ctx.tol(1e-10))
    except static.ChainPreconditionError as exc:
        vals = {"precondition": "fails", "link": exc.link, "rel": exc.value}
        return Outcome(expect == "precondition_fails", None, vals, message=str(exc))
    return Outcome(expect == "collapses" and collapsed, None, {"precondition": "holds", "collapses": collapsed})


def check_insurance(ctx, spec, rng):
    sp = ctx.sc.space
    f, g = _outcome(ctx, spec["f"]), _outcome(ctx, spec["g"])
    N = static.insurance_level(sp, f, g)
    ins = np.where(f <= g, g, 0.0)
    r = static.rel(sp, g + N * ins, f + N * ins)
    vals = {"N": N, "rel_at_N": r}
    ok = r < 0 and (N == 0 or static.rel(sp, g + (N - 1) * ins, f + (N - 1) * ins) >= 0)
    if "expected" in spec:
        ok &= N == int(spec["expected"])
    return Outcome(ok, None, vals)


def check_static_properties(ctx, spec, rng):
    n_random, atoms = int(spec.get("n_random", 200)), int(spec.get("atoms", 4))
    worst = {"reflexive": 0.0, "scaling": 0.0, "numeraire_invariance": 0.0, "lower_contour_convexity": 0.0}
    for _ in range(n_random):
        sp = suites.random_space(rng, atoms)
        f, g, h = (rng.uniform(0.1, 3.0, atoms) for _ in range(3))
        c = rng.uniform(0.1, 5.0)
        worst["reflexive"] = max(worst["reflexive"], abs(static.rel(sp, f, f)))
        worst["scaling"] = max(worst["scaling"], abs(static.rel(sp, c * f, f) - (c - 1.0)))
        base = static.rel(sp, f, g)
        worst["numeraire_invariance"] = max(worst["numeraire_invariance"], abs(static.rel(sp, f / h, g / h) - base) / (1 + abs(base)))
        # two outcomes weakly below h stay below after mixing
        f2 = f / (1.0 + static.rel(sp, f, h))
        g2 = g / (1.0 + static.rel(sp, g, h))
        a = rng.random()
        worst["lower_contour_convexity"] = max(worst["lower_contour_convexity"], static.rel(sp, a * f2 + (1 - a) * g2, h))
    tol = ctx.tol(1e-12)
    w = max(worst.values())
    return Outcome(w <= tol, tol - w, worst)


# choice --------------------------------------------------------------------


def _choice_set(ctx, key):
    if key in ctx.sc.polytopes:
        return ctx.sc.polytopes[key]
    if key in ctx.sc.simplices:
        return ctx.sc.simplices[key]
    raise DomainError(f"unknown polytope or simplex {key!r}")


def check_log_optimal(ctx, spec, rng):
    _need(ctx, "space")
    C = _choice_set(ctx, spec["set"])
    opt = choice.log_optimal(ctx.sc.space, C)
    cert_tol, val_tol = ctx.tol(choice.CERT_TOL), ctx.tol(1e-8)
    vals = {"outcome": opt.outcome, "certificate": opt.certificate, "iterations": opt.iterations}
    err = 0.0
    ref = None
    if isinstance(C, choice.FullSimplex):
        ref = choice.simplex_optimum(ctx.sc.space, C)
    if "expected" in spec:
        ref = _vec(spec["expected"])
    if ref is not None:
        err = float(np.max(np.abs(opt.outcome - ref)))
        vals.update(reference=ref, abs_error=err)
    slack = min(cert_tol - opt.certificate, val_tol - err)
    return Outcome(slack >= 0, slack, vals)


def check_simplex_classify(ctx, spec, rng):
    _need(ctx, "space")
    if spec["simplex"] not in ctx.sc.simplices:
        raise DomainError(f"unknown simplex {spec['simplex']!r}")
    pos = choice.simplex_classify(ctx.sc.space, ctx.sc.simplices[spec["simplex"]], _outcome(ctx, spec["outcome"]), tol=ctx.tol(1e-10))
    vals = {"kind": pos.kind.value, "scale": pos.scale, "maximal": pos.maximal}
    return Outcome(spec.get("expected", pos.kind.value) == pos.kind.value, None, vals)


def check_recover_probability(ctx, spec, rng):
    kind = spec.get("oracle", "rel")
    expect_violation = bool(spec.get("expect_violation", False))
    if kind == "rel":
        _need(ctx, "space")
        oracle, n = choice.rel_oracle(ctx.sc.space), ctx.sc.space.n
    elif kind == "barycenter":
        oracle = choice.barycenter_oracle
        n = ctx.sc.space.n if ctx.sc.space else int(spec.get("atoms", 3))
    else:
        raise DomainError(f"unknown oracle {kind!r}")
    tol = ctx.tol(1e-8)
    rep = choice.recover_probability(oracle, n, rng=rng, n_checks=int(spec.get("n_checks", 20)), tol=tol)
    vals = {"weights": rep.weights, "violations": list(rep.violations), "max_regeneration_error": rep.max_regeneration_error}
    slack = None
    if kind == "rel" and rep.weights is not None:
        err = float(np.max(np.abs(rep.weights - ctx.sc.space.weights)))
        vals["recovery_error"] = err
        slack = tol - err
    ok = (not rep.ok) if expect_violation else (rep.ok and (slack is None or slack >= 0))
    return Outcome(ok, slack, vals)


def check_log_relation(ctx, spec, rng):
    res = choice.log_relation(ctx.sc.space, _outcome(ctx, spec["f"]), _outcome(ctx, spec["g"]))
    return Outcome(spec.get("expected", res.value) == res.value, None, {"relation": res.value})


def check_full_simplex_suite(ctx, spec, rng):
    r = suites.full_simplex_sweep(rng, int(spec.get("n_spaces", 50)), int(spec.get("min_atoms", 2)), int(spec.get("max_atoms", 10)))
    slack = min(ctx.tol(1e-8) - r.max_rel_error, ctx.tol(choice.CERT_TOL) - r.max_certificate)
    return Outcome(slack >= 0, slack, vars(r))


def check_recovery_suite(ctx, spec, rng):
    r = suites.recovery_sweep(rng, int(spec.get("n_oracles", 50)), int(spec.get("min_atoms", 2)), int(spec.get("max_atoms", 6)))
    slack = ctx.tol(1e-8) - r.max_error
    return Outcome(slack >= 0 and r.violations == 0, slack, vars(r))


# decompose -----------------------------------------------------------------


def check_decompose(ctx, spec, rng):
    _need(ctx, "tree", "H")
    tree, H = ctx.sc.tree, ctx.sc.H
    pair = canonical.decompose(tree, H)
    tol = ctx.tol(canonical.CHECK_TOL)
    rep = canonical.verify_pair(tree, H, pair, tol=tol)
    trip = canonical.measure_round_trip(tree, ctx.sc.measure)
    vals = {"violations": rep.violations, "round_trip": trip, "failed": rep.failed}
    slack = min(tol - rep.worst, ctx.tol(1e-12) - trip)
    recs = pair.to_records(tree)
    cols = ("node", "time", "L", "K", "H", "M", "Z")
    vals["pair"] = recs
    return Outcome(slack >= 0, slack, vals, {"pair": (cols, [[r[c] for c in cols] for r in recs])})


def check_perturbation(ctx, spec, rng):
    _need(ctx, "tree", "H")
    eps = [float(e) for e in spec.get("eps", [1e-2, 1e-3, 1e-4])]
    rows = canonical.perturbation_convergence(ctx.sc.tree, ctx.sc.H, eps)
    gaps = [r.k_gap for r in rows]
    bound = ctx.tol(10 * min(eps))
    mono = all(b <= a + 1e-15 for a, b in zip(gaps, gaps[1:]))
    vals = {"k_gaps": gaps, "l_gaps": [r.l_gap for r in rows], "monotone": mono, "final_bound": bound}
    table = (("eps", "k_gap", "l_gap", "excluded"), [[r.eps, r.k_gap, r.l_gap, r.excluded] for r in rows])
    return Outcome(mono and gaps[-1] < bound, bound - gaps[-1], vals, {"gaps": table})


def check_dual_projection(ctx, spec, rng):
    _need(ctx, "tree", "random_time")
    tree, T = ctx.sc.tree, ctx.sc.random_time
    err = suites.dual_projection_identity(tree, T, rng, int(spec.get("n_random", 50)))
    H = dual_optional_projection(tree, T)
    total = math.fsum(tree.prob[tree.leaves] * H[tree.leaves])
    tol = ctx.tol(1e-12)
    worst = max(err, abs(total - 1.0))
    vals = {"identity_error": err, "expected_H_inf": total, "stopping_time": is_stopping_time(tree, T), "H": H}
    return Outcome(worst <= tol, tol - worst, vals)


def check_pair_suite(ctx, spec, rng):
    r = suites.canonical_sweep(
        rng, int(spec.get("n_trees", 200)), int(spec.get("max_depth", 5)), int(spec.get("max_branching", 3)), float(spec.get("zero_fraction", 0.5))
    )
    slack = min(ctx.tol(canonical.CHECK_TOL) - r.worst, ctx.tol(1e-12) - r.max_round_trip)
    return Outcome(slack >= 0, slack, vars(r))


def check_perturbation_suite(ctx, spec, rng):
    eps = tuple(float(e) for e in spec.get("eps", [1e-2, 1e-3, 1e-4]))
    bound = ctx.tol(float(spec.get("final_bound", 10 * min(eps))))
    r = suites.perturbation_sweep(
        rng, int(spec.get("n_trees", 200)), eps, int(spec.get("max_depth", 5)), int(spec.get("max_branching", 3)),
        float(spec.get("zero_fraction", 0.0)), bound,
    )
    return Outcome(r.non_monotone == 0 and r.above_final == 0, bound - r.max_gaps[-1], vars(r))


# market --------------------------------------------------------------------


def check_numeraire(ctx, spec, rng):
    _need(ctx, "tree", "market")
    tree = ctx.sc.tree
    which = spec.get("L", "canonical" if ctx.sc.H is not None else "one")
    if which == "canonical":
        _need(ctx, "H")
        L = canonical.decompose(tree, ctx.sc.H).L
    elif which == "one":
        L = np.ones(tree.n_nodes)
    else:
        raise DomainError(f"unknown L choice {which!r}")
    port = market.numeraire_portfolio(ctx.sc.market, L)
    tol = ctx.tol(market.CERT_TOL)
    vals = {"L": which, "certificate": port.certificate, "pi": port.pi, "X_hat": port.X}
    if "expected_pi" in spec:
        err = float(np.max(np.abs(port.pi[tree.internal] - _vec(spec["expected_pi"]))))
        vals["pi_error"] = err
        slack = min(tol - port.certificate, ctx.tol(1e-8) - err)
    else:
        slack = tol - port.certificate
    return Outcome(slack >= 0, slack, vals)


def check_consumption(ctx, spec, rng):
    _need(ctx, "tree", "market", "measure")
    x = float(spec.get("x", 1.0))
    rep = market.consumption_optimality(ctx.sc.market, ctx.sc.measure, x, rng, max_streams=int(spec.get("max_streams", 10**4)))
    plan = market.optimal_consumption(ctx.sc.market, ctx.sc.measure, x)
    tol = ctx.tol(market.CERT_TOL)
    vals = {"worst_rel": rep.worst_rel, "n_streams": rep.n_streams, "consumption": plan.dC}
    return Outcome(rep.worst_rel <= tol, tol - rep.worst_rel, vals)


def check_random_time(ctx, spec, rng):
    _need(ctx, "tree", "market", "random_time")
    rep = market.random_time_check(ctx.sc.market, ctx.sc.random_time, rng, n_random=int(spec.get("n_random", 100)))
    tol = ctx.tol(market.CERT_TOL)
    vals = {"worst": rep.worst, "n_strategies": int(rep.values.size), "stopping_time": rep.stopping_time}
    return Outcome(rep.worst <= 1.0 + tol, 1.0 + tol - rep.worst, vals)


def check_market_suite(ctx, spec, rng):
    r = suites.market_sweep(
        rng, int(spec.get("n_markets", 20)), int(spec.get("max_depth", 4)), int(spec.get("max_assets", 3)),
        int(spec.get("n_times", 5)), int(spec.get("max_streams", 10**4)),
    )
    tol = ctx.tol(market.CERT_TOL)
    slack = min(tol - r.consumption_worst, tol - r.sampling_worst)
    return Outcome(slack >= 0, slack, vars(r))


# mc ------------------------------------------------------------------------


def _ens_values(ens) -> dict:
    return {"generator": ens.generator, "seed": ens.seed, "n_paths": ens.n_paths, "n_steps": ens.n_steps, "dt": ens.dt,
            "horizon": ens.horizon, "params": ens.params, "mean_steps": float(np.mean(ens.steps))}


def check_doob(ctx, spec, rng):
    ens = ctx.ensemble(spec.get("ensemble"))
    rows = mc.doob_identity_check(ens, [float(g) for g in spec.get("gammas", [1, 2, 4, 8])])
    tol = ctx.tol(float(spec.get("tolerance", 0.02)))
    dev = max(abs(r.deviation) for r in rows)
    vals = {"ensemble": _ens_values(ens), "rows": [r.as_dict() for r in rows], "max_deviation": dev,
            "truncation_residual": mc.exp_law_check(ens).residual.estimate}
    table = (("gamma", "empirical", "target", "se"), [[r.gamma, r.empirical, r.target, r.stderr] for r in rows])
    return Outcome(dev <= tol, tol - dev, vals, {"doob": table})


def check_exp_law(ctx, spec, rng):
    ens = ctx.ensemble(spec.get("ensemble"))
    rep = mc.exp_law_check(ens, float(spec.get("allowance", mc.DISCRETIZATION_ALLOWANCE)) * ctx.tol_scale)
    lo, hi = spec.get("mean_range", [0.97, 1.03])
    half = (hi - lo) / 2 * ctx.tol_scale
    mid = (hi + lo) / 2
    m = rep.mean.estimate
    slack = min(half - abs(m - mid), rep.ks_threshold - rep.ks)
    ok = slack > 0 and rep.clock_below_one
    vals = {"ensemble": _ens_values(ens), **rep.as_dict(), "mean_range": [mid - half, mid + half], "mean_within_3se": rep.mean_within_3se}
    table = (("quantity", "value"), [[k, _num(v)] for k, v in rep.as_dict().items()])
    return Outcome(ok, slack, vals, {"exp_law": table})


def check_min_time_market(ctx, spec, rng):
    ens = ctx.ensemble(spec.get("ensemble"))
    rows = mc.min_time_market_check(ens)
    tol = ctx.tol(float(spec.get("tolerance", 0.02)))
    target = float(spec.get("all_in_target", 0.5))
    slack = math.inf
    cash_exact = True
    for r in rows:
        if r.fraction == 0.0:
            cash_exact &= r.value.estimate == 1.0 and r.value.stderr == 0.0
        elif r.fraction == 1.0:
            slack = min(slack, tol - abs(r.value.estimate - target))
        else:
            slack = min(slack, r.bound - r.value.estimate)
    vals = {"ensemble": _ens_values(ens), "rows": [r.as_dict() for r in rows], "cash_exact": cash_exact}
    table = (("fraction", "mean_wealth", "se", "bound"), [[r.fraction, r.value.estimate, r.value.stderr, r.bound] for r in rows])
    msg = "" if cash_exact else "cash strategy is not exactly one"
    return Outcome(cash_exact and slack >= 0, None if math.isinf(slack) else slack, vals, {"market": table}, msg)


CHECKS = {
    "counterexamples": ("static", check_counterexamples, {"p"}),
    "rel": ("static", check_rel, {"f", "g", "expected"}),
    "prefers": ("static", check_prefers, {"f", "g", "expected"}),
    "chain": ("static", check_chain, {"outcomes", "expect"}),
    "insurance": ("static", check_insurance, {"f", "g", "expected"}),
    "static_properties": ("static", check_static_properties, {"n_random", "atoms"}),
    "log_optimal": ("choice", check_log_optimal, {"set", "expected"}),
    "simplex_classify": ("choice", check_simplex_classify, {"simplex", "outcome", "expected"}),
    "recover_probability": ("choice", check_recover_probability, {"oracle", "expect_violation", "n_checks", "atoms"}),
    "log_relation": ("choice", check_log_relation, {"f", "g", "expected"}),
    "full_simplex_suite": ("choice", check_full_simplex_suite, {"n_spaces", "min_atoms", "max_atoms"}),
    "recovery_suite": ("choice", check_recovery_suite, {"n_oracles", "min_atoms", "max_atoms"}),
    "decompose": ("decompose", check_decompose, set()),
    "perturbation": ("decompose", check_perturbation, {"eps"}),
    "dual_projection": ("decompose", check_dual_projection, {"n_random"}),
    "pair_suite": ("decompose", check_pair_suite, {"n_trees", "max_depth", "max_branching", "zero_fraction"}),
    "perturbation_suite": ("decompose", check_perturbation_suite, {"n_trees", "eps", "max_depth", "max_branching", "zero_fraction", "final_bound"}),
    "numeraire": ("market", check_numeraire, {"L", "expected_pi"}),
    "consumption": ("market", check_consumption, {"x", "max_streams"}),
    "random_time": ("market", check_random_time, {"n_random"}),
    "market_suite": ("market", check_market_suite, {"n_markets", "max_depth", "max_assets", "n_times", "max_streams"}),
    "doob": ("mc", check_doob, {"ensemble", "gammas", "tolerance"}),
    "exp_law": ("mc", check_exp_law, {"ensemble", "allowance", "mean_range"}),
    "min_time_market": ("mc", check_min_time_market, {"ensemble", "tolerance", "all_in_target"}),
}


def plan_checks(sc: Scenario, group: str) -> list[tuple[int, str, dict]]:
    """Checks selected by ``group`` as ``(declared index, name, spec)``; validates parameters."""
    out, seen = [], set()
    for i, spec in enumerate(sc.data["checks"]):
        kind = spec["type"]
        g, _, allowed = CHECKS[kind]
        extra = set(spec) - allowed - {"type", "name"}
        if extra:
            raise sc.fail(["checks"], f"check {i} ({kind}): unknown parameters {sorted(extra)}")
        name = spec.get("name", f"{i:02d}_{kind}")
        if name in seen:
            raise sc.fail(["checks"], f"duplicate check name {name!r}")
        seen.add(name)
        if group in ("all", g):
            out.append((i, name, spec))
    if not out:
        raise ScenarioError(f"{sc.name}: no {group} checks in this scenario")
    return out


def run_check(ctx: RunContext, index: int, name: str, spec: dict) -> CheckResult:
    kind = spec["type"]
    group, fn, _ = CHECKS[kind]
    rng = np.random.default_rng([ctx.seed, index])
    try:
        o = fn(ctx, spec, rng)
    except (DomainError, ValueError, np.linalg.LinAlgError) as exc:
        return CheckResult(index, name, kind, group, "error", None, {}, message=f"{type(exc).__name__}: {exc}")
    slack = None if o.slack is None else float(o.slack)
    return CheckResult(index, name, kind, group, "pass" if o.ok else "fail", slack, _jsonable(o.values), o.tables, o.message)


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


def build_report(sc: Scenario, results: list[CheckResult], *, seed, tol_scale, subcommand, backend) -> dict:
    n_pass = sum(r.status == "pass" for r in results)
    return {
        "format": "numinv-report/1",
        "scenario": {"name": sc.data.get("name", sc.name), "file": sc.name, "sha256": hashlib.sha256(sc.text.encode()).hexdigest()},
        "environment": {
            "numinv": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "backend": backend,
            "seed": seed,
            "tol_scale": tol_scale,
            "subcommand": subcommand,
            "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        },
        "status": "pass" if n_pass == len(results) else "fail",
        "counts": {"total": len(results), "pass": n_pass, "fail": len(results) - n_pass},
        "checks": [_jsonable(r.record()) for r in results],
    }


def dumps_report(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True, allow_nan=False) + "\n"


def strip_volatile(report: dict) -> dict:
    """Copy of ``report`` without the fields that change between identical runs."""
    out = json.loads(json.dumps(report))
    out["environment"].pop("timestamp", None)
    return out


def summary_text(report: dict) -> str:
    rows = [("#", "check", "group", "status", "slack")]
    for c in report["checks"]:
        s = c["slack"]
        rows.append((str(c["index"]), c["name"], c["group"], c["status"].upper(), "-" if s is None else f"{float(s):.3e}" if not isinstance(s, str) else s))
    widths = [max(len(r[i]) for r in rows) for i in range(5)]
    lines = [f"scenario: {report['scenario']['name']} ({report['scenario']['file']})",
             f"seed: {report['environment']['seed']}  tol-scale: {report['environment']['tol_scale']}  backend: {report['environment']['backend']}",
             ""]
    for j, r in enumerate(rows):
        lines.append("  ".join(x.ljust(w) for x, w in zip(r, widths)).rstrip())
        if j == 0:
            lines.append("  ".join("-" * w for w in widths))
    for c in report["checks"]:
        if c["status"] != "pass" and c["message"]:
            lines.append(f"  {c['name']}: {c['message']}")
    cnt = report["counts"]
    lines += ["", f"overall: {report['status'].upper()} ({cnt['pass']}/{cnt['total']} checks passed)"]
    return "\n".join(lines) + "\n"


def write_outputs(out_dir: Path, report: dict, results: list[CheckResult]) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(dumps_report(report))
    (out_dir / "summary.txt").write_text(summary_text(report))
    tables = out_dir / "tables"
    for r in results:
        for tname, (cols, rows) in r.tables.items():
            tables.mkdir(exist_ok=True)
            stem = re.sub(r"[^A-Za-z0-9_.-]+", "_", r.name)
            fname = f"{stem}.csv" if len(r.tables) == 1 else f"{stem}_{tname}.csv"
            with open(tables / fname, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(cols)
                for row in rows:
                    w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("scenario", help="scenario JSON file or bundled scenario name")
    common.add_argument("--seed", type=int, default=None, help="master seed (overrides the scenario's seed)")
    common.add_argument("--out-dir", type=Path, default=None, help="output directory (default: runs/<scenario>)")
    common.add_argument("--tol-scale", type=float, default=1.0, help="multiply every check tolerance by this factor")
    common.add_argument("--parallel", type=int, nargs="?", const=os.cpu_count() or 1, default=1, metavar="N",
                        help="run independent checks on N threads (default: all cores)")
    common.add_argument("--backend", choices=mc.BACKENDS, default=None, help="Monte Carlo loops (default: compiled when built)")
    common.add_argument("--quiet", action="store_true", help="do not print the summary")
    parser = argparse.ArgumentParser(prog="numinv", description="Run the checks of a scenario file.")
    parser.add_argument("--version", action="version", version=f"numinv {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="{static,choice,decompose,market,mc,all}")
    for g in GROUPS + ("all",):
        sub.add_parser(g, parents=[common], help=f"run the {g} checks" if g != "all" else "run every check")
    return parser


def run(args: argparse.Namespace) -> tuple[int, dict | None]:
    if not (args.tol_scale > 0 and math.isfinite(args.tol_scale)):
        raise ScenarioError("--tol-scale must be positive")
    if args.parallel < 1:
        raise ScenarioError("--parallel needs at least one worker")
    data, text, name = read_scenario(args.scenario)
    sc = resolve(data, text, name)
    planned = plan_checks(sc, args.command)
    seed = args.seed if args.seed is not None else int(data.get("seed", 0))
    backend = args.backend or mc.BACKEND
    ctx = RunContext(sc, seed, args.tol_scale, backend)
    if args.parallel > 1:
        with ThreadPoolExecutor(max_workers=args.parallel) as pool:
            futures = [pool.submit(run_check, ctx, *p) for p in planned]
            results = [f.result() for f in futures]
    else:
        results = [run_check(ctx, *p) for p in planned]
    report = build_report(sc, results, seed=seed, tol_scale=args.tol_scale, subcommand=args.command, backend=backend)
    out_dir = args.out_dir or Path("runs") / Path(name).stem
    try:
        write_outputs(out_dir, report, results)
    except OSError as exc:
        raise ScenarioError(f"cannot write outputs to {out_dir}: {exc}") from None
    if not args.quiet:
        print(summary_text(report), end="")
        print(f"outputs written to {out_dir}")
    return (EXIT_OK if report["status"] == "pass" else EXIT_FAIL), report


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        code, _ = run(args)
    except ScenarioError as exc:
        print(f"numinv: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
