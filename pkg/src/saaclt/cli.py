"""Command-line entry point: ``saaclt <command> [--preset NAME | --config FILE] ...``.

Commands write CSV files into the output directory. Failures print one
JSON line ``{"error": <type>, "message": <text>}`` to stderr and exit 2.
"""
from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import os
import sys
from importlib import resources

import jsonschema
import numpy as np

from . import dp, inventory, lqr, mc
from .errors import ConfigurationError, SaaCltError
from .model import ProblemInstance
from .sampling import SeedPlan

log = logging.getLogger("saaclt")

PRESETS = ("lqr-paper", "lqr-paper-fig2", "inventory-default")

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_per_stage = {"oneOf": [_num, {"type": "array", "items": _num, "minItems": 1}]}

PROBLEM_SCHEMAS = {
    "lqr": {
        "type": "object",
        "additionalProperties": False,
        "required": ["kind", "horizon"],
        "properties": {
            "kind": {"const": "lqr"},
            "horizon": {"type": "integer", "minimum": 1},
            "A": _num, "B": _num, "Q": _pos, "R": _pos, "Qf": _pos,
            "noise_half_width": _pos,
            "x1": _num,
        },
    },
    "inventory": {
        "type": "object",
        "additionalProperties": False,
        "required": ["kind", "horizon"],
        "properties": {
            "kind": {"const": "inventory"},
            "horizon": {"type": "integer", "minimum": 1},
            "order_cost": _per_stage, "backorder_cost": _per_stage,
            "holding_cost": _per_stage, "demand_max": _per_stage,
            "x1": {"type": "number", "minimum": 0},
        },
    },
}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["problem"],
    "properties": {
        "problem": {
            "type": "object",
            "required": ["kind"],
            "properties": {"kind": {"enum": sorted(PROBLEM_SCHEMAS)}},
        },
        "grids": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "lo": _num, "hi": _num,
                "nodes": {"type": "integer", "minimum": 2},
                "spacing": _pos,
                "cov_nodes": {"type": "integer", "minimum": 2},
                "u_lo": _num, "u_hi": _num,
            },
        },
        "quadrature": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "expectation": {"enum": ["exact", "gauss"]},
                "nodes": {"type": "integer", "minimum": 1},
            },
        },
        "mc": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "N": {"type": "integer", "minimum": 1},
                "R": {"type": "integer", "minimum": 2},
                "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
                "states": {"type": "array", "items": _num, "minItems": 1},
                "stages": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
                "workers": {"type": "integer", "minimum": 1},
                "engine": {"enum": ["closed-form", "grid"]},
                "paths": {"type": "integer", "minimum": 2},
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "directory": {"type": "string", "minLength": 1},
                "curve_states": {"type": "array", "items": _num, "minItems": 1},
                "gamma_stages": {"type": "array", "items": {"type": "integer", "minimum": 1}},
            },
        },
    },
}

DEFAULTS = {
    "lqr": {
        "problem": {"A": 1.0, "B": 1.0, "Q": 1.0, "R": 1.0, "Qf": 1.0,
                    "noise_half_width": float(np.sqrt(3.0)), "x1": 1.0},
        "grids": {"lo": -8.0, "hi": 8.0, "nodes": 1601, "cov_nodes": 401, "u_lo": -10.0, "u_hi": 10.0},
        "mc": {"states": [1.0], "engine": "closed-form"},
        "output": {"curve_states": [0.5, 1.5]},
    },
    "inventory": {
        "problem": {"order_cost": 1.0, "backorder_cost": 3.0, "holding_cost": 1.0,
                    "demand_max": 2.0, "x1": 1.0},
        "grids": {"spacing": 0.01, "cov_nodes": 401},
        "mc": {"states": [1.0], "engine": "grid"},
        "output": {"curve_states": [1.0]},
    },
    "common": {
        "quadrature": {"expectation": "exact", "nodes": 64},
        "mc": {"N": 1000, "R": 100, "seed": 0, "workers": 1, "paths": 100000},
        "output": {"directory": "out", "gamma_stages": []},
    },
}


# --------------------------------------------------------------------------
# Configuration
# --------------------------------------------------------------------------

def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_preset(name: str) -> dict:
    if name not in PRESETS:
        raise ConfigurationError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    text = resources.files("saaclt").joinpath("presets", f"{name}.json").read_text()
    return json.loads(text)


def _check(doc, schema, prefix) -> None:
    try:
        jsonschema.validate(doc, schema)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in (*prefix, *exc.absolute_path)) or "<root>"
        raise ConfigurationError(f"config invalid at {where}: {exc.message}") from None


def validate(doc: dict) -> dict:
    """Schema-check a document and fill in defaults."""
    _check(doc, SCHEMA, ())
    kind = doc["problem"]["kind"]
    _check(doc["problem"], PROBLEM_SCHEMAS[kind], ("problem",))
    cfg = _merge(_merge(DEFAULTS["common"], DEFAULTS[kind]), doc)
    T = cfg["problem"]["horizon"]
    cfg["mc"].setdefault("stages", sorted({1, T}))
    bad = [t for t in cfg["mc"]["stages"] if t > T]
    if bad:
        raise ConfigurationError(f"mc.stages {bad} exceed the horizon {T}")
    bad = [t for t in cfg["output"]["gamma_stages"] if t > T + 1]
    if bad:
        raise ConfigurationError(f"output.gamma_stages {bad} exceed T+1 = {T + 1}")
    if kind == "lqr":
        g = cfg["grids"]
        if not g["lo"] < g["hi"]:
            raise ConfigurationError("grids.lo must be below grids.hi")
        if not g["u_lo"] < g["u_hi"]:
            raise ConfigurationError("grids.u_lo must be below grids.u_hi")
    return cfg


def resolve_config(args) -> dict:
    doc = {}
    if args.preset:
        doc = load_preset(args.preset)
    if args.config:
        try:
            with open(args.config) as fh:
                user = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config is not valid JSON: {exc}") from None
        if not isinstance(user, dict):
            raise ConfigurationError("config must be a JSON object")
        doc = _merge(doc, user)
    if not doc:
        raise ConfigurationError("give --preset or --config")
    if args.seed is not None:
        doc = _merge(doc, {"mc": {"seed": args.seed}})
    if args.workers is not None:
        doc = _merge(doc, {"mc": {"workers": args.workers}})
    if args.out is not None:
        doc = _merge(doc, {"output": {"directory": args.out}})
    return validate(doc)


# --------------------------------------------------------------------------
# Builders
# --------------------------------------------------------------------------

def build_lqr(cfg: dict) -> lqr.LqrModel:
    p = cfg["problem"]
    return lqr.scalar_lqr(p["horizon"], a=p["A"], b=p["B"], q=p["Q"], r=p["R"], qf=p["Qf"],
                          half_width=p["noise_half_width"])


def build_inventory(cfg: dict) -> inventory.InventoryParams:
    p = cfg["problem"]
    return inventory.InventoryParams(horizon=p["horizon"], order_cost=p["order_cost"],
                                     backorder_cost=p["backorder_cost"], holding_cost=p["holding_cost"],
                                     demand_max=p["demand_max"], x1=p["x1"])


def build_problem(cfg: dict) -> ProblemInstance:
    g = cfg["grids"]
    if cfg["problem"]["kind"] == "lqr":
        return lqr.lqr_problem(build_lqr(cfg), g["lo"], g["hi"], g["nodes"], g["u_lo"], g["u_hi"],
                               x1=cfg["problem"]["x1"])
    return inventory.inventory_problem(build_inventory(cfg), g["spacing"])


def _plan(cfg) -> SeedPlan:
    return SeedPlan(cfg["mc"]["seed"], cfg["problem"]["horizon"])


def _true_solution(cfg, problem) -> dp.DPSolution:
    q = cfg["quadrature"]
    sol = dp.backward_induction(problem, "true", expectation=q["expectation"], quad_nodes=q["nodes"])
    n_out = sum(sol.extrapolated.values())
    if n_out:
        log.warning("true DP: %d successor evaluations extrapolated beyond the grids", n_out)
    return sol


# --------------------------------------------------------------------------
# CSV helpers
# --------------------------------------------------------------------------

def _f(v) -> str:
    return repr(float(v))


def _write(path, header, rows) -> str:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path


def _outdir(cfg) -> str:
    d = cfg["output"]["directory"]
    os.makedirs(d, exist_ok=True)
    return d


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------

def cmd_lqr_analytic(cfg: dict) -> list[str]:
    if cfg["problem"]["kind"] != "lqr":
        raise ConfigurationError("lqr-analytic needs problem.kind = 'lqr'")
    model = build_lqr(cfg)
    ric = lqr.riccati_backward(model)
    law = lqr.asymptotic_recursion(ric)
    T = model.horizon
    out = _outdir(cfg)
    files = []
    rows = []
    for t in range(1, T + 2):
        K = ric.K[t - 1][0, 0] if t <= T else float("nan")
        M = ric.M[t - 1][0, 0] if t <= T else float("nan")
        rows.append([t, _f(ric.P[t - 1][0, 0]), _f(K), _f(M), _f(ric.q[t - 1])])
    files.append(_write(os.path.join(out, "riccati.csv"), ["t", "P", "K", "M", "q"], rows))
    rows = [[t, _f(law.S[t - 1][0, 0]), _f(law.c[t - 1, 0]), _f(law.v[t - 1])] for t in range(1, T + 2)]
    files.append(_write(os.path.join(out, "asymlaw.csv"), ["t", "S", "c", "v"], rows))
    rows = []
    for t in range(1, T + 1):
        for x in cfg["output"]["curve_states"]:
            asym = lqr.asym_variance_eval(law, t, x)
            prop, curr = lqr.variance_decomposition(law, ric, t, x)
            rows.append([t, _f(x), _f(asym), _f(prop), _f(curr)])
    files.append(_write(os.path.join(out, "variance_curves.csv"),
                        ["t", "x", "sigma2_asym", "sigma2_prop", "sigma2_curr"], rows))
    return files


def _replication_config(cfg: dict, problem: ProblemInstance | None) -> mc.ReplicationConfig:
    m = cfg["mc"]
    kind = cfg["problem"]["kind"]
    engine = m["engine"]
    if engine == "closed-form" and kind != "lqr":
        raise ConfigurationError("the closed-form engine needs problem.kind = 'lqr'")
    return mc.ReplicationConfig(
        N=m["N"], R=m["R"], states=tuple(m["states"]), stages=tuple(m["stages"]), plan=_plan(cfg),
        engine=engine, lqr_model=build_lqr(cfg) if kind == "lqr" else None,
        problem=problem if engine == "grid" else None, expectation=cfg["quadrature"]["expectation"])


def cmd_simulate(cfg: dict) -> list[str]:
    kind = cfg["problem"]["kind"]
    problem = build_problem(cfg) if cfg["mc"]["engine"] == "grid" else None
    rc = _replication_config(cfg, problem)
    errors = mc.run_replications(rc, workers=cfg["mc"]["workers"])
    summary = mc.summarize(errors)
    out = _outdir(cfg)
    files = []
    path = os.path.join(out, "errors.csv")
    mc.write_errors(errors, path)
    files.append(path)
    files += mc.write_summary(summary, out)
    if kind == "lqr":
        law = lqr.asymptotic_recursion(lqr.riccati_backward(rc.lqr_model))
        analytic = {c: lqr.asym_variance_eval(law, c[0], c[1]) for c in rc.cells}
    else:
        sol = _true_solution(cfg, problem)
        gam = dp.propagate_covariance(problem, sol, cov_nodes=cfg["grids"]["cov_nodes"])
        analytic = {c: float(gam[c[0]].variance(c[1])) for c in rc.cells}
    rows = []
    for c in rc.cells:
        emp = summary[c].variance
        a = analytic[c]
        ratio = emp / a if a > 0 else float("nan")
        rows.append([c[0], _f(c[1]), _f(emp), _f(a), _f(ratio)])
    files.append(_write(os.path.join(out, "compare.csv"),
                        ["t", "x", "empirical_variance", "analytic_variance", "ratio"], rows))
    return files


def cmd_covariance(cfg: dict) -> list[str]:
    problem = build_problem(cfg)
    sol = _true_solution(cfg, problem)
    gam = dp.propagate_covariance(problem, sol, cov_nodes=cfg["grids"]["cov_nodes"])
    T = problem.horizon
    out = _outdir(cfg)
    files = []
    for t in cfg["output"]["gamma_stages"]:
        G = gam[t]
        x = G.nodes
        n = x.size
        ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        rows = zip(map(_f, x[ii.ravel()]), map(_f, x[jj.ravel()]), map(_f, G.gamma.ravel()))
        files.append(_write(os.path.join(out, f"gamma_t{t}.csv"), ["node_i", "node_j", "value"], rows))
    rows = []
    flagged = 0
    for t in range(1, T + 1):
        for x in cfg["output"]["curve_states"]:
            s = dp.variance_decompose(problem, sol, gam[t + 1], t, x)
            flagged += s.extrapolated
            rows.append([t, _f(x), _f(s.current), _f(s.propagated), _f(s.total)])
    if flagged:
        log.warning("%d decomposition points needed extrapolation beyond the grids", flagged)
    files.append(_write(os.path.join(out, "decomp.csv"),
                        ["t", "x", "sigma2_curr", "sigma2_prop", "sigma2_asym"], rows))
    return files


def cmd_optimal_value(cfg: dict) -> list[str]:
    problem = build_problem(cfg)
    sol = _true_solution(cfg, problem)
    paths = cfg["mc"]["paths"]
    est = dp.optimal_value_variance(problem, sol, paths, _plan(cfg))
    x1 = problem.x1
    if cfg["problem"]["kind"] == "lqr":
        law = lqr.asymptotic_recursion(lqr.riccati_backward(build_lqr(cfg)))
        analytic = lqr.asym_variance_eval(law, 1, x1)
    else:
        gam = dp.propagate_covariance(problem, sol, cov_nodes=cfg["grids"]["cov_nodes"])
        analytic = float(gam[1].variance(x1))
    out = _outdir(cfg)
    return [_write(os.path.join(out, "optval.csv"),
                   ["paths", "trajectory_variance", "ci_halfwidth", "analytic_gamma1"],
                   [[paths, _f(est.variance), _f(est.halfwidth), _f(analytic)]])]


COMMANDS = {
    "lqr-analytic": cmd_lqr_analytic,
    "simulate": cmd_simulate,
    "covariance": cmd_covariance,
    "optimal-value": cmd_optimal_value,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="saaclt", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", help="JSON run configuration (merged over --preset)")
    ap.add_argument("--preset", choices=PRESETS)
    ap.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    ap.add_argument("--workers", type=int, help="worker processes for replications")
    ap.add_argument("--out", help="output directory")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def _fail(exc: BaseException) -> int:
    print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
    return 2


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        files = COMMANDS[args.command](cfg)
    except (SaaCltError, OSError) as exc:
        return _fail(exc)
    for f in files:
        print(f)
    return 0


if __name__ == "__main__":
    sys.exit(main())
