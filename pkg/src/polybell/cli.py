"""Command-line interface: ``polybell bound|seesaw|visibility|evaluate|expr``."""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .analysis import CountData, evaluate_counts, visibility_threshold, white_noise_correlations
from .core import BellExpression, build_named, evaluate
from .errors import PolybellError
from .models import correlations_of, seesaw
from .ncalg import DEFAULT_LEVELS, DEFAULT_MAX_DIM, choose_level, restricted_bound
from .polytope import (enumerate_restrictions, local_bound, nonsignaling_optimum,
                       restriction_orbits)

NAMES = ("I3", "I4", "CH", "VB", "VBprime", "AN")


def _load_expr(args) -> BellExpression:
    if args.expr_file:
        expr = BellExpression.from_json(Path(args.expr_file).read_text(encoding="utf-8"))
        if not expr.name:
            expr = BellExpression(expr.scenario, expr.constant, expr.joint_terms, expr.a_marginal_terms,
                                  expr.b_marginal_terms, name=Path(args.expr_file).stem)
        return expr
    return build_named(args.expr)


def _full_n(expr: BellExpression) -> int:
    return max(expr.scenario.a_outcomes + expr.scenario.b_outcomes)


def _sdp_bound(expr: BellExpression, n: int, args, report: dict) -> dict:
    level = args.level or DEFAULT_LEVELS.get(expr.name, "2")
    used, fell_back = choose_level(expr, n, level, None if args.heavy else DEFAULT_MAX_DIM)
    res = restricted_bound(expr, n, used, args.direction, symmetry=args.symmetry,
                           tol=args.tol, jobs=args.jobs)
    out = res.to_dict()
    out["requested_level"] = str(level)
    if fell_back:
        out["level_fallback"] = True
        report["notes"].append(f"level {level} exceeds the size cap; used level {used} "
                               f"(an upper bound no tighter than level {level}); pass --heavy to force")
    return out


def _bound(args, report: dict) -> dict:
    expr = _load_expr(args)
    report["config"]["expression"] = expr.name
    kind = args.bound_class
    if kind == "local":
        lb = local_bound(expr, args.direction)
        return {"class": "local", "value": lb.value, "witness": lb.strategy.to_dict()}
    if kind == "ns":
        fam = None if args.n is None else enumerate_restrictions(expr.scenario, args.n)
        opt = nonsignaling_optimum(expr, fam, args.direction)
        return {"class": "ns", "value": opt.value, "n": args.n,
                "restriction": None if opt.restriction is None else opt.restriction.to_dict()}
    n = _full_n(expr) if kind == "quantum" or args.n is None else args.n
    out = _sdp_bound(expr, n, args, report)
    out["class"] = kind
    return out


def _seesaw(args, report: dict) -> dict:
    expr = _load_expr(args)
    report["config"]["expression"] = expr.name
    d_a = args.dim_a or args.dim
    d_b = args.dim_b or args.dim
    if args.n is None:
        family = [None]
    elif args.symmetry:
        family = [o.representative for o in restriction_orbits(expr, args.n)]
    else:
        family = enumerate_restrictions(expr.scenario, args.n)
    best = None
    for r in family:
        res = seesaw(expr, d_a, d_b, restriction=r, restarts=args.restarts, seed=args.seed,
                     tol=args.tol, jobs=args.jobs)
        if best is None or res.value > best.value:
            best = res
    out = best.to_dict()
    if not args.models:
        out.pop("model")
    return out


def _visibility(args, report: dict) -> dict:
    expr = _load_expr(args)
    report["config"]["expression"] = expr.name
    n = args.n if args.n is not None else 2
    bound = _sdp_bound(expr, n, args, report)
    target = seesaw(expr, args.dim_a or args.dim, args.dim_b or args.dim, restarts=args.restarts,
                    seed=args.seed, tol=args.tol, jobs=args.jobs)
    vis = visibility_threshold(expr, correlations_of(target.model), white_noise_correlations(target.model),
                               bound["certified"], bound_name=f"{n}-outcome")
    return {"bound": {k: v for k, v in bound.items() if k != "breakdown"},
            "target": target.value, "white": vis.white, "threshold": vis.threshold,
            "orientation": vis.orientation}


def _evaluate(args, report: dict) -> dict:
    expr = _load_expr(args)
    report["config"]["expression"] = expr.name
    data = CountData.from_csv(args.counts, expr.scenario)
    ev = evaluate_counts(expr, data)
    out: dict[str, Any] = {"value": ev.value, "sigma": ev.sigma}
    if args.bound is not None:
        bound = args.bound
        out["bound"] = {"class": "given", "value": bound}
    else:
        sub = argparse.Namespace(**vars(args))
        sub.bound_class = args.bound_class
        b = _bound(sub, report)
        bound = b.get("certified", b["value"])
        out["bound"] = {k: v for k, v in b.items() if k != "breakdown"}
    out["violation_sigmas"] = ev.violation_sigmas(bound, args.direction)
    return out


def _expr(args, report: dict) -> dict:
    expr = build_named(args.name)
    text = expr.to_json()
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
        return {"name": expr.name, "written": str(args.out), "terms": len(expr.joint_terms)}
    return {"name": expr.name, "expression": json.loads(text)}


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="polybell", description="Bounds on bipartite Bell expressions "
                                "for local, non-signaling, quantum and outcome-restricted models.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, expr=True):
        if expr:
            g = sp.add_mutually_exclusive_group(required=True)
            g.add_argument("--expr", choices=NAMES, help="built-in expression")
            g.add_argument("--expr-file", help="expression JSON file")
        sp.add_argument("--json", action="store_true", help="full-precision JSON report")
        sp.add_argument("--direction", choices=("max", "min"), default="max")
        sp.add_argument("--level", help="relaxation level, e.g. 2 or 1+AB (default per expression)")
        sp.add_argument("--n", type=int, help="maximal number of non-trivial outcomes per setting")
        sp.add_argument("--tol", type=float, help="SDP tolerance")
        sp.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
        sp.add_argument("--symmetry", action="store_true",
                        help="solve one restriction per symmetry class of the expression")
        sp.add_argument("--heavy", action="store_true", help="do not cap the moment-matrix size")

    def search(sp):
        sp.add_argument("--dim", type=int, help="local dimension of both parties (default: max outcomes)")
        sp.add_argument("--dim-a", type=int)
        sp.add_argument("--dim-b", type=int)
        sp.add_argument("--restarts", type=int, default=10)
        sp.add_argument("--seed", type=int, default=0)

    b = sub.add_parser("bound", help="local, non-signaling, quantum or restricted bound")
    common(b)
    b.add_argument("--class", dest="bound_class", choices=("local", "ns", "quantum", "restricted"),
                   default="quantum")

    s = sub.add_parser("seesaw", help="see-saw lower bound with an explicit model")
    common(s)
    search(s)
    s.add_argument("--models", action="store_true", help="include the model in the report")

    v = sub.add_parser("visibility", help="white-noise visibility threshold against a restricted bound")
    common(v)
    search(v)

    e = sub.add_parser("evaluate", help="value and significance of count data")
    common(e)
    e.add_argument("--counts", required=True, help="CSV with a_setting,b_setting,a_outcome,b_outcome,count")
    e.add_argument("--bound-class", choices=("local", "ns", "quantum", "restricted"), default="restricted")
    e.add_argument("--bound", type=float, help="compare against this value instead of computing a bound")

    x = sub.add_parser("expr", help="dump a built-in expression as JSON")
    x.add_argument("--name", choices=NAMES, required=True)
    x.add_argument("--out", help="output file (default: standard output)")
    x.add_argument("--json", action="store_true")
    return p


_COMMANDS = {"bound": _bound, "seesaw": _seesaw, "visibility": _visibility,
             "evaluate": _evaluate, "expr": _expr}


def _fmt(x: Any) -> str:
    if isinstance(x, float):
        return "inf" if math.isinf(x) else f"{x:.6g}"
    return str(x)


def _human(report: dict) -> str:
    lines = [f"{report['command']}: {'ok' if report['ok'] else 'FAILED'}"]
    res = report.get("results") or {}
    for key, val in res.items():
        if key in ("breakdown", "model", "expression", "history"):
            continue
        if isinstance(val, dict):
            inner = ", ".join(f"{k}={_fmt(v)}" for k, v in val.items()
                              if not isinstance(v, dict) and len(str(v)) <= 80)
            lines.append(f"  {key}: {inner}")
        elif not isinstance(val, list):
            lines.append(f"  {key}: {_fmt(val)}")
    if "breakdown" in res:
        best = sorted(res["breakdown"], key=lambda r: -r["value"] if res.get("direction") != "min" else r["value"])
        for r in best[:5]:
            sup = r["restriction"]
            lines.append(f"    {sup['a']} {sup['b']}: {_fmt(r['value'])} ({r['status']})")
        if len(best) > 5:
            lines.append(f"    ... {len(best) - 5} more restrictions")
    for note in report["notes"]:
        lines.append(f"  note: {note}")
    if report.get("error"):
        lines.append(f"  error: {report['error']}")
    lines.append(f"  time: {report['timing']['seconds']:.3g} s")
    return "\n".join(lines)


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    if isinstance(x, np.integer):
        return int(x)
    return x


def run(argv: Sequence[str] | None = None) -> int:
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:  # usage errors, --help, --version
        return int(exc.code or 0)
    config = {k: v for k, v in vars(args).items() if k not in ("json",)}
    report: dict[str, Any] = {"command": args.command, "config": config, "results": None,
                              "notes": [], "ok": False}
    t0 = time.perf_counter()
    code = 0
    try:
        report["results"] = _COMMANDS[args.command](args, report)
        report["ok"] = True
    except (PolybellError, ValueError, OSError, np.linalg.LinAlgError) as exc:
        report["error"] = f"{type(exc).__name__}: {exc}"
        code = 1
    report["timing"] = {"seconds": time.perf_counter() - t0}
    if args.json or code:
        print(json.dumps(_jsonable(report), indent=1))
    else:
        print(_human(report))
    return code


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
