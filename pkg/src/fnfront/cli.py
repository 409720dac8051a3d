"""Command line entry point: ``fnfront solve | sweep | audit-fb | report``.

Exit codes: 0 ok, 2 config error, 3 solver error, 4 audit failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import subprocess
import sys
from dataclasses import replace

import numpy as np

from .config import ConfigError, load_config
from .freeboundary import audit_free_boundary
from .geometry import GridError
from .problem import validate_assumptions
from .regularity import epsilon_sweep
from .report import ReportError, render
from .solver import SolutionField, SolverError, solve_epsilon_problem

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_AUDIT = 0, 2, 3, 4

log = logging.getLogger("fnfront")


def git_describe() -> str:
    here = os.path.dirname(os.path.abspath(__file__))
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], cwd=here,
                             capture_output=True, text=True, timeout=10)
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return out.stdout.strip() or "unknown"


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def write_json(path, obj):
    _ensure_dir(path)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")


def _ensure_dir(path):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)


def _file_sha256(path) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def _meta(cfg, kind, assumptions=None, **extra):
    m = {"kind": kind, "config_hash": cfg.hash, "git_describe": git_describe(), "seed": cfg.seed,
         "config": cfg.raw}
    if assumptions is not None:
        m["assumptions"] = assumptions
    m.update(extra)
    return m


def _parse_eps(text):
    return [float(v) for v in text.split(",") if v.strip()]


def _write_field(path, fld):
    _ensure_dir(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fld.to_csv(fh)


def _solve_paths(out):
    """``--out`` names either the field CSV or a directory for both files."""
    out = out or "out"
    if out.endswith(".csv"):
        return out, os.path.join(os.path.dirname(out), "diagnostics.json")
    return os.path.join(out, "field.csv"), os.path.join(out, "diagnostics.json")


def cmd_solve(args, cfg):
    eps = _parse_eps(args.eps)[0] if args.eps else cfg.eps
    assumptions = validate_assumptions(cfg.problem, [eps], seed=cfg.seed).to_dict()
    field_path, diag_path = _solve_paths(args.out)
    try:
        fld = solve_epsilon_problem(cfg.problem, eps, cfg.solver)
    except SolverError as exc:
        write_json(diag_path, {"meta": _meta(cfg, "solve", assumptions), "error": str(exc),
                               "eps": exc.eps, "level": exc.level, "trace": exc.trace})
        log.error("solver error: %s", exc)
        return EXIT_SOLVER
    _write_field(field_path, fld)
    diag = {k: v for k, v in fld.diagnostics.items() if k != "iterates"}
    write_json(diag_path, {"meta": _meta(cfg, "solve", assumptions),
                           "field": {"path": os.path.basename(field_path),
                                     "sha256": _file_sha256(field_path)},
                           "diagnostics": diag})
    return EXIT_OK


def _pde_tolerance(grid, outer_tol):
    return 10 * (grid.h**2 + grid.dt) + 10 * outer_tol


def cmd_sweep(args, cfg):
    eps_list = _parse_eps(args.eps) if args.eps else cfg.eps_list
    threads = args.threads or cfg.threads
    out = args.out or "report.json"
    assumptions = validate_assumptions(cfg.problem, eps_list, seed=cfg.seed).to_dict()
    meta = _meta(cfg, "sweep", assumptions, eps=eps_list)
    try:
        rep, limit, fields = epsilon_sweep(cfg.problem, eps_list, cfg.solver,
                                           margin=cfg.audit.get("margin"), workers=threads)
    except (SolverError, ValueError) as exc:
        write_json(out, {"kind": "sweep", "meta": meta, "error": str(exc),
                         "eps": getattr(exc, "eps", None), "level": getattr(exc, "level", None)})
        log.error("sweep failed: %s", exc)
        return EXIT_SOLVER
    stem = os.path.splitext(out)[0]
    limit_path = stem + "_limit_field.csv"
    _write_field(limit_path, limit)
    if cfg.dump_fields:
        for f in fields:
            _write_field(f"{stem}_field_eps_{f.eps!r}.csv", f)
    reg = rep.to_dict()
    reg["limit"]["pde_residual_tolerance"] = _pde_tolerance(cfg.problem.grid, cfg.solver.outer_tol)
    write_json(out, {"kind": "sweep", "meta": meta, "regularity": reg,
                     "limit_field": {"path": os.path.basename(limit_path),
                                     "sha256": _file_sha256(limit_path), "eps": limit.eps}})
    return EXIT_OK


def cmd_audit_fb(args, cfg):
    if not args.field:
        raise ConfigError("audit-fb needs --field")
    upsilon, eps = None, None
    if args.sweep:
        with open(args.sweep, encoding="utf-8") as fh:
            sw = json.load(fh)
        upsilon = sw["regularity"]["upsilon_hat"]
        eps = sw["regularity"]["limit"]["eps"]
    if args.eps:
        eps = _parse_eps(args.eps)[-1]
    if eps is None:
        eps = cfg.eps_list[-1]
    with open(args.field, encoding="utf-8") as fh:
        fld = SolutionField.from_csv(fh, cfg.problem.grid, eps=eps)
    if upsilon is None:
        upsilon = fld.sup
    t0 = [float(v) for v in args.t0.split(",")] if args.t0 else cfg.audit.get("t0")
    try:
        rep = audit_free_boundary(fld, cfg.problem, upsilon=upsilon, t0_list=t0,
                                  radii=cfg.audit.get("radii"), R=cfg.audit.get("R"),
                                  margin=cfg.audit.get("margin"),
                                  outer_tol=cfg.solver.outer_tol)
    except GridError as exc:
        raise ConfigError(str(exc)) from None
    meta = _meta(cfg, "free_boundary", validate_assumptions(cfg.problem, [eps],
                                                          seed=cfg.seed).to_dict(),
                 field={"path": os.path.basename(args.field), "sha256": _file_sha256(args.field),
                        "eps": eps})
    out = args.out or "fb_report.json"
    write_json(out, {"kind": "free_boundary", "meta": meta, **rep.to_dict()})
    with open(os.path.splitext(out)[0] + "_fb_points.csv", "w", encoding="utf-8") as fh:
        fh.write("t0,k," + ",".join("xy"[: cfg.problem.grid.dim]) + "\n")
        for s in rep.slices:
            for p in s["fb_points"]:
                fh.write(",".join([repr(s["t0"]), str(s["k"])] + [repr(v) for v in p]) + "\n")
    return EXIT_OK if rep.passed else EXIT_AUDIT


def build_parser():
    p = argparse.ArgumentParser(prog="fnfront", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("solve", "sweep", "audit-fb"):
        s = sub.add_parser(name)
        s.add_argument("--config", required=True)
        s.add_argument("--out")
        s.add_argument("--eps", help="comma separated eps values")
        s.add_argument("--seed", type=int)
        s.add_argument("--threads", type=int)
        if name == "audit-fb":
            s.add_argument("--field", required=True)
            s.add_argument("--sweep", help="sweep report supplying eps_min and upsilon_hat")
            s.add_argument("--t0", help="comma separated time levels")
    r = sub.add_parser("report")
    r.add_argument("inputs", nargs="+")
    r.add_argument("--out", default="summary.md")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.command == "report":
        try:
            render(args.inputs, args.out)
        except ReportError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        return EXIT_OK
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed, raw={**cfg.raw, "seed": args.seed})
        handler = {"solve": cmd_solve, "sweep": cmd_sweep, "audit-fb": cmd_audit_fb}
        return handler[args.command](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
