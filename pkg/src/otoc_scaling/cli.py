"""Command-line front end: ``otoc run|validate|report|clean-cache``."""

from __future__ import annotations

import argparse
import json
import logging
import pathlib
import sys

from .runner import (CACHE_ENV, EXIT_INVALID, EXIT_OK, PlanError, clean_cache, execute_plan,
                     load_plan)


def _fmt(value):
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def format_report(report: dict) -> str:
    """Human-readable summary of the fit results in a report.json."""
    kind = report.get("plan_kind", "?")
    out = [f"plan kind: {kind}"]
    if kind == "TminScan":
        for p in report["points"]:
            out.append(f"  L={p['L']:<6} t_min={_fmt(p['t_min'])}  F_min={_fmt(p['F_min'])}")
        for f in report["fits"]:
            out.append(f"  lam={_fmt(f['lam'])}: z = {_fmt(f['z'])} +/- {_fmt(f['stderr'])}")
    elif kind == "FminScan":
        out.append(f"  nu = {_fmt(report['nu'])}  (collapse cost {_fmt(report['cost'])})")
        for nu, cost in report.get("cost_at", {}).items():
            out.append(f"  cost at nu={nu}: {_fmt(cost)}")
    elif kind == "InvarianceCheck":
        out.append(f"  mode {report['mode']}, b = {report['b']}")
        out.append(f"  collapse cost: {_fmt(report['exponents']['cost'])}")
        if "contrast" in report:
            out.append(f"  contrast cost: {_fmt(report['contrast']['cost'])}"
                       f"  (ratio {_fmt(report['contrast_ratio'])})")
    elif kind in ("LightCone", "ButterflyForms"):
        out.append(f"  threshold epsilon = {report['epsilon']}")
        for c in report["cones"]:
            head = f"  L={c['L']} T={_fmt(c['T'])} lam={_fmt(c['lam'])}"
            if "fit" in c:
                fit = c["fit"]
                out.append(f"{head}: v_B = {_fmt(fit['v_B'])}, rel. residual "
                           f"{_fmt(fit['relative_residual'])}")
            else:
                out.append(f"{head}: {c.get('error')}")
        for chk in report.get("checks", []):
            verdict = "pass" if chk["passed"] else "FAIL"
            slope = "" if chk["slope"] is None else f" slope {_fmt(chk['slope'])} vs {_fmt(chk['expected_slope'])}"
            out.append(f"  [{verdict}] {chk['form']}{slope}")
    elif kind == "LocateQCP":
        out.append(f"  lambda_c = {_fmt(report['lambda_c'])} +/- {_fmt(report['uncertainty'])}")
        for a, b, lam in report["crossings"]:
            out.append(f"  crossing L={a}/{b}: {_fmt(lam)}")
    else:
        for s in report.get("series", []):
            out.append(f"  L={s['L']} lam={_fmt(s['lam'])} T={s['T']} r={s['r']}: "
                       f"max|F| = {_fmt(s['max_abs_F'])}")
    return "\n".join(out)


def _cmd_validate(args):
    try:
        plan = load_plan(args.plan)
    except PlanError as exc:
        print(f"invalid plan: {exc}", file=sys.stderr)
        return EXIT_INVALID
    print(f"ok: {plan.kind} plan, output -> {plan.output}")
    return EXIT_OK


def _cmd_run(args):
    try:
        plan = load_plan(args.plan)
    except PlanError as exc:
        print(f"invalid plan: {exc}", file=sys.stderr)
        return EXIT_INVALID
    manifest = execute_plan(plan, cache_dir=args.cache_dir, workers=args.workers,
                            use_cache=not args.no_cache)
    print(f"{manifest.status}: {len(manifest.tasks)} task(s), manifest at {plan.output / 'manifest.json'}")
    for name, info in manifest.tasks.items():
        if info["status"] != "ok":
            print(f"  {info['status']}: {name}: {info.get('reason')}", file=sys.stderr)
    if manifest.error:
        print(f"  analysis error: {manifest.error}", file=sys.stderr)
    return manifest.exit_code


def _cmd_report(args):
    path = pathlib.Path(args.manifest)
    manifest = json.loads(path.read_text())
    print(f"status: {manifest['status']}  ({manifest['wall_clock']} s, engine {manifest['engine_version']})")
    rel = manifest["artifacts"].get("report")
    if rel is None:
        print(f"no report: {manifest.get('error')}")
        return EXIT_OK
    print(format_report(json.loads((path.parent / rel).read_text())))
    return EXIT_OK


def _cmd_clean(args):
    print(f"removed {clean_cache(args.cache_dir)}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="otoc", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="execute a plan file")
    p.add_argument("plan")
    p.add_argument("--cache-dir", help=f"spectral cache directory (env {CACHE_ENV})")
    p.add_argument("--workers", type=int, help="parallel tasks (env OTOC_WORKERS)")
    p.add_argument("--no-cache", action="store_true", help="do not read or write the disk cache")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("validate", help="check a plan file without running it")
    p.add_argument("plan")
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("report", help="pretty-print the fit results of a run")
    p.add_argument("manifest")
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("clean-cache", help="delete the spectral cache")
    p.add_argument("--cache-dir")
    p.set_defaults(func=_cmd_clean)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
