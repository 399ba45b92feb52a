"""Command-line front end: ``qrestrict analyze|verify|classify|plot``."""

from __future__ import annotations

import argparse
import json
import sys
from fractions import Fraction
from pathlib import Path

from . import experiments
from .invariants import PreconditionError
from .numerics import BudgetError, ResolutionError
from .plotting import PlotInputError, predicted_slopes_from_summary, read_rows, region_figure, scaling_figure
from .quadform_core import DimensionError, MetadataError, SurfaceSyntaxError, parse_surface
from .report import SCHEMA, build_analysis, classification_report, dumps, provenance

EXIT_OK, EXIT_INPUT, EXIT_BUDGET, EXIT_VERIFY = 0, 2, 3, 4


class InputError(Exception):
    pass


def _floats(text: str) -> list[float]:
    try:
        return [float(Fraction(v.strip())) for v in text.split(",") if v.strip()]
    except (ValueError, ZeroDivisionError) as exc:
        raise InputError(f"bad number list: {text!r}") from exc


def _fractions(text: str) -> list[Fraction]:
    try:
        return [Fraction(v.strip()) for v in text.split(",") if v.strip()]
    except (ValueError, ZeroDivisionError) as exc:
        raise InputError(f"bad number list: {text!r}") from exc


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise InputError(f"bad integer list: {text!r}") from exc


def _load_spec(path: str):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from exc
    return parse_surface(text)


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _error_json(kind: str, exc: Exception, code: int) -> str:
    err = {"type": kind, "message": str(exc), "exit_code": code}
    for attr in ("line", "col", "check", "cap", "required"):
        if hasattr(exc, attr):
            err[attr] = getattr(exc, attr)
    return dumps({"schema": SCHEMA, "error": err}) + "\n"


def cmd_analyze(args) -> int:
    spec = _load_spec(args.spec)
    report = build_analysis(spec, seed=args.seed, budget=args.budget)
    _emit(dumps(report) + "\n", args.out)
    return EXIT_OK


def cmd_classify(args) -> int:
    spec = _load_spec(args.spec)
    if spec.d != 2 or spec.n != 2:
        raise InputError(f"classification needs d=n=2, got d={spec.d}, n={spec.n}")
    _emit(dumps(classification_report(spec)) + "\n", args.out)
    return EXIT_OK


def _run_experiment(args, spec):
    exp = args.experiment
    common = dict(threads=args.threads, nodes=args.nodes, refine=not args.no_refine, jitter=args.jitter)
    if exp == "dp-scaling":
        box = _floats(args.box) if args.box else [0.5] + [0.0] * (spec.d - 1)
        return experiments.dp_scaling(spec, _floats(args.R), _floats(args.p or "4.5"), box, predict=args.predict, **common)
    if exp == "bd-sweep":
        Rs = _floats(args.R)
        if len(Rs) != 1:
            raise InputError("bd-sweep takes a single --R")
        return experiments.bd_sweep(
            spec,
            Rs[0],
            _floats(args.mu or "4,8,16,32"),
            _floats(args.p or "4")[0],
            _ints(args.sep_axes or "1"),
            separation=args.separation,
            expect=args.expect,
            **common,
        )
    if exp == "sharpness":
        if not args.t:
            raise InputError("sharpness needs --t")
        qs = _floats(args.q) if args.q else [4.0, 4.5, 5.0, 5.5, 6.0]
        return experiments.sharpness(spec, _fractions(args.t), _floats(args.R), qs, **common)
    if exp == "tube":
        if not args.t:
            raise InputError("tube needs --t")
        return experiments.tube(spec, _fractions(args.t), _floats(args.R), samples=args.samples, seed=args.seed)
    raise InputError(f"unknown experiment {exp!r}")


def cmd_verify(args) -> int:
    spec = _load_spec(args.spec)
    result = _run_experiment(args, spec)
    csv_text = result.csv_text()
    summary = {
        "schema": SCHEMA,
        "experiment": result.name,
        "surface": args.spec and Path(args.spec).name,
        "summary": result.summary,
        "failed": result.failed,
        "provenance": provenance(args.seed, {"nodes": args.nodes, "refine": not args.no_refine}),
    }
    if args.out:
        out = Path(args.out)
        out.write_text(csv_text)
        out.with_suffix(".json").write_text(dumps(summary) + "\n")
        if result.name != "tube":
            _, rows = read_rows(out)
            scaling_figure(rows, out.with_suffix(".svg"), predicted_slopes_from_summary(result.summary), result.name)
    else:
        sys.stdout.write(csv_text)
    if result.failed and not args.no_fail_exit:
        return EXIT_VERIFY
    return EXIT_OK


def cmd_plot(args) -> int:
    src = Path(args.spec)
    out = Path(args.out) if args.out else src.with_suffix(".svg")
    if args.kind == "region":
        try:
            data = json.loads(src.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read an analysis report from {src}") from exc
        rng = (data.get("exponents") or {}).get("predicted_range")
        if not rng:
            raise InputError("the report has no predicted range")
        region_figure(rng["region_vertices"], out, rng.get("label", ""))
        return EXIT_OK
    try:
        _, rows = read_rows(src)
    except OSError as exc:
        raise InputError(f"cannot read {src}") from exc
    predicted = None
    side = src.with_suffix(".json")
    if side.exists():
        predicted = predicted_slopes_from_summary(json.loads(side.read_text()).get("summary", {}))
    scaling_figure(rows, out, predicted)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qrestrict", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("spec", help="surface spec file (or CSV/JSON for plot)")
        p.add_argument("--out", help="output file")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--threads", type=int, default=None, help="worker threads (overrides QRESTRICT_THREADS)")
        p.add_argument("--no-fail-exit", action="store_true", help="exit 0 even when a verification row fails")

    a = sub.add_parser("analyze", help="symbolic analysis report (JSON)")
    common(a)
    a.add_argument("--budget", type=int, default=4096, help="search budget for the d-invariants")
    a.set_defaults(func=cmd_analyze)

    v = sub.add_parser("verify", help="numerical verification run (CSV + JSON summary + SVG)")
    common(v)
    v.add_argument("--experiment", "-e", required=True, choices=["dp-scaling", "bd-sweep", "sharpness", "tube"])
    v.add_argument("--R", default="16,32,64,128,256", help="comma-separated radii")
    v.add_argument("--p", help="comma-separated Lebesgue exponents")
    v.add_argument("--q", help="comma-separated q values (sharpness)")
    v.add_argument("--t", help="box exponent vector t, e.g. 1,0 or 1/2,0")
    v.add_argument("--box", help="dp-scaling box exponents e_j (side R^-e_j)")
    v.add_argument("--mu", help="bd-sweep transversality values")
    v.add_argument("--sep-axes", help="bd-sweep separated axes (1-based)")
    v.add_argument("--separation", type=float, default=3.0, help="bd-sweep separation factor c in |a-b| >= c/mu")
    v.add_argument("--expect", choices=["bounded", "growth"], default="bounded")
    v.add_argument("--predict", help="slope bound as an expression in p, e.g. 2/p-1/2")
    v.add_argument("--nodes", type=int, default=48, help="quadrature nodes per graded axis")
    v.add_argument("--no-refine", action="store_true", help="skip the refinement rerun")
    v.add_argument("--jitter", type=int, default=None, help="seed for jittered nodes (midpoints when absent)")
    v.add_argument("--samples", type=int, default=100, help="tube sample count")
    v.set_defaults(func=cmd_verify)

    c = sub.add_parser("classify", help="normal form of a pair of binary forms")
    common(c)
    c.set_defaults(func=cmd_classify)

    p = sub.add_parser("plot", help="render a scaling CSV or a region from an analysis report")
    common(p)
    p.add_argument("--kind", choices=["scaling", "region"], default="scaling")
    p.set_defaults(func=cmd_plot)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SurfaceSyntaxError as exc:
        sys.stdout.write(_error_json("syntax", exc, EXIT_INPUT))
        return EXIT_INPUT
    except (MetadataError, DimensionError, PreconditionError, InputError, PlotInputError) as exc:
        sys.stdout.write(_error_json(type(exc).__name__, exc, EXIT_INPUT))
        return EXIT_INPUT
    except BudgetError as exc:
        sys.stdout.write(_error_json("budget", exc, EXIT_BUDGET))
        return EXIT_BUDGET
    except (ResolutionError, ValueError) as exc:
        sys.stdout.write(_error_json("input", exc, EXIT_INPUT))
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
