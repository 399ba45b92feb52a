"""Analysis reports and their JSON serialization."""

from __future__ import annotations

import datetime as _dt
import math
import os
from fractions import Fraction
from typing import Any

import numpy as np

from . import __version__
from .exponents import (
    admissible_region_vertices,
    case_parameters,
    conjecture_flags,
    predicted_range,
    range_for_class,
    sharpness_optimizer,
)
from .invariants import (
    PreconditionError,
    classify_2x2,
    cm_check_3_2,
    d_invariant,
    hurwitz_radon,
    min_rank_pencil,
)
from .jacobian import all_selections, best_selection
from .quadform_core import SurfaceSpec, nv, serialize_surface

SCHEMA = "qrestrict-report/1"


# ---------------------------------------------------------------------------
# serialization


def _fmt_float(v: float) -> str:
    if math.isnan(v):
        return '"NaN"'
    if math.isinf(v):
        return '"Infinity"' if v > 0 else '"-Infinity"'
    return format(v, ".17g")


def _quote(s: str) -> str:
    import json

    return json.dumps(s, ensure_ascii=False)


def dumps(obj: Any, indent: int = 2, _level: int = 0) -> str:
    """JSON text with floats at 17 significant digits and rationals as "num/den"."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if obj is None:
        return "null"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, Fraction):
        return _quote(f"{obj.numerator}/{obj.denominator}")
    if isinstance(obj, (float, np.floating)):
        return _fmt_float(float(obj))
    if isinstance(obj, str):
        return _quote(obj)
    if isinstance(obj, np.ndarray):
        return dumps(obj.tolist(), indent, _level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{_quote(str(k))}: {dumps(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple, set, frozenset)):
        seq = sorted(obj) if isinstance(obj, (set, frozenset)) else list(obj)
        if not seq:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple)) for v in seq):
            return "[" + ", ".join(dumps(v, indent, _level + 1) for v in seq) + "]"
        return "[\n" + ",\n".join(pad + dumps(v, indent, _level + 1) for v in seq) + "\n" + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def provenance(seed: int, budgets: dict) -> dict:
    """Run metadata; the timestamp comes from SOURCE_DATE_EPOCH so reruns stay byte-identical."""
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    stamp = None
    if epoch:
        try:
            stamp = _dt.datetime.fromtimestamp(int(epoch), _dt.timezone.utc).isoformat()
        except ValueError:
            stamp = None
    return {"seed": seed, "budgets": budgets, "version": __version__, "timestamp": stamp}


def _matrix(m) -> list:
    return [[v if isinstance(v, Fraction) else float(v) for v in row] for row in m]


# ---------------------------------------------------------------------------
# analysis


def invariants_block(spec: SurfaceSpec, seed: int = 0, budget: int = 4096) -> dict:
    Q = spec.quad
    block: dict[str, Any] = {"nv": {"value": nv(Q), "exact": True}}
    pr = min_rank_pencil(Q, seed=seed)
    block["pencil_min_rank"] = {"value": pr.rank, "exact": pr.exact, "witness": [float(v) for v in pr.witness]}
    table = []
    for dp in range(1, Q.d + 1):
        for np_ in range(1, Q.n + 1):
            r = d_invariant(Q, dp, np_, budget=budget, seed=seed)
            table.append(
                {
                    "d_sub": dp,
                    "n_sub": np_,
                    "value": r.value,
                    "exact": r.exact,
                    "lower_bound": r.lower_bound,
                    "certificate_exact": r.certificate_exact,
                }
            )
    block["d_table"] = table
    block["hurwitz_radon"] = {"d": Q.d, "rho": hurwitz_radon(Q.d), "exact": True}
    if Q.d == 3 and Q.n == 2:
        v = cm_check_3_2(Q)
        block["cm"] = {
            "satisfied": v.satisfied,
            "method": v.method,
            "exact": isinstance(v.satisfied, bool),
            "gamma_scan": [list(row) for row in v.gamma_scan],
        }
    return block


def jacobian_block(spec: SurfaceSpec) -> dict | None:
    Q = spec.quad
    if Q.d < Q.n:
        return {"note": "fewer variables than forms; no selection exists"}
    rows = []
    for a in all_selections(Q):
        rows.append(
            {
                "selection": list(a.selection.indices),
                "jacobian": a.poly.to_str(),
                "verdict": a.verdict.kind,
                "w": list(a.verdict.w) if a.verdict.w is not None else None,
                "max_power": a.max_power,
                "bilinear_p": a.bilinear_p,
            }
        )
    best = best_selection(Q)
    usable = best.max_power is not None
    return {
        "selections": rows,
        "best_selection": list(best.selection.indices) if usable else None,
        "bilinear_p": best.bilinear_p if usable else None,
        "all_identically_zero": all(r["verdict"] == "IdenticallyZero" for r in rows),
        "exact": True,
    }


def _range_dict(rng) -> dict:
    return {
        "label": rng.label,
        "q_critical": rng.q_critical,
        "constraints": [{"a": a, "b": b, "c": c} for a, b, c in rng.constraints],
        "description": rng.describe(),
        "sharp_up_to_endpoint": rng.sharp_up_to_endpoint,
        "region_vertices": [[u, v] for u, v in admissible_region_vertices(rng)],
        "region_vertices_diagonal": [[u, v] for u, v in admissible_region_vertices(rng, diagonal=True)],
        "exact": True,
    }


def exponents_block(spec: SurfaceSpec, jac: dict | None) -> tuple[dict | None, list[str]]:
    Q = spec.quad
    notes: list[str] = list(conjecture_flags(Q))
    if spec.meta is not None:
        params = case_parameters(spec)
        block: dict[str, Any] = {
            "case": params.case,
            "lambda": list(params.lam),
            "w": list(params.w),
            "w1": params.w1,
            "w_lambda": params.w_lam,
            "theta": params.theta,
            "validity": params.validity,
            "violations": params.violations,
        }
        if params.validity:
            block["predicted_range"] = _range_dict(predicted_range(params))
        if any(params.w) and len(params.w) <= 16:
            value, t = sharpness_optimizer(params.w)
            block["sharpness_lower_bound"] = {"q": value, "t": list(t), "exact": True}
        return block, notes
    if Q.d == 2 and Q.n == 2:
        try:
            c = classify_2x2(Q)
        except PreconditionError as exc:
            notes.append(f"classification unavailable: {exc}")
            return None, notes
        rng = range_for_class(c.cls)
        if rng is None:
            notes.append(f"class {c.cls}: no range is predicted")
            return None, notes
        return {"class": c.cls, "predicted_range": _range_dict(rng)}, notes
    if jac is not None and jac.get("all_identically_zero"):
        notes.append("every Jacobian selection vanishes identically; the monomial method does not apply and no range is predicted")
        return None, notes
    notes.append("no structural metadata; only the bilinear exponent from the Jacobian is reported")
    return None, notes


def build_analysis(spec: SurfaceSpec, seed: int = 0, budget: int = 4096) -> dict:
    jac = jacobian_block(spec)
    expo, notes = exponents_block(spec, jac)
    report: dict[str, Any] = {
        "schema": SCHEMA,
        "surface": {"text": serialize_surface(spec), "d": spec.d, "n": spec.n, "warnings": list(spec.warnings)},
        "invariants": invariants_block(spec, seed, budget),
        "jacobian": jac,
    }
    if expo is not None:
        report["exponents"] = expo
    report["notes"] = notes
    report["provenance"] = provenance(seed, {"d_invariant_budget": budget})
    return report


def classification_report(spec: SurfaceSpec) -> dict:
    c = classify_2x2(spec.quad)
    rng = range_for_class(c.cls)
    out: dict[str, Any] = {
        "schema": SCHEMA,
        "surface": {"text": serialize_surface(spec)},
        "class": c.cls,
        "invariants": c.invariants,
        "residual": c.residual,
        "tolerance": c.tolerance,
        "transforms": None,
    }
    if c.transforms is not None:
        out["transforms"] = {"M1": _matrix(c.transforms[0]), "M2": _matrix(c.transforms[1])}
    out["predicted_range"] = _range_dict(rng) if rng is not None else None
    return out
