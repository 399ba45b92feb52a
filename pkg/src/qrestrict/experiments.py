"""Verification runs: sweeps over R or mu with per-row pass/fail against a prediction."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Sequence

import numpy as np
import sympy as sp

from .exponents import multiplicities, necessary_q_box
from .numerics import Box, bd_ratio, dp_ratio, scaling_fit, square_function_integrals, tube_locally_constant_check
from .quadform_core import SurfaceSpec

TUBE_FLOOR = 0.25
BOUNDED_FACTOR = 2.0


@dataclass
class ExperimentResult:
    name: str
    header: list[str]
    rows: list[list[Any]]
    summary: dict = field(default_factory=dict)

    @property
    def failed(self) -> bool:
        return any(str(r[-1]).startswith("fail") for r in self.rows)

    def csv_text(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(self.header) + "\n")
        for r in self.rows:
            buf.write(",".join(_cell(v) for v in r) + "\n")
        return buf.getvalue()


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return format(v, ".17g")
    if isinstance(v, Fraction):
        return f"{v.numerator}/{v.denominator}"
    return str(v)


def slope_tolerance(Rs: Sequence[float]) -> float:
    """0.1 with at least five octaves of R, 0.15 otherwise."""
    octaves = math.log2(max(Rs) / min(Rs)) if len(Rs) > 1 else 0.0
    return 0.1 if octaves >= 5 - 1e-9 else 0.15


def parse_prediction(expr: str | None, p: float) -> float | None:
    """Evaluate a slope prediction such as "2/p-1/2" at the given exponent."""
    if expr is None:
        return None
    sym = sp.Symbol("p")
    val = sp.sympify(expr, locals={"p": sym}).subs(sym, sp.Rational(str(p)))
    return float(val)


def _flag(status: str, qerr: bool) -> str:
    return status + ("+qerr" if qerr else "")


def dp_scaling(
    spec: SurfaceSpec,
    Rs: Sequence[float],
    ps: Sequence[float],
    box_exponents: Sequence[float],
    predict: str | None = None,
    jitter: int | None = None,
    threads: int | None = None,
    nodes: int = 48,
    refine: bool = True,
) -> ExperimentResult:
    """Box widths R^{-e_j}; slope of the ratio in R compared with the predicted upper bound."""
    Q = spec.quad
    if len(box_exponents) != Q.d:
        raise ValueError("one box exponent per variable is required")
    header = ["R", "p_or_q"] + [f"mu{j + 1}" for j in range(Q.d)] + ["value", "slope_running", "flag"]
    rows, fits = [], []
    for p in ps:
        pred = parse_prediction(predict, p)
        series = []
        for R in Rs:
            mu = tuple(R ** float(e) for e in box_exponents)
            est = dp_ratio(Q, Box((0.0,) * Q.d, mu), R, p, nodes=nodes, seed=jitter, refine=refine, threads=threads)
            series.append((R, est.value))
            slope, status = None, "pending"
            if len(series) >= 4:
                slope = scaling_fit(series).slope
                if pred is None:
                    status = "none"
                else:
                    status = "pass" if slope <= pred + slope_tolerance([r for r, _ in series]) else "fail"
            rows.append([float(R), float(p)] + [float(m) for m in mu] + [est.value, slope, _flag(status, est.quadrature_error_flag)])
        fit = scaling_fit(series, pred) if len(series) >= 4 else None
        fits.append(
            {
                "p": float(p),
                "slope": fit.slope if fit else None,
                "stderr": fit.stderr if fit else None,
                "predicted_upper": pred,
                "tolerance": slope_tolerance(Rs),
                "passed": (fit.slope <= pred + slope_tolerance(Rs)) if (fit and pred is not None) else None,
            }
        )
    return ExperimentResult("dp-scaling", header, rows, {"box_exponents": list(box_exponents), "fits": fits})


def bd_sweep(
    spec: SurfaceSpec,
    R: float,
    mus: Sequence[float],
    p: float,
    sep_axes: Sequence[int],
    separation: float = 3.0,
    expect: str = "bounded",
    jitter: int | None = None,
    threads: int | None = None,
    nodes: int = 48,
    refine: bool = True,
) -> ExperimentResult:
    """Bilinear ratio for two boxes separated by separation/mu along the given (1-based) axes."""
    Q = spec.quad
    header = ["R", "p_or_q"] + [f"mu{j + 1}" for j in range(Q.d)] + ["value", "slope_running", "flag"]
    rows, series = [], []
    for mu in mus:
        mu_vec = tuple(float(mu) if j + 1 in sep_axes else 1.0 for j in range(Q.d))
        a = (0.0,) * Q.d
        b = tuple(separation / float(mu) if j + 1 in sep_axes else 0.0 for j in range(Q.d))
        est = bd_ratio(Q, Box(a, mu_vec), Box(b, mu_vec), R, p, separation=separation, nodes=nodes, seed=jitter, refine=refine, threads=threads)
        series.append((float(mu), est.value))
        slope, status = None, "pending"
        if len(series) >= 2:
            slope = scaling_fit(series).slope if len(series) >= 4 else None
            vals = [v for _, v in series]
            if expect == "bounded":
                ok = max(vals) / min(vals) <= BOUNDED_FACTOR
            else:
                ok = all(y > x for x, y in zip(vals, vals[1:]))
            status = ("pass" if ok else "fail") if len(series) >= 4 else "pending"
        rows.append([float(R), float(p)] + list(mu_vec) + [est.value, slope, _flag(status, est.quadrature_error_flag)])
    vals = [v for _, v in series]
    summary = {
        "expect": expect,
        "separation": separation,
        "sep_axes": list(sep_axes),
        "spread": max(vals) / min(vals),
        "monotone_increasing": all(y > x for x, y in zip(vals, vals[1:])),
        "tolerance": BOUNDED_FACTOR if expect == "bounded" else None,
    }
    return ExperimentResult("bd-sweep", header, rows, summary)


def normalized_t(t: Sequence, lam: Sequence[int] | None) -> tuple[list[Fraction], Fraction]:
    """Scale t so that every dual-tube side R^{t_j}, R^{t_lam_j + t_j} is at most R."""
    tt = [Fraction(v) for v in t]
    s = max(tt) if tt else Fraction(0)
    if lam is not None:
        s = max([s] + [tt[l - 1] + tt[j] for j, l in enumerate(lam)])
    if s <= 1:
        return tt, Fraction(1)
    return [v / s for v in tt], s


def sharpness(
    spec: SurfaceSpec,
    t: Sequence,
    Rs: Sequence[float],
    qs: Sequence[float] = (4.0, 4.5, 5.0, 5.5, 6.0),
    jitter: int | None = None,
    threads: int | None = None,
    nodes: int = 48,
    refine: bool = True,
) -> ExperimentResult:
    """Square-function integrals; the empirical necessary q is the zero of the fitted slope in q."""
    Q = spec.quad
    lam = spec.meta.lam if spec.meta is not None and spec.meta.family() == "1" else None
    t_used, scale = normalized_t(t, lam)
    predicted = None
    if lam is not None:
        predicted = necessary_q_box(multiplicities(lam, Q.d), t)
    header = ["R", "p_or_q"] + [f"t{j + 1}" for j in range(Q.d)] + ["value", "slope_running", "flag"]
    rows = []
    per_q: dict[float, list[tuple[float, float]]] = {float(q): [] for q in qs}
    qstar = None
    for R in Rs:
        v1, v2, flag, _ = square_function_integrals(Q, t_used, R, qs, nodes=nodes, seed=jitter, refine=refine, threads=threads)
        for q, v in zip(qs, v1):
            per_q[float(q)].append((R, float(v)))
        qstar = _qstar(per_q) if len(per_q[float(qs[0])]) >= 4 else None
        for q, v in zip(qs, v1):
            series = per_q[float(q)]
            slope = scaling_fit(series).slope if len(series) >= 4 else None
            if qstar is None:
                status = "pending"
            elif predicted is None:
                status = "none"
            else:
                status = "pass" if qstar >= float(predicted) - slope_tolerance(Rs) else "fail"
            rows.append([float(R), float(q)] + [float(v_) for v_ in t_used] + [float(v), slope, _flag(status, flag)])
    slopes = {q: (scaling_fit(s).slope if len(s) >= 4 else None) for q, s in per_q.items()}
    summary = {
        "t": [Fraction(v) for v in t],
        "t_normalized": t_used,
        "normalization": scale,
        "slopes": [[q, s] for q, s in slopes.items()],
        "empirical_q": qstar,
        "predicted_q": predicted,
        "tolerance": slope_tolerance(Rs),
        "passed": (qstar >= float(predicted) - slope_tolerance(Rs)) if (qstar is not None and predicted is not None) else None,
    }
    return ExperimentResult("sharpness", header, rows, summary)


def _qstar(per_q: dict[float, list[tuple[float, float]]]) -> float | None:
    qs = sorted(per_q)
    slopes = [scaling_fit(per_q[q]).slope for q in qs]
    if len(qs) == 1:
        return None
    a, b = np.polyfit(qs, slopes, 1)
    if a >= 0:
        return None
    return float(-b / a)


def tube(spec: SurfaceSpec, t: Sequence, Rs: Sequence[float], samples: int = 100, seed: int = 0) -> ExperimentResult:
    Q = spec.quad
    if spec.meta is None or spec.meta.family() != "1":
        raise ValueError("the tube check needs case-1 monomial metadata")
    header = ["R", "p_or_q"] + [f"t{j + 1}" for j in range(Q.d)] + ["value", "slope_running", "flag"]
    rows, ranges = [], []
    for R in Rs:
        lo, hi = tube_locally_constant_check(Q, t, R, spec.meta.lam, samples=samples, seed=seed)
        ranges.append([float(R), lo, hi])
        status = "pass" if lo >= TUBE_FLOOR else "fail"
        rows.append([float(R), None] + [float(Fraction(v)) for v in t] + [lo, None, status])
    return ExperimentResult("tube", header, rows, {"floor": TUBE_FLOOR, "samples": samples, "min_max_ratio": ranges})
