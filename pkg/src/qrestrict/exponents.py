"""Predicted exponent ranges and the box-testing lower bound."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .quadform_core import QuadTuple, StructuralMeta, SurfaceSpec, residual_forms

__all__ = [
    "CaseParameters",
    "ExponentRange",
    "case_parameters",
    "predicted_range",
    "range_for_class",
    "necessary_q_box",
    "sharpness_optimizer",
    "admissible_region_vertices",
    "theta_of",
    "conjecture_flags",
    "multiplicities",
]


@dataclass
class CaseParameters:
    case: str
    d: int
    n: int
    k: int
    eta: int
    lam: tuple[int, ...]
    w: tuple[int, ...]
    w1: int | None = None
    w_lam: int | None = None
    theta: int | None = None
    validity: bool = True
    violations: list[str] = field(default_factory=list)


@dataclass
class ExponentRange:
    """Open region a*(1/p) + b*(1/q) < c for every (a, b, c) in ``constraints``."""

    q_critical: Fraction
    constraints: list[tuple[Fraction, Fraction, Fraction]]
    sharp_up_to_endpoint: bool = True
    label: str = ""

    def contains(self, p: float, q: float) -> bool:
        u, v = 1 / p, 1 / q
        return all(float(a) * u + float(b) * v < float(c) for a, b, c in self.constraints)

    def describe(self) -> str:
        parts = [f"q > {self.q_critical}"]
        for a, b, c in self.constraints:
            if a == 0:
                continue
            parts.append(f"{'' if a == 1 else str(a) + '*'}1/p + {b}/q < {c}")
        return ", ".join(parts)


def multiplicities(lam: Sequence[int], size: int) -> tuple[int, ...]:
    """w_j = number of occurrences of j among the lambda entries, j = 1..size."""
    w = [0] * size
    for v in lam:
        w[v - 1] += 1
    return tuple(w)


def _var_support(mat) -> set[int]:
    d = len(mat)
    return {i + 1 for i in range(d) if any(mat[i][k] != 0 for k in range(d))}


def _has_mixed(mat) -> bool:
    d = len(mat)
    return any(mat[i][k] != 0 for i in range(d) for k in range(d) if i != k)


def theta_of(Q: QuadTuple, meta: StructuralMeta, residuals=None) -> int:
    """Number of variables the residual forms P_j use, not counting x1 and x_lambda."""
    res = residuals if residuals is not None else residual_forms(Q, meta)
    used: set[int] = set()
    for mat in res.values():
        used |= _var_support(mat)
    used -= {1, meta.lam[0]}
    return len(used)


def case_parameters(spec: SurfaceSpec) -> CaseParameters:
    """Derive multiplicities and check the hypotheses of the declared family."""
    meta = spec.meta
    if meta is None:
        raise ValueError("the surface carries no structural metadata")
    Q = spec.quad
    d, n = Q.d, Q.n
    fam = meta.family()
    bad: list[str] = []
    if d < 2 or n < 2:
        bad.append("d,n>=2")
    k = meta.k if meta.k is not None else d - n
    eta = meta.eta or 0
    w1 = w_lam = theta = None
    if fam == "1":
        lam = meta.lam
        for j, lj in enumerate(lam, start=1):
            if lj > j:
                bad.append(f"lambda_j<=j (lambda_{j}={lj})")
        w = multiplicities(lam, d)
    elif fam in "34":
        lam = meta.lam
        first = eta + 1 + k  # index of the first monomial variable
        for pos, lj in enumerate(lam):
            j = first + pos
            if lj > j:
                bad.append(f"lambda_j<=j (lambda_{j}={lj})")
        w = multiplicities(lam, d)
        for j in range(eta + 1, eta + k + 1):
            if w[j - 1] < 1:
                bad.append(f"w_j>=1 for {eta + 1}<=j<={eta + k} (w_{j}=0)")
        if fam == "4" and not 1 <= eta < n:
            bad.append("1<=eta<n")
    else:
        w1 = meta.w1
        lam_v = meta.lam[0]
        lam = (1,) * w1 + (lam_v,) * (n - w1)
        w = multiplicities(lam, d)
        w_lam = n - w1
        res = residual_forms(Q, meta)
        theta = theta_of(Q, meta, res)
        top = n if fam == "2" else n + k
        sub = meta.case[1]
        if fam == "5" and w_lam <= 0:
            bad.append("w_lambda=n-w1>0")
        if sub == "d":
            for j, mat in res.items():
                if any(v != 0 for r in mat for v in r):
                    bad.append(f"P_j=0 (P_{j} is nonzero)")
            if not 1 <= lam_v <= w1 + 1:
                bad.append("1<=lambda<=w1+1")
            if w1 < w_lam:
                bad.append("w1>=w_lambda")
        else:
            if not 2 <= lam_v <= w1 + 1:
                bad.append("2<=lambda<=w1+1")
            nonzero = [j for j, mat in res.items() if any(v != 0 for r in mat for v in r)]
            for j, mat in res.items():
                supp = _var_support(mat)
                forbidden = set(range(j, top + 1))
                if sub == "a":
                    forbidden.add(1)
                if supp & forbidden:
                    names = ",".join(f"x{v}" for v in sorted(forbidden))
                    bad.append(f"P_{j} independent of {names}")
                if sub in "bc" and _has_mixed(mat):
                    bad.append(f"P_{j} without mixed terms")
            if sub == "c":
                if len(nonzero) > 1:
                    bad.append("P_j'=0 for all but one j")
                if 2 * w1 < 2 * w_lam + theta:
                    bad.append("w1>=w_lambda+theta/2")
            elif w1 < w_lam + theta:
                bad.append("w1>=w_lambda+theta")
    return CaseParameters(meta.case, d, n, k if fam in "345" else 0, eta, tuple(lam), w, w1, w_lam, theta, not bad, bad)


def _range(q_crit: Fraction, slope: Fraction, label: str) -> ExponentRange:
    one = Fraction(1)
    return ExponentRange(
        Fraction(q_crit),
        [(one, Fraction(slope), one), (Fraction(0), Fraction(q_crit), one)],
        True,
        label,
    )


def predicted_range(params: CaseParameters) -> ExponentRange:
    if not params.validity:
        raise ValueError("hypotheses violated: " + "; ".join(params.violations))
    fam = params.case[0]
    w = params.w
    if fam == "1":
        m = max(w)
        return _range(Fraction(m + 3), Fraction(m + 2), "case 1")
    if fam in "25":
        return _range(Fraction(params.w1 + 3), Fraction(params.w1 + 2), f"case {params.case}")
    k, eta = params.k, params.eta
    if fam == "3":
        low = max(w[j - 1] for j in range(1, k + 1)) + 2
        high = max(w[j - 1] for j in range(k + 1, params.d + 1)) + 3
        q1 = max(low, high)
        return _range(Fraction(q1), Fraction(q1 - 1), "case 3")
    parts = [max(w[j - 1] for j in range(1, eta + 1)) + 4, max(w[j - 1] for j in range(eta + 1, eta + k + 1)) + 2]
    if eta + k < params.d:
        parts.append(max(w[j - 1] for j in range(eta + k + 1, params.d + 1)) + 3)
    q2 = max(parts)
    return _range(Fraction(q2), Fraction(q2 - 1), "case 4")


def range_for_class(cls: str) -> ExponentRange | None:
    """Ranges for the three normal forms of pairs of binary forms."""
    if cls == "XiSq_XiXj":
        return _range(Fraction(5), Fraction(4), "(x1^2, x1*x2)")
    if cls == "XiSq_XjSq":
        return _range(Fraction(4), Fraction(3), "(x1^2, x2^2)")
    if cls == "Hyperbolic_Pair":
        return _range(Fraction(4), Fraction(3), "(x1*x2, x1^2 - x2^2)")
    return None


def necessary_q_box(w: Sequence[int], t: Sequence) -> Fraction:
    """(sum w_j t_j) / (sum t_j) + 3."""
    tt = [Fraction(v) for v in t]
    if len(tt) != len(w):
        raise ValueError("w and t must have the same length")
    s = sum(tt)
    if s == 0:
        raise ValueError("t must be nonzero")
    return sum((Fraction(wi) * ti for wi, ti in zip(w, tt)), Fraction(0)) / s + 3


def _tie_key(t: Sequence[Fraction]):
    support = tuple(i for i, v in enumerate(t) if v)
    return support, tuple(-v for v in t)


def sharpness_optimizer(w: Sequence[int], levels: int = 2, chunk: int = 1 << 16) -> tuple[Fraction, tuple[Fraction, ...]]:
    """Maximize necessary_q_box over t in {0, 1/levels, ..., 1}^n minus the origin.

    Among maximizers the one with the lexicographically smallest support is
    returned, and within a support the one with the largest entries.
    """
    n = len(w)
    if n > 16:
        raise ValueError("refused: n > 16 exceeds the combinatorial budget")
    if n == 0 or any(v < 0 for v in w) or not any(w):
        raise ValueError("w must be nonnegative and not all zero")
    wv = np.asarray(w, dtype=np.int64)
    best_val: Fraction | None = None
    best_t: tuple[Fraction, ...] | None = None
    total = (levels + 1) ** n
    powers = (levels + 1) ** np.arange(n - 1, -1, -1, dtype=np.int64)
    for start in range(1, total, chunk):
        idx = np.arange(start, min(total, start + chunk), dtype=np.int64)
        T = (idx[:, None] // powers) % (levels + 1)  # integer numerators of t
        num = T @ wv
        den = T.sum(axis=1)
        ratio = num / den
        top = ratio.max()
        cand = np.nonzero(ratio >= top - 1e-12 * max(1.0, abs(top)))[0]
        for c in cand:
            val = Fraction(int(num[c]), int(den[c]))
            t = tuple(Fraction(int(v), levels) for v in T[c])
            if best_val is None or val > best_val or (val == best_val and _tie_key(t) < _tie_key(best_t)):
                best_val, best_t = val, t
    return best_val + 3, best_t


def admissible_region_vertices(rng: ExponentRange, diagonal: bool = False) -> list[tuple[Fraction, Fraction]]:
    """Vertices of the closed region in the (1/p, 1/q) unit square.

    With ``diagonal`` the region is further cut by 1/q <= 1/p.  Vertices are
    returned counterclockwise starting from the one nearest the origin.
    """
    one, zero = Fraction(1), Fraction(0)
    # halfplanes a*u + b*v <= c
    planes = [(a, b, c) for a, b, c in rng.constraints]
    planes += [(-one, zero, zero), (one, zero, one), (zero, -one, zero), (zero, one, one)]
    if diagonal:
        planes.append((-one, one, zero))
    pts = set()
    for (a1, b1, c1), (a2, b2, c2) in itertools.combinations(planes, 2):
        det = a1 * b2 - a2 * b1
        if det == 0:
            continue
        u = (c1 * b2 - c2 * b1) / det
        v = (a1 * c2 - a2 * c1) / det
        if all(a * u + b * v <= c for a, b, c in planes):
            pts.add((u, v))
    if len(pts) < 3:
        return sorted(pts)
    cu = sum(p[0] for p in pts) / len(pts)
    cv = sum(p[1] for p in pts) / len(pts)
    import math

    ordered = sorted(pts, key=lambda p: math.atan2(float(p[1] - cv), float(p[0] - cu)))
    start = min(range(len(ordered)), key=lambda i: (ordered[i][0] + ordered[i][1], ordered[i]))
    return ordered[start:] + ordered[:start]


def conjecture_flags(Q: QuadTuple) -> list[str]:
    """Flags for tuples whose conjectured range is stated without proof."""
    n, d = Q.n, Q.d
    flags = []
    if d == n and n >= 3:
        target = []
        for j in range(1, n + 1):
            a = [[Fraction(0)] * d for _ in range(d)]
            if j == 1:
                a[0][0] = Fraction(1)
            else:
                a[0][j - 1] = a[j - 1][0] = Fraction(1, 2)
            if j == n:
                a[1][1] += 1
            target.append(a)
        if [f.rows() for f in Q.forms] == target:
            flags.append(f"conjecture only: the estimate is expected for p > {n + 2}; the proven range needs p > {n + 3}")
    return flags
