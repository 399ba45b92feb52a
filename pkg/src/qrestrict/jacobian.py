"""Jacobian determinants of gradient systems and their monomial behaviour.

For an index selection i_1 < ... < i_{d-n}, the Jacobian J(xi; sel) is the
determinant of the d x d matrix whose first n rows are the gradients of
Q_1..Q_n and whose remaining rows are the unit vectors e_{i_1}, ....
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

from .quadform_core import MultiPoly, QuadTuple, gradient_matrix

__all__ = [
    "IndexSelection",
    "Verdict",
    "JacobianAnalysis",
    "poly_determinant",
    "jacobian_poly",
    "monomial_comparability",
    "analyze_selection",
    "best_selection",
    "all_selections",
    "bilinear_change_of_variables_jacobian",
]


@dataclass(frozen=True)
class IndexSelection:
    """Strictly increasing 1-based indices of the unit rows."""

    indices: tuple[int, ...]

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError("selection must be strictly increasing")
        object.__setattr__(self, "indices", idx)

    def validate(self, d: int, n: int) -> None:
        if len(self.indices) != d - n:
            raise ValueError(f"selection needs exactly {d - n} indices, got {len(self.indices)}")
        if any(not 1 <= i <= d for i in self.indices):
            raise ValueError(f"indices must lie in 1..{d}")

    def __str__(self):
        return "{" + ",".join(str(i) for i in self.indices) + "}"


@dataclass(frozen=True)
class Verdict:
    """Comparability of |J| with a monomial.

    kind is one of ExactMonomial, LowerBoundMonomial, IdenticallyZero,
    Undetermined.  ``w`` is the full exponent vector of the chosen monomial.
    """

    kind: str
    w: tuple[int, ...] | None = None
    coefficient: Fraction | None = None
    certificate: str = ""

    @property
    def w_compact(self) -> tuple[int, ...] | None:
        """Nonzero exponents in variable order, e.g. (2,) for x1^2."""
        return None if self.w is None else tuple(v for v in self.w if v)

    @property
    def max_power(self) -> int | None:
        return None if self.w is None else max(self.w, default=0)


@dataclass
class JacobianAnalysis:
    selection: IndexSelection
    poly: MultiPoly
    verdict: Verdict
    max_power: int | None = None
    bilinear_p: Fraction | None = None
    notes: list[str] = field(default_factory=list)


def poly_determinant(rows: Sequence[Sequence[MultiPoly]]) -> MultiPoly:
    """Determinant of a square matrix of polynomials by memoized Laplace expansion."""
    size = len(rows)
    if size == 0:
        raise ValueError("empty matrix")
    nvars = rows[0][0].nvars
    memo: dict[tuple[int, ...], MultiPoly] = {}

    def minor(r: int, cols: tuple[int, ...]) -> MultiPoly:
        # determinant of rows r.. with the given columns
        if r == size:
            return MultiPoly.const(nvars, 1)
        key = cols
        if key in memo:
            return memo[key]
        acc = MultiPoly.zero(nvars)
        for pos, c in enumerate(cols):
            entry = rows[r][c]
            if entry.is_zero():
                continue
            sub = minor(r + 1, cols[:pos] + cols[pos + 1 :])
            if sub.is_zero():
                continue
            term = entry * sub
            acc = acc - term if pos % 2 else acc + term
        memo[key] = acc
        return acc

    return minor(0, tuple(range(size)))


def jacobian_poly(Q: QuadTuple, sel: IndexSelection | Sequence[int]) -> MultiPoly:
    """Exact determinant of the gradient rows stacked over the selected unit rows."""
    if not isinstance(sel, IndexSelection):
        sel = IndexSelection(tuple(sel))
    d, n = Q.d, Q.n
    if d < n:
        raise ValueError("unsupported: fewer variables than forms (d < n)")
    sel.validate(d, n)
    rows = [list(r) for r in gradient_matrix(Q)]
    for i in sel.indices:
        rows.append([MultiPoly.const(d, 1) if k == i - 1 else MultiPoly.zero(d) for k in range(d)])
    return poly_determinant(rows)


def monomial_comparability(J: MultiPoly) -> Verdict:
    """Classify |J| against monomials.

    A single term is an exact monomial.  A polynomial whose terms are all
    squares of monomials with coefficients of one sign is bounded below by
    each of its terms; the term with the smallest largest exponent is
    reported, ties going to the leading term in lexicographic order
    (x1 > x2 > ...).
    """
    if J.is_zero():
        return Verdict("IdenticallyZero")
    terms = list(J.terms.items())
    if len(terms) == 1:
        (e, c), = terms
        return Verdict("ExactMonomial", tuple(e), c)
    signs = {c > 0 for _, c in terms}
    if len(signs) == 1 and all(v % 2 == 0 for e, _ in terms for v in e):
        e, c = min(terms, key=lambda t: (max(t[0]), tuple(-v for v in t[0])))
        cert = f"all {len(terms)} terms are squared monomials with {'positive' if c > 0 else 'negative'} coefficients"
        return Verdict("LowerBoundMonomial", tuple(e), c, cert)
    return Verdict("Undetermined")


def analyze_selection(Q: QuadTuple, sel: IndexSelection | Sequence[int]) -> JacobianAnalysis:
    if not isinstance(sel, IndexSelection):
        sel = IndexSelection(tuple(sel))
    J = jacobian_poly(Q, sel)
    verdict = monomial_comparability(J)
    if verdict.kind in ("ExactMonomial", "LowerBoundMonomial"):
        mp = verdict.max_power
        return JacobianAnalysis(sel, J, verdict, mp, Fraction(mp + 3))
    return JacobianAnalysis(sel, J, verdict)


def all_selections(Q: QuadTuple) -> list[JacobianAnalysis]:
    if Q.d < Q.n:
        raise ValueError("unsupported: fewer variables than forms (d < n)")
    return [analyze_selection(Q, IndexSelection(c)) for c in itertools.combinations(range(1, Q.d + 1), Q.d - Q.n)]


def best_selection(Q: QuadTuple) -> JacobianAnalysis:
    """Selection minimizing the largest exponent of the comparable monomial."""
    analyses = all_selections(Q)
    usable = [a for a in analyses if a.max_power is not None]
    if usable:
        # combinations() already yields selections in lexicographic order
        return min(usable, key=lambda a: a.max_power)
    return analyses[0]


def bilinear_change_of_variables_jacobian(Q: QuadTuple, sel: IndexSelection | Sequence[int]) -> MultiPoly:
    """J(xi' - xi; sel) as a polynomial in 2d variables (xi_1..xi_d, xi'_1..xi'_d)."""
    J = jacobian_poly(Q, sel)
    d = Q.d
    images = [MultiPoly.var(2 * d, d + i) - MultiPoly.var(2 * d, i) for i in range(d)]
    return J.substitute_linear(images)
