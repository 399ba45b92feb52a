import itertools
from fractions import Fraction as F

import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from qrestrict.jacobian import (
    IndexSelection,
    best_selection,
    bilinear_change_of_variables_jacobian,
    jacobian_poly,
    monomial_comparability,
)
from qrestrict.quadform_core import MultiPoly, QuadTuple, monomial_tuple, parse_surface

from .test_quadform_core import quad_tuples


def P(body: str, d: int, n: int) -> QuadTuple:
    return parse_surface(f"d={d} n={n}; {body}").quad


EXAMPLE = P("Q1=x1^2; Q2=x2^2+x1*x3", 3, 2)
CYCLE = P("Q1=x1*x2; Q2=x2*x3; Q3=x3*x4; Q4=x4*x1", 4, 4)
HYPERBOLIC = P("Q1=x1*x2; Q2=x1^2-x2^2", 2, 2)


def mono(d, e, c):
    return MultiPoly(d, {tuple(e): F(c)})


def test_jacobian_example_selections():
    assert jacobian_poly(EXAMPLE, [2]).terms == {(2, 0, 0): F(-2)}
    assert jacobian_poly(EXAMPLE, [3]).terms == {(1, 1, 0): F(4)}
    assert jacobian_poly(EXAMPLE, [1]).is_zero()


def test_four_cycle_is_identically_zero():
    J = jacobian_poly(CYCLE, [])
    assert J.is_zero()
    best = best_selection(CYCLE)
    assert best.verdict.kind == "IdenticallyZero"
    assert best.bilinear_p is None


def test_hyperbolic_pair_lower_bound():
    J = jacobian_poly(HYPERBOLIC, [])
    assert J.terms == {(2, 0): F(-2), (0, 2): F(-2)}
    v = monomial_comparability(J)
    assert v.kind == "LowerBoundMonomial"
    assert v.w == (2, 0) and v.w_compact == (2,)
    assert v.max_power == 2


def test_comparability_examples():
    v = monomial_comparability(mono(2, (1, 1), 4))
    assert (v.kind, v.w, v.max_power) == ("ExactMonomial", (1, 1), 1)
    assert monomial_comparability(MultiPoly.zero(3)).kind == "IdenticallyZero"
    mixed = mono(2, (2, 0), 1) - mono(2, (0, 2), 1)
    assert monomial_comparability(mixed).kind == "Undetermined"
    odd = mono(2, (2, 0), 1) + mono(2, (1, 1), 1)
    assert monomial_comparability(odd).kind == "Undetermined"


def test_best_selection_example():
    best = best_selection(EXAMPLE)
    assert best.selection == IndexSelection((3,))
    assert best.verdict.w == (1, 1, 0)
    assert best.bilinear_p == 4


@pytest.mark.parametrize("lam", [(1, 1), (1, 2), (1, 1, 2), (1, 2, 2, 3), (1, 1, 1, 1)])
def test_best_selection_monomial_case(lam):
    n = len(lam)
    Q = monomial_tuple(n, [[(1, l, j)] for j, l in enumerate(lam, start=1)])
    best = best_selection(Q)
    w = [sum(1 for l in lam if l == j) for j in range(1, n + 1)]
    assert best.selection.indices == ()
    assert best.verdict.kind == "ExactMonomial"
    assert list(best.verdict.w) == w
    assert best.bilinear_p == max(w) + 3


def test_fewer_variables_than_forms_refused():
    Q = QuadTuple.from_matrices([[[1]], [[2]]])
    with pytest.raises(ValueError, match="d < n"):
        jacobian_poly(Q, [])


def test_bilinear_jacobian_two_plus_one_system():
    Q = P("Q1=x1^2+x2^2; Q2=x3^2", 3, 2)
    B = bilinear_change_of_variables_jacobian(Q, [1])
    x = sp.symbols("x1:7")
    expr = sum(sp.Rational(c.numerator, c.denominator) * sp.Mul(*[v**k for v, k in zip(x, e)]) for e, c in B.terms.items())
    assert sp.expand(expr - 4 * (x[1] - x[4]) * (x[2] - x[5])) == 0


def test_bilinear_jacobian_parabola_and_zero():
    B = bilinear_change_of_variables_jacobian(QuadTuple.from_matrices([[[1]]]), [])
    assert B.terms == {(0, 1): F(2), (1, 0): F(-2)}
    assert bilinear_change_of_variables_jacobian(CYCLE, []).is_zero()


# properties

def _sympy_det(Q: QuadTuple, sel, xi):
    rows = []
    for f in Q.forms:
        a = sp.Matrix([[sp.Rational(v.numerator, v.denominator) for v in r] for r in f.entries])
        rows.append(list(2 * a * sp.Matrix(xi)))
    for i in sel:
        rows.append([1 if k == i - 1 else 0 for k in range(Q.d)])
    return sp.Matrix(rows).det()


@st.composite
def square_or_wide(draw):
    Q = draw(quad_tuples(max_d=4, max_n=3).filter(lambda q: q.d >= q.n))
    sel = draw(st.sampled_from(list(itertools.combinations(range(1, Q.d + 1), Q.d - Q.n))))
    return Q, sel


rationals = st.fractions(min_value=-5, max_value=5, max_denominator=6)


@settings(max_examples=40, deadline=None)
@given(square_or_wide(), st.lists(st.lists(rationals, min_size=4, max_size=4), min_size=5, max_size=5))
def test_jacobian_matches_pointwise_determinant(case, points):
    Q, sel = case
    J = jacobian_poly(Q, sel)
    for pt in points:
        xi = [sp.Rational(v.numerator, v.denominator) for v in pt[: Q.d]]
        got = J.evaluate(pt[: Q.d])
        assert sp.Rational(got.numerator, got.denominator) == _sympy_det(Q, sel, xi)


@settings(max_examples=40, deadline=None)
@given(square_or_wide())
def test_jacobian_terms_have_degree_n(case):
    Q, sel = case
    J = jacobian_poly(Q, sel)
    assert all(sum(e) == Q.n for e in J.terms)
    v = monomial_comparability(J)
    if v.kind == "ExactMonomial":
        assert sum(v.w) == Q.n


@settings(max_examples=30, deadline=None)
@given(quad_tuples(max_d=4, max_n=3).filter(lambda q: q.d >= q.n), st.randoms())
def test_best_selection_invariant_under_form_permutation(Q, rnd):
    order = list(range(Q.n))
    rnd.shuffle(order)
    permuted = QuadTuple(tuple(Q.forms[i] for i in order))
    assert best_selection(permuted).max_power == best_selection(Q).max_power


@settings(max_examples=30, deadline=None)
@given(quad_tuples(max_d=4, max_n=2).filter(lambda q: q.d - q.n >= 2), rationals, rationals, rationals, rationals)
def test_unit_row_swap_flips_sign(Q, a, b, c, d):
    # the rows e_i, e_k in the opposite order give the negated determinant
    sel = list(range(1, Q.d - Q.n + 1))
    xi = [a, b, c, d][: Q.d]
    rows_sel = _sympy_det(Q, sel, xi)
    swapped = sel[:-2] + [sel[-1], sel[-2]]
    assert _sympy_det(Q, swapped, xi) == -rows_sel
    got = jacobian_poly(Q, sel).evaluate(xi)
    assert sp.Rational(got.numerator, got.denominator) == rows_sel
