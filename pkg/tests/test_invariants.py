
import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qrestrict.invariants import (
    CANONICAL_FORMS,
    PreconditionError,
    classify_2x2,
    cm_check_3_2,
    cm_integral_probe,
    d_invariant,
    hurwitz_radon,
    min_rank_pencil,
)
from qrestrict.quadform_core import QuadTuple, change_of_variables, nv, parse_surface

from .test_quadform_core import invertible


def P(body: str, d: int = 2, n: int = 2) -> QuadTuple:
    return parse_surface(f"d={d} n={n}; {body}").quad


EXAMPLE = P("Q1=x1^2; Q2=x2^2+x1*x3", 3, 2)
SUM_FAMILY = P("Q1=x1^2+x2^2; Q2=x3^2+2*x1^2+3*x2^2+x1*x2", 3, 2)


def test_min_rank_pencil_examples():
    assert tuple(min_rank_pencil(EXAMPLE)) == (1, (1, 0))
    assert min_rank_pencil(P("Q1=x1*x2; Q2=x1^2-x2^2")).rank == 2
    r = min_rank_pencil(P("Q1=x1^2; Q2=x2^2"))
    assert (r.rank, r.witness, r.exact) == (1, (1, 0), True)


def test_min_rank_pencil_irrational_root():
    # x1^2 - 2 x2^2 + t x1 x2 pencil: rank drops only at irrational members
    Q = P("Q1=x1^2-2*x2^2; Q2=x1*x2+x2^2")
    r = min_rank_pencil(Q)
    y = np.array([float(v) for v in r.witness])
    A = Q.matrices_float()
    M = np.tensordot(y, A, axes=1)
    assert np.linalg.matrix_rank(M, tol=1e-9) == r.rank


def test_d_invariant_examples():
    r = d_invariant(EXAMPLE, 3, 1)
    assert (r.value, r.exact) == (1, True)
    assert r.recompute(EXAMPLE) == 1
    s = d_invariant(SUM_FAMILY, 3, 1)
    assert (s.value, s.exact) == (2, True)
    for dd, nn in ((0, 2), (3, 0), (0, 0)):
        z = d_invariant(EXAMPLE, dd, nn)
        assert (z.value, z.exact) == (0, True)


def test_d_invariant_certificate_ranks():
    for dd in range(4):
        for nn in range(3):
            r = d_invariant(EXAMPLE, dd, nn)
            assert r.certificate_ranks() == (dd, nn)
            assert r.recompute(EXAMPLE) == r.value


def test_cm_check_examples():
    yes = cm_check_3_2(SUM_FAMILY)
    assert yes.satisfied is True and yes.method == "characterization_3_2"
    assert cm_check_3_2(EXAMPLE).satisfied is False
    with pytest.raises(PreconditionError):
        cm_check_3_2(P("Q1=x1^2; Q2=x2^2", 3, 2))


def test_cm_check_agrees_with_probe():
    # the satisfied family stays finite under refinement at every scanned gamma
    scan = cm_check_3_2(SUM_FAMILY).gamma_scan
    assert not any(div for _, _, div in scan)
    est, div = cm_integral_probe(EXAMPLE, 0.6, 256)
    assert div


def test_cm_probe_finite_case_against_closed_form():
    est, div = cm_integral_probe(P("Q1=x1^2; Q2=x2^2"), 0.5, 64)
    # integral of |cos t sin t|^(-1/2) over the circle is 2 B(1/4, 1/4)
    exact = float(2 * mpmath.beta(0.25, 0.25))
    assert not div
    assert abs(est - exact) / exact < 0.1


def test_cm_probe_divergent_case():
    est, div = cm_integral_probe(P("Q1=x1^2; Q2=x1*x2"), 0.75, 64)
    assert div


@pytest.mark.parametrize("gamma", [0.0, 1.0, -0.5, 2.0])
def test_cm_probe_gamma_range(gamma):
    with pytest.raises(PreconditionError):
        cm_integral_probe(P("Q1=x1^2; Q2=x2^2"), gamma, 64)


@pytest.mark.parametrize(
    "body,cls",
    [
        ("Q1=x1^2; Q2=x1*x2", "XiSq_XiXj"),
        ("Q1=x1^2+x2^2; Q2=x1*x2", "XiSq_XjSq"),
        ("Q1=x1*x2; Q2=x1^2-x2^2", "Hyperbolic_Pair"),
        ("Q1=x1^2; Q2=x2^2", "XiSq_XjSq"),
        ("Q1=x1^2; Q2=2*x1^2", "Degenerate"),
    ],
)
def test_classify_examples(body, cls):
    out = classify_2x2(P(body))
    assert out.cls == cls
    if cls != "Degenerate":
        assert out.residual <= 1e-9


def test_classify_canonical_inputs_get_identity_transforms():
    for body in ("Q1=x1^2; Q2=x1*x2", "Q1=x1*x2; Q2=x1^2-x2^2"):
        out = classify_2x2(P(body))
        M1, M2 = out.transforms
        assert np.array_equal(M1, np.eye(2)) and np.array_equal(M2, np.eye(2))


def test_classify_transforms_reach_canonical_form():
    Q = P("Q1=3*x1^2+x1*x2-x2^2; Q2=x1^2+2*x1*x2")
    out = classify_2x2(Q)
    M1, M2 = out.transforms
    A = Q.matrices_float()
    moved = np.einsum("jab,jk->kab", np.einsum("ai,jab,bc->jic", M1, A, M1), M2)
    assert np.abs(moved - CANONICAL_FORMS[out.cls]).max() < 1e-9


def test_classify_needs_two_by_two():
    with pytest.raises(PreconditionError):
        classify_2x2(EXAMPLE)


def test_hurwitz_radon_examples():
    assert hurwitz_radon(3) == 1
    assert hurwitz_radon(16) == 9
    assert hurwitz_radon(8) == 8


def brute_rho(d: int) -> int:
    for a in range(8):
        for b in range(4):
            q, r = divmod(d, 2 ** (4 * a + b))
            if r == 0 and q % 2 == 1:
                return 8 * a + 2**b
    raise AssertionError


@settings(max_examples=200)
@given(st.integers(1, 4096))
def test_hurwitz_radon_properties(d):
    rho = hurwitz_radon(d)
    assert rho <= d
    if d % 2:
        assert rho == 1
    assert rho == brute_rho(d)


# property tests over random rational changes of variables

CANONICAL = [
    ("Q1=x1^2; Q2=x1*x2", "XiSq_XiXj"),
    ("Q1=x1^2; Q2=x2^2", "XiSq_XjSq"),
    ("Q1=x1*x2; Q2=x1^2-x2^2", "Hyperbolic_Pair"),
]


@settings(max_examples=25, deadline=None)
@given(st.data())
def test_classify_class_invariant_under_changes(data):
    body, cls = data.draw(st.sampled_from(CANONICAL))
    M1 = data.draw(invertible(2))
    M2 = data.draw(invertible(2))
    moved = change_of_variables(P(body), M1, M2)
    out = classify_2x2(moved)
    assert out.cls == cls
    assert out.residual <= 1e-9


PENCILS = [
    EXAMPLE,
    SUM_FAMILY,
    P("Q1=x1*x2; Q2=x1^2-x2^2"),
    P("Q1=x1^2+x2^2; Q2=x1*x2+x3^2", 3, 2),
]


@settings(max_examples=25, deadline=None)
@given(st.data())
def test_min_rank_invariant_under_changes(data):
    Q = data.draw(st.sampled_from(PENCILS))
    M1 = data.draw(invertible(Q.d))
    M2 = data.draw(invertible(Q.n))
    assert min_rank_pencil(change_of_variables(Q, M1, M2)).rank == min_rank_pencil(Q).rank


@pytest.mark.parametrize("Q", PENCILS[:2])
def test_d_invariant_monotone_in_d(Q):
    for nn in (1, 2):
        values = [d_invariant(Q, dd, nn) for dd in range(Q.d + 1)]
        for r in values:
            assert r.recompute(Q) == r.value
        assert all(a.value <= b.value for a, b in zip(values, values[1:]))


def test_d_invariant_full_composition_is_nv():
    Q = P("Q1=x1^2; Q2=x1*x2", 3, 2)
    assert d_invariant(Q, 3, 2).value == nv(Q) == 2
