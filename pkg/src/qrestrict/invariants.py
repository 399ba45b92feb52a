"""Structural invariants of quadratic-form tuples.

Main entry points:

* :func:`min_rank_pencil` - minimal rank over the projective family of
  combinations sum_j y_j A_j (exact for n <= 2).
* :func:`d_invariant` - the minimal number of essential variables after
  composing with a rank-d' linear map and combining into n' forms.
* :func:`cm_check_3_2`, :func:`cm_integral_probe` - determinant
  integrability condition for pairs of forms in three variables.
* :func:`classify_2x2` - normal form of a pair of binary forms.
* :func:`hurwitz_radon`.
"""

from __future__ import annotations

import functools
import itertools
import math
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import mpmath
import numpy as np
import sympy as sp

from . import linalg_exact as la
from .quadform_core import QuadTuple, change_of_variables, nv

__all__ = [
    "PencilPoint",
    "PencilRank",
    "DInvariantResult",
    "CmVerdict",
    "CanonicalClass2x2",
    "PreconditionError",
    "pencil_profile",
    "min_rank_pencil",
    "restricted_min_rank",
    "d_invariant",
    "cm_check_3_2",
    "cm_integral_probe",
    "classify_2x2",
    "hurwitz_radon",
    "CANONICAL_FORMS",
]


class PreconditionError(ValueError):
    """An operation was called outside the hypotheses it is valid under."""

    def __init__(self, hypothesis: str, detail: str = ""):
        super().__init__(f"precondition '{hypothesis}' violated" + (f": {detail}" if detail else ""))
        self.hypothesis = hypothesis


def _mats(Q: QuadTuple) -> list[la.Matrix]:
    return [f.rows() for f in Q.forms]


# ---------------------------------------------------------------------------
# pencils


@dataclass(frozen=True)
class PencilPoint:
    """One sample of the projective family y -> sum_j y_j A_j.

    ``inertia`` is (positive, negative, zero) counts, or None when it could
    not be certified.  ``kind`` is "vertex" (y=(1,0)), "root" (a real zero
    of the critical polynomial) or "arc" (a rational point between roots).
    """

    y: tuple
    exact_y: bool
    rank: int
    inertia: tuple[int, int, int] | None
    kind: str


@dataclass(frozen=True)
class PencilRank:
    rank: int
    witness: tuple
    exact: bool
    witness_exact: bool = True

    def __iter__(self):
        # allows ``rank, witness = min_rank_pencil(Q)``
        yield self.rank
        yield self.witness


def _poly_matrix(mats: list[la.Matrix], t: sp.Symbol) -> sp.Matrix:
    a1, a2 = (sp.Matrix([[sp.Rational(v.numerator, v.denominator) for v in r] for r in m]) for m in mats)
    return t * a1 + a2


def _critical_poly(M: sp.Matrix, t: sp.Symbol, r: int) -> sp.Poly:
    """gcd of all r x r minors of M(t) (the determinant when r = size)."""
    d = M.shape[0]
    if r == d:
        return sp.Poly(M.det(method="berkowitz"), t, domain="QQ")
    g = None
    for rows in itertools.combinations(range(d), r):
        for cols in itertools.combinations(range(d), r):
            minor = sp.Poly(M.extract(list(rows), list(cols)).det(method="berkowitz"), t, domain="QQ")
            if minor.is_zero:
                continue
            g = minor if g is None else sp.gcd(g, minor)
            if g.degree() == 0:
                return g
    return g if g is not None else sp.Poly(0, t, domain="QQ")


def _rank_mod(M: sp.Matrix, t: sp.Symbol, p: sp.Poly) -> int:
    """Rank of M(t) over the field Q[t]/(p) for irreducible p."""
    rows = [[sp.Poly(e, t, domain="QQ").rem(p) for e in M.row(i)] for i in range(M.shape[0])]
    ncols = M.shape[1]
    r = 0
    for c in range(ncols):
        piv = next((i for i in range(r, len(rows)) if not rows[i][c].is_zero), None)
        if piv is None:
            continue
        rows[r], rows[piv] = rows[piv], rows[r]
        inv = rows[r][c].invert(p)
        rows[r] = [(v * inv).rem(p) for v in rows[r]]
        for i in range(len(rows)):
            if i != r and not rows[i][c].is_zero:
                f = rows[i][c]
                rows[i] = [(x - f * y).rem(p) for x, y in zip(rows[i], rows[r])]
        r += 1
        if r == len(rows):
            break
    return r


def _numeric_inertia(mats: list[la.Matrix], alpha: mpmath.mpf, zeros: int) -> tuple[int, int, int] | None:
    d = len(mats[0])
    with mpmath.workdps(60):
        m = mpmath.matrix(d, d)
        for i in range(d):
            for j in range(d):
                a1, a2 = mats[0][i][j], mats[1][i][j]
                m[i, j] = alpha * mpmath.mpf(a1.numerator) / a1.denominator + mpmath.mpf(a2.numerator) / a2.denominator
        ev = mpmath.eigsy(m, eigvals_only=True)
        vals = sorted((ev[i] for i in range(d)), key=lambda v: abs(v))
        if zeros < d and abs(vals[zeros]) < mpmath.mpf(10) ** -25:
            return None
        nonzero = vals[zeros:]
        pos = sum(1 for v in nonzero if v > 0)
        return pos, len(nonzero) - pos, zeros


@functools.lru_cache(maxsize=256)
def pencil_profile(Q: QuadTuple) -> tuple[PencilPoint, ...]:
    """Exact description of rank and inertia along the pencil (n <= 2).

    For n = 2 the pencil is parametrized by y = (t, 1) plus the vertex
    y = (1, 0).  Rank and inertia are constant on the arcs between the
    real zeros of the critical polynomial; one rational point per arc and
    every real zero are recorded.
    """
    mats = _mats(Q)
    d = Q.d
    if Q.n == 1:
        return (PencilPoint((Fraction(1),), True, la.rank(mats[0]), la.inertia(mats[0]), "vertex"),)
    if Q.n != 2:
        raise PreconditionError("n<=2", "exact pencil profiles exist for one or two forms")
    points = [PencilPoint((Fraction(1), Fraction(0)), True, la.rank(mats[0]), la.inertia(mats[0]), "vertex")]

    def member(tv: Fraction) -> la.Matrix:
        return la.linear_combination(mats, [tv, Fraction(1)])

    generic = max(la.rank(member(Fraction(k))) for k in range(d + 1))
    t = sp.Symbol("t")
    M = _poly_matrix(mats, t)
    g = _critical_poly(M, t, generic) if generic > 0 else sp.Poly(1, t, domain="QQ")
    roots: list[tuple[Fraction, Fraction]] = []
    if g.degree() > 0:
        factors = [f for f, _ in g.factor_list()[1]]
        for (a, b), _mult in g.intervals():
            a, b = Fraction(int(a.p), int(a.q)), Fraction(int(b.p), int(b.q))
            roots.append((a, b))
            if a == b:
                rk = la.rank(member(a))
                points.append(PencilPoint((a, Fraction(1)), True, rk, la.inertia(member(a)), "root"))
                continue
            owner = next(f for f in factors if f.count_roots(sp.Rational(a.numerator, a.denominator), sp.Rational(b.numerator, b.denominator)) > 0)
            if owner.degree() == 1:
                c1, c0 = owner.all_coeffs()
                alpha = -Fraction(int(c0.p), int(c0.q)) / Fraction(int(c1.p), int(c1.q))
                rk = la.rank(member(alpha))
                points.append(PencilPoint((alpha, Fraction(1)), True, rk, la.inertia(member(alpha)), "root"))
                continue
            rk = _rank_mod(M, t, owner)
            refined = owner.intervals(eps=sp.Rational(1, 10**45), inf=sp.Rational(a.numerator, a.denominator), sup=sp.Rational(b.numerator, b.denominator))
            (lo, hi), _ = refined[0]
            with mpmath.workdps(60):
                alpha = (mpmath.mpf(int(lo.p)) / int(lo.q) + mpmath.mpf(int(hi.p)) / int(hi.q)) / 2
                inert = _numeric_inertia(mats, alpha, d - rk)
            points.append(PencilPoint((float(alpha), 1.0), False, rk, inert, "root"))
    # one rational sample per arc
    if roots:
        samples = [math.floor(roots[0][0]) - 1]
        for (a0, b0), (a1, b1) in zip(roots, roots[1:]):
            samples.append((b0 + a1) / 2)
        samples.append(math.ceil(roots[-1][1]) + 1)
    else:
        samples = [Fraction(0)]
    for s in samples:
        s = Fraction(s)
        m = member(s)
        points.append(PencilPoint((s, Fraction(1)), True, la.rank(m), la.inertia(m), "arc"))
    return tuple(points)


def _min_rank_from_points(points: Sequence[PencilPoint]) -> PencilPoint:
    # prefer exact witnesses, then the earliest point
    return min(points, key=lambda p: (p.rank, not p.exact_y))


def min_rank_pencil(Q: QuadTuple, seed: int = 0, samples: int = 64) -> PencilRank:
    """Minimal rank of sum_j y_j A_j over y != 0, with a witness y."""
    mats = _mats(Q)
    if Q.n <= 2:
        best = _min_rank_from_points(pencil_profile(Q))
        return PencilRank(best.rank, best.y, True, best.exact_y)
    return _min_rank_search(Q, mats, seed, samples)


def _dependency(mats: list[la.Matrix]) -> list[Fraction] | None:
    """A nonzero y with sum y_j A_j = 0, if the forms are linearly dependent."""
    d = len(mats[0])
    cols = [[m[i][j] for i in range(d) for j in range(i, d)] for m in mats]
    kernel = la.nullspace(la.transpose(cols), len(mats))
    return kernel[0] if kernel else None


def _min_rank_search(Q: QuadTuple, mats, seed: int, samples: int) -> PencilRank:
    n = Q.n
    dep = _dependency(mats)
    if dep is not None:
        return PencilRank(0, tuple(dep), True)
    lower = 1
    best: tuple[int, tuple, bool] | None = None

    def consider(y, exact_y=True, rank_value=None):
        nonlocal best
        r = rank_value if rank_value is not None else la.rank(la.linear_combination(mats, y))
        if best is None or r < best[0]:
            best = (r, tuple(y), exact_y)

    for j in range(n):
        consider([Fraction(int(k == j)) for k in range(n)])
    for i, j in itertools.combinations(range(n), 2):
        for s in (1, -1):
            y = [Fraction(0)] * n
            y[i], y[j] = Fraction(1), Fraction(s)
            consider(y)
        sub = QuadTuple((Q.forms[i], Q.forms[j]))
        pt = _min_rank_from_points(pencil_profile(sub))
        y = [0.0 if not pt.exact_y else Fraction(0)] * n
        y[i], y[j] = pt.y
        consider(y, pt.exact_y, pt.rank)
    rng = random.Random(seed)
    for _ in range(samples):
        consider([Fraction(rng.randint(-5, 5)) for _ in range(n)] or [Fraction(1)])
    r, y, ex = best
    return PencilRank(r, y, r == lower, ex)


# ---------------------------------------------------------------------------
# restriction of a single form to subspaces


def restricted_min_rank(inertia: tuple[int, int, int], dim: int) -> int:
    """Minimal rank of a form with the given inertia restricted to a dim-dimensional subspace."""
    p, m, z = inertia
    e = max(0, dim - z)
    h = min(p, m)
    return max(0, 2 * e - (p + m), e - h)


def _isotropic_subspace(C: np.ndarray, inertia: tuple[int, int, int], dim: int) -> np.ndarray:
    """Columns spanning a dim-dimensional subspace on which C has minimal rank."""
    w, v = np.linalg.eigh(C)
    p, m, z = inertia
    order = np.argsort(np.abs(w))
    kernel = [v[:, i] for i in order[:z]]
    rest = order[z:]
    pos = [v[:, i] / math.sqrt(w[i]) for i in rest if w[i] > 0]
    neg = [v[:, i] / math.sqrt(-w[i]) for i in rest if w[i] < 0]
    h = min(len(pos), len(neg))
    iso = [pos[i] + neg[i] for i in range(h)]
    singles = pos[h:] + neg[h:]
    partners = [pos[i] - neg[i] for i in range(h)]
    ordered = kernel + iso + singles + partners
    return np.column_stack(ordered[:dim])


# ---------------------------------------------------------------------------
# the d-invariant


@dataclass
class DInvariantResult:
    """Upper bound on the invariant with a certificate attaining it.

    ``certificate`` holds (M1, M2): M1 is d x d of rank d', M2 is n x n' of
    rank n'.  Entries are Fractions when ``certificate_exact`` and floats
    otherwise (irrational witnesses).
    """

    value: int
    exact: bool
    certificate: tuple
    certificate_exact: bool
    lower_bound: int
    search_log: list[str] = field(default_factory=list)
    d_sub: int = 0
    n_sub: int = 0

    def recompute(self, Q: QuadTuple) -> int:
        """Essential-variable count of the certified composition."""
        M1, M2 = self.certificate
        if self.d_sub == 0 or self.n_sub == 0:
            return 0
        if self.certificate_exact:
            return nv(change_of_variables(Q, M1, M2))
        A = Q.matrices_float()
        m1 = np.array(M1, dtype=float)
        m2 = np.array(M2, dtype=float)
        forms = np.einsum("jab,jk->kab", np.einsum("ia,jib,bc->jac", m1, A, m1), m2)
        scale = max(1.0, float(np.abs(forms).max()))
        used = np.any(np.abs(forms) > 1e-9 * scale, axis=(0, 2))
        return int(used.sum())

    def certificate_ranks(self) -> tuple[int, int]:
        M1, M2 = self.certificate
        if self.d_sub == 0 or self.n_sub == 0:
            return (0 if self.d_sub == 0 else self.d_sub, 0 if self.n_sub == 0 else self.n_sub)
        if self.certificate_exact:
            return la.rank(la.to_fractions(M1)), la.rank(la.to_fractions(M2))
        return int(np.linalg.matrix_rank(np.array(M1, float))), int(np.linalg.matrix_rank(np.array(M2, float)))


def _evaluate_subspace(mats, V: list[list[Fraction]], W: list[list[Fraction]]):
    """Exact essential-variable count for columns V (in Q^d) and W (in Q^n)."""
    d = len(mats[0])
    dp = len(V)
    combos = [la.linear_combination(mats, w) for w in W]
    vt = V  # rows are the vectors
    vmat = la.transpose(vt)  # d x d'
    stack = []
    for C in combos:
        B = la.matmul(vt, la.matmul(C, vmat))
        stack.extend(B)
    kernel = la.nullspace(stack, dp) if stack else [[Fraction(int(i == j)) for i in range(dp)] for j in range(dp)]
    comp = la.complete_basis(kernel, dp)
    T = la.transpose(comp + kernel)  # d' x d' with kernel last
    newV = la.matmul(vmat, T)  # d x d'
    value = dp - len(kernel)
    M1 = [[newV[i][c] if c < dp else Fraction(0) for c in range(d)] for i in range(d)]
    M2 = la.transpose(W) if W else [[] for _ in mats]
    return value, M1, M2


def _evaluate_float(mats, V: np.ndarray, W: np.ndarray):
    """Float counterpart of _evaluate_subspace (columns of V and W)."""
    A = np.array([[[float(v) for v in r] for r in m] for m in mats])
    d = A.shape[1]
    dp = V.shape[1]
    combos = np.einsum("jab,jk->kab", A, W)
    restricted = np.einsum("ai,kab,bc->kic", V, combos, V)
    stack = restricted.reshape(-1, dp)
    _, s, vh = np.linalg.svd(stack) if stack.size else (None, np.zeros(0), np.eye(dp))
    tol = 1e-9 * max(1.0, s.max() if s.size else 0.0)
    r = int((s > tol).sum())
    T = vh.T  # columns: row space first, kernel last
    newV = V @ T
    M1 = np.zeros((d, d))
    M1[:, :dp] = newV
    return r, M1.tolist(), W.tolist()


def _vector_family(d: int) -> list[list[Fraction]]:
    vecs = [[Fraction(int(k == i)) for k in range(d)] for i in range(d)]
    for i, j in itertools.combinations(range(d), 2):
        for s in (1, -1):
            v = [Fraction(0)] * d
            v[i], v[j] = Fraction(1), Fraction(s)
            vecs.append(v)
    return vecs


def _independent(vectors) -> bool:
    return la.rank([list(v) for v in vectors]) == len(vectors)


def _lower_bound(Q: QuadTuple, dp: int, np_: int, log: list[str]) -> tuple[int, object]:
    """Certified lower bound; also returns a float certificate when it is attained constructively."""
    d, n = Q.d, Q.n
    mats = _mats(Q)
    lb = 0
    attained = None
    if dp == d and np_ == n:
        stack = [list(itertools.chain.from_iterable(m[i] for m in mats)) for i in range(d)]
        lb = la.rank(stack)
        log.append(f"lower bound {lb}: rank of the stacked matrix")
        return lb, None
    if n <= 2:
        points = pencil_profile(Q)
        if all(p.inertia is not None for p in points):
            vals = [(restricted_min_rank(p.inertia, dp), i) for i, p in enumerate(points)]
            best, idx = min(vals)
            if best > lb:
                lb = best
                log.append(f"lower bound {lb}: single-form restriction bound over the pencil")
            pt = points[idx]
            if np_ == 1:
                attained = (best, pt)
        definite = any(p.inertia is not None and (p.inertia[0] == d or p.inertia[1] == d) for p in points)
        if np_ == n and definite:
            lb = dp
            log.append(f"lower bound {lb}: the pencil contains a definite member")
        if dp == 1 and np_ == n and d == 2 and n == 2 and lb < 1:
            if not _common_real_zero_binary(mats):
                lb = 1
                log.append("lower bound 1: the two binary forms have no common real zero")
    else:
        pd = _find_definite_member(mats)
        if np_ == n and pd is not None:
            lb = dp
            log.append(f"lower bound {lb}: definite member found at y={_fmt_vec(pd)}")
    return lb, attained


def _fmt_vec(v) -> str:
    return "(" + ",".join(str(x) for x in v) + ")"


def _find_definite_member(mats, tries: int = 200, seed: int = 0) -> list[Fraction] | None:
    n = len(mats)
    cands = [[Fraction(int(k == j)) for k in range(n)] for j in range(n)]
    rng = random.Random(seed)
    cands += [[Fraction(rng.randint(-6, 6)) for _ in range(n)] for _ in range(tries)]
    for y in cands:
        C = la.linear_combination(mats, y)
        if la.is_positive_definite(C):
            return y
        if la.is_positive_definite([[-v for v in r] for r in C]):
            return [-v for v in y]
    return None


def _common_real_zero_binary(mats) -> bool:
    """Whether two binary quadratic forms share a nonzero real zero."""
    s = sp.Symbol("s")
    polys = []
    for m in mats:
        a, b, c = m[0][0], 2 * m[0][1], m[1][1]
        polys.append(sp.Poly(sp.Rational(a) * s**2 + sp.Rational(b) * s + sp.Rational(c), s, domain="QQ"))
    # zero at (1:0) means the x1^2 coefficients vanish
    if all(m[0][0] == 0 for m in mats):
        return True
    nonzero = [p for p in polys if not p.is_zero]
    if not nonzero:
        return True
    g = nonzero[0]
    for p in nonzero[1:]:
        g = sp.gcd(g, p)
    return g.degree() > 0 and g.count_roots() > 0


def d_invariant(Q: QuadTuple, d_sub: int, n_sub: int, budget: int = 4096, seed: int = 0) -> DInvariantResult:
    """Best essential-variable count over rank-d_sub maps and n_sub combinations.

    The value is an upper bound attained by the returned certificate.  It is
    flagged exact when it meets a certified lower bound.
    """
    d, n = Q.d, Q.n
    if not (0 <= d_sub <= d and 0 <= n_sub <= n):
        raise PreconditionError("0<=d'<=d, 0<=n'<=n", f"got d'={d_sub}, n'={n_sub}")
    log: list[str] = []
    if d_sub == 0 or n_sub == 0:
        M1 = [[Fraction(0)] * d for _ in range(d)]
        M2 = [[Fraction(0)] * n_sub for _ in range(n)] if n_sub else [[] for _ in range(n)]
        if d_sub:
            for i in range(d_sub):
                M1[i][i] = Fraction(1)
        if n_sub:
            for i in range(n_sub):
                M2[i][i] = Fraction(1)
        log.append("empty composition")
        return DInvariantResult(0, True, (M1, M2), True, 0, log, d_sub, n_sub)
    mats = _mats(Q)
    lb, attained = _lower_bound(Q, d_sub, n_sub, log)

    best: list = [None]  # (value, M1, M2, exact_cert)
    evaluations = 0
    exhausted = False

    def record(value, M1, M2, exact_cert=True):
        cur = best[0]
        if cur is None or value < cur[0] or (value == cur[0] and exact_cert and not cur[3]):
            best[0] = (value, M1, M2, exact_cert)

    def try_exact(V, W) -> bool:
        nonlocal evaluations, exhausted
        if evaluations >= budget:
            exhausted = True
            return False
        evaluations += 1
        value, M1, M2 = _evaluate_subspace(mats, V, W)
        record(value, M1, M2)
        return best[0][0] <= lb

    unit_d = [[Fraction(int(k == i)) for k in range(d)] for i in range(d)]
    unit_n = [[Fraction(int(k == i)) for k in range(n)] for i in range(n)]

    def w_candidates(V):
        if n_sub == n:
            yield unit_n
            return
        for S in itertools.combinations(range(n), n_sub):
            yield [unit_n[i] for i in S]
        # combinations vanishing identically on V come first in the completion
        restricted = []
        vmat = la.transpose(V)
        for m in mats:
            B = la.matmul(V, la.matmul(m, vmat))
            restricted.append([x for row in B for x in row])
        kernel = la.nullspace(la.transpose(restricted), n)
        if kernel:
            W = list(kernel[:n_sub])
            for e in unit_n:
                if len(W) == n_sub:
                    break
                if _independent(W + [e]):
                    W.append(e)
            yield W
        if n_sub == 1:
            for y in _vector_family(n)[n:]:
                yield [y]
            if n <= 2:
                sub = QuadTuple.from_matrices(_restrict(mats, V))
                pt = _min_rank_from_points(pencil_profile(sub))
                if pt.exact_y:
                    yield [list(pt.y)]

    def v_candidates():
        if d_sub == d:
            yield unit_d
            return
        for S in itertools.combinations(range(d), d_sub):
            yield [unit_d[i] for i in S]
        # kernels of rational pencil members, completed by unit vectors
        if n <= 2:
            for pt in pencil_profile(Q):
                if not pt.exact_y:
                    continue
                C = la.linear_combination(mats, list(pt.y))
                ker = la.nullspace(C, d)
                if not ker:
                    continue
                V = ker[:d_sub]
                for e in unit_d:
                    if len(V) == d_sub:
                        break
                    if _independent(V + [e]):
                        V.append(e)
                yield V
        fam = _vector_family(d)
        for combo in itertools.combinations(fam, d_sub):
            if _independent(combo):
                yield [list(v) for v in combo]

    done = False
    for V in v_candidates():
        for W in w_candidates(V):
            if try_exact(V, W):
                done = True
                break
            if exhausted:
                break
        if done or exhausted:
            break
    log.append(f"structured layer: {evaluations} evaluations")
    if not done and not exhausted:
        rng = random.Random(seed)
        for _ in range(64):
            V = [[Fraction(rng.randint(-3, 3)) for _ in range(d)] for _ in range(d_sub)]
            W = [[Fraction(rng.randint(-3, 3)) for _ in range(n)] for _ in range(n_sub)]
            if not (_independent(V) and _independent(W)):
                continue
            if try_exact(V, W) or exhausted:
                break
        log.append(f"random layer: seed {seed}, total {evaluations} evaluations")

    value, M1, M2, cert_exact = best[0]
    if value > lb and attained is not None and attained[0] == lb:
        # the single-form bound is attained by an explicit (possibly irrational) subspace
        pt = attained[1]
        A = np.array([[[float(v) for v in r] for r in m] for m in mats])
        y = np.array([float(v) for v in pt.y])
        C = np.einsum("j,jab->ab", y, A)
        V = _isotropic_subspace(C, pt.inertia, d_sub)
        fv, fM1, fM2 = _evaluate_float(mats, V, y.reshape(n, 1))
        if fv == lb:
            value, M1, M2, cert_exact = fv, fM1, fM2, False
            log.append("bound attained by an isotropic subspace of a pencil member (float certificate)")
    if value > lb and d_sub == d and n_sub == 1:
        pr = min_rank_pencil(Q, seed)
        if pr.rank < value:
            y = pr.witness
            if pr.witness_exact:
                value, M1, M2 = _evaluate_subspace(mats, unit_d, [list(y)])
                cert_exact = True
            else:
                fv, M1, M2 = _evaluate_float(mats, np.eye(d), np.array(y, float).reshape(n, 1))
                value, cert_exact = fv, False
        if pr.exact:
            lb = max(lb, pr.rank)
    if d_sub == 1 and n_sub < n and value > 0:
        log.append("note: a line is annihilated by n-1 independent combinations")
    exact = value == lb
    if exhausted:
        log.append("budget exhausted")
    return DInvariantResult(value, exact, (M1, M2), cert_exact, lb, log, d_sub, n_sub)


def _restrict(mats, V):
    vmat = la.transpose(V)
    return [la.matmul(V, la.matmul(m, vmat)) for m in mats]


# ---------------------------------------------------------------------------
# determinant integrability


@dataclass
class CmVerdict:
    satisfied: bool | str  # True, False or "inconclusive"
    method: str
    gamma_scan: list[tuple[float, float, bool]]
    details: dict = field(default_factory=dict)


def _det_on_sphere(A: np.ndarray, Y: np.ndarray) -> np.ndarray:
    C = np.einsum("kj,jab->kab", Y, A)
    return np.linalg.det(C)


def _sphere_rule(n: int, N: int) -> tuple[np.ndarray, np.ndarray]:
    """Midpoint nodes and weights on S^{n-1} in spherical coordinates."""
    if n == 1:
        return np.array([[1.0], [-1.0]]), np.array([1.0, 1.0])
    if n == 2:
        th = (np.arange(N) + 0.5) * 2 * np.pi / N
        return np.column_stack([np.cos(th), np.sin(th)]), np.full(N, 2 * np.pi / N)
    # angles phi_1..phi_{n-2} in (0, pi), phi_{n-1} in (0, 2 pi)
    polar = (np.arange(N) + 0.5) * np.pi / N
    azim = (np.arange(2 * N) + 0.5) * np.pi / N
    grids = np.meshgrid(*([polar] * (n - 2) + [azim]), indexing="ij")
    angles = [g.ravel() for g in grids]
    pts = np.ones((angles[0].size, n))
    w = np.full(angles[0].size, (np.pi / N) ** (n - 1))
    sin_prod = np.ones(angles[0].size)
    for i, ang in enumerate(angles):
        pts[:, i] = sin_prod * np.cos(ang)
        if i < n - 2:
            w *= np.sin(ang) ** (n - 2 - i)
        sin_prod = sin_prod * np.sin(ang)
    pts[:, n - 1] = sin_prod
    return pts, w


def cm_integral_probe(Q: QuadTuple, gamma: float, sphere_nodes: int = 256) -> tuple[float, bool]:
    """Quadrature of |det(sum y_j A_j)|^(-gamma) over the unit sphere at N and 4N nodes.

    Divergence is flagged when refinement grows the estimate by more than a
    factor 2.  This is a heuristic: integrable singularities converge slowly
    and non-integrable ones blow up, but no proof is attempted.
    """
    n, d = Q.n, Q.d
    if not 0 < gamma < n / d:
        raise PreconditionError("0<gamma<n/d", f"gamma={gamma}, n/d={n / d:.6g}")
    if sphere_nodes < 16:
        raise PreconditionError("sphere_nodes>=16", f"got {sphere_nodes}")
    A = Q.matrices_float()
    estimates = []
    for N in (sphere_nodes, 4 * sphere_nodes):
        Y, w = _sphere_rule(n, N)
        dets = np.abs(_det_on_sphere(A, Y))
        with np.errstate(divide="ignore"):
            vals = np.where(dets > 0, dets ** (-gamma), np.inf)
        estimates.append(float(np.sum(w * vals)))
    coarse, fine = estimates
    divergent = not math.isfinite(fine) or fine > 2 * coarse
    return fine, divergent


def cm_check_3_2(Q: QuadTuple, gammas: Sequence[float] = (0.2, 0.4, 0.6), sphere_nodes: int = 256) -> CmVerdict:
    """Determinant integrability for two forms in three variables via sub-invariants."""
    if Q.d != 3 or Q.n != 2:
        raise PreconditionError("d=3,n=2", f"got d={Q.d}, n={Q.n}")
    full = d_invariant(Q, 3, 2)
    if full.value != 3:
        raise PreconditionError("d_{3,2}(Q)=3", f"value is {full.value}")
    r31 = d_invariant(Q, 3, 1)
    r22 = d_invariant(Q, 2, 2)
    failing = [r for r in (r31, r22) if (r.exact and r.value != 2) or r.value < 2]
    if failing:
        satisfied: bool | str = False
    elif r31.exact and r22.exact:
        satisfied = True
    else:
        satisfied = "inconclusive"
    scan = []
    for g in gammas:
        est, div = cm_integral_probe(Q, g, sphere_nodes)
        scan.append((g, est, div))
    details = {
        "d31": (r31.value, r31.exact),
        "d22": (r22.value, r22.exact),
        "d32": (full.value, full.exact),
    }
    return CmVerdict(satisfied, "characterization_3_2", scan, details)


# ---------------------------------------------------------------------------
# pairs of binary forms


CANONICAL_FORMS = {
    "XiSq_XiXj": np.array([[[1.0, 0.0], [0.0, 0.0]], [[0.0, 0.5], [0.5, 0.0]]]),
    "XiSq_XjSq": np.array([[[1.0, 0.0], [0.0, 0.0]], [[0.0, 0.0], [0.0, 1.0]]]),
    "Hyperbolic_Pair": np.array([[[0.0, 0.5], [0.5, 0.0]], [[1.0, 0.0], [0.0, -1.0]]]),
}


@dataclass
class CanonicalClass2x2:
    cls: str
    transforms: tuple[np.ndarray, np.ndarray] | None
    residual: float
    invariants: dict = field(default_factory=dict)
    tolerance: float = 1e-9


def _apply(A: np.ndarray, M1: np.ndarray, M2: np.ndarray) -> np.ndarray:
    pulled = np.einsum("ai,jab,bc->jic", M1, A, M1)
    return np.einsum("jab,jk->kab", pulled, M2)


def _rank_one_factor(C: np.ndarray) -> tuple[float, np.ndarray]:
    """C = eps * l l^T for a rank-one symmetric C."""
    w, v = np.linalg.eigh(C)
    i = int(np.argmax(np.abs(w)))
    return float(np.sign(w[i])), v[:, i] * math.sqrt(abs(w[i]))


def _transforms(cls: str, A: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Constructive change of variables taking A to the canonical pair of ``cls``."""
    a, b, c = _pencil_det_coeffs(A)
    if cls == "XiSq_XjSq":
        roots = _binary_roots(a, b, c)
        ys = [np.array(r) for r in roots]
        rows, cols = [], []
        for y in ys:
            eps, ell = _rank_one_factor(np.einsum("j,jab->ab", y, A))
            rows.append(ell)
            cols.append(eps * y)
        L = np.array(rows)
        return np.linalg.inv(L), np.column_stack(cols)
    if cls == "XiSq_XiXj":
        # the determinant is a perfect square; take its double root directly
        if abs(a) >= abs(c):
            y1 = np.array([-b / (2 * a), 1.0]) if a else np.array([1.0, 0.0])
        else:
            y1 = np.array([1.0, -b / (2 * c)])
        y1 = y1 / np.linalg.norm(y1)
        eps, ell = _rank_one_factor(np.einsum("j,jab->ab", y1, A))
        other = np.array([-y1[1], y1[0]])
        m = np.array([-ell[1], ell[0]])
        L = np.array([ell, m])
        M1 = np.linalg.inv(L)
        C2 = M1.T @ np.einsum("j,jab->ab", other, A) @ M1
        alpha, beta = C2[0, 0], C2[0, 1]
        col1 = eps * y1
        col2 = (other - alpha * eps * y1) / (2 * beta)
        return M1, np.column_stack([col1, col2])
    # hyperbolic pair
    C1 = A[0]
    w, v = np.linalg.eigh(C1)
    u = v[:, 1] * math.sqrt(w[1])
    wv = v[:, 0] * math.sqrt(-w[0])
    L = np.array([u - wv, u + wv])  # C1 = z1 * z2 in these coordinates
    M1 = np.linalg.inv(L)
    C2 = M1.T @ A[1] @ M1
    a2, b2, c2 = C2[0, 0], C2[0, 1], C2[1, 1]
    # C2 - 2 b2 C1 = a2 z1^2 + c2 z2^2 with a2 c2 < 0
    S = np.diag([1 / math.sqrt(abs(a2)), 1 / math.sqrt(abs(c2))])
    M1 = M1 @ S
    scale1 = math.sqrt(abs(a2 * c2))
    col1 = np.array([scale1, 0.0])
    col2 = np.sign(a2) * (np.array([0.0, 1.0]) - 2 * b2 * np.array([1.0, 0.0]))
    return M1, np.column_stack([col1, col2])


def _pencil_det_coeffs(A: np.ndarray) -> tuple[float, float, float]:
    """det(s A1 + t A2) = a s^2 + b s t + c t^2."""
    a = np.linalg.det(A[0])
    c = np.linalg.det(A[1])
    b = A[0][0, 0] * A[1][1, 1] + A[0][1, 1] * A[1][0, 0] - 2 * A[0][0, 1] * A[1][0, 1]
    return float(a), float(b), float(c)


def _binary_roots(a: float, b: float, c: float) -> list[tuple[float, float]]:
    """Real projective zeros (s, t) of a s^2 + b s t + c t^2, as unit vectors."""
    out = []
    if abs(a) < 1e-14 * max(1.0, abs(b), abs(c)):
        out.append((1.0, 0.0))  # s-direction is a root
        if abs(b) > 1e-14:
            # remaining root b s + c t = 0
            out.append((-c, b))
    else:
        disc = b * b - 4 * a * c
        if disc < -1e-14 * max(1.0, b * b):
            return []
        disc = max(disc, 0.0)
        for sgn in ((1, -1) if disc > 0 else (1,)):
            # root in t = 1 chart: a s^2 + b s + c = 0
            s = (-b + sgn * math.sqrt(disc)) / (2 * a)
            out.append((s, 1.0))
    return [tuple(np.array(r) / np.linalg.norm(r)) for r in out]


def _canonical_match(Q: QuadTuple) -> str | None:
    A = Q.matrices_float()
    for name, ref in CANONICAL_FORMS.items():
        if np.array_equal(A, ref):
            return name
    return None


def classify_2x2(Q: QuadTuple, tolerance: float = 1e-9) -> CanonicalClass2x2:
    """Normal form of a pair of binary quadratic forms."""
    if Q.d != 2 or Q.n != 2:
        raise PreconditionError("d=n=2", f"got d={Q.d}, n={Q.n}")
    d22 = d_invariant(Q, 2, 2)
    d21 = d_invariant(Q, 2, 1)
    d12 = d_invariant(Q, 1, 2)
    inv = {"d22": d22.value, "d21": d21.value, "d12": d12.value}
    for name, r in (("d22", d22), ("d21", d21), ("d12", d12)):
        if not r.exact:
            raise PreconditionError(f"{name} exact", "sub-invariant could not be certified")
    if d22.value < 2 or d21.value == 0:
        return CanonicalClass2x2("Degenerate", None, float("nan"), inv, tolerance)
    if d21.value == 2:
        cls = "Hyperbolic_Pair"
    elif d12.value == 0:
        cls = "XiSq_XiXj"
    else:
        cls = "XiSq_XjSq"
    if _canonical_match(Q) == cls:
        M1, M2 = np.eye(2), np.eye(2)
    else:
        A = Q.matrices_float()
        A = A / np.abs(A).max()
        M1, M2 = _transforms(cls, A)
        # fold the normalization into M2
        M2 = M2 / float(np.abs(Q.matrices_float()).max())
    A = Q.matrices_float()
    scale = np.abs(A).max()
    out = _apply(A, M1, M2)
    # residual on unit-normalized input: rescale M2 back to the normalized tuple
    residual = float(np.abs(out - CANONICAL_FORMS[cls]).max())
    res_norm = float(np.abs(_apply(A / scale, M1, M2 * scale) - CANONICAL_FORMS[cls]).max())
    residual = max(residual, res_norm)
    return CanonicalClass2x2(cls, (M1, M2), residual, inv, tolerance)


# ---------------------------------------------------------------------------


def hurwitz_radon(d: int) -> int:
    """rho(d) = 8a + 2^b where d = 2^(4a+b) c, c odd, 0 <= b <= 3."""
    if d < 1:
        raise ValueError("d must be positive")
    v = 0
    while d % 2 == 0:
        d //= 2
        v += 1
    a, b = divmod(v, 4)
    return 8 * a + 2**b
