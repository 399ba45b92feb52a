"""Small exact linear-algebra kernel over the rationals."""

from __future__ import annotations

from fractions import Fraction
from typing import Sequence

Matrix = list[list[Fraction]]


def to_fractions(rows: Sequence[Sequence]) -> Matrix:
    return [[v if isinstance(v, Fraction) else Fraction(v) for v in r] for r in rows]


def identity(d: int) -> Matrix:
    return [[Fraction(int(i == j)) for j in range(d)] for i in range(d)]


def transpose(a: Matrix) -> Matrix:
    return [list(col) for col in zip(*a)] if a else []


def matmul(a: Matrix, b: Matrix) -> Matrix:
    bt = transpose(b)
    return [[sum((x * y for x, y in zip(row, col) if x and y), Fraction(0)) for col in bt] for row in a]


def row_echelon(a: Matrix) -> tuple[Matrix, list[int]]:
    """Reduced row echelon form and pivot columns."""
    m = [list(r) for r in a]
    rows = len(m)
    cols = len(m[0]) if rows else 0
    pivots: list[int] = []
    r = 0
    for c in range(cols):
        piv = next((i for i in range(r, rows) if m[i][c] != 0), None)
        if piv is None:
            continue
        m[r], m[piv] = m[piv], m[r]
        inv = 1 / m[r][c]
        m[r] = [v * inv for v in m[r]]
        for i in range(rows):
            if i != r and m[i][c] != 0:
                f = m[i][c]
                m[i] = [x - f * y for x, y in zip(m[i], m[r])]
        pivots.append(c)
        r += 1
        if r == rows:
            break
    return m, pivots


def rank(a: Matrix) -> int:
    if not a or not a[0]:
        return 0
    return len(row_echelon(a)[1])


def nullspace(a: Matrix, ncols: int | None = None) -> list[list[Fraction]]:
    """Basis of {v : a v = 0}."""
    cols = ncols if ncols is not None else (len(a[0]) if a else 0)
    if not a:
        return [[Fraction(int(i == j)) for i in range(cols)] for j in range(cols)]
    m, pivots = row_echelon(a)
    free = [c for c in range(cols) if c not in pivots]
    basis = []
    for f in free:
        v = [Fraction(0)] * cols
        v[f] = Fraction(1)
        for row_idx, pc in enumerate(pivots):
            v[pc] = -m[row_idx][f]
        basis.append(v)
    return basis


def complete_basis(vectors: list[list[Fraction]], dim: int) -> list[list[Fraction]]:
    """Extend independent vectors to a basis of Q^dim with unit vectors; return the added ones."""
    added = []
    current = [list(v) for v in vectors]
    for i in range(dim):
        e = [Fraction(int(k == i)) for k in range(dim)]
        if rank(current + [e]) > len(current):
            current.append(e)
            added.append(e)
        if len(current) == dim:
            break
    return added


def det(a: Matrix) -> Fraction:
    """Determinant by fraction-free elimination (Bareiss)."""
    n = len(a)
    if n == 0:
        return Fraction(1)
    m = [list(r) for r in a]
    sign = 1
    prev = Fraction(1)
    for k in range(n - 1):
        if m[k][k] == 0:
            sw = next((i for i in range(k + 1, n) if m[i][k] != 0), None)
            if sw is None:
                return Fraction(0)
            m[k], m[sw] = m[sw], m[k]
            sign = -sign
        for i in range(k + 1, n):
            for j in range(k + 1, n):
                m[i][j] = (m[i][j] * m[k][k] - m[i][k] * m[k][j]) / prev
        prev = m[k][k]
    return sign * m[n - 1][n - 1]


def charpoly(a: Matrix) -> list[Fraction]:
    """Coefficients c_0..c_d of det(x I - a), lowest degree first (Faddeev-LeVerrier)."""
    n = len(a)
    coeffs = [Fraction(0)] * (n + 1)
    coeffs[n] = Fraction(1)
    m = [[Fraction(0)] * n for _ in range(n)]
    for k in range(1, n + 1):
        # M_k = A M_{k-1} + c_{n-k+1} I
        am = matmul(a, m) if k > 1 else [[Fraction(0)] * n for _ in range(n)]
        for i in range(n):
            am[i][i] += coeffs[n - k + 1]
        m = am
        amk = matmul(a, m)
        tr = sum((amk[i][i] for i in range(n)), Fraction(0))
        coeffs[n - k] = -tr / k
    return coeffs


def _sign_changes(seq: Sequence[Fraction]) -> int:
    signs = [1 if v > 0 else -1 for v in seq if v != 0]
    return sum(1 for s, t in zip(signs, signs[1:]) if s != t)


def inertia(a: Matrix) -> tuple[int, int, int]:
    """(positive, negative, zero) eigenvalue counts of a symmetric rational matrix.

    The characteristic polynomial of a symmetric matrix is real-rooted, so
    Descartes' rule of signs counts its positive and negative roots exactly.
    """
    n = len(a)
    c = charpoly(a)
    z = next(i for i, v in enumerate(c) if v != 0)
    pos = _sign_changes(c[z:])
    neg_coeffs = [v * (-1) ** i for i, v in enumerate(c)]
    neg = _sign_changes(neg_coeffs[z:])
    assert pos + neg + z == n, "inertia counts must add up"
    return pos, neg, z


def is_positive_definite(a: Matrix) -> bool:
    """Sylvester's criterion on leading principal minors."""
    n = len(a)
    return all(det([row[:k] for row in a[:k]]) > 0 for k in range(1, n + 1))


def linear_combination(mats: Sequence[Matrix], y: Sequence[Fraction]) -> Matrix:
    d = len(mats[0])
    out = [[Fraction(0)] * d for _ in range(d)]
    for coef, m in zip(y, mats):
        if coef:
            for i in range(d):
                row, src = out[i], m[i]
                for j in range(d):
                    if src[j]:
                        row[j] += coef * src[j]
    return out
