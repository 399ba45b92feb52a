"""Exact rational representation of quadratic-form tuples.

A tuple Q = (Q_1, ..., Q_n) on R^d is stored as n symmetric d x d matrices
with ``Fraction`` entries, using the convention that the mixed monomial
x_i*x_j occupies the two off-diagonal slots with weight 1/2 each.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

Rational = Fraction

__all__ = [
    "Rational",
    "SymMatrix",
    "QuadTuple",
    "MultiPoly",
    "StructuralMeta",
    "SurfaceSpec",
    "SurfaceSyntaxError",
    "MetadataError",
    "DimensionError",
    "parse_surface",
    "serialize_surface",
    "surface_from_tuple",
    "evaluate",
    "gradient_matrix",
    "nv",
    "change_of_variables",
    "as_fraction",
    "monomial_tuple",
]


class DimensionError(ValueError):
    """Raised when vector or matrix shapes do not agree."""


class SurfaceSyntaxError(ValueError):
    """Syntax error in a surface-spec document, with 1-based position."""

    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"line {line}, column {col}: {message}")
        self.reason = message
        self.line = line
        self.col = col


class MetadataError(ValueError):
    """Declared structural metadata disagrees with the expanded tuple."""

    def __init__(self, check: str, detail: str = ""):
        msg = f"metadata check '{check}' failed"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)
        self.check = check
        self.detail = detail


def as_fraction(value) -> Fraction:
    """Convert ints, Fractions or 'a/b' strings to a Fraction.

    Floats are accepted only when they are exactly representable, to avoid
    silently importing binary rounding into the exact layer.
    """
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise TypeError("booleans are not coefficients")
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, str):
        return Fraction(value.strip())
    if isinstance(value, float):
        return Fraction(value)
    # numpy integer scalars and similar
    try:
        return Fraction(int(value)) if int(value) == value else Fraction(value)
    except (TypeError, ValueError) as exc:
        raise TypeError(f"cannot convert {value!r} to a rational") from exc


# ---------------------------------------------------------------------------
# matrices


@dataclass(frozen=True)
class SymMatrix:
    """Symmetric matrix with exact rational entries."""

    entries: tuple[tuple[Fraction, ...], ...]

    def __post_init__(self):
        d = len(self.entries)
        if d == 0:
            raise DimensionError("matrix must have positive dimension")
        rows = tuple(tuple(as_fraction(v) for v in row) for row in self.entries)
        for row in rows:
            if len(row) != d:
                raise DimensionError("matrix must be square")
        for i in range(d):
            for j in range(i + 1, d):
                if rows[i][j] != rows[j][i]:
                    raise ValueError(f"matrix is not symmetric at ({i + 1},{j + 1})")
        object.__setattr__(self, "entries", rows)

    @property
    def dim(self) -> int:
        return len(self.entries)

    def __getitem__(self, ij):
        i, j = ij
        return self.entries[i][j]

    def is_zero(self) -> bool:
        return all(v == 0 for row in self.entries for v in row)

    def rows(self) -> list[list[Fraction]]:
        return [list(r) for r in self.entries]

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence]) -> "SymMatrix":
        return cls(tuple(tuple(as_fraction(v) for v in r) for r in rows))

    @classmethod
    def symmetrized(cls, rows: Sequence[Sequence]) -> tuple["SymMatrix", bool]:
        """Return ((A + A^T)/2, was_asymmetric)."""
        a = [[as_fraction(v) for v in r] for r in rows]
        d = len(a)
        if any(len(r) != d for r in a):
            raise DimensionError("matrix must be square")
        asym = any(a[i][j] != a[j][i] for i in range(d) for j in range(i + 1, d))
        sym = [[(a[i][j] + a[j][i]) / 2 for j in range(d)] for i in range(d)]
        return cls.from_rows(sym), asym

    def to_float(self):
        import numpy as np

        return np.array([[float(v) for v in r] for r in self.entries], dtype=float)


@dataclass(frozen=True)
class QuadTuple:
    """n quadratic forms on R^d, each a SymMatrix."""

    forms: tuple[SymMatrix, ...]
    d: int = field(default=0)

    def __post_init__(self):
        forms = tuple(f if isinstance(f, SymMatrix) else SymMatrix.from_rows(f) for f in self.forms)
        if not forms:
            raise DimensionError("a tuple needs at least one form")
        dims = {f.dim for f in forms}
        if len(dims) != 1:
            raise DimensionError("all forms must share the same dimension")
        dim = dims.pop()
        if self.d not in (0, dim):
            raise DimensionError(f"declared d={self.d} but forms have dimension {dim}")
        object.__setattr__(self, "forms", forms)
        object.__setattr__(self, "d", dim)

    @property
    def n(self) -> int:
        return len(self.forms)

    @classmethod
    def from_matrices(cls, mats: Iterable[Sequence[Sequence]]) -> "QuadTuple":
        return cls(tuple(SymMatrix.from_rows(m) for m in mats))

    def matrices_float(self):
        import numpy as np

        return np.stack([f.to_float() for f in self.forms])

    def component_poly(self, j: int) -> "MultiPoly":
        """Q_j as a MultiPoly (j is 0-based)."""
        a = self.forms[j].entries
        terms: dict[tuple[int, ...], Fraction] = {}
        for i in range(self.d):
            for k in range(i, self.d):
                c = a[i][i] if i == k else 2 * a[i][k]
                if c:
                    e = [0] * self.d
                    e[i] += 1
                    e[k] += 1
                    terms[tuple(e)] = terms.get(tuple(e), Fraction(0)) + c
        return MultiPoly(self.d, terms)

    def __str__(self) -> str:
        return "(" + ", ".join(self.component_poly(j).to_str() for j in range(self.n)) + ")"


def monomial_tuple(d: int, comps: Sequence[Sequence[tuple]]) -> QuadTuple:
    """Build a tuple from per-component lists of (coef, i, j) with 1-based i, j.

    ``(c, i, i)`` is c*x_i^2 and ``(c, i, j)`` with i != j is c*x_i*x_j.
    """
    mats = []
    for comp in comps:
        a = [[Fraction(0)] * d for _ in range(d)]
        for c, i, j in comp:
            c = as_fraction(c)
            if i == j:
                a[i - 1][i - 1] += c
            else:
                a[i - 1][j - 1] += c / 2
                a[j - 1][i - 1] += c / 2
        mats.append(a)
    return QuadTuple.from_matrices(mats)


# ---------------------------------------------------------------------------
# polynomials


class MultiPoly:
    """Sparse multivariate polynomial with rational coefficients."""

    __slots__ = ("nvars", "terms")

    def __init__(self, nvars: int, terms: Mapping[tuple[int, ...], Fraction] | None = None):
        self.nvars = nvars
        clean: dict[tuple[int, ...], Fraction] = {}
        for e, c in (terms or {}).items():
            e = tuple(int(v) for v in e)
            if len(e) != nvars:
                raise DimensionError("exponent vector length differs from variable count")
            if any(v < 0 for v in e):
                raise ValueError("negative exponent")
            c = as_fraction(c)
            if c:
                clean[e] = clean.get(e, Fraction(0)) + c
                if not clean[e]:
                    del clean[e]
        self.terms = clean

    # constructors
    @classmethod
    def zero(cls, nvars: int) -> "MultiPoly":
        return cls(nvars, {})

    @classmethod
    def const(cls, nvars: int, c) -> "MultiPoly":
        return cls(nvars, {(0,) * nvars: as_fraction(c)})

    @classmethod
    def var(cls, nvars: int, i: int, c=1) -> "MultiPoly":
        """c * x_i with 0-based i."""
        e = [0] * nvars
        e[i] = 1
        return cls(nvars, {tuple(e): as_fraction(c)})

    # arithmetic
    def _check(self, other: "MultiPoly"):
        if other.nvars != self.nvars:
            raise DimensionError("polynomials live in different rings")

    def __add__(self, other):
        if not isinstance(other, MultiPoly):
            other = MultiPoly.const(self.nvars, other)
        self._check(other)
        out = dict(self.terms)
        for e, c in other.terms.items():
            out[e] = out.get(e, Fraction(0)) + c
        return MultiPoly(self.nvars, out)

    __radd__ = __add__

    def __neg__(self):
        return MultiPoly(self.nvars, {e: -c for e, c in self.terms.items()})

    def __sub__(self, other):
        if not isinstance(other, MultiPoly):
            other = MultiPoly.const(self.nvars, other)
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, MultiPoly):
            c = as_fraction(other)
            return MultiPoly(self.nvars, {e: c * v for e, v in self.terms.items()})
        self._check(other)
        out: dict[tuple[int, ...], Fraction] = {}
        for e1, c1 in self.terms.items():
            for e2, c2 in other.terms.items():
                e = tuple(a + b for a, b in zip(e1, e2))
                out[e] = out.get(e, Fraction(0)) + c1 * c2
        return MultiPoly(self.nvars, out)

    __rmul__ = __mul__

    def __eq__(self, other):
        if isinstance(other, MultiPoly):
            return self.nvars == other.nvars and self.terms == other.terms
        if other == 0:
            return not self.terms
        return NotImplemented

    def __hash__(self):
        return hash((self.nvars, frozenset(self.terms.items())))

    def __repr__(self):
        return f"MultiPoly({self.to_str()})"

    # queries
    def is_zero(self) -> bool:
        return not self.terms

    def total_degree(self) -> int:
        return max((sum(e) for e in self.terms), default=-1)

    def sorted_terms(self) -> list[tuple[tuple[int, ...], Fraction]]:
        """Terms by descending total degree, then descending exponent vector."""
        return sorted(self.terms.items(), key=lambda t: (-sum(t[0]), tuple(-v for v in t[0])))

    def evaluate(self, point: Sequence) -> Fraction:
        if len(point) != self.nvars:
            raise DimensionError("point has wrong length")
        pt = [as_fraction(v) for v in point]
        total = Fraction(0)
        for e, c in self.terms.items():
            term = c
            for v, k in zip(pt, e):
                if k:
                    term *= v**k
            total += term
        return total

    def evaluate_float(self, point) -> float:
        total = 0.0
        for e, c in self.terms.items():
            term = float(c)
            for v, k in zip(point, e):
                if k:
                    term *= float(v) ** k
            total += term
        return total

    def substitute_linear(self, images: Sequence["MultiPoly"]) -> "MultiPoly":
        """Replace x_i by images[i] (all in a common ring)."""
        if len(images) != self.nvars:
            raise DimensionError("need one image per variable")
        m = images[0].nvars if images else 0
        out = MultiPoly.zero(m)
        for e, c in self.terms.items():
            term = MultiPoly.const(m, c)
            for img, k in zip(images, e):
                for _ in range(k):
                    term = term * img
            out = out + term
        return out

    def to_str(self, names: Sequence[str] | None = None) -> str:
        if not self.terms:
            return "0"
        names = list(names) if names else [f"x{i + 1}" for i in range(self.nvars)]
        parts: list[str] = []
        for e, c in self.sorted_terms():
            factors = []
            for name, k in zip(names, e):
                if k == 1:
                    factors.append(name)
                elif k > 1:
                    factors.append(f"{name}^{k}")
            mono = "*".join(factors)
            mag = abs(c)
            if not mono:
                body = _frac_str(mag)
            elif mag == 1:
                body = mono
            else:
                body = f"{_frac_str(mag)}*{mono}"
            sign = "-" if c < 0 else "+"
            parts.append((sign, body))
        first_sign, first_body = parts[0]
        text = ("-" if first_sign == "-" else "") + first_body
        for sign, body in parts[1:]:
            text += f" {sign} {body}"
        return text


def _frac_str(c: Fraction) -> str:
    return str(c.numerator) if c.denominator == 1 else f"{c.numerator}/{c.denominator}"


# ---------------------------------------------------------------------------
# basic operations


def evaluate(Q: QuadTuple, xi: Sequence) -> tuple[Fraction, ...]:
    """Exact values (xi^T A_j xi)_j."""
    if len(xi) != Q.d:
        raise DimensionError(f"expected a vector of length {Q.d}, got {len(xi)}")
    v = [as_fraction(t) for t in xi]
    out = []
    for f in Q.forms:
        a = f.entries
        s = Fraction(0)
        for i in range(Q.d):
            if v[i] == 0:
                continue
            row = a[i]
            s += v[i] * sum((row[k] * v[k] for k in range(Q.d) if row[k] and v[k]), Fraction(0))
        out.append(s)
    return tuple(out)


def gradient_matrix(Q: QuadTuple) -> list[list[MultiPoly]]:
    """n x d matrix whose (j, k) entry is the linear polynomial 2 (A_j xi)_k."""
    grad = []
    for f in Q.forms:
        row = []
        for k in range(Q.d):
            terms = {}
            for i in range(Q.d):
                c = 2 * f.entries[k][i]
                if c:
                    e = [0] * Q.d
                    e[i] = 1
                    terms[tuple(e)] = c
            row.append(MultiPoly(Q.d, terms))
        grad.append(row)
    return grad


def nv(Q: QuadTuple) -> int:
    """Number of variables on which at least one component depends."""
    used = 0
    for k in range(Q.d):
        if any(f.entries[k][i] != 0 for f in Q.forms for i in range(Q.d)):
            used += 1
    return used


def change_of_variables(Q: QuadTuple, M1: Sequence[Sequence], M2: Sequence[Sequence]) -> QuadTuple:
    """Return xi -> Q(M1 xi) . M2, i.e. forms sum_j (M2)_{j,j'} M1^T A_j M1."""
    m1 = [[as_fraction(v) for v in r] for r in M1]
    m2 = [[as_fraction(v) for v in r] for r in M2]
    d = Q.d
    if len(m1) != d or any(len(r) != d for r in m1):
        raise DimensionError(f"M1 must be {d}x{d}")
    if len(m2) != Q.n or not m2 or any(len(r) != len(m2[0]) for r in m2):
        raise DimensionError(f"M2 must have {Q.n} rows of equal length")
    n_out = len(m2[0])
    if n_out < 1:
        raise DimensionError("M2 needs at least one column")
    pulled = []
    for f in Q.forms:
        a = f.entries
        am = [[sum((a[i][k] * m1[k][c] for k in range(d) if a[i][k] and m1[k][c]), Fraction(0)) for c in range(d)] for i in range(d)]
        mam = [[sum((m1[k][r] * am[k][c] for k in range(d) if m1[k][r] and am[k][c]), Fraction(0)) for c in range(d)] for r in range(d)]
        pulled.append(mam)
    forms = []
    for jj in range(n_out):
        acc = [[Fraction(0)] * d for _ in range(d)]
        for j in range(Q.n):
            w = m2[j][jj]
            if w:
                pj = pulled[j]
                for r in range(d):
                    for c in range(d):
                        if pj[r][c]:
                            acc[r][c] += w * pj[r][c]
        forms.append(SymMatrix.from_rows(acc))
    return QuadTuple(tuple(forms))


# ---------------------------------------------------------------------------
# surface specs


_CASES = ("1", "2a", "2b", "2c", "3", "4", "5a", "5b", "5c", "5d")


@dataclass(frozen=True)
class StructuralMeta:
    """Declared presentation data for one of the structured families.

    ``lam`` holds the index vector for monomial families (cases 1, 3, 4) and a
    single entry for the polynomial families (cases 2 and 5).
    """

    case: str
    lam: tuple[int, ...] = ()
    w1: int | None = None
    theta: int | None = None
    k: int | None = None
    eta: int | None = None

    def family(self) -> str:
        return self.case[0]

    def to_text(self) -> str:
        parts = [f"case={self.case}"]
        if self.lam:
            parts.append("lambda=[" + ",".join(str(v) for v in self.lam) + "]")
        for key in ("w1", "theta", "k", "eta"):
            v = getattr(self, key)
            if v is not None:
                parts.append(f"{key}={v}")
        return "meta " + " ".join(parts)


@dataclass(frozen=True)
class SurfaceSpec:
    """A parsed surface description together with its expansion."""

    d: int
    n: int
    body: str  # "monomial" or "matrix"
    quad: QuadTuple
    meta: StructuralMeta | None = None
    warnings: tuple[str, ...] = ()

    @property
    def symmetrized(self) -> bool:
        return any("symmetrized" in w for w in self.warnings)

    def __eq__(self, other):
        if not isinstance(other, SurfaceSpec):
            return NotImplemented
        return (self.d, self.n, self.body, self.quad, self.meta) == (
            other.d,
            other.n,
            other.body,
            other.quad,
            other.meta,
        )

    def __hash__(self):
        return hash((self.d, self.n, self.body, self.quad, self.meta))


def surface_from_tuple(Q: QuadTuple, meta: StructuralMeta | None = None) -> SurfaceSpec:
    if meta is not None:
        check_metadata(Q, meta)
    return SurfaceSpec(Q.d, Q.n, "monomial", Q, meta)


_TOKEN = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<num>\d+(?:/\d+)?)
  | (?P<var>[xX]\d+)
  | (?P<op>[-+*^]|−)
  | (?P<lp>\()
  | (?P<rp>\))
    """,
    re.VERBOSE,
)


class _Cursor:
    def __init__(self, text: str, line: int, col0: int):
        self.text = text
        self.pos = 0
        self.line = line
        self.col0 = col0
        self.tokens: list[tuple[str, str, int]] = []
        while self.pos < len(text):
            m = _TOKEN.match(text, self.pos)
            if not m:
                raise SurfaceSyntaxError(f"unexpected character {text[self.pos]!r}", line, col0 + self.pos)
            kind = m.lastgroup
            if kind != "ws":
                val = m.group()
                if val == "−":
                    val = "-"
                self.tokens.append((kind, val, col0 + self.pos))
            self.pos = m.end()
        self.i = 0
        self.end_col = col0 + len(text)

    def peek(self):
        return self.tokens[self.i] if self.i < len(self.tokens) else (None, None, self.end_col)

    def take(self):
        tok = self.peek()
        self.i += 1
        return tok

    def error(self, msg: str, col: int | None = None):
        raise SurfaceSyntaxError(msg, self.line, col if col is not None else self.peek()[2])


def _parse_poly(cur: _Cursor, d: int) -> list[tuple[Fraction, tuple[int, ...]]]:
    """Parse a sum of products; returns (coef, ordered variable indices) terms."""
    terms: list[tuple[Fraction, tuple[int, ...]]] = []
    sign = Fraction(1)
    kind, val, col = cur.peek()
    if kind == "op" and val in "+-":
        cur.take()
        sign = Fraction(-1) if val == "-" else Fraction(1)
    while True:
        coef, vars_ = _parse_product(cur, d)
        terms.append((sign * coef, vars_))
        kind, val, col = cur.peek()
        if kind is None:
            break
        if kind == "op" and val in "+-":
            cur.take()
            sign = Fraction(-1) if val == "-" else Fraction(1)
            continue
        cur.error(f"expected '+' or '-' but found {val!r}")
    return terms


def _parse_product(cur: _Cursor, d: int) -> tuple[Fraction, tuple[int, ...]]:
    coef = Fraction(1)
    vars_: list[int] = []
    first = True
    while True:
        kind, val, col = cur.peek()
        if not first:
            if kind == "op" and val == "*":
                cur.take()
                kind, val, col = cur.peek()
            else:
                break
        first = False
        if kind == "num":
            cur.take()
            factor = Fraction(val)
            kind2, val2, col2 = cur.peek()
            if kind2 == "op" and val2 == "^":
                cur.error("powers of numbers are not supported", col2)
            coef *= factor
        elif kind == "var":
            cur.take()
            idx = int(val[1:])
            if not 1 <= idx <= d:
                cur.error(f"variable {val} outside x1..x{d}", col)
            power = 1
            kind2, val2, col2 = cur.peek()
            if kind2 == "op" and val2 == "^":
                cur.take()
                kind3, val3, col3 = cur.take()
                if kind3 != "num" or "/" in val3:
                    cur.error("expected an integer exponent", col3)
                power = int(val3)
            vars_.extend([idx] * power)
        elif kind == "lp":
            cur.take()
            kind2, val2, col2 = cur.peek()
            neg = False
            if kind2 == "op" and val2 in "+-":
                cur.take()
                neg = val2 == "-"
            kind3, val3, col3 = cur.take()
            if kind3 != "num":
                cur.error("only parenthesized numbers are supported", col3)
            if cur.take()[0] != "rp":
                cur.error("missing ')'")
            coef *= -Fraction(val3) if neg else Fraction(val3)
        else:
            cur.error("expected a number or a variable" if kind else "unexpected end of expression")
    if len(vars_) > 2:
        raise SurfaceSyntaxError("term has degree above 2", cur.line, cur.peek()[2])
    if len(vars_) == 1:
        raise SurfaceSyntaxError("linear terms are not allowed in a quadratic form", cur.line, cur.peek()[2])
    if not vars_ and coef != 0:
        raise SurfaceSyntaxError("constant terms are not allowed in a quadratic form", cur.line, cur.peek()[2])
    return coef, tuple(vars_)


def _terms_to_matrix(d: int, terms) -> tuple[list[list[Fraction]], list[str]]:
    """Assemble the symmetric matrix of one component.

    An ordered product x_i*x_j with i != j writes its coefficient into slot
    (i, j).  If the mirrored slot (j, i) carries the same value, the pair is
    the two halves of a single monomial written out in matrix order and is
    counted once; otherwise the raw matrix is symmetrized as (B + B^T)/2.
    """
    raw = [[Fraction(0)] * d for _ in range(d)]
    for c, vars_ in terms:
        if not vars_:
            continue
        i, j = vars_[0] - 1, vars_[1] - 1
        raw[i][j] += c
    notes = []
    a = [[Fraction(0)] * d for _ in range(d)]
    for i in range(d):
        a[i][i] = raw[i][i]
        for j in range(i + 1, d):
            b, bt = raw[i][j], raw[j][i]
            if b and b == bt:
                a[i][j] = a[j][i] = b / 2
                notes.append(f"mirrored term x{i + 1}*x{j + 1} / x{j + 1}*x{i + 1} counted once")
            else:
                a[i][j] = a[j][i] = (b + bt) / 2
    return a, notes


def _split_statements(text: str):
    """Yield (line_no, col_offset, statement) with comments removed."""
    for ln, line in enumerate(text.splitlines(), start=1):
        hash_pos = line.find("#")
        if hash_pos >= 0:
            line = line[:hash_pos]
        col = 1
        for piece in line.split(";"):
            stripped = piece.strip()
            if stripped:
                lead = len(piece) - len(piece.lstrip())
                yield ln, col + lead, stripped
            col += len(piece) + 1


_HEADER = re.compile(r"^d\s*=\s*(\d+)\s+n\s*=\s*(\d+)$")
_COMPONENT = re.compile(r"^Q(\d+)\s*=\s*(.*)$")
_MATRIX = re.compile(r"^A(\d+)\s*=\s*(.*)$")
_META_ITEM = re.compile(r"(\w+)\s*=\s*(\[[^\]]*\]|\S+)")


def _parse_matrix_literal(text: str, d: int, line: int, col: int) -> list[list[Fraction]]:
    s = text.strip()
    if not (s.startswith("[[") and s.endswith("]]")):
        raise SurfaceSyntaxError("matrix must be written as [[...],[...]]", line, col)
    rows_txt = re.findall(r"\[([^\[\]]*)\]", s)
    rows = []
    for rt in rows_txt:
        try:
            rows.append([Fraction(v.strip().replace("−", "-")) for v in rt.split(",")])
        except (ValueError, ZeroDivisionError):
            raise SurfaceSyntaxError(f"bad matrix entry in [{rt}]", line, col) from None
    if len(rows) != d or any(len(r) != d for r in rows):
        raise SurfaceSyntaxError(f"matrix must be {d}x{d}", line, col)
    return rows


def _parse_meta(body: str, line: int, col: int) -> StructuralMeta:
    items = dict()
    consumed = _META_ITEM.sub("", body).strip()
    if consumed:
        raise SurfaceSyntaxError(f"cannot read metadata near {consumed!r}", line, col)
    for m in _META_ITEM.finditer(body):
        items[m.group(1)] = m.group(2)
    unknown = set(items) - {"case", "lambda", "w1", "theta", "k", "eta"}
    if unknown:
        raise SurfaceSyntaxError(f"unknown metadata key(s): {', '.join(sorted(unknown))}", line, col)
    case = items.get("case")
    if case not in _CASES:
        raise SurfaceSyntaxError(f"case must be one of {', '.join(_CASES)}", line, col)
    lam: tuple[int, ...] = ()
    if "lambda" in items:
        raw = items["lambda"].strip("[]").strip()
        try:
            lam = tuple(int(v) for v in raw.split(",")) if raw else ()
        except ValueError:
            raise SurfaceSyntaxError("lambda must be a list of integers", line, col) from None

    def opt_int(key):
        if key not in items:
            return None
        try:
            return int(items[key])
        except ValueError:
            raise SurfaceSyntaxError(f"{key} must be an integer", line, col) from None

    return StructuralMeta(case, lam, opt_int("w1"), opt_int("theta"), opt_int("k"), opt_int("eta"))


def parse_surface(text: str) -> SurfaceSpec:
    """Parse a surface-spec document.

    Statements are separated by newlines or ';'.  Recognized statements are
    the header ``d=<int> n=<int>``, components ``Q<j> = <polynomial>``,
    matrix components ``A<j> = [[...],...]`` and ``meta key=value ...``.
    """
    d = n = None
    comps: dict[int, tuple[list[list[Fraction]], str]] = {}
    meta = None
    warnings: list[str] = []
    body_kinds = set()
    for line, col, stmt in _split_statements(text):
        m = _HEADER.match(stmt)
        if m:
            if d is not None:
                raise SurfaceSyntaxError("duplicate header", line, col)
            d, n = int(m.group(1)), int(m.group(2))
            if d < 1 or n < 1:
                raise SurfaceSyntaxError("d and n must be positive", line, col)
            continue
        if stmt.startswith("meta"):
            if meta is not None:
                raise SurfaceSyntaxError("duplicate meta statement", line, col)
            meta = _parse_meta(stmt[4:], line, col + 4)
            continue
        if d is None:
            raise SurfaceSyntaxError("header 'd=<int> n=<int>' must come first", line, col)
        m = _COMPONENT.match(stmt) or _MATRIX.match(stmt)
        if not m:
            raise SurfaceSyntaxError(f"unrecognized statement {stmt[:20]!r}", line, col)
        j = int(m.group(1))
        if not 1 <= j <= n:
            raise SurfaceSyntaxError(f"component index {j} outside 1..{n}", line, col)
        if j in comps:
            raise SurfaceSyntaxError(f"component {j} defined twice", line, col)
        rhs = m.group(2)
        rhs_col = col + m.start(2)
        if stmt[0] == "Q":
            if not rhs.strip():
                raise SurfaceSyntaxError("empty polynomial", line, rhs_col)
            cur = _Cursor(rhs, line, rhs_col)
            terms = _parse_poly(cur, d)
            mat, notes = _terms_to_matrix(d, terms)
            warnings.extend(f"Q{j}: {w}" for w in notes)
            body_kinds.add("monomial")
        else:
            rows = _parse_matrix_literal(rhs, d, line, rhs_col)
            sym, asym = SymMatrix.symmetrized(rows)
            if asym:
                warnings.append(f"A{j}: non-symmetric input symmetrized as (A+A^T)/2")
            mat = sym.rows()
            body_kinds.add("matrix")
        comps[j] = (mat, stmt[0])
    if d is None:
        raise SurfaceSyntaxError("missing header 'd=<int> n=<int>'", 1, 1)
    missing = [j for j in range(1, n + 1) if j not in comps]
    if missing:
        raise SurfaceSyntaxError(f"missing component(s) {', '.join(f'Q{j}' for j in missing)}", 1, 1)
    if len(body_kinds) > 1:
        raise SurfaceSyntaxError("mixing polynomial and matrix components is not supported", 1, 1)
    quad = QuadTuple.from_matrices(comps[j][0] for j in range(1, n + 1))
    if meta is not None:
        check_metadata(quad, meta)
    return SurfaceSpec(d, n, body_kinds.pop(), quad, meta, tuple(warnings))


def serialize_surface(spec: SurfaceSpec) -> str:
    """Canonical text that parses back to an equal SurfaceSpec."""
    lines = [f"d={spec.d} n={spec.n}"]
    for j in range(spec.n):
        if spec.body == "matrix":
            rows = ",".join("[" + ",".join(_frac_str(v) for v in r) + "]" for r in spec.quad.forms[j].entries)
            lines.append(f"A{j + 1} = [{rows}]")
        else:
            lines.append(f"Q{j + 1} = {spec.quad.component_poly(j).to_str()}")
    if spec.meta is not None:
        lines.append(spec.meta.to_text())
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# metadata consistency (presentation shape only; hypotheses live elsewhere)


def _product_form(d: int, i: int, j: int) -> list[list[Fraction]]:
    a = [[Fraction(0)] * d for _ in range(d)]
    if i == j:
        a[i - 1][i - 1] = Fraction(1)
    else:
        a[i - 1][j - 1] = a[j - 1][i - 1] = Fraction(1, 2)
    return a


def _mat_sub(a, b):
    return [[x - y for x, y in zip(r, s)] for r, s in zip(a, b)]


def residual_forms(Q: QuadTuple, meta: StructuralMeta) -> dict[int, list[list[Fraction]]]:
    """For polynomial families, the matrices of P_j (1-based j > w1)."""
    out = {}
    if meta.family() not in "25":
        return out
    for j in range(meta.w1 + 1, Q.n + 1):
        a = Q.forms[j - 1].rows()
        p = _mat_sub(a, _product_form(Q.d, meta.lam[0], j))
        if meta.family() == "5" and j == Q.n:
            for i in range(Q.n + 1, Q.d + 1):
                p[i - 1][i - 1] -= 1
        out[j] = p
    return out


def check_metadata(Q: QuadTuple, meta: StructuralMeta) -> None:
    """Check that Q has the presentation declared by ``meta``; raise MetadataError otherwise."""
    fam = meta.family()
    d, n = Q.d, Q.n
    if d < 2 or n < 2:
        raise MetadataError("d,n>=2", f"got d={d}, n={n}")

    def expect(j: int, mat, label: str):
        if Q.forms[j - 1].rows() != mat:
            raise MetadataError(f"shape:Q{j}", f"Q{j} is not {label}")

    if fam == "1":
        if d != n:
            raise MetadataError("d=n", f"case 1 needs d=n, got d={d}, n={n}")
        if len(meta.lam) != n:
            raise MetadataError("lambda-length", f"expected {n} entries")
        for j, lj in enumerate(meta.lam, start=1):
            if not 1 <= lj <= n:
                raise MetadataError("1<=lambda_j<=n", f"lambda_{j}={lj}")
            expect(j, _product_form(d, lj, j), f"x{lj}*x{j}")
    elif fam in "34":
        k = meta.k
        if k is None or k < 1:
            raise MetadataError("k>=1", "k must be declared and positive")
        if d != n + k:
            raise MetadataError("d=n+k", f"d={d}, n={n}, k={k}")
        eta = 0
        if fam == "4":
            eta = meta.eta if meta.eta is not None else -1
            if not 1 <= eta < n:
                raise MetadataError("1<=eta<n", f"eta={meta.eta}")
            for j in range(1, eta + 1):
                expect(j, _product_form(d, j, j), f"x{j}^2")
        if len(meta.lam) != n - eta:
            raise MetadataError("lambda-length", f"expected {n - eta} entries")
        for pos, lj in enumerate(meta.lam):
            j = eta + 1 + pos  # component index
            var = j + k
            if not 1 <= lj <= d:
                raise MetadataError("1<=lambda_j<=n+k", f"lambda_{var}={lj}")
            expect(j, _product_form(d, lj, var), f"x{lj}*x{var}")
    else:  # families 2 and 5
        if meta.w1 is None or not 1 <= meta.w1 <= n:
            raise MetadataError("1<=w1<=n", f"w1={meta.w1}")
        if len(meta.lam) != 1:
            raise MetadataError("lambda-length", "polynomial cases take a single lambda")
        lam = meta.lam[0]
        if not 1 <= lam <= d:
            raise MetadataError("1<=lambda<=d", f"lambda={lam}")
        if fam == "2" and d != n:
            raise MetadataError("d=n", f"case 2 needs d=n, got d={d}, n={n}")
        if fam == "5":
            k = meta.k if meta.k is not None else d - n
            if k < 1 or d != n + k:
                raise MetadataError("d=n+k", f"d={d}, n={n}, k={meta.k}")
        expect(1, _product_form(d, 1, 1), "x1^2")
        for j in range(2, meta.w1 + 1):
            if fam == "5" and j == n:
                continue
            expect(j, _product_form(d, 1, j), f"x1*x{j}")
        if fam == "5" and meta.w1 == n:
            # no P-components; the squares sit on the last component
            a = _product_form(d, 1, n) if n > 1 else _product_form(d, 1, 1)
            for i in range(n + 1, d + 1):
                a[i - 1][i - 1] += 1
            expect(n, a, "x1*x_n plus the trailing squares")
        res = residual_forms(Q, meta)
        if meta.theta is not None:
            from .exponents import theta_of  # local import avoids a cycle

            th = theta_of(Q, meta, res)
            if th != meta.theta:
                raise MetadataError("theta", f"declared theta={meta.theta}, residual forms give {th}")
