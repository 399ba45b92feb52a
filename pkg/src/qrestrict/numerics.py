"""Numerical evaluation of the extension operator and local norm experiments.

The extension of f on [0,1]^d is

    E f(x', x'') = integral of exp(2 pi i (x'.xi + x''.Q(xi))) f(xi) dxi,

discretized by the midpoint rule on a uniform grid of cell centres.  Two
evaluators are provided: a direct oracle and a tensor-grid evaluator that
contracts the linear phase one axis at a time.

Norms over the ball B_R use a factorized engine for box indicators.  For a
fixed x'' the quadratic phase couples the xi-variables only along the
nonzero off-diagonal entries of the forms, so E chi_box factors over the
connected components of that coupling graph.  Inside a component, variables
without a diagonal entry whose neighbours are all "core" variables enter the
phase linearly and are summed in closed form.  The remaining x-axes are
integrated with a tensor product of graded cells, sampled at their midpoints
or, given a seed, at one jittered node per cell; optionally one axis is a
dense lattice evaluated by FFT.
"""

from __future__ import annotations

import functools
import hashlib
import math
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .quadform_core import QuadTuple

__all__ = [
    "ResolutionError",
    "BudgetError",
    "GridFunction",
    "Box",
    "TensorGrid",
    "BallSampling",
    "NormEstimate",
    "ScalingFit",
    "lipschitz_constant",
    "required_resolution",
    "extension_eval_oracle",
    "extension_eval_fast",
    "ball_lattice",
    "lq_norm_ball",
    "ball_integral",
    "dp_ratio",
    "bd_ratio",
    "scaling_fit",
    "square_function_sharpness",
    "square_function_integrals",
    "tube_locally_constant_check",
    "significant_set",
    "partition_boxes",
    "resolve_threads",
    "surface_hash",
    "write_cache",
    "read_cache",
]

TAU_CAP = 1 << 16
MAX_BALL_DIM = 6
MAX_R_D3N2 = 256

TWO_PI = 2.0 * math.pi


class ResolutionError(ValueError):
    def __init__(self, required: int, given: int):
        super().__init__(f"grid resolution {given} too coarse for the requested points; need at least {required} per axis")
        self.required = required
        self.given = given


class BudgetError(ValueError):
    def __init__(self, cap: str, detail: str = ""):
        super().__init__(f"budget exceeded ({cap}){': ' + detail if detail else ''}")
        self.cap = cap


def resolve_threads(threads: int | None = None) -> int:
    if threads is not None:
        return max(1, int(threads))
    env = os.environ.get("QRESTRICT_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return 1


def _cexp(phase: np.ndarray) -> np.ndarray:
    """exp(2 pi i phase)."""
    return np.exp(1j * TWO_PI * phase)


# ---------------------------------------------------------------------------
# grid functions and boxes


@dataclass
class GridFunction:
    """Samples on the cell-centre grid of [0,1]^d, or a lazily described box indicator.

    ``box_meta`` holds per-axis (first cell index, number of cells) when the
    function is the indicator of a union of whole grid cells forming a box.
    """

    d: int
    resolution: tuple[int, ...]
    samples: np.ndarray | None = None
    box_meta: tuple[tuple[int, int], ...] | None = None

    def __post_init__(self):
        self.resolution = tuple(int(v) for v in self.resolution)
        if len(self.resolution) != self.d:
            raise ValueError("resolution must have one entry per axis")
        if self.samples is None and self.box_meta is None:
            raise ValueError("need samples or a box description")
        if self.samples is not None:
            self.samples = np.asarray(self.samples, dtype=complex)
            if self.samples.shape != self.resolution:
                raise ValueError(f"samples shape {self.samples.shape} does not match resolution {self.resolution}")
        if self.box_meta is not None:
            self.box_meta = tuple((int(lo), int(m)) for lo, m in self.box_meta)
            for (lo, m), N in zip(self.box_meta, self.resolution):
                if lo < 0 or m < 1 or lo + m > N:
                    raise ValueError("box does not fit in [0,1]^d")

    @classmethod
    def box(cls, resolution: Sequence[int], cells: Sequence[tuple[int, int]]) -> "GridFunction":
        return cls(len(resolution), tuple(resolution), None, tuple(cells))

    @classmethod
    def from_box(cls, box: "Box", resolution: int) -> "GridFunction":
        return cls.box((resolution,) * len(box.corner), box.cells(resolution))

    @property
    def corner(self) -> tuple[float, ...] | None:
        if self.box_meta is None:
            return None
        return tuple(lo / N for (lo, _), N in zip(self.box_meta, self.resolution))

    @property
    def sides(self) -> tuple[float, ...] | None:
        if self.box_meta is None:
            return None
        return tuple(m / N for (_, m), N in zip(self.box_meta, self.resolution))

    @property
    def cell_volume(self) -> float:
        return 1.0 / math.prod(self.resolution)

    def dense(self) -> np.ndarray:
        if self.samples is not None:
            return self.samples
        out = np.zeros(self.resolution, dtype=complex)
        out[tuple(slice(lo, lo + m) for lo, m in self.box_meta)] = 1.0
        return out

    def support(self) -> tuple[np.ndarray, np.ndarray]:
        """Cell centres (S, d) and values (S,) of the nonzero samples."""
        if self.box_meta is not None and self.samples is None:
            axes = [(lo + np.arange(m) + 0.5) / N for (lo, m), N in zip(self.box_meta, self.resolution)]
            mesh = np.meshgrid(*axes, indexing="ij")
            pts = np.stack([g.ravel() for g in mesh], axis=1)
            return pts, np.ones(len(pts), dtype=complex)
        idx = np.nonzero(self.samples)
        pts = np.stack([(i + 0.5) / N for i, N in zip(idx, self.resolution)], axis=1)
        return pts, self.samples[idx]

    def lp_norm(self, p: float) -> float:
        if self.box_meta is not None and self.samples is None:
            vol = math.prod(m / N for (_, m), N in zip(self.box_meta, self.resolution))
            return vol ** (1.0 / p)
        vals = np.abs(self.samples)
        if math.isinf(p):
            return float(vals.max())
        return float((np.sum(vals**p) * self.cell_volume) ** (1.0 / p))

    def l1(self) -> float:
        return self.lp_norm(1.0)

    def scaled(self, c: complex) -> "GridFunction":
        return GridFunction(self.d, self.resolution, self.dense() * c)


@dataclass(frozen=True)
class Box:
    """Axis-parallel box with the given corner and side lengths 1/mu_j."""

    corner: tuple[float, ...]
    mu: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "corner", tuple(float(v) for v in self.corner))
        object.__setattr__(self, "mu", tuple(float(v) for v in self.mu))
        if len(self.corner) != len(self.mu):
            raise ValueError("corner and mu must have equal length")
        if any(m < 1 for m in self.mu):
            raise ValueError("mu_j >= 1 is required")
        if any(a < -1e-12 or a + 1 / m > 1 + 1e-9 for a, m in zip(self.corner, self.mu)):
            raise ValueError("box must lie inside [0,1]^d")

    def cells(self, N: int) -> tuple[tuple[int, int], ...]:
        """Snap to whole grid cells: side rounded to the nearest cell count."""
        out = []
        for a, m in zip(self.corner, self.mu):
            width = max(1, int(round(N / m)))
            lo = int(round(a * N))
            lo = min(max(lo, 0), N - width)
            out.append((lo, width))
        return tuple(out)


# ---------------------------------------------------------------------------
# oracle and tensor-grid evaluator


def lipschitz_constant(Q: QuadTuple) -> float:
    """Largest row sum of |2 A_j| over all forms."""
    A = Q.matrices_float()
    return float(np.max(np.sum(np.abs(2 * A), axis=2)))


def required_resolution(Q: QuadTuple, xmax: float) -> int:
    """Per-axis cell count needed so that one cell carries at most 1/8 of a phase turn."""
    return max(1, int(math.ceil(8.0 * xmax * (1.0 + 2.0 * lipschitz_constant(Q)) - 1e-9)))


def _check_band_limit(Q: QuadTuple, f: GridFunction, xmax: float) -> None:
    need = required_resolution(Q, xmax)
    if min(f.resolution) < need:
        raise ResolutionError(need, min(f.resolution))


def extension_eval_oracle(Q: QuadTuple, f: GridFunction, xs) -> np.ndarray:
    """Direct midpoint-rule quadrature at arbitrary points xs of shape (P, d+n)."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    d, n = Q.d, Q.n
    if f.d != d or xs.shape[1] != d + n:
        raise ValueError("dimension mismatch between Q, f and the points")
    if len(xs) == 0:
        return np.zeros(0, dtype=complex)
    _check_band_limit(Q, f, float(np.max(np.linalg.norm(xs, axis=1))))
    pts, vals = f.support()
    if len(pts) == 0:
        return np.zeros(len(xs), dtype=complex)
    A = Q.matrices_float()
    qv = np.einsum("sk,jkl,sl->sj", pts, A, pts)
    freq = np.concatenate([pts, qv], axis=1)  # (S, d+n)
    weighted = vals * f.cell_volume
    out = np.empty(len(xs), dtype=complex)
    chunk = max(1, 2_000_000 // len(pts))
    for s in range(0, len(xs), chunk):
        ph = xs[s : s + chunk] @ freq.T
        out[s : s + chunk] = _cexp(ph) @ weighted
    return out


@dataclass
class TensorGrid:
    """Tensor product of 1-D coordinate arrays, one per axis of R^{d+n}."""

    axes: tuple[np.ndarray, ...]

    def __post_init__(self):
        self.axes = tuple(np.asarray(a, dtype=float).ravel() for a in self.axes)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(len(a) for a in self.axes)

    def points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def point(self, index: Sequence[int]) -> np.ndarray:
        return np.array([a[i] for a, i in zip(self.axes, index)])

    def max_norm(self) -> float:
        return math.sqrt(sum(float(np.max(np.abs(a))) ** 2 for a in self.axes))


def _fast_slab(A, f_dense, xi_axes, grid: TensorGrid, d: int, nodes: np.ndarray, cell_vol: float) -> np.ndarray:
    mesh = np.meshgrid(*xi_axes, indexing="ij")
    lin_mats = [_cexp(np.outer(grid.axes[k], xi_axes[k])) for k in range(d)]
    out = np.empty((len(nodes),) + grid.shape[:d], dtype=complex)
    for r, xpp in enumerate(nodes):
        Aq = np.tensordot(xpp, A, axes=1)
        quad = np.zeros(f_dense.shape)
        for k in range(d):
            for l in range(d):
                if Aq[k, l] != 0.0:
                    quad = quad + Aq[k, l] * mesh[k] * mesh[l]
        g = f_dense * _cexp(quad)
        # contract axis 0 each time; the new x-axis rotates to the back
        for k in range(d):
            g = np.tensordot(g, lin_mats[k], axes=([0], [1]))
        out[r] = g * cell_vol
    return out


def extension_eval_fast(Q: QuadTuple, f: GridFunction, grid: TensorGrid, threads: int | None = None) -> np.ndarray:
    """Evaluate E f on a tensor grid; result has shape grid.shape.

    For each x'' node the quadratic phase is applied once and the linear
    phase is contracted axis by axis.  Work is split into x''-slabs.
    """
    d, n = Q.d, Q.n
    if len(grid.axes) != d + n:
        raise ValueError("grid needs d+n axes")
    _check_band_limit(Q, f, grid.max_norm())
    A = Q.matrices_float()
    f_dense = f.dense()
    xi_axes = [(np.arange(N) + 0.5) / N for N in f.resolution]
    mesh_pp = np.meshgrid(*grid.axes[d:], indexing="ij")
    nodes = np.stack([m.ravel() for m in mesh_pp], axis=1)
    slabs = [nodes[s : s + 8] for s in range(0, len(nodes), 8)]
    work = lambda sl: _fast_slab(A, f_dense, xi_axes, grid, d, sl, f.cell_volume)  # noqa: E731
    nthreads = resolve_threads(threads)
    if nthreads > 1 and len(slabs) > 1:
        with ThreadPoolExecutor(nthreads) as pool:
            parts = list(pool.map(work, slabs))
    else:
        parts = [work(sl) for sl in slabs]
    vals = np.concatenate(parts, axis=0)  # (nodes, x'_1..x'_d)
    vals = vals.reshape(grid.shape[d:] + grid.shape[:d])
    return np.moveaxis(vals, list(range(n)), list(range(d, d + n)))


# ---------------------------------------------------------------------------
# norms on sampled balls


@dataclass
class BallSampling:
    """Sample points of B_R with quadrature weights (scalar or per point)."""

    R: float
    points: np.ndarray
    cell_volume: float | np.ndarray

    def weights(self) -> np.ndarray:
        w = np.asarray(self.cell_volume, dtype=float)
        return np.broadcast_to(w, (len(self.points),))


@dataclass
class NormEstimate:
    value: float
    q: float
    quadrature_error_flag: bool = False
    detail: dict = field(default_factory=dict)


def ball_lattice(R: float, dim: int, spacing: float = 0.5) -> BallSampling:
    """Lattice spacing*Z^dim intersected with B_R, each point carrying one cell volume."""
    k = int(math.floor(R / spacing))
    axis = np.arange(-k, k + 1) * spacing
    mesh = np.meshgrid(*([axis] * dim), indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    pts = pts[np.sum(pts**2, axis=1) <= R * R + 1e-12]
    return BallSampling(R, pts, spacing**dim)


def lq_norm_ball(values, sampling: BallSampling, q: float) -> NormEstimate:
    vals = np.abs(np.asarray(values)).ravel()
    if vals.size == 0 or len(sampling.points) == 0:
        raise ValueError("empty sampling")
    if vals.size != len(sampling.points):
        raise ValueError("one value per sample point is required")
    if q < 1:
        raise ValueError("q >= 1 is required")
    if math.isinf(q):
        return NormEstimate(float(vals.max()), q)
    total = float(np.sum(sampling.weights() * vals**q))
    return NormEstimate(total ** (1.0 / q), q)


# ---------------------------------------------------------------------------
# factorized ball integrals for box indicators


def _geom_sum(theta: np.ndarray, lo: int, M: int, N: int) -> np.ndarray:
    """(1/N) sum_{m<M} exp(2 pi i theta (lo + m + 1/2)/N), in closed form."""
    u = theta / N
    j = np.rint(u)
    r = u - j
    den = np.sin(np.pi * r)
    small = np.abs(den) < 1e-300
    safe = np.where(small, 1.0, den)
    ratio = np.where(small, float(M), np.sin(np.pi * M * r) / safe)
    sign = np.where((j.astype(np.int64) * (M - 1)) % 2 == 0, 1.0, -1.0)
    return _cexp(theta * ((lo + M / 2.0) / N)) * (sign * ratio / N)


def _geom_sum_split(x: np.ndarray, s: np.ndarray, lo: int, M: int, N: int) -> np.ndarray:
    """_geom_sum for theta[i, c] = x[i] + s[c], using a separable phase factor."""
    u = (x[:, None] + s[None, :]) / N
    if np.max(np.abs(u)) >= 0.5:
        return _geom_sum(u * N, lo, M, N)
    c0 = (lo + M / 2.0) / N
    phase = np.multiply.outer(_cexp(x * c0), _cexp(s * c0))
    if M == 1:
        return phase / N
    # angle addition keeps transcendental calls on the vectors only
    a, b = np.pi * x / N, np.pi * s / N
    num = np.multiply.outer(np.sin(M * a), np.cos(M * b)) + np.multiply.outer(np.cos(M * a), np.sin(M * b))
    den = np.multiply.outer(np.sin(a), np.cos(b)) + np.multiply.outer(np.cos(a), np.sin(b))
    near = np.abs(u) < 1e-3  # cancellation zone: evaluate directly
    if near.any():
        un = u[near]
        num[near] = np.sin(np.pi * M * un)
        den[near] = np.sin(np.pi * un)
    zero = den == 0.0
    ratio = num / np.where(zero, 1.0, den)
    ratio[zero] = M
    return phase * (ratio / N)


def _components(A: np.ndarray) -> list[tuple[list[int], list[int], list[int]]]:
    """Connected components of the coupling graph with their core/linear split."""
    d = A.shape[1]
    struct_ = np.any(A != 0, axis=0)
    seen: set[int] = set()
    comps = []
    for s in range(d):
        if s in seen:
            continue
        stack, comp = [s], []
        seen.add(s)
        while stack:
            v = stack.pop()
            comp.append(v)
            for u in range(d):
                if u != v and struct_[v, u] and u not in seen:
                    seen.add(u)
                    stack.append(u)
        comp.sort()
        core = {v for v in comp if struct_[v, v]}
        for v in comp:
            for u in comp:
                if u > v and struct_[v, u] and v not in core and u not in core:
                    core.add(v)
        comps.append((comp, sorted(core), [v for v in comp if v not in core]))
    return comps


def _axis_nodes(R: float, h0: float, m: int, rng: np.random.Generator | None) -> tuple[np.ndarray, np.ndarray]:
    """Graded symmetric partition of [-R, R] into 2m cells, one node per cell."""
    h0 = min(h0, R / m)
    if h0 * m >= R * (1 - 1e-12):
        edges = np.linspace(0.0, R, m + 1)
    else:
        lo_r, hi_r = 1.0, 2.0
        while h0 * (hi_r**m - 1) / (hi_r - 1) < R:
            hi_r *= 2
        for _ in range(200):
            mid = 0.5 * (lo_r + hi_r)
            if h0 * (mid**m - 1) / (mid - 1) < R:
                lo_r = mid
            else:
                hi_r = mid
        ratio = 0.5 * (lo_r + hi_r)
        widths = h0 * ratio ** np.arange(m)
        edges = np.concatenate([[0.0], np.cumsum(widths)])
        edges *= R / edges[-1]
    left, right = edges[:-1], edges[1:]
    if rng is None:
        u_pos = np.full(m, 0.5)
        u_neg = np.full(m, 0.5)
    else:
        u_pos = rng.random(m)
        u_neg = rng.random(m)
    pos = left + u_pos * (right - left)
    neg = -(left + u_neg * (right - left))
    nodes = np.concatenate([neg[::-1], pos])
    weights = np.concatenate([(right - left)[::-1], right - left])
    return nodes, weights


@dataclass
class _Family:
    """How the amplitude of one integrand is assembled from box extensions.

    kind "product": a = prod_b |E chi_b|^(1/len); kind "sum": a = sqrt(sum_b |E chi_b|^2).
    Each box is a tuple of per-axis (lo, M).
    """

    kind: str
    boxes: list[tuple[tuple[int, int], ...]]


class _Engine:
    def __init__(self, Q: QuadTuple, N: int, family: _Family, R: float, nodes: int, seed: int | None, line_axis="auto"):
        self.Q = Q
        self.d, self.n = Q.d, Q.n
        self.A = Q.matrices_float()
        self.N = N
        self.family = family
        self.R = float(R)
        self.comps = _components(self.A)
        m = max(2, nodes // 2)
        rng = None if seed is None else np.random.default_rng(seed)
        self.line = self._pick_line(line_axis)
        # per-variable nodes for x' axes
        self.xnodes: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        for k in range(self.d):
            if k == self.line:
                kk = int(math.floor(2 * self.R + 1e-9))
                xs = np.arange(-kk, kk + 1) / 2.0
                self.xnodes[k] = (xs, np.full(len(xs), 0.5))
            else:
                side = max(b[k][1] for b in family.boxes) / N
                self.xnodes[k] = _axis_nodes(self.R, 0.5 / side, m, rng)
        pp = []
        for j in range(self.n):
            width = self._form_range(j)
            pp.append(_axis_nodes(self.R, 0.5 / max(width, 1e-9), m, rng))
        mesh = np.meshgrid(*[a for a, _ in pp], indexing="ij")
        wmesh = np.meshgrid(*[w for _, w in pp], indexing="ij")
        self.pp_nodes = np.stack([g.ravel() for g in mesh], axis=1)
        self.pp_weights = np.prod(np.stack([g.ravel() for g in wmesh], axis=1), axis=1)

    def _pick_line(self, line_axis):
        if line_axis is None:
            return None
        if line_axis != "auto":
            return int(line_axis)
        best, best_side = None, 0.0
        for comp, core, _ in self.comps:
            if len(core) != 1:
                continue
            k = core[0]
            side = max(b[k][1] for b in self.family.boxes) / self.N
            if side > best_side:
                best, best_side = k, side
        return best if best_side >= 0.25 else None

    def _form_range(self, j: int) -> float:
        lo, hi = math.inf, -math.inf
        for b in self.family.boxes:
            axes = [np.linspace(l0 / self.N, (l0 + M) / self.N, 5) for l0, M in b]
            mesh = np.meshgrid(*axes, indexing="ij")
            pts = np.stack([g.ravel() for g in mesh], axis=1)
            v = np.einsum("sk,kl,sl->s", pts, self.A[j], pts)
            lo, hi = min(lo, v.min()), max(hi, v.max())
        return hi - lo

    # one component, one box, one x'' node -> complex tensor over the component's x-nodes
    def _component_values(self, comp, core, linear, cells, Aq) -> np.ndarray:
        N = self.N
        core_axes = [(cells[k][0] + np.arange(cells[k][1]) + 0.5) / N for k in core]
        if core:
            mesh = np.meshgrid(*core_axes, indexing="ij")
            xi = {k: g.ravel() for k, g in zip(core, mesh)}
            C = mesh[0].size
        else:
            xi, C = {}, 1
        quad = np.zeros(C)
        for a in core:
            for b in core:
                if Aq[a, b] != 0.0:
                    quad = quad + Aq[a, b] * xi[a] * xi[b]
        base = _cexp(quad) / (N ** len(core))
        factors = []  # (var, matrix of shape (n_nodes, C))
        for l in linear:
            shift = np.zeros(C)
            for k in core:
                if Aq[l, k] != 0.0:
                    shift = shift + 2.0 * Aq[l, k] * xi[k]
            factors.append((l, _geom_sum_split(self.xnodes[l][0], shift, cells[l][0], cells[l][1], N)))
        line_here = self.line in core
        for k in core:
            if k != self.line:
                factors.append((k, _cexp(np.outer(self.xnodes[k][0], xi[k]))))
        letters = "abcdefghijklmnopqrstuvwxyz"
        subs = ["z"]
        ops = [base]
        outs = []
        for i, (v, mat) in enumerate(factors):
            subs.append(letters[i] + "z")
            ops.append(mat)
            outs.append((v, letters[i]))
        if line_here:
            out_sub = "".join(s for _, s in outs) + "z"
            H = np.einsum(",".join(subs) + "->" + out_sub, *ops, optimize=True)
            vals = self._line_fft(H, cells[self.line])
            order = [v for v, _ in outs] + [self.line]
        else:
            out_sub = "".join(s for _, s in outs)
            vals = np.einsum(",".join(subs) + "->" + out_sub, *ops, optimize=True)
            order = [v for v, _ in outs]
        perm = [order.index(v) for v in comp]
        return np.transpose(vals, perm)

    def _line_fft(self, H: np.ndarray, cell: tuple[int, int]) -> np.ndarray:
        N = self.N
        lo, M = cell
        L = 2 * N
        xs = self.xnodes[self.line][0]
        k = np.rint(2 * xs).astype(np.int64)
        if L < 2 * int(np.max(np.abs(k))) + 1:
            raise ResolutionError(int(np.max(np.abs(k))) + 1, N)
        P = np.zeros(H.shape[:-1] + (L,), dtype=complex)
        P[..., lo : lo + M] = H
        S = np.fft.ifft(P, axis=-1) * L
        return S[..., k % L] * _cexp(k / (4.0 * N))

    def amplitudes(self, xpp: np.ndarray) -> list[np.ndarray]:
        Aq = np.tensordot(xpp, self.A, axes=1)
        amps = []
        for comp, core, linear in self.comps:
            if self.family.kind == "sum":
                acc = None
                seen = set()
                for b in self.family.boxes:
                    key = tuple(b[k] for k in comp)
                    if key in seen:
                        raise ValueError("square function boxes must form a product partition")
                    seen.add(key)
                for key in sorted(seen):
                    cells = dict(zip(comp, key))
                    v = np.abs(self._component_values(comp, core, linear, cells, Aq)) ** 2
                    acc = v if acc is None else acc + v
                amps.append(np.sqrt(acc))
            else:
                acc = None
                for b in self.family.boxes:
                    cells = {k: b[k] for k in comp}
                    v = np.abs(self._component_values(comp, core, linear, cells, Aq))
                    acc = v if acc is None else acc * v
                amps.append(acc ** (1.0 / len(self.family.boxes)))
        return amps

    def node_integrals(self, xpp: np.ndarray, exps: Sequence[float]) -> np.ndarray:
        R2 = self.R * self.R - float(xpp @ xpp)
        out = np.zeros(len(exps))
        if R2 < 0:
            return out
        amps = self.amplitudes(xpp)
        # weights and squared radii per component tensor
        info = []
        for (comp, _, _), a in zip(self.comps, amps):
            w = functools.reduce(np.multiply.outer, [self.xnodes[k][1] for k in comp])
            r2 = functools.reduce(np.add.outer, [self.xnodes[k][0] ** 2 for k in comp])
            info.append((comp, a, w, r2))
        # the last component is handled by sorted cumulative sums
        if self.line is not None:
            last = next(i for i, (comp, *_rest) in enumerate(info) if self.line in comp)
        else:
            last = max(range(len(info)), key=lambda i: info[i][1].size)
        comp_l, a_l, w_l, r2_l = info[last]
        if self.line is not None:
            pos = comp_l.index(self.line)
            a_l = np.moveaxis(a_l, pos, -1)
            line_x = self.xnodes[self.line][0]
            K = len(line_x)
            a_l = a_l.reshape(-1, K)
            other = [k for k in comp_l if k != self.line]
            w_j = np.ones(1)
            r2_j = np.zeros(1)
            for k in other:
                xs, ws = self.xnodes[k]
                w_j = np.multiply.outer(w_j, ws).ravel()
                r2_j = np.add.outer(r2_j, xs**2).ravel()
            order = np.argsort(line_x**2, kind="stable")
            s = (line_x**2)[order]
            a_sorted = a_l[:, order]
            w_line = 0.5
        else:
            flat_a = a_l.ravel()
            order = np.argsort(r2_l.ravel(), kind="stable")
            s = r2_l.ravel()[order]
            a_sorted = flat_a[order][None, :]
            w_line = w_l.ravel()[order][None, :]
            w_j = np.ones(1)
            r2_j = np.zeros(1)
        # remaining components as one flattened outer product
        W_rest_base = np.ones(1)
        r2_rest = np.zeros(1)
        a_rest = [np.ones(1)]
        for i, (comp, a, w, r2) in enumerate(info):
            if i == last:
                continue
            W_rest_base = np.multiply.outer(W_rest_base, w.ravel()).ravel()
            r2_rest = np.add.outer(r2_rest, r2.ravel()).ravel()
            a_rest.append(a.ravel())
        thr = R2 - r2_rest[:, None] - r2_j[None, :]
        idx = np.searchsorted(s, thr + 1e-12, side="right")
        for e_i, e in enumerate(exps):
            rest_vals = np.ones(1)
            for a in a_rest[1:]:
                rest_vals = np.multiply.outer(rest_vals, a**e).ravel()
            W_rest = W_rest_base * rest_vals
            cs = np.cumsum(a_sorted**e * w_line, axis=1)
            cs = np.concatenate([np.zeros((cs.shape[0], 1)), cs], axis=1)
            J = cs.shape[0]
            picked = cs[np.arange(J)[None, :], idx]  # (I, J)
            out[e_i] = float(W_rest @ (picked @ w_j))
        return out

    def integrate(self, exps: Sequence[float], threads: int | None = None) -> np.ndarray:
        chunks = [range(s, min(len(self.pp_nodes), s + 16)) for s in range(0, len(self.pp_nodes), 16)]

        def work(ch):
            return np.stack([self.node_integrals(self.pp_nodes[i], exps) * self.pp_weights[i] for i in ch])

        nthreads = resolve_threads(threads)
        if nthreads > 1 and len(chunks) > 1:
            with ThreadPoolExecutor(nthreads) as pool:
                parts = list(pool.map(work, chunks))
        else:
            parts = [work(c) for c in chunks]
        per_node = np.concatenate(parts, axis=0)
        return per_node.sum(axis=0)


def _check_ball_budget(Q: QuadTuple, R: float) -> None:
    if Q.d + Q.n > MAX_BALL_DIM:
        raise BudgetError("d+n<=6", f"d+n={Q.d + Q.n}")
    if Q.d == 3 and Q.n == 2 and R > MAX_R_D3N2:
        raise BudgetError("R<=256 for d=3,n=2", f"R={R}")


def _resolution_for(Q: QuadTuple, R: float, divisors: Iterable[int] = ()) -> int:
    need = required_resolution(Q, R)
    step = 64
    for v in divisors:
        step = step * v // math.gcd(step, v)
    return int(math.ceil(need / step) * step)


def _integer_mus(mus: Iterable[float]) -> list[int]:
    return [int(round(m)) for m in mus if abs(m - round(m)) < 1e-9 and round(m) >= 1]


def ball_integral(
    Q: QuadTuple,
    family_kind: str,
    boxes: Sequence[tuple[tuple[int, int], ...]],
    N: int,
    R: float,
    exps: Sequence[float],
    nodes: int = 48,
    seed: int | None = None,
    threads: int | None = None,
    line_axis="auto",
) -> np.ndarray:
    """Integrals over B_R of a^e for each e in exps, a assembled as in the family kind."""
    _check_ball_budget(Q, R)
    if N < required_resolution(Q, R):
        raise ResolutionError(required_resolution(Q, R), N)
    eng = _Engine(Q, N, _Family(family_kind, [tuple(b) for b in boxes]), R, nodes, seed, line_axis)
    return eng.integrate(exps, threads)


def _refined(run, nodes: int, seed: int | None, refine: bool):
    """Primary estimate plus a rerun on a finer, reseeded node set."""
    v1 = run(nodes, seed)
    if not refine:
        return v1, None, False
    v2 = run(int(math.ceil(nodes * 1.25 / 2) * 2), None if seed is None else seed + 7919)  # finer, reseeded
    rel = np.abs(v2 - v1) / np.maximum(np.abs(v1), 1e-300)
    return v1, v2, bool(np.any(rel > 0.01))


def dp_ratio(
    Q: QuadTuple,
    box: Box,
    R: float,
    p: float,
    nodes: int = 48,
    seed: int | None = None,
    refine: bool = True,
    threads: int | None = None,
    line_axis="auto",
) -> NormEstimate:
    """||E chi_box||_{L^p(B_R)} / ||chi_box||_p, a lower-bound witness for D_p."""
    N = _resolution_for(Q, R, _integer_mus(box.mu))
    cells = box.cells(N)
    gf = GridFunction.box((N,) * Q.d, cells)

    def run(m, s):
        return ball_integral(Q, "product", [cells], N, R, [p], m, s, threads, line_axis)[0]

    v1, v2, flag = _refined(run, nodes, seed, refine)
    norm_f = gf.lp_norm(p)
    detail = {"N": N, "cells": cells, "integral": v1}
    if v2 is not None:
        detail["refined"] = v2 ** (1 / p) / norm_f
    return NormEstimate(v1 ** (1 / p) / norm_f, p, flag, detail)


def bd_ratio(
    Q: QuadTuple,
    box1: Box,
    box2: Box,
    R: float,
    p: float,
    separation: float = 10.0,
    nodes: int = 48,
    seed: int | None = None,
    refine: bool = True,
    threads: int | None = None,
    line_axis="auto",
) -> NormEstimate:
    """||(E chi_1 E chi_2)^{1/2}||_{L^p(B_R)} / (||chi_1||_p ||chi_2||_p)^{1/2}.

    Requires |a_j - b_j| >= separation / mu_j on every axis with mu_j > 1.
    """
    if box1.mu != box2.mu:
        raise ValueError("both boxes must share the same side lengths")
    sep_axes = [j for j, m in enumerate(box1.mu) if m > 1]
    if not sep_axes:
        raise ValueError("separation violated: no axis with mu_j > 1")
    for j in sep_axes:
        if abs(box1.corner[j] - box2.corner[j]) < separation / box1.mu[j] - 1e-12:
            raise ValueError(f"separation violated on axis {j + 1}: need |a-b| >= {separation}/mu")
    N = _resolution_for(Q, R, _integer_mus(box1.mu))
    c1, c2 = box1.cells(N), box2.cells(N)

    def run(m, s):
        return ball_integral(Q, "product", [c1, c2], N, R, [p], m, s, threads, line_axis)[0]

    v1, v2, flag = _refined(run, nodes, seed, refine)
    n1 = GridFunction.box((N,) * Q.d, c1).lp_norm(p)
    n2 = GridFunction.box((N,) * Q.d, c2).lp_norm(p)
    denom = math.sqrt(n1 * n2)
    detail = {"N": N, "cells": (c1, c2), "integral": v1}
    if v2 is not None:
        detail["refined"] = v2 ** (1 / p) / denom
    return NormEstimate(v1 ** (1 / p) / denom, p, flag, detail)


# ---------------------------------------------------------------------------
# scaling fits


@dataclass
class ScalingFit:
    series: list[tuple[float, float]]
    slope: float
    stderr: float
    predicted: float | None = None
    intercept: float = 0.0


def scaling_fit(series: Sequence[tuple[float, float]], predicted: float | None = None) -> ScalingFit:
    """Least-squares slope of log(value) against log(R)."""
    pts = sorted((float(r), float(v)) for r, v in series)
    Rs = [r for r, _ in pts]
    if len(set(Rs)) < 4:
        raise ValueError("at least 4 distinct R values are required")
    if any(v <= 0 for _, v in pts):
        raise ValueError("series values must be positive")
    ratios = [b / a for a, b in zip(Rs, Rs[1:])]
    if max(ratios) - min(ratios) > 1e-6 * max(ratios):
        raise ValueError("R values must form a geometric sequence")
    x = np.log([r for r, _ in pts])
    y = np.log([v for _, v in pts])
    xm, ym = x.mean(), y.mean()
    sxx = float(np.sum((x - xm) ** 2))
    slope = float(np.sum((x - xm) * (y - ym)) / sxx)
    intercept = float(ym - slope * xm)
    resid = y - (intercept + slope * x)
    dof = len(x) - 2
    stderr = math.sqrt(float(np.sum(resid**2)) / dof / sxx) if dof > 0 else 0.0
    return ScalingFit(pts, slope, stderr, predicted, intercept)


# ---------------------------------------------------------------------------
# square function and tubes


def _tau_counts(t: Sequence, R: float) -> list[int]:
    return [max(1, int(round(R ** float(tj)))) for tj in t]


def partition_boxes(N: int, counts: Sequence[int]) -> list[tuple[tuple[int, int], ...]]:
    """Product partition of the N^d grid into counts[j] equal slabs per axis."""
    axes = []
    for c in counts:
        if N % c:
            raise ValueError(f"{c} slabs do not divide {N} cells")
        w = N // c
        axes.append([(i * w, w) for i in range(c)])
    out = [()]
    for ax in axes:
        out = [b + (cell,) for b in out for cell in ax]
    return out


def square_function_integrals(
    Q: QuadTuple,
    t: Sequence,
    R: float,
    qs: Sequence[float],
    nodes: int = 48,
    seed: int | None = None,
    refine: bool = True,
    threads: int | None = None,
    line_axis="auto",
) -> tuple[np.ndarray, np.ndarray | None, bool, int]:
    """Integrals over B_R of (sum_tau |E chi_tau|^2)^(q/2) for several q from shared nodes."""
    if len(t) != Q.d or any(float(v) < 0 or float(v) > 1 for v in t):
        raise ValueError("t must lie in [0,1]^d")
    if R < 4:
        raise ValueError("R >= 4 is required")
    counts = _tau_counts(t, R)
    if math.prod(counts) > TAU_CAP:
        raise BudgetError("tau-count<=65536", f"{math.prod(counts)} boxes")
    N = _resolution_for(Q, R, counts)
    boxes = partition_boxes(N, counts)
    exps = [float(q) for q in qs]

    def run(m, s):
        return ball_integral(Q, "sum", boxes, N, R, exps, m, s, threads, line_axis)

    v1, v2, flag = _refined(run, nodes, seed, refine)
    return v1, v2, flag, N


def square_function_sharpness(
    Q: QuadTuple,
    t: Sequence,
    R: float,
    q: float,
    nodes: int = 48,
    seed: int | None = None,
    refine: bool = True,
    threads: int | None = None,
    line_axis="auto",
) -> NormEstimate:
    """The square-function integral for boxes of sides R^{-t_j}; ``value`` is the integral itself."""
    v1, v2, flag, N = square_function_integrals(Q, t, R, [q], nodes, seed, refine, threads, line_axis)
    detail = {"N": N, "tau_count": math.prod(_tau_counts(t, R))}
    if v2 is not None:
        detail["refined"] = float(v2[0])
    return NormEstimate(float(v1[0]), q, flag, detail)


def tube_locally_constant_check(
    Q: QuadTuple,
    t: Sequence,
    R: float,
    lam: Sequence[int] | None,
    samples: int = 100,
    seed: int = 0,
    include_origin: bool = False,
) -> tuple[float, float]:
    """min and max of |E chi_box(x)| / R^{-sum t} over random points of the dual tube.

    ``lam`` is the index vector of a monomial presentation Q_j = x_{lam_j} x_j;
    without it the tube is undefined and the call is refused.
    """
    if lam is None:
        raise ValueError("the tube needs monomial-case metadata (lambda vector)")
    d, n = Q.d, Q.n
    if len(lam) != n or len(t) != d or d != n:
        raise ValueError("monomial tube needs d = n and one lambda per form")
    tt = [float(v) for v in t]
    half = [R**tj / 100.0 for tj in tt] + [R ** (tt[lam[j] - 1] + tt[j]) / 100.0 for j in range(n)]
    rng = np.random.default_rng(seed)
    pts = (rng.random((samples, d + n)) * 2 - 1) * np.array(half)
    if include_origin:
        pts[0] = 0.0
    counts = _tau_counts(tt, R)
    xmax = float(np.max(np.linalg.norm(pts, axis=1)))
    need = required_resolution(Q, max(xmax, 1.0))
    step = 64
    for v in counts:
        step = step * v // math.gcd(step, v)
    N = int(math.ceil(need / step) * step)
    cells = tuple((0, N // c) for c in counts)
    f = GridFunction.box((N,) * d, cells)
    vals = np.abs(extension_eval_oracle(Q, f, pts))
    scale = R ** (-sum(tt))
    ratios = vals / scale
    return float(ratios.min()), float(ratios.max())


def significant_set(Q: QuadTuple, caps: Sequence[GridFunction], f: GridFunction, x) -> set[int]:
    """Indices of caps tau with |E f_tau(x)| >= |E f(x)| / (100 #caps)."""
    x = np.asarray(x, dtype=float).reshape(1, -1)
    total = abs(extension_eval_oracle(Q, f, x)[0])
    dense = f.dense()
    out = set()
    for i, cap in enumerate(caps):
        part = GridFunction(f.d, f.resolution, dense * (cap.dense() != 0))
        v = abs(extension_eval_oracle(Q, part, x)[0])
        if v >= total / (100.0 * len(caps)):
            out.add(i)
    return out


# ---------------------------------------------------------------------------
# binary cache


def surface_hash(Q: QuadTuple) -> bytes:
    """16-byte digest of the exact matrices."""
    text = ";".join(",".join(f"{v.numerator}/{v.denominator}" for row in f.entries for v in row) for f in Q.forms)
    return hashlib.sha256(f"{Q.d}|{Q.n}|{text}".encode()).digest()[:16]


def write_cache(path, Q: QuadTuple, resolution: Sequence[int], values: np.ndarray) -> None:
    """Layout (little endian): b"QRX1", 16-byte surface hash, uint32 ndim,
    ndim x uint32 resolution, uint32 ndim of values, its shape as uint32,
    then complex64 values in row-major order."""
    values = np.ascontiguousarray(values, dtype="<c8")
    with open(path, "wb") as fh:
        fh.write(b"QRX1")
        fh.write(surface_hash(Q))
        fh.write(struct.pack("<I", len(resolution)))
        fh.write(struct.pack(f"<{len(resolution)}I", *resolution))
        fh.write(struct.pack("<I", values.ndim))
        fh.write(struct.pack(f"<{values.ndim}I", *values.shape))
        fh.write(values.tobytes(order="C"))


def read_cache(path, Q: QuadTuple | None = None) -> tuple[bytes, tuple[int, ...], np.ndarray]:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != b"QRX1":
        raise ValueError("not a QRX1 cache file")
    digest = data[4:20]
    if Q is not None and digest != surface_hash(Q):
        raise ValueError("cache belongs to a different surface")
    pos = 20
    (nd,) = struct.unpack_from("<I", data, pos)
    pos += 4
    res = struct.unpack_from(f"<{nd}I", data, pos)
    pos += 4 * nd
    (vd,) = struct.unpack_from("<I", data, pos)
    pos += 4
    shape = struct.unpack_from(f"<{vd}I", data, pos)
    pos += 4 * vd
    vals = np.frombuffer(data, dtype="<c8", offset=pos).reshape(shape)
    return digest, tuple(res), vals.copy()

