import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qrestrict.numerics import (
    BallSampling,
    Box,
    BudgetError,
    GridFunction,
    ResolutionError,
    TensorGrid,
    _Engine,
    _Family,
    ball_integral,
    ball_lattice,
    bd_ratio,
    dp_ratio,
    extension_eval_fast,
    extension_eval_oracle,
    lq_norm_ball,
    partition_boxes,
    read_cache,
    required_resolution,
    resolve_threads,
    scaling_fit,
    significant_set,
    square_function_integrals,
    square_function_sharpness,
    surface_hash,
    tube_locally_constant_check,
    write_cache,
)
from qrestrict.quadform_core import QuadTuple, parse_surface


def P(body, d, n):
    return parse_surface(f"d={d} n={n}; {body}").quad


EXAMPLE = P("Q1=x1^2; Q2=x2^2+x1*x3", 3, 2)
PAIR = P("Q1=x1^2; Q2=x1*x2", 2, 2)
PARABOLA = QuadTuple.from_matrices([[[1]]])


# pointwise evaluation

def test_oracle_zero_frequency_is_volume():
    f = GridFunction.box((32, 32, 32), ((0, 32), (0, 32), (0, 32)))
    assert extension_eval_oracle(EXAMPLE, f, [[0, 0, 0, 0, 0]])[0] == pytest.approx(1.0, abs=1e-12)


def test_oracle_one_dimensional_closed_form():
    N = 4096
    f = GridFunction.box((N,), ((0, N),))
    v = extension_eval_oracle(PARABOLA, f, [[0.5, 0.0]])[0]
    assert abs(v - 2j / math.pi) < 1e-6


def test_oracle_refuses_coarse_grid():
    f = GridFunction.box((8, 8), ((0, 8), (0, 8)))
    with pytest.raises(ResolutionError) as info:
        extension_eval_oracle(PAIR, f, [[5, 0, 0, 0]])
    assert info.value.required == required_resolution(PAIR, 5)


@st.composite
def random_instances(draw, max_res=12):
    d = draw(st.integers(1, 3))
    n = draw(st.integers(1, 2))
    rng = np.random.default_rng(draw(st.integers(0, 2**31)))
    A = rng.integers(-2, 3, size=(n, d, d)) / 2
    A = (A + np.transpose(A, (0, 2, 1))) / 2
    Q = QuadTuple.from_matrices([[[str(v) for v in row] for row in m] for m in A.tolist()])
    res = tuple(int(v) for v in rng.integers(4, max_res + 1, size=d))
    samples = rng.standard_normal(res) + 1j * rng.standard_normal(res)
    f = GridFunction(d, res, samples)
    return Q, f, rng


def _small_grid(Q, f, rng, count=3):
    # radius small enough for the band-limit rule
    from qrestrict.numerics import lipschitz_constant

    rmax = min(f.resolution) / (8 * (1 + 2 * lipschitz_constant(Q)))
    half = rmax / math.sqrt(Q.d + Q.n)
    axes = [np.sort(rng.uniform(-half, half, size=count)) for _ in range(Q.d + Q.n)]
    return TensorGrid(axes)


@settings(max_examples=40, deadline=None)
@given(random_instances())
def test_fast_matches_oracle(case):
    Q, f, rng = case
    grid = _small_grid(Q, f, rng)
    fast = extension_eval_fast(Q, f, grid).ravel()
    slow = extension_eval_oracle(Q, f, grid.points())
    assert np.max(np.abs(fast - slow)) <= 1e-8 * max(1.0, np.max(np.abs(slow)))


@settings(max_examples=30, deadline=None)
@given(random_instances(), st.complex_numbers(min_magnitude=0.1, max_magnitude=10, allow_nan=False, allow_infinity=False))
def test_fast_is_linear(case, c):
    Q, f, rng = case
    grid = _small_grid(Q, f, rng)
    base = extension_eval_fast(Q, f, grid)
    scaled = extension_eval_fast(Q, f.scaled(c), grid)
    assert np.allclose(scaled, c * base, rtol=1e-10, atol=1e-12)
    zero = extension_eval_fast(Q, GridFunction(f.d, f.resolution, np.zeros(f.resolution)), grid)
    assert not np.any(zero)


@settings(max_examples=40, deadline=None)
@given(random_instances())
def test_triangle_bound(case):
    Q, f, rng = case
    grid = _small_grid(Q, f, rng)
    vals = extension_eval_oracle(Q, f, grid.points())
    assert np.all(np.abs(vals) <= f.l1() * (1 + 1e-12))


def test_box_bound_by_volume():
    rng = np.random.default_rng(3)
    f = GridFunction.box((64, 64, 64), ((5, 20), (0, 64), (10, 7)))
    xs = rng.uniform(-0.6, 0.6, size=(50, 5))
    vol = 20 * 64 * 7 / 64**3
    assert np.all(np.abs(extension_eval_oracle(EXAMPLE, f, xs)) <= vol * (1 + 1e-12))


def test_fast_threads_agree_bitwise():
    rng = np.random.default_rng(0)
    f = GridFunction(2, (48, 48), rng.standard_normal((48, 48)))
    grid = TensorGrid([np.linspace(-0.5, 0.5, 4)] * 4)
    a = extension_eval_fast(PAIR, f, grid, threads=1)
    b = extension_eval_fast(PAIR, f, grid, threads=4)
    assert np.array_equal(a, b)


def test_grid_translation_commutes():
    rng = np.random.default_rng(5)
    f = GridFunction(2, (32, 32), rng.standard_normal((32, 32)))
    h = 0.125
    axes = [np.arange(-2, 3) * h] * 4
    shifted = [a + h for a in axes]
    base = extension_eval_fast(PAIR, f, TensorGrid(axes))
    moved = extension_eval_fast(PAIR, f, TensorGrid(shifted))
    assert np.allclose(moved[:-1, :-1, :-1, :-1], base[1:, 1:, 1:, 1:], rtol=1e-12, atol=1e-14)


# ball norms

def test_lq_norm_constant_value():
    samp = ball_lattice(10, 2)
    est = lq_norm_ball(np.full(len(samp.points), 3.0), samp, 4)
    assert est.value == pytest.approx(3.0 * (math.pi * 100) ** 0.25, rel=0.01)


def test_lq_norm_max_and_single_cell():
    samp = ball_lattice(3, 2)
    vals = np.zeros(len(samp.points))
    vals[7] = 2.5
    assert lq_norm_ball(vals, samp, math.inf).value == 2.5
    assert lq_norm_ball(vals, samp, 3).value == pytest.approx((2.5**3 * 0.25) ** (1 / 3))


def test_lq_norm_errors():
    empty = BallSampling(1.0, np.zeros((0, 2)), 1.0)
    with pytest.raises(ValueError):
        lq_norm_ball([], empty, 2)
    samp = ball_lattice(2, 2)
    with pytest.raises(ValueError):
        lq_norm_ball(np.ones(len(samp.points)), samp, 0.5)


def _engine_points(Q, boxes, N, R, nodes, kind="product"):
    eng = _Engine(Q, N, _Family(kind, boxes), R, nodes, None)
    axes = [eng.xnodes[k] for k in range(Q.d)]
    mesh = np.meshgrid(*[a for a, _ in axes], indexing="ij")
    wmesh = np.meshgrid(*[w for _, w in axes], indexing="ij")
    xp = np.stack([g.ravel() for g in mesh], axis=1)
    wp = np.prod(np.stack([g.ravel() for g in wmesh], axis=1), axis=1)
    pts = np.concatenate([np.repeat(xp, len(eng.pp_nodes), axis=0), np.tile(eng.pp_nodes, (len(xp), 1))], axis=1)
    wts = np.repeat(wp, len(eng.pp_nodes)) * np.tile(eng.pp_weights, len(xp))
    inside = np.sum(pts**2, axis=1) <= R * R + 1e-12
    return BallSampling(R, pts[inside], wts[inside])


def test_square_function_t_zero_is_single_box_norm():
    R, q, nodes = 4.0, 4.5, 8
    v1, _, _, N = square_function_integrals(PAIR, [0, 0], R, [q], nodes=nodes, refine=False)
    samp = _engine_points(PAIR, [((0, N), (0, N))], N, R, nodes)
    f = GridFunction.box((N, N), ((0, N), (0, N)))
    vals = extension_eval_oracle(PAIR, f, samp.points)
    ref = lq_norm_ball(vals, samp, q).value ** q
    assert abs(v1[0] - ref) <= 1e-10 * ref


def test_square_function_sixteen_boxes_brute_force():
    R, q, nodes = 4.0, 5.0, 8
    v1, _, _, N = square_function_integrals(PAIR, [1, 1], R, [q], nodes=nodes, refine=False)
    boxes = partition_boxes(N, [4, 4])
    assert len(boxes) == 16
    samp = _engine_points(PAIR, boxes, N, R, nodes, "sum")
    total = np.zeros(len(samp.points))
    for b in boxes:
        total += np.abs(extension_eval_oracle(PAIR, GridFunction.box((N, N), b), samp.points)) ** 2
    ref = float(np.sum(samp.weights() * total ** (q / 2)))
    assert abs(v1[0] - ref) <= 1e-10 * ref


def test_product_integral_matches_oracle_at_engine_nodes():
    R, p, nodes = 6.0, 4.0, 8
    N = 256
    cells = ((0, 16), (32, 16), (0, 32))
    got = ball_integral(EXAMPLE, "product", [cells], N, R, [p], nodes=nodes)[0]
    samp = _engine_points(EXAMPLE, [cells], N, R, nodes)
    vals = extension_eval_oracle(EXAMPLE, GridFunction.box((N,) * 3, cells), samp.points)
    ref = lq_norm_ball(vals, samp, p).value ** p
    assert abs(got - ref) <= 1e-10 * ref


def test_midpoint_quadrature_close_to_dense_lattice():
    # graded nodes versus the plain half-unit lattice on a small ball
    R, p = 4.0, 4.0
    N = 192
    cells = ((0, 96), (0, 192))
    got = ball_integral(PAIR, "product", [cells], N, R, [p], nodes=48)[0]
    samp = ball_lattice(R, 4, 0.5)
    vals = extension_eval_oracle(PAIR, GridFunction.box((N, N), cells), samp.points)
    ref = lq_norm_ball(vals, samp, p).value ** p
    assert abs(got - ref) / ref < 0.03


def test_square_function_sharpness_wraps_integral():
    est = square_function_sharpness(PAIR, [0, 0], 4.0, 4.0, nodes=8, refine=False)
    v1, *_ = square_function_integrals(PAIR, [0, 0], 4.0, [4.0], nodes=8, refine=False)
    assert est.value == v1[0] and est.q == 4.0


# ratio estimators

def test_dp_ratio_trivial_bound():
    est = dp_ratio(EXAMPLE, Box((0, 0, 0), (1, 1, 1)), 1.0, 4.0, nodes=16)
    unit_ball = math.pi**2.5 / math.gamma(3.5)
    assert est.value <= unit_ball ** (1 / 4) * 1.01


def test_dp_ratio_nondecreasing_in_R():
    box = Box((0, 0, 0), (2, 1, 1))
    vals = [dp_ratio(EXAMPLE, box, R, 4.0, nodes=16, refine=False).value for R in (2.0, 4.0, 8.0)]
    assert all(b >= a * 0.99 for a, b in zip(vals, vals[1:]))


def test_bd_ratio_refusals():
    box = Box((0, 0, 0), (4, 1, 1))
    with pytest.raises(ValueError, match="separation"):
        bd_ratio(EXAMPLE, box, box, 4.0, 4.0)
    near = Box((0.5, 0, 0), (4, 1, 1))
    with pytest.raises(ValueError, match="separation"):
        bd_ratio(EXAMPLE, box, near, 4.0, 4.0, separation=10)


def test_bilinear_l4_growth_bounded_by_mu_squared():
    # ||(E f1 E f2)^(1/2)||_4^4 against mu^2 ||f1||_2^2 ||f2||_2^2 for mu2 = mu3 = mu
    R = 8.0
    ratios = []
    for mu in (4.0, 8.0, 16.0, 32.0):
        b1 = Box((0, 0, 0), (1, mu, mu))
        b2 = Box((0, 3 / mu, 3 / mu), (1, mu, mu))
        est = bd_ratio(EXAMPLE, b1, b2, R, 4.0, separation=3.0, nodes=16, refine=False)
        l4_4 = est.detail["integral"]
        l2sq = (1 / mu**2) ** 2
        ratios.append(l4_4 / (mu**2 * l2sq))
    C = ratios[0]
    assert all(r <= 1.5 * C for r in ratios)


def test_budget_caps():
    big = P("Q1=x1^2; Q2=x2^2; Q3=x3^2; Q4=x4^2", 4, 4)
    with pytest.raises(BudgetError):
        dp_ratio(big, Box((0,) * 4, (1,) * 4), 2.0, 4.0)
    with pytest.raises(BudgetError):
        dp_ratio(EXAMPLE, Box((0, 0, 0), (1, 1, 1)), 300.0, 4.0)
    with pytest.raises(BudgetError):
        square_function_integrals(PAIR, [1, 1], 512.0, [4.0])


# scaling fits

def test_scaling_fit_exact_power():
    fit = scaling_fit([(R, R**2) for R in (16, 32, 64, 128)])
    assert fit.slope == pytest.approx(2.0, abs=1e-12) and fit.stderr == pytest.approx(0, abs=1e-12)
    assert scaling_fit([(R, 3.0) for R in (2, 4, 8, 16)]).slope == pytest.approx(0, abs=1e-12)


def test_scaling_fit_noisy_half_power():
    rng = np.random.default_rng(11)
    Rs = [2.0**k for k in range(4, 10)]
    fit = scaling_fit([(R, R**0.5 * (1 + 0.01 * rng.standard_normal())) for R in Rs])
    assert abs(fit.slope - 0.5) < 0.02


@settings(max_examples=50)
@given(st.floats(-3, 3), st.floats(0.1, 10), st.integers(4, 8), st.sampled_from([2.0, 3.0, 1.5]))
def test_scaling_fit_recovers_power_law(alpha, c, count, ratio):
    series = [(ratio**k, c * ratio ** (k * alpha)) for k in range(count)]
    assert scaling_fit(series).slope == pytest.approx(alpha, abs=1e-9)


def test_scaling_fit_errors():
    with pytest.raises(ValueError):
        scaling_fit([(1, 1), (2, 2), (4, 0), (8, 1)])
    with pytest.raises(ValueError):
        scaling_fit([(1, 1), (2, 2), (4, 3)])
    with pytest.raises(ValueError):
        scaling_fit([(1, 1), (2, 2), (3, 3), (4, 4)])


# tubes and significant sets

def test_tube_origin_ratio_is_one():
    lo, hi = tube_locally_constant_check(PAIR, [1, 0], 16, (1, 1), samples=1, include_origin=True)
    assert lo == pytest.approx(1.0, abs=1e-12) and hi == pytest.approx(1.0, abs=1e-12)
    lo0, _ = tube_locally_constant_check(PAIR, [0, 0], 16, (1, 1), samples=1, include_origin=True)
    assert lo0 == pytest.approx(1.0, abs=1e-12)


def test_tube_needs_metadata():
    with pytest.raises(ValueError):
        tube_locally_constant_check(PAIR, [1, 0], 16, None)


def test_tube_window():
    lo, hi = tube_locally_constant_check(PAIR, [1, 0], 64, (1, 1), samples=100, seed=0)
    assert 0.25 <= lo <= hi <= 1.0 + 1e-9


def test_significant_set_examples():
    N = 32
    f = GridFunction.box((N, N), ((0, N), (0, N)))
    single = significant_set(PAIR, [f], f, [0.3, -0.2, 0.1, 0.4])
    assert single == {0}
    caps = [GridFunction.box((N, N), b) for b in partition_boxes(N, [4, 4])]
    one = GridFunction.box((N, N), ((8, 8), (16, 8)))
    target = next(i for i, c in enumerate(caps) if c.box_meta == one.box_meta)
    assert significant_set(PAIR, caps, one, [0, 0, 0, 0]) == {target}


def test_significant_set_complement_is_small():
    N = 32
    rng = np.random.default_rng(2)
    f = GridFunction(2, (N, N), rng.standard_normal((N, N)))
    caps = [GridFunction.box((N, N), b) for b in partition_boxes(N, [2, 2])]
    x = [0.4, 0.1, -0.3, 0.2]
    S = significant_set(PAIR, caps, f, x)
    total = abs(extension_eval_oracle(PAIR, f, [x])[0])
    for i, cap in enumerate(caps):
        if i not in S:
            part = GridFunction(2, (N, N), f.dense() * (cap.dense() != 0))
            assert abs(extension_eval_oracle(PAIR, part, [x])[0]) < total / (100 * len(caps))


# infrastructure

def test_cache_round_trip(tmp_path):
    vals = (np.arange(12) + 1j * np.arange(12)).reshape(3, 4).astype(np.complex64)
    path = tmp_path / "c.qrx"
    write_cache(path, PAIR, (16, 16), vals)
    raw = path.read_bytes()
    assert raw[:4] == b"QRX1" and raw[4:20] == surface_hash(PAIR)
    digest, res, back = read_cache(path, PAIR)
    assert res == (16, 16) and np.array_equal(back, vals)
    with pytest.raises(ValueError):
        read_cache(path, EXAMPLE)


def test_resolve_threads(monkeypatch):
    monkeypatch.setenv("QRESTRICT_THREADS", "3")
    assert resolve_threads(None) == 3
    assert resolve_threads(2) == 2
    monkeypatch.delenv("QRESTRICT_THREADS")
    assert resolve_threads(None) == 1


def test_box_cells_rounding():
    assert Box((0.25, 0), (4, 1)).cells(64) == ((16, 16), (0, 64))
    with pytest.raises(ValueError):
        Box((0.9, 0), (4, 1))
