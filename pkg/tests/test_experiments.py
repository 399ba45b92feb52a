from fractions import Fraction as F

import pytest

from qrestrict import experiments
from qrestrict.experiments import normalized_t, parse_prediction, slope_tolerance
from qrestrict.quadform_core import parse_surface

EXAMPLE = parse_surface("d=3 n=2; Q1=x1^2; Q2=x2^2+x1*x3")
PAIR = parse_surface("d=2 n=2; Q1=x1^2; Q2=x1*x2; meta case=1 lambda=[1,1]")


def test_slope_tolerance_depends_on_octaves():
    assert slope_tolerance([8, 16, 32, 64, 128, 256]) == 0.1
    assert slope_tolerance([16, 32, 64, 128, 256]) == 0.15
    assert slope_tolerance([16]) == 0.15


def test_parse_prediction():
    assert parse_prediction("2/p-1/2", 4) == 0.0
    assert parse_prediction("1/p-1/3", 4.5) == pytest.approx(2 / 9 - 1 / 3)
    assert parse_prediction(None, 4) is None


def test_normalized_t():
    assert normalized_t([1, 0], [1, 1]) == ([F(1, 2), F(0)], F(2))
    assert normalized_t([F(1, 2), 0], None) == ([F(1, 2), F(0)], F(1))


def test_cell_formatting():
    assert experiments._cell(0.1) == "0.10000000000000001"
    assert experiments._cell(F(3, 4)) == "3/4"
    assert experiments._cell(None) == ""


def test_dp_scaling_rows_and_fit():
    r = experiments.dp_scaling(EXAMPLE, [4, 8, 16, 32], [4.5], [0.5, 0, 0], predict="2/p-1/2", nodes=16, refine=False)
    assert r.header == ["R", "p_or_q", "mu1", "mu2", "mu3", "value", "slope_running", "flag"]
    assert [row[-1] for row in r.rows[:3]] == ["pending"] * 3
    assert r.rows[3][-1] in ("pass", "fail")
    fit = r.summary["fits"][0]
    assert fit["predicted_upper"] == pytest.approx(2 / 4.5 - 0.5)
    assert fit["tolerance"] == 0.15
    assert r.csv_text().count("\n") == 5


def test_dp_scaling_needs_one_exponent_per_axis():
    with pytest.raises(ValueError):
        experiments.dp_scaling(EXAMPLE, [4], [4], [0.5, 0])


def test_bd_sweep_short_series_pending():
    r = experiments.bd_sweep(EXAMPLE, 4, [4, 8], 4.0, [1, 2], nodes=16, refine=False)
    assert all(row[-1].startswith("pending") for row in r.rows)
    assert r.summary["spread"] >= 1
    assert r.rows[1][2:5] == [8.0, 8.0, 1.0]


def test_tube_experiment():
    r = experiments.tube(PAIR, [F(1), F(0)], [16], samples=20)
    assert r.rows[0][-1] == "pass"
    assert r.rows[0][4] >= experiments.TUBE_FLOOR
    with pytest.raises(ValueError, match="metadata"):
        experiments.tube(parse_surface("d=2 n=2; Q1=x1^2; Q2=x1*x2"), [1, 0], [16])


def test_failed_property():
    r = experiments.ExperimentResult("x", ["R", "flag"], [[1.0, "pass"], [2.0, "fail+qerr"]])
    assert r.failed
    assert not experiments.ExperimentResult("x", ["R", "flag"], [[1.0, "pass+qerr"]]).failed
