import json
import math
from fractions import Fraction as F

import numpy as np
import pytest

from qrestrict.quadform_core import parse_surface
from qrestrict.report import SCHEMA, build_analysis, classification_report, dumps, provenance

EXAMPLE = parse_surface("d=3 n=2; Q1=x1^2; Q2=x2^2+x1*x3")
CYCLE = parse_surface("d=4 n=4; Q1=x1*x2; Q2=x2*x3; Q3=x3*x4; Q4=x4*x1")
PAIR = parse_surface("d=2 n=2; Q1=x1^2; Q2=x1*x2; meta case=1 lambda=[1,1]")


def test_dumps_number_formats():
    text = dumps({"a": 0.1, "b": F(3, 4), "c": np.float64(1.5), "d": np.int64(7), "e": [True, None]})
    data = json.loads(text)
    assert '"a": 0.10000000000000001' in text
    assert data == {"a": 0.1, "b": "3/4", "c": 1.5, "d": 7, "e": [True, None]}
    assert json.loads(dumps([math.inf, math.nan])) == ["Infinity", "NaN"]
    with pytest.raises(TypeError):
        dumps(object())


def test_provenance_timestamp(monkeypatch):
    monkeypatch.delenv("SOURCE_DATE_EPOCH", raising=False)
    assert provenance(0, {})["timestamp"] is None
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "0")
    assert provenance(0, {})["timestamp"].startswith("1970-01-01")


def _d_entry(report, dd, nn):
    return next(r for r in report["invariants"]["d_table"] if (r["d_sub"], r["n_sub"]) == (dd, nn))


def test_analysis_of_example_surface():
    rep = build_analysis(EXAMPLE)
    assert rep["schema"] == SCHEMA
    assert _d_entry(rep, 3, 1)["value"] == 1 and _d_entry(rep, 3, 1)["exact"]
    assert rep["jacobian"]["best_selection"] == [3]
    assert rep["jacobian"]["bilinear_p"] == 4
    cm = rep["invariants"]["cm"]
    assert cm["satisfied"] is False and cm["exact"] is True
    assert "exponents" not in rep
    assert "verification" not in rep


def test_analysis_of_four_cycle():
    rep = build_analysis(CYCLE)
    assert rep["jacobian"]["all_identically_zero"]
    assert [s["verdict"] for s in rep["jacobian"]["selections"]] == ["IdenticallyZero"]
    assert "exponents" not in rep
    assert any("vanishes identically" in n for n in rep["notes"])


def test_analysis_with_metadata_has_range():
    rep = build_analysis(PAIR)
    ex = rep["exponents"]
    assert ex["predicted_range"]["q_critical"] == 5
    assert [F(1, 5), F(1, 5)] in ex["predicted_range"]["region_vertices"]
    assert ex["sharpness_lower_bound"]["q"] == 5


def test_surface_echo_round_trip():
    for spec in (EXAMPLE, CYCLE, PAIR):
        echo = json.loads(dumps(build_analysis(spec)))["surface"]["text"]
        assert parse_surface(echo).quad == spec.quad


def test_analysis_deterministic(monkeypatch):
    monkeypatch.delenv("SOURCE_DATE_EPOCH", raising=False)
    assert dumps(build_analysis(EXAMPLE, seed=3)) == dumps(build_analysis(EXAMPLE, seed=3))


def test_classification_report():
    rep = classification_report(parse_surface("d=2 n=2; Q1=x1^2+x2^2; Q2=x1*x2"))
    assert rep["class"] == "XiSq_XjSq"
    assert rep["predicted_range"]["q_critical"] == 4
    deg = classification_report(parse_surface("d=2 n=2; Q1=x1^2; Q2=2*x1^2"))
    assert deg["class"] == "Degenerate" and deg["transforms"] is None and deg["predicted_range"] is None
