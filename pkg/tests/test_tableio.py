import json
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conflab.space import FnTable, ObservationSpace
from conflab.tableio import (
    TableFormatError,
    load_table,
    report_csv,
    save_report,
    save_table,
    table_from_dict,
    table_to_dict,
)

values = st.lists(st.one_of(st.floats(0, 1e300), st.just(math.inf)), min_size=8, max_size=8)


@given(values)
def test_round_trip_is_bitwise(vals):
    t = FnTable(ObservationSpace(1, 2), 2, vals)
    back = table_from_dict(json.loads(json.dumps(table_to_dict(t))))
    assert back == t
    assert back.values.tobytes() == t.values.tobytes()


def test_file_round_trip_with_inf(tmp_path):
    t = FnTable(ObservationSpace(2, 2), 1, np.r_[np.arange(15.0) / 7, math.inf])
    path = tmp_path / "t.json"
    save_table(t, path)
    assert '"inf"' in path.read_text()
    assert load_table(path) == t


def test_exact_round_trip(tmp_path):
    t = FnTable(ObservationSpace(1, 2), 1, [0.5, 0.25, 1.0, 3.0]).to_exact()
    t = t.with_values(t.values / 3)
    path = tmp_path / "t.json"
    save_table(t, path)
    back = load_table(path)
    assert back.is_exact and back == t
    assert back.values[0, 0] == Fraction(1, 6)


def test_dimension_mismatch():
    with pytest.raises(TableFormatError, match="dimension"):
        table_from_dict({"space": {"x_card": 1, "y_card": 2}, "n": 1, "values": [1, 2, 3]})


def test_malformed_inputs(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(TableFormatError):
        load_table(bad)
    with pytest.raises(TableFormatError):
        table_from_dict({"space": {"x_card": 1}, "n": 1, "values": []})
    with pytest.raises(TableFormatError):
        table_from_dict({"space": {"x_card": 1, "y_card": 2}, "n": 0, "values": ["x", 1]})


def test_reports(tmp_path):
    report = {"results": [{"instance": 0, "ok": True, "a": {"b": 1.5, "c": [1, 2]}},
                          {"instance": 1, "ok": False, "a": {"b": math.inf}}]}
    text = report_csv(report)
    lines = text.strip().splitlines()
    assert lines[0] == "instance,ok,a.b,a.c"
    assert lines[2].startswith("1,False,inf")
    save_report(report, tmp_path / "r.json")
    assert json.loads((tmp_path / "r.json").read_text())["results"][1]["a"]["b"] == "inf"
