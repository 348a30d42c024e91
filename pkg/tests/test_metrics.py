from __future__ import annotations

import csv
import io
import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from intercloud.errors import EmptyInput, NonPositiveInput
from intercloud.metrics import (
    GB,
    MB,
    BenchRecord,
    cross_check,
    degradation,
    delay_time,
    emit_report,
    load_table1,
    load_table2,
    matrices,
    parse_size,
    records_from_table,
    report_rows,
    size_label,
    table2_from_table1,
    throughput,
)


def test_delay_time_examples():
    assert delay_time(145.8, 128.3) == pytest.approx(17.5)
    assert delay_time(3709.6, 2392.9) == pytest.approx(1316.7)
    assert delay_time(7.0, 7.0) == 0


def test_degradation_examples():
    assert degradation(17.5, 128.3) == pytest.approx(0.136, abs=5e-4)
    assert degradation(1316.7, 2392.9) == pytest.approx(0.550, abs=5e-4)
    assert degradation(0, 3.0) == 0


def test_throughput_examples():
    assert throughput(100 * MB, 12.5) == 8 * MB
    assert throughput(100 * MB, 12.5) * 8 == 64e6
    assert throughput(0, 4.0) == 0
    assert throughput(16 * GB, 2843.2) / MB == pytest.approx(5.627, abs=1e-3)


def test_preconditions():
    with pytest.raises(NonPositiveInput):
        delay_time(0, 1)
    with pytest.raises(NonPositiveInput):
        degradation(1, 0)
    with pytest.raises(NonPositiveInput):
        throughput(1, 0)
    with pytest.raises(NonPositiveInput):
        BenchRecord("baseline", 1, 0.0)
    with pytest.raises(EmptyInput):
        report_rows([])


@given(t=st.floats(1e-6, 1e9))
def test_zero_delay_zero_degradation(t):
    assert degradation(delay_time(t, t), t) == 0


def test_bundled_tables_values():
    t1, t2 = load_table1(), load_table2()
    assert t1["baseline"][100 * MB] == 12.5
    assert t1["proposed"][GB] == 145.8
    assert t1["secured2"][16 * GB] == 3709.6
    assert t2["secured2"][16 * GB] == pytest.approx(0.55)
    assert set(t1) == {"baseline", "secured2", "secdm3", "proposed"}


def test_cross_check_matches_large_cells_and_flags_100mb():
    checks = {(c.method, c.file_size): c for c in cross_check()}
    assert len(checks) == 18
    for (m, s), c in checks.items():
        if s >= GB:
            assert c.consistent, (m, s, c.diff_pp)
    bad = sorted((m, s) for (m, s), c in checks.items() if not c.consistent)
    assert bad == [("proposed", 100 * MB), ("secdm3", 100 * MB)]
    assert checks[("proposed", 100 * MB)].recomputed == pytest.approx(0.016, abs=5e-4)
    assert checks[("secdm3", 100 * MB)].recomputed == pytest.approx(0.112, abs=5e-4)


def test_recomputed_table_two_rounds_to_published():
    recomputed = table2_from_table1(load_table1())
    assert round(recomputed["proposed"][GB] * 100, 1) == 13.6
    assert round(recomputed["secured2"][16 * GB] * 100, 1) == 55.0


def test_sizes():
    assert parse_size("100MB") == 100 * MB and parse_size("16 GB") == 16 * GB and parse_size("123") == 123
    assert size_label(100 * MB) == "100MB" and size_label(2 * GB) == "2GB" and size_label(7) == "7B"


def test_one_record_gives_header_and_one_row():
    text = emit_report([BenchRecord("baseline", MB, 1.0)], "csv")
    rows = list(csv.reader(io.StringIO(text)))
    assert rows == [["method", "size_bytes", "time_s", "delay_s", "degradation"], ["baseline", str(MB), "1.0", "0.0", "0.0"]]


GOLDEN_CSV = """method,size_bytes,time_s,delay_s,degradation
baseline,1000000,2.0,0.0,0.0
baseline,2000000,4.0,0.0,0.0
proposed,1000000,3.0,1.0,0.5
proposed,2000000,5.0,1.0,0.25
"""


def test_two_methods_aligned_golden():
    recs = [BenchRecord(m, s * MB, t) for m, s, t in [("proposed", 2, 5.0), ("baseline", 1, 2.0), ("proposed", 1, 3.0), ("baseline", 2, 4.0)]]
    assert emit_report(recs, "csv") == GOLDEN_CSV
    m = matrices(recs)
    assert m["time_matrix"]["rows"] == {"baseline": [2.0, 4.0], "proposed": [3.0, 5.0]}
    assert m["degradation_matrix"]["rows"] == {"proposed": [50.0, 25.0]}
    assert None not in sum(m["time_matrix"]["rows"].values(), [])


def test_table_one_in_gives_table_two_out():
    m = matrices(records_from_table(load_table1()))
    published = load_table2()
    sizes = [parse_size(s) for s in m["degradation_matrix"]["sizes"]]
    for v, row in m["degradation_matrix"]["rows"].items():
        for s, cell in zip(sizes, row):
            if s >= GB:
                assert abs(cell - published[v][s] * 100) <= 0.1 + 1e-9


def test_structured_report_and_file(tmp_path):
    path = tmp_path / "r.json"
    text = emit_report(records_from_table(load_table1()), "structured", path)
    doc = json.loads(path.read_text())
    assert text == path.read_text()
    assert {"records", "time_matrix", "degradation_matrix", "published_cross_check"} <= set(doc)
    flagged = [c for c in doc["published_cross_check"] if c["status"] == "paper-inconsistent"]
    assert len(flagged) == 2
    with pytest.raises(ValueError):
        emit_report([BenchRecord("baseline", 1, 1.0)], "xml")


def test_negative_delay_marked_as_anomaly():
    rows = report_rows([BenchRecord("baseline", 1, 2.0), BenchRecord("proposed", 1, 1.0)])
    assert rows[1].anomaly and rows[1].delay_s == -1.0
