"""Delay time, degradation, throughput and report rendering.

Sizes use decimal units (1 MB = 10**6 bytes, 1 GB = 10**9 bytes) so that
100 MB at 64 Mb/s is exactly 12.5 s.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence, Union

from .errors import EmptyInput, NonPositiveInput

MB = 10**6
GB = 10**9

VARIANTS = ("baseline", "secured2", "secdm3", "proposed")
SECURED_VARIANTS = VARIANTS[1:]

# row labels of the bundled tables -> variant ids
_LABELS = {
    "Baseline": "baseline",
    "Secured HDFS[2]": "secured2",
    "Secured HDFS [2]": "secured2",
    "Secured HDFS[3]": "secdm3",
    "Secured HDFS [3]": "secdm3",
    "Proposed secured HDFS": "proposed",
    "Our secured HDFS": "proposed",
}

# percentage points
CROSS_CHECK_TOLERANCE = 0.1


@dataclass(frozen=True)
class BenchRecord:
    method: str
    file_size: int
    migration_time: float

    def __post_init__(self):
        if not self.migration_time > 0:
            raise NonPositiveInput(f"migration time must be positive, got {self.migration_time}")
        if self.file_size < 0:
            raise NonPositiveInput("file size must be non-negative")


def delay_time(dmts: float, dmtb: float) -> float:
    """Secured migration time minus baseline migration time."""
    if not (dmts > 0 and dmtb > 0):
        raise NonPositiveInput("migration times must be positive")
    return dmts - dmtb


def degradation(delay: float, dmtb: float) -> float:
    """Delay as a fraction of the baseline migration time."""
    if not dmtb > 0:
        raise NonPositiveInput("baseline time must be positive")
    return delay / dmtb


def throughput(file_size: float, migration_time: float) -> float:
    """Bytes per second."""
    if not migration_time > 0:
        raise NonPositiveInput("migration time must be positive")
    return file_size / migration_time


def size_label(size: int) -> str:
    if size >= GB and size % GB == 0:
        return f"{size // GB}GB"
    if size >= MB and size % MB == 0:
        return f"{size // MB}MB"
    return f"{size}B"


def parse_size(label: str) -> int:
    s = label.strip().upper().replace(" ", "")
    for suffix, mult in (("GB", GB), ("MB", MB), ("KB", 10**3), ("B", 1)):
        if s.endswith(suffix):
            return int(float(s[: -len(suffix)]) * mult)
    return int(s)


# ---------------------------------------------------------------------------
# bundled tables

Table = dict[str, dict[int, float]]


def _read_table(name: str, percent: bool) -> Table:
    text = resources.files("intercloud").joinpath("data").joinpath(name).read_text()
    rows = list(csv.reader(io.StringIO(text)))
    sizes = [parse_size(c) for c in rows[0][1:]]
    out: Table = {}
    for row in rows[1:]:
        values = [float(c.rstrip("%")) / (100 if percent else 1) for c in row[1:]]
        out[_LABELS[row[0]]] = dict(zip(sizes, values))
    return out


def load_table1() -> Table:
    """Published migration times in seconds, keyed by variant then size in bytes."""
    return _read_table("table1.csv", percent=False)


def load_table2() -> Table:
    """Published degradations as fractions."""
    return _read_table("table2.csv", percent=True)


def table2_from_table1(table1: Table) -> Table:
    base = table1["baseline"]
    return {
        v: {s: degradation(delay_time(t, base[s]), base[s]) for s, t in row.items()}
        for v, row in table1.items()
        if v != "baseline"
    }


@dataclass(frozen=True)
class CellCheck:
    method: str
    file_size: int
    published: float
    recomputed: float

    @property
    def diff_pp(self) -> float:
        return abs(self.published - self.recomputed) * 100

    @property
    def consistent(self) -> bool:
        # published cells carry one decimal; allow float noise at the boundary
        return self.diff_pp <= CROSS_CHECK_TOLERANCE + 1e-9

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "size_bytes": self.file_size,
            "published": round(self.published, 6),
            "recomputed": round(self.recomputed, 6),
            "status": "match" if self.consistent else "paper-inconsistent",
        }


def cross_check(table1: Optional[Table] = None, table2: Optional[Table] = None) -> list[CellCheck]:
    """Compare a published degradation table against one recomputed from the times."""
    table1 = table1 if table1 is not None else load_table1()
    table2 = table2 if table2 is not None else load_table2()
    recomputed = table2_from_table1(table1)
    return [
        CellCheck(v, s, table2[v][s], recomputed[v][s])
        for v in _ordered(table2)
        for s in sorted(table2[v])
        if s in recomputed.get(v, {})
    ]


# ---------------------------------------------------------------------------
# reports


def _ordered(methods: Iterable[str]) -> list[str]:
    known = [v for v in VARIANTS if v in methods]
    return known + sorted(set(methods) - set(VARIANTS))


@dataclass(frozen=True)
class ReportRow:
    method: str
    size_bytes: int
    time_s: float
    delay_s: Optional[float]
    degradation: Optional[float]
    anomaly: bool = False


def report_rows(records: Sequence[BenchRecord]) -> list[ReportRow]:
    if not records:
        raise EmptyInput("no records to report")
    base = {r.file_size: r.migration_time for r in records if r.method == "baseline"}
    order = {m: i for i, m in enumerate(_ordered({r.method for r in records}))}
    rows = []
    for r in sorted(records, key=lambda r: (order[r.method], r.file_size)):
        dmtb = base.get(r.file_size)
        if dmtb is None:
            rows.append(ReportRow(r.method, r.file_size, r.migration_time, None, None))
            continue
        d = delay_time(r.migration_time, dmtb)
        rows.append(ReportRow(r.method, r.file_size, r.migration_time, d, degradation(d, dmtb), anomaly=d < 0))
    return rows


def _num(x: Optional[float]) -> str:
    return "" if x is None else repr(float(x))


def render_csv(records: Sequence[BenchRecord]) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["method", "size_bytes", "time_s", "delay_s", "degradation"])
    for row in report_rows(records):
        w.writerow([row.method, row.size_bytes, _num(row.time_s), _num(row.delay_s), _num(row.degradation)])
    return out.getvalue()


def matrices(records: Sequence[BenchRecord]) -> dict:
    """Times and degradations as method x size matrices, rounded for display."""
    rows = report_rows(records)
    sizes = sorted({r.size_bytes for r in rows})
    methods = _ordered({r.method for r in rows})
    cell = {(r.method, r.size_bytes): r for r in rows}
    times = {m: [round(cell[(m, s)].time_s, 1) if (m, s) in cell else None for s in sizes] for m in methods}
    degr = {
        m: [
            round(cell[(m, s)].degradation * 100, 1) if (m, s) in cell and cell[(m, s)].degradation is not None else None
            for s in sizes
        ]
        for m in methods
        if m != "baseline"
    }
    labels = [size_label(s) for s in sizes]
    return {
        "time_matrix": {"sizes": labels, "unit": "s", "rows": times},
        "degradation_matrix": {"sizes": labels, "unit": "%", "rows": degr},
    }


def render_structured(records: Sequence[BenchRecord], extra: Optional[Mapping] = None) -> str:
    rows = report_rows(records)
    doc = {
        "records": [
            {
                "method": r.method,
                "size_bytes": r.size_bytes,
                "time_s": r.time_s,
                "delay_s": r.delay_s,
                "degradation": r.degradation,
                "anomaly": r.anomaly,
            }
            for r in rows
        ],
        **matrices(records),
        "published_cross_check": [c.to_dict() for c in cross_check()],
    }
    if extra:
        doc.update(extra)
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def emit_report(
    records: Sequence[BenchRecord],
    format: str = "csv",
    path: Union[str, Path, None] = None,
    *,
    extra: Optional[Mapping] = None,
) -> str:
    """Render ``records`` as ``csv`` or ``structured`` (JSON); write to ``path`` if given."""
    if format == "csv":
        text = render_csv(records)
    elif format == "structured":
        text = render_structured(records, extra)
    else:
        raise ValueError(f"unknown report format {format!r}")
    if path is not None:
        Path(path).write_text(text)
    return text


def records_from_table(table: Table) -> list[BenchRecord]:
    return [BenchRecord(v, s, t) for v, row in table.items() for s, t in row.items()]
