"""Loan, performance and macro file parsing; labeling and censoring.

Loan and performance files are delimited text (``|`` by default) whose
column positions come from a column map.  Every input row either becomes a
record or a :class:`Rejection` carrying its line number, so row accounting
always closes.
"""
from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .months import format_month, parse_month

LOAN_COLUMNS = ("loan_id", "orig_month", "fico", "dti", "cltv", "orig_upb", "orig_int_rt")
PERFORMANCE_COLUMNS = ("loan_id", "month", "dlq_status")

GOOD, BAD = 0, 1


class IngestError(ValueError):
    """Fatal input problem (unreadable file, inconsistent macro series)."""


@dataclass(frozen=True)
class LoanOrigination:
    loan_id: str
    orig_month: int
    fico: int
    dti: float
    cltv: float
    orig_upb: float
    orig_int_rt: float

    def __post_init__(self):
        if not 300 <= self.fico <= 850:
            raise ValueError(f"fico {self.fico} outside [300, 850]")
        if not self.dti >= 0:
            raise ValueError(f"dti {self.dti} negative")
        if not self.cltv > 0:
            raise ValueError(f"cltv {self.cltv} not positive")
        if not self.orig_upb > 0:
            raise ValueError(f"orig_upb {self.orig_upb} not positive")
        if not self.orig_int_rt > 0:
            raise ValueError(f"orig_int_rt {self.orig_int_rt} not positive")


@dataclass(frozen=True)
class PerformanceRow:
    loan_id: str
    month: int
    dlq_status: int


@dataclass(frozen=True)
class Rejection:
    line: int
    column: str | None
    reason: str


@dataclass
class ParseResult:
    records: list
    rejections: list[Rejection]

    @property
    def n_rows(self) -> int:
        return len(self.records) + len(self.rejections)


@dataclass(frozen=True)
class LoanHistory:
    """One loan's labeled monthly record, truncated at default or the horizon."""

    origination: LoanOrigination
    months: tuple[int, ...]
    statuses: tuple[int, ...]

    def __post_init__(self):
        n = len(self.months)
        if n == 0 or n != len(self.statuses):
            raise ValueError("history needs matching, non-empty months and statuses")
        if any(b - a != 1 for a, b in zip(self.months, self.months[1:])):
            raise ValueError(f"{self.loan_id}: months not consecutive")
        if any(self.statuses[:-1]) or self.statuses[-1] not in (GOOD, BAD):
            raise ValueError(f"{self.loan_id}: a bad month must be the final row")

    @property
    def loan_id(self) -> str:
        return self.origination.loan_id

    @property
    def terminal_status(self) -> int:
        return self.statuses[-1]

    def __len__(self) -> int:
        return len(self.months)


@dataclass(frozen=True)
class Exclusion:
    loan_id: str
    reason: str


@dataclass
class LabelResult:
    histories: list[LoanHistory]
    exclusions: list[Exclusion]

    def exclusion_counts(self) -> dict[str, int]:
        out: dict[str, int] = defaultdict(int)
        for e in self.exclusions:
            out[e.reason] += 1
        return dict(sorted(out.items()))


def _column_map(columns: Mapping[str, int] | None, required: Sequence[str]) -> dict[str, int]:
    if columns is None:
        return {name: i for i, name in enumerate(required)}
    missing = [c for c in required if c not in columns]
    if missing:
        raise IngestError(f"column map lacks {missing}")
    return {c: int(columns[c]) for c in required}


def _read_rows(path, delimiter: str, skip_header: bool):
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise IngestError(f"cannot read {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh, delimiter=delimiter)
        for lineno, fields in enumerate(reader, start=1):
            if lineno == 1 and skip_header:
                continue
            if not fields or (len(fields) == 1 and not fields[0].strip()):
                continue
            yield lineno, fields


def _field(fields: list[str], cmap: dict[str, int], name: str) -> str:
    idx = cmap[name]
    if idx >= len(fields):
        raise _FieldError(name, "missing column")
    value = fields[idx].strip()
    if value == "":
        raise _FieldError(name, "empty field")
    return value


class _FieldError(Exception):
    def __init__(self, column, reason):
        super().__init__(reason)
        self.column = column
        self.reason = reason


def _number(fields, cmap, name, kind=float):
    text = _field(fields, cmap, name)
    try:
        value = kind(text)
    except ValueError:
        raise _FieldError(name, f"non-numeric value {text!r}") from None
    if kind is float and not math.isfinite(value):
        raise _FieldError(name, f"non-finite value {text!r}")
    return value


def _month_field(fields, cmap, name):
    text = _field(fields, cmap, name)
    try:
        return parse_month(text)
    except ValueError:
        raise _FieldError(name, f"bad month {text!r}") from None


def parse_loans(path, columns: Mapping[str, int] | None = None, delimiter: str = "|",
                skip_header: bool = False) -> ParseResult:
    """Read a loan origination file.

    ``columns`` maps each name in :data:`LOAN_COLUMNS` to a zero-based field
    position; the default is the order of :data:`LOAN_COLUMNS` itself.
    Rows failing conversion or the origination invariants are rejected,
    never dropped.
    """
    cmap = _column_map(columns, LOAN_COLUMNS)
    loans, rejections = [], []
    for lineno, fields in _read_rows(path, delimiter, skip_header):
        try:
            loan = LoanOrigination(
                loan_id=_field(fields, cmap, "loan_id"),
                orig_month=_month_field(fields, cmap, "orig_month"),
                fico=_number(fields, cmap, "fico", int),
                dti=_number(fields, cmap, "dti"),
                cltv=_number(fields, cmap, "cltv"),
                orig_upb=_number(fields, cmap, "orig_upb"),
                orig_int_rt=_number(fields, cmap, "orig_int_rt"),
            )
        except _FieldError as exc:
            rejections.append(Rejection(lineno, exc.column, exc.reason))
            continue
        except ValueError as exc:
            column = str(exc).split()[0]
            rejections.append(Rejection(lineno, column if column in LOAN_COLUMNS else None, str(exc)))
            continue
        loans.append(loan)
    return ParseResult(loans, rejections)


def parse_performance(path, columns: Mapping[str, int] | None = None, delimiter: str = "|",
                      skip_header: bool = False) -> ParseResult:
    cmap = _column_map(columns, PERFORMANCE_COLUMNS)
    rows, rejections = [], []
    for lineno, fields in _read_rows(path, delimiter, skip_header):
        try:
            dlq = _number(fields, cmap, "dlq_status", int)
            if dlq < 0:
                raise _FieldError("dlq_status", f"negative delinquency {dlq}")
            rows.append(PerformanceRow(_field(fields, cmap, "loan_id"),
                                       _month_field(fields, cmap, "month"), dlq))
        except _FieldError as exc:
            rejections.append(Rejection(lineno, exc.column, exc.reason))
    return ParseResult(rows, rejections)


def validate_and_label(loans: Iterable[LoanOrigination], perf_rows: Iterable[PerformanceRow],
                       horizon: int = 36, bad_threshold: int = 2,
                       clock_offset: int = 0) -> LabelResult:
    """Label monthly status and apply Type I censoring.

    A loan is bad (status 1) in the first month whose ``dlq_status`` reaches
    ``bad_threshold`` and its history stops there; otherwise the history is
    cut after ``horizon - clock_offset`` months, ``clock_offset`` being the
    number of months already on the clock at the first performance month.
    Loans with calendar gaps, duplicate months, no performance or no
    origination are excluded with a reason.
    """
    if horizon - clock_offset < 1:
        raise ValueError("horizon must exceed clock_offset")
    cap = horizon - clock_offset
    by_loan: dict[str, list[PerformanceRow]] = defaultdict(list)
    for row in perf_rows:
        by_loan[row.loan_id].append(row)
    origins = {}
    exclusions = []
    for loan in loans:
        if loan.loan_id in origins:
            exclusions.append(Exclusion(loan.loan_id, "duplicate origination"))
            continue
        origins[loan.loan_id] = loan

    histories = []
    for loan_id in sorted(set(origins) | set(by_loan)):
        rows = by_loan.get(loan_id)
        if loan_id not in origins:
            exclusions.append(Exclusion(loan_id, "no origination"))
            continue
        if not rows:
            exclusions.append(Exclusion(loan_id, "no performance"))
            continue
        rows = sorted(rows, key=lambda r: r.month)
        months = [r.month for r in rows]
        steps = np.diff(months)
        if np.any(steps == 0):
            exclusions.append(Exclusion(loan_id, "duplicate month"))
            continue
        if np.any(steps != 1):
            exclusions.append(Exclusion(loan_id, "non-consecutive months"))
            continue
        statuses = []
        for r in rows[:cap]:
            if r.dlq_status >= bad_threshold:
                statuses.append(BAD)
                break
            statuses.append(GOOD)
        histories.append(LoanHistory(origins[loan_id], tuple(months[:len(statuses)]), tuple(statuses)))
    exclusions.sort(key=lambda e: (e.loan_id, e.reason))
    return LabelResult(histories, exclusions)


def history_rows(histories: Iterable[LoanHistory], bad_dlq: int = 2) -> list[PerformanceRow]:
    """Performance rows that relabel to the same histories."""
    return [PerformanceRow(h.loan_id, m, bad_dlq if s else 0)
            for h in histories for m, s in zip(h.months, h.statuses)]


@dataclass
class MonthlyCounts:
    """Bads and goods per calendar month, as tallied from labeled rows."""

    table: dict[int, tuple[int, int]] = field(default_factory=dict)

    def bads(self, month: int) -> int:
        return self.table[month][0]

    def goods(self, month: int) -> int:
        return self.table[month][1]

    def count(self, month: int, status: int) -> int:
        return self.table[month][0 if status == BAD else 1]

    def __contains__(self, month: int) -> bool:
        return month in self.table

    def __len__(self) -> int:
        return len(self.table)

    def rows(self) -> list[tuple[int, int, int]]:
        return [(m, b, g) for m, (b, g) in sorted(self.table.items())]

    @property
    def total(self) -> int:
        return sum(b + g for b, g in self.table.values())

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["month", "n_bads", "n_goods"])
            for m, b, g in self.rows():
                w.writerow([format_month(m), b, g])

    @classmethod
    def from_csv(cls, path) -> "MonthlyCounts":
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            return cls({parse_month(r["month"]): (int(r["n_bads"]), int(r["n_goods"])) for r in reader})


def monthly_counts(histories: Iterable[LoanHistory]) -> MonthlyCounts:
    tally: dict[int, list[int]] = defaultdict(lambda: [0, 0])
    for h in histories:
        for m, s in zip(h.months, h.statuses):
            tally[m][0 if s == BAD else 1] += 1
    return MonthlyCounts({m: (b, g) for m, (b, g) in sorted(tally.items())})


@dataclass(frozen=True)
class MacroSeries:
    name: str
    months: tuple[int, ...]
    values: tuple[float, ...]
    native_frequency: str = "monthly"

    def __post_init__(self):
        if self.native_frequency not in ("monthly", "quarterly"):
            raise IngestError(f"{self.name}: unknown frequency {self.native_frequency!r}")
        if len(self.months) != len(self.values):
            raise IngestError(f"{self.name}: months and values differ in length")
        if not all(math.isfinite(v) for v in self.values):
            raise IngestError(f"{self.name}: non-finite values")
        step = 1 if self.native_frequency == "monthly" else 3
        for a, b in zip(self.months, self.months[1:]):
            if b == a:
                raise IngestError(f"{self.name}: duplicate month {format_month(a)}")
            if b < a:
                raise IngestError(f"{self.name}: dates not increasing at {format_month(b)}")
            if b - a != step:
                raise IngestError(f"{self.name}: gap between {format_month(a)} and {format_month(b)} "
                                  f"for a {self.native_frequency} series")

    def __len__(self) -> int:
        return len(self.months)


def load_macro(path, frequency: str = "monthly", name: str | None = None,
               aggregate: bool = False) -> MacroSeries:
    """Read a two-column ``month,value`` CSV (a header row is skipped).

    With ``aggregate=True`` several observations falling in one month (a
    weekly rate series, say) are averaged; otherwise a repeated month is
    an error.
    """
    path = Path(path)
    name = name or path.stem
    pairs: list[tuple[int, float]] = []
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise IngestError(f"cannot read {path}: {exc}") from exc
    with fh:
        for lineno, fields in enumerate(csv.reader(fh), start=1):
            if not fields or not fields[0].strip():
                continue
            if len(fields) < 2:
                raise IngestError(f"{path}:{lineno}: expected month,value")
            try:
                month = parse_month(fields[0])
            except ValueError:
                if lineno == 1:
                    continue
                raise IngestError(f"{path}:{lineno}: bad month {fields[0]!r}") from None
            try:
                value = float(fields[1])
            except ValueError:
                raise IngestError(f"{path}:{lineno}: bad value {fields[1]!r}") from None
            pairs.append((month, value))
    if aggregate:
        grouped: dict[int, list[float]] = defaultdict(list)
        last = None
        for m, v in pairs:
            if last is not None and m < last:
                raise IngestError(f"{name}: dates not increasing at {format_month(m)}")
            last = m
            grouped[m].append(v)
        pairs = [(m, math.fsum(vs) / len(vs)) for m, vs in grouped.items()]
    return MacroSeries(name, tuple(m for m, _ in pairs), tuple(v for _, v in pairs), frequency)


def write_macro(path, series: MacroSeries) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["month", "value"])
        for m, v in zip(series.months, series.values):
            w.writerow([format_month(m), repr(float(v))])


def write_loans(path, loans: Iterable[LoanOrigination], delimiter: str = "|") -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        for ln in loans:
            w.writerow([ln.loan_id, format_month(ln.orig_month), ln.fico, repr(float(ln.dti)),
                        repr(float(ln.cltv)), repr(float(ln.orig_upb)), repr(float(ln.orig_int_rt))])


def write_performance(path, rows: Iterable[PerformanceRow], delimiter: str = "|") -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        for r in rows:
            w.writerow([r.loan_id, format_month(r.month), r.dlq_status])


def write_exclusions(path, exclusions: Iterable[Exclusion]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["loan_id", "reason"])
        for e in exclusions:
            w.writerow([e.loan_id, e.reason])


def write_rejections(path, rejections: Iterable[Rejection], source: str = "") -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["source", "line", "column", "reason"])
        for r in rejections:
            w.writerow([source, r.line, r.column or "", r.reason])


def write_histories(path, histories: Iterable[LoanHistory]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["loan_id", "month", "status"])
        for h in histories:
            for m, s in zip(h.months, h.statuses):
                w.writerow([h.loan_id, format_month(m), s])


def read_histories(path, loans: Mapping[str, LoanOrigination]) -> list[LoanHistory]:
    rows: dict[str, list[tuple[int, int]]] = defaultdict(list)
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            rows[r["loan_id"]].append((parse_month(r["month"]), int(r["status"])))
    out = []
    for loan_id in sorted(rows):
        ms = rows[loan_id]
        out.append(LoanHistory(loans[loan_id], tuple(m for m, _ in ms), tuple(s for _, s in ms)))
    return out
