from collections import Counter

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hazard_scorecard.ingest import (IngestError, LoanHistory, MacroSeries, PerformanceRow, history_rows,
                                     load_macro, monthly_counts, parse_loans, parse_performance,
                                     read_histories, validate_and_label, write_histories, write_loans,
                                     write_performance)
from hazard_scorecard.months import parse_month

from conftest import make_loan


def perf(loan_id, start, dlqs):
    m0 = parse_month(start)
    return [PerformanceRow(loan_id, m0 + i, d) for i, d in enumerate(dlqs)]


# parsing --------------------------------------------------------------------

def test_parse_loans_identity_map(tmp_path):
    p = tmp_path / "loans.txt"
    p.write_text("L1|2018-02|720|35|80|250000|4.5\n")
    res = parse_loans(p)
    (loan,) = res.records
    assert (loan.loan_id, loan.fico, loan.dti, loan.cltv, loan.orig_upb, loan.orig_int_rt) == \
        ("L1", 720, 35, 80, 250000, 4.5)
    assert loan.orig_month == parse_month("2018-02")
    assert res.rejections == []


def test_parse_loans_empty_fico_is_rejected(tmp_path):
    p = tmp_path / "loans.txt"
    p.write_text("L1|2018-02||35|80|250000|4.5\n")
    res = parse_loans(p)
    assert res.records == []
    (rej,) = res.rejections
    assert rej.column == "fico" and rej.line == 1


def test_parse_loans_counts_malformed(tmp_path):
    p = tmp_path / "loans.txt"
    p.write_text("L1|2018-02|720|35|80|250000|4.5\n"
                 "L2|2018-02|abc|35|80|250000|4.5\n"
                 "L3|2018-03|690|40|95|150000|5.0\n")
    res = parse_loans(p)
    assert len(res.records) == 2 and len(res.rejections) == 1 and res.n_rows == 3
    assert res.rejections[0].line == 2 and res.rejections[0].column == "fico"


@pytest.mark.parametrize("row,column", [
    ("L1|2018-02|900|35|80|250000|4.5", "fico"),
    ("L1|2018-02|720|-1|80|250000|4.5", "dti"),
    ("L1|2018-02|720|35|0|250000|4.5", "cltv"),
    ("L1|2018-02|720|35|80|0|4.5", "orig_upb"),
    ("L1|2018-02|720|35|80|250000|0", "orig_int_rt"),
    ("L1|2018-02|720|35|80|250000", "orig_int_rt"),
    ("L1|2018-99|720|35|80|250000|4.5", "orig_month"),
])
def test_parse_loans_invariant_rejections(tmp_path, row, column):
    p = tmp_path / "loans.txt"
    p.write_text(row + "\n")
    res = parse_loans(p)
    assert res.records == [] and res.rejections[0].column == column


def test_parse_loans_column_map_and_header(tmp_path):
    p = tmp_path / "loans.csv"
    p.write_text("rate,id,fico,month,upb,cltv,dti\n4.5,L1,720,2018-02,250000,80,35\n")
    cols = {"orig_int_rt": 0, "loan_id": 1, "fico": 2, "orig_month": 3, "orig_upb": 4, "cltv": 5, "dti": 6}
    (loan,) = parse_loans(p, cols, ",", skip_header=True).records
    assert loan.orig_int_rt == 4.5 and loan.dti == 35


def test_unreadable_file_is_fatal(tmp_path):
    with pytest.raises(IngestError):
        parse_loans(tmp_path / "missing.txt")
    with pytest.raises(IngestError):
        parse_performance(tmp_path / "missing.txt")


def test_parse_performance(tmp_path):
    p = tmp_path / "perf.txt"
    p.write_text("L1|2018-03|0\nL1|2018-04|x\nL1|2018-05|-1\nL1|2018-06|2\n")
    res = parse_performance(p)
    assert [r.dlq_status for r in res.records] == [0, 2]
    assert [r.line for r in res.rejections] == [2, 3]
    assert all(r.column == "dlq_status" for r in res.rejections)


def test_loan_file_round_trip(tmp_path):
    loans = [make_loan("A", dti=33.25, upb=123456.5), make_loan("B", rate=3.875)]
    write_loans(tmp_path / "l.txt", loans)
    assert parse_loans(tmp_path / "l.txt").records == loans


# labeling -------------------------------------------------------------------

def test_label_first_60dpd_month():
    res = validate_and_label([make_loan()], perf("L1", "2018-02", [0, 0, 1, 2, 3, 4]))
    (h,) = res.histories
    assert h.statuses == (0, 0, 0, 1) and h.terminal_status == 1 and len(h) == 4


def test_label_censors_at_36():
    (h,) = validate_and_label([make_loan()], perf("L1", "2018-02", [0] * 40)).histories
    assert len(h) == 36 and h.terminal_status == 0 and set(h.statuses) == {0}


def test_bad_after_horizon_is_censored_good():
    (h,) = validate_and_label([make_loan()], perf("L1", "2018-02", [0] * 36 + [2])).histories
    assert len(h) == 36 and h.terminal_status == 0


def test_label_gap_excluded():
    rows = [PerformanceRow("L1", parse_month("2018-02"), 0), PerformanceRow("L1", parse_month("2018-04"), 0)]
    res = validate_and_label([make_loan()], rows)
    assert res.histories == []
    assert res.exclusion_counts() == {"non-consecutive months": 1}


def test_label_exclusion_reasons():
    loans = [make_loan("A"), make_loan("B"), make_loan("D"), make_loan("D")]
    rows = perf("A", "2018-02", [0, 0]) + perf("C", "2018-02", [0]) + perf("D", "2018-02", [0]) \
        + perf("D", "2018-02", [0])
    res = validate_and_label(loans, rows)
    assert [h.loan_id for h in res.histories] == ["A"]
    reasons = {(e.loan_id, e.reason) for e in res.exclusions}
    assert reasons == {("B", "no performance"), ("C", "no origination"), ("D", "duplicate origination"),
                       ("D", "duplicate month")}


def test_threshold_and_clock_offset():
    rows = perf("L1", "2018-02", [0, 1, 0, 0, 0])
    (h,) = validate_and_label([make_loan()], rows, bad_threshold=1).histories
    assert h.statuses == (0, 1)
    (h,) = validate_and_label([make_loan()], perf("L1", "2018-02", [0] * 40), clock_offset=1).histories
    assert len(h) == 35


def test_input_order_irrelevant(small_portfolio):
    loans, rows = small_portfolio.loans, small_portfolio.performance
    a = validate_and_label(loans, rows)
    rng = np.random.default_rng(0)
    b = validate_and_label([loans[i] for i in rng.permutation(len(loans))],
                           [rows[i] for i in rng.permutation(len(rows))])
    assert a.histories == b.histories and a.exclusions == b.exclusions


dlq_seq = st.lists(st.integers(0, 5), min_size=1, max_size=45)


@given(st.lists(st.tuples(dlq_seq, st.integers(0, 30), st.booleans()), min_size=1, max_size=12))
def test_label_properties(specs):
    loans, rows = [], []
    base = parse_month("2018-01")
    for i, (dlqs, start, gap) in enumerate(specs):
        lid = f"L{i}"
        loans.append(make_loan(lid))
        months = [base + start + k for k in range(len(dlqs))]
        if gap and len(months) > 1:
            months[-1] += 1
        rows += [PerformanceRow(lid, m, d) for m, d in zip(months, dlqs)]
    res = validate_and_label(loans, rows)
    assert len(res.histories) + len(res.exclusions) == len(specs)
    for h in res.histories:
        dlqs = specs[int(h.loan_id[1:])][0]
        first_bad = next((k for k, d in enumerate(dlqs) if d >= 2), None)
        if first_bad is not None and first_bad < 36:
            assert len(h) == first_bad + 1 and h.terminal_status == 1
        else:
            assert len(h) == min(36, len(dlqs)) and h.terminal_status == 0
        assert len(h) <= 36 and sum(h.statuses) <= 1
    # idempotence
    again = validate_and_label(loans, history_rows(res.histories))
    assert again.histories == res.histories


def test_history_invariants_enforced():
    loan = make_loan()
    with pytest.raises(ValueError):
        LoanHistory(loan, (1, 3), (0, 0))
    with pytest.raises(ValueError):
        LoanHistory(loan, (1, 2), (1, 0))
    with pytest.raises(ValueError):
        LoanHistory(loan, (), ())


def test_histories_round_trip(tmp_path, small_portfolio):
    hs = validate_and_label(small_portfolio.loans, small_portfolio.performance).histories
    write_histories(tmp_path / "h.csv", hs)
    loans = {ln.loan_id: ln for ln in small_portfolio.loans}
    assert read_histories(tmp_path / "h.csv", loans) == hs


# monthly counts -------------------------------------------------------------

def test_monthly_counts_two_loans():
    a = validate_and_label([make_loan("A")], perf("A", "2020-04", [0, 2])).histories
    b = validate_and_label([make_loan("B")], perf("B", "2020-04", [0, 0])).histories
    c = monthly_counts(a + b)
    assert c.rows() == [(parse_month("2020-04"), 0, 2), (parse_month("2020-05"), 1, 1)]


def test_monthly_counts_empty():
    c = monthly_counts([])
    assert len(c) == 0 and c.total == 0


def test_monthly_counts_brute_force(small_portfolio, tmp_path):
    hs = validate_and_label(small_portfolio.loans, small_portfolio.performance).histories
    c = monthly_counts(hs)
    tally = Counter()
    for h in hs:
        for i in range(len(h)):
            tally[(h.months[i], h.statuses[i])] += 1
    for m, b, g in c.rows():
        assert (b, g) == (tally[(m, 1)], tally[(m, 0)])
    assert c.total == sum(len(h) for h in hs) == sum(tally.values())
    c.to_csv(tmp_path / "c.csv")
    assert type(c).from_csv(tmp_path / "c.csv") == c


# macro series ---------------------------------------------------------------

def test_load_macro(tmp_path):
    p = tmp_path / "UNRATENSA.csv"
    p.write_text("month,value\n2020-01,3.6\n2020-02,3.8\n2020-03,4.5\n")
    s = load_macro(p)
    assert len(s) == 3 and s.name == "UNRATENSA" and s.values[1] == 3.8


def test_load_macro_duplicate_month(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("2020-04,1\n2020-05,2\n2020-05,3\n")
    with pytest.raises(IngestError, match="duplicate"):
        load_macro(p)


def test_load_macro_non_monotone(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("2020-04,1\n2020-03,2\n")
    with pytest.raises(IngestError, match="increasing"):
        load_macro(p)


def test_quarterly_declared_monthly_is_error(tmp_path):
    p = tmp_path / "q.csv"
    p.write_text("2020-01-01,1.0\n2020-04-01,1.1\n2020-07-01,1.2\n")
    with pytest.raises(IngestError, match="gap"):
        load_macro(p, "monthly")
    assert len(load_macro(p, "quarterly")) == 3


def test_load_macro_aggregates_weekly(tmp_path):
    p = tmp_path / "MORTGAGE30US.csv"
    p.write_text("DATE,VALUE\n1/2/2020,3.72\n1/9/2020,3.64\n2/6/2020,3.45\n")
    s = load_macro(p, aggregate=True)
    assert s.values == (pytest.approx(3.68), 3.45)


def test_macro_non_finite():
    with pytest.raises(IngestError):
        MacroSeries("x", (1, 2), (1.0, float("nan")))
