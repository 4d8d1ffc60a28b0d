"""
Labeling loan histories
=======================

Monthly delinquency rows become good/bad histories.  A loan turns bad in
the first month it is 60+ days past due and its record stops there;
otherwise it is cut after 36 months.  Loans with calendar gaps are
excluded, never repaired.
"""
from hazard_scorecard import LoanOrigination, PerformanceRow, monthly_counts, validate_and_label
from hazard_scorecard.months import format_month, parse_month

# Three loans originated in January 2019.
loans = [LoanOrigination(i, parse_month("2019-01"), 720, 35.0, 80.0, 250000.0, 4.5) for i in ("A", "B", "C")]


def rows(loan_id, start, statuses):
    m0 = parse_month(start)
    return [PerformanceRow(loan_id, m0 + k, s) for k, s in enumerate(statuses)]


# A: 30 days late in month 3, 60 days late in month 4 -> bad at month 4.
# B: always current for 40 months -> good, censored at 36.
# C: the April row is missing -> excluded.
perf = (rows("A", "2019-02", [0, 0, 1, 2, 3, 0])
        + rows("B", "2019-02", [0] * 40)
        + [r for r in rows("C", "2019-02", [0] * 6) if format_month(r.month) != "2019-04"])

result = validate_and_label(loans, perf)
for h in result.histories:
    print(f"{h.loan_id}: {len(h)} months, {format_month(h.months[0])}..{format_month(h.months[-1])}, "
          f"final status {h.statuses[-1]}")
print("excluded:", result.exclusion_counts())

# Per calendar month tallies of good and bad rows drive the sampling rates.
counts = monthly_counts(result.histories)
m = parse_month("2019-05")
print(f"{format_month(m)}: goods {counts.count(m, 0)}, bads {counts.count(m, 1)}")
