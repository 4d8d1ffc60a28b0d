"""
Exploded panels and the backward weighted sample
================================================

Every month of a loan can serve as a snapshot, so a loan observed for n
months yields n(n+1)/2 exploded rows.  The backward sample draws these
rows directly from the original histories with probabilities that fall as
a month gets crowded, and inverse-probability weights restore the totals.
"""
import numpy as np

from hazard_scorecard import (GeneratorSpec, backward_weighted_sample, explode_full, exploded_size,
                              monthly_counts, rate_for, simulate, validate_and_label)
from hazard_scorecard.ingest import LoanHistory, LoanOrigination
from hazard_scorecard.months import format_month, parse_month

# A five-month loan that goes bad in its last month explodes to 15 rows.
loan = LoanOrigination("X", parse_month("2020-01"), 700, 30.0, 75.0, 200000.0, 3.5)
h = LoanHistory(loan, tuple(range(parse_month("2020-02"), parse_month("2020-07"))), (0, 0, 0, 0, 1))
print(" snapshot  month    age  mob  status")
for r in explode_full(h):
    print(f"  {format_month(r.snapshot_month)}  {format_month(r.calendar_month)}  {r.loan_age:3d}  "
          f"{r.snapshot_mob:3d}  {r.status:4d}")

# Selection probabilities by row count in the month.
for status, count in [(1, 400), (1, 7000), (0, 50_000), (0, 950_000)]:
    p = rate_for(status, count)
    print(f"{'bad ' if status else 'good'} rows in month {count:>7}: p = {p}, weight = {1 / p:.6g}")

# On a synthetic portfolio the weighted sample total tracks the full count.
port = simulate(GeneratorSpec(n_loans=3000, seed=5))
hs = validate_and_label(port.loans, port.performance).histories
counts = monthly_counts(hs)
full = sum(exploded_size(len(x)) for x in hs)
totals = [backward_weighted_sample(hs, counts, seed=s).total_weight for s in range(10)]
sample = backward_weighted_sample(hs, counts, seed=0)
print(f"full exploded panel: {full} rows; one sample: {len(sample)} rows")
print(f"weighted totals over 10 seeds: mean {np.mean(totals):.0f}, sd {np.std(totals):.0f}")

# Randomness is keyed on (seed, loan id): order and threads do not matter.
again = backward_weighted_sample(hs[::-1], counts, seed=0, threads=4, block_size=100)
print("reordered, threaded run identical:", np.array_equal(again.weight, sample.weight)
      and np.array_equal(again.loan_id, sample.loan_id))
