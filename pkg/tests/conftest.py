import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from hazard_scorecard.ingest import LoanHistory, LoanOrigination
from hazard_scorecard.months import parse_month
from hazard_scorecard.synthgen import GeneratorSpec, simulate

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def make_loan(loan_id="L1", orig="2018-01", fico=720, dti=35.0, cltv=80.0, upb=250000.0, rate=4.5):
    return LoanOrigination(loan_id, parse_month(orig), fico, dti, cltv, upb, rate)


def make_history(loan_id="L1", start="2018-02", statuses=(0, 0, 0), **loan_kw):
    m0 = parse_month(start)
    loan = make_loan(loan_id, **loan_kw)
    return LoanHistory(loan, tuple(range(m0, m0 + len(statuses))), tuple(statuses))


def random_histories(rng, n_loans, start_range=("2018-01", "2019-12"), bad_rate=0.1):
    lo, hi = parse_month(start_range[0]), parse_month(start_range[1])
    out = []
    for i in range(n_loans):
        n = int(rng.integers(1, 37))
        st = [0] * n
        if rng.random() < bad_rate:
            st[-1] = 1
        start = int(rng.integers(lo, hi + 1))
        loan = LoanOrigination(f"R{i:05d}", start - 1, int(rng.integers(550, 820)), 30.0, 80.0, 200000.0, 4.0)
        out.append(LoanHistory(loan, tuple(range(start, start + n)), tuple(st)))
    return out


@pytest.fixture(scope="session")
def small_portfolio():
    return simulate(GeneratorSpec(n_loans=1000, seed=11))
