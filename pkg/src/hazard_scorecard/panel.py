"""Exploded panels, backward weighted sampling and the train/test split.

A loan observed for ``n`` months explodes into ``n`` snapshot sub-panels;
the sub-panel starting at month ``s`` covers months ``s..n`` with
``loan_age`` running from 0.  Observation ``m`` of the loan therefore
appears ``m`` times in the full panel, once per snapshot ``1..m``.

:func:`backward_weighted_sample` draws from that panel without building it:
each of the ``m`` replicas of an observation is kept with probability
``p`` (from the rate table, keyed on the row's status and the monthly
count of that status), which is the same as drawing ``K ~ Binomial(m, p)``
and choosing ``K`` distinct snapshots uniformly.  Kept rows carry weight
``1 / p``.
"""
from __future__ import annotations

import csv
import gzip
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from itertools import chain
from typing import Iterable, Iterator, Sequence

import numpy as np
from scipy.stats import binom

from . import _random
from .ingest import BAD, GOOD, LoanHistory, MonthlyCounts
from .months import format_month, parse_month

PANEL_COLUMNS = ("loan_id", "snapshot_month", "calendar_month", "loan_age", "snapshot_mob", "status", "weight")


class SamplingError(ValueError):
    pass


@dataclass(frozen=True)
class PanelRow:
    loan_id: str
    snapshot_month: int
    calendar_month: int
    loan_age: int
    snapshot_mob: int
    status: int
    weight: float = 1.0


def exploded_size(n: int) -> int:
    if n < 0:
        raise ValueError("n must be non-negative")
    return n * (n + 1) // 2


def explode_full(history: LoanHistory, mob_offset: int = 0) -> Iterator[PanelRow]:
    """Every row of the fully exploded panel of one loan, weight 1."""
    months, statuses = history.months, history.statuses
    n = len(months)
    for s in range(n):
        for j in range(s, n):
            yield PanelRow(history.loan_id, months[s], months[j], j - s, s + mob_offset, statuses[j])


# (lo, hi, p) with hi=None for an open top tier
Tier = tuple[int, "int | None", float]


@dataclass(frozen=True)
class SamplingRateTable:
    bad_tiers: tuple[Tier, ...]
    good_tiers: tuple[Tier, ...]

    def __post_init__(self):
        for label, tiers in (("bad", self.bad_tiers), ("good", self.good_tiers)):
            if not tiers:
                raise ValueError(f"no {label} tiers")
            expect = 1
            for i, (lo, hi, p) in enumerate(tiers):
                if lo != expect:
                    raise ValueError(f"{label} tiers do not partition [1, inf) at {lo}")
                if not 0 < p <= 1:
                    raise ValueError(f"{label} tier probability {p} outside (0, 1]")
                last = i == len(tiers) - 1
                if (hi is None) != last:
                    raise ValueError(f"only the last {label} tier may be open-ended")
                if hi is not None:
                    if hi < lo:
                        raise ValueError(f"empty {label} tier [{lo}, {hi}]")
                    expect = hi + 1

    def tiers(self, status: int) -> tuple[Tier, ...]:
        return self.bad_tiers if status == BAD else self.good_tiers

    def to_dict(self) -> dict:
        return {"bad_tiers": [list(t) for t in self.bad_tiers],
                "good_tiers": [list(t) for t in self.good_tiers]}

    @classmethod
    def from_dict(cls, d) -> "SamplingRateTable":
        def conv(ts):
            return tuple((int(lo), None if hi is None else int(hi), float(p)) for lo, hi, p in ts)
        return cls(conv(d["bad_tiers"]), conv(d["good_tiers"]))


DEFAULT_RATE_TABLE = SamplingRateTable(
    bad_tiers=(
        (1, 500, 1.0),
        (501, 1000, 0.95),
        (1001, 2000, 0.90),
        (2001, 3000, 0.85),
        (3001, 4000, 0.80),
        (4001, 5000, 0.75),
        (5001, 6000, 0.70),
        (6001, None, 0.65),
    ),
    good_tiers=(
        (1, 100000, 0.1),
        (100001, 200000, 0.1),
        (200001, 300000, 0.05),
        (300001, 400000, 0.033333333),
        (400001, 500000, 0.025),
        (500001, 600000, 0.02),
        (600001, 700000, 0.016666667),
        (700001, 800000, 0.014285714),
        (800001, 900000, 0.0125),
        (900001, None, 0.011111111),
    ),
)


def rate_for(status: int, monthly_count: int, table: SamplingRateTable = DEFAULT_RATE_TABLE) -> float:
    """Selection probability for a row of ``status`` in a month holding
    ``monthly_count`` rows of that status."""
    if monthly_count < 1:
        raise SamplingError(f"count {monthly_count} for a month that has a row of status {status}")
    for lo, hi, p in table.tiers(status):
        if hi is None or monthly_count <= hi:
            return p
    raise AssertionError("tiers partition [1, inf)")


def _open_text(path, mode):
    if str(path).endswith(".gz"):
        fh = open(path, mode + "b")
        raw = gzip.GzipFile(filename="", mode=mode + "b", fileobj=fh, mtime=0)
        raw.myfileobj = fh  # closed together with the gzip stream
        return io.TextIOWrapper(raw, encoding="utf-8", newline="")
    return open(path, mode, newline="", encoding="utf-8")


class Panel:
    """Columnar panel rows (sampled or full)."""

    def __init__(self, loan_id, snapshot_month, calendar_month, loan_age, snapshot_mob, status, weight):
        self.loan_id = np.asarray(loan_id, dtype=object)
        self.snapshot_month = np.asarray(snapshot_month, dtype=np.int64)
        self.calendar_month = np.asarray(calendar_month, dtype=np.int64)
        self.loan_age = np.asarray(loan_age, dtype=np.int64)
        self.snapshot_mob = np.asarray(snapshot_mob, dtype=np.int64)
        self.status = np.asarray(status, dtype=np.int8)
        self.weight = np.asarray(weight, dtype=np.float64)

    def __len__(self) -> int:
        return len(self.status)

    @property
    def total_weight(self) -> float:
        return math.fsum(self.weight)

    def rows(self) -> Iterator[PanelRow]:
        for i in range(len(self)):
            yield PanelRow(self.loan_id[i], int(self.snapshot_month[i]), int(self.calendar_month[i]),
                           int(self.loan_age[i]), int(self.snapshot_mob[i]), int(self.status[i]),
                           float(self.weight[i]))

    def take(self, idx) -> "Panel":
        return Panel(self.loan_id[idx], self.snapshot_month[idx], self.calendar_month[idx],
                     self.loan_age[idx], self.snapshot_mob[idx], self.status[idx], self.weight[idx])

    @classmethod
    def concat(cls, panels: Sequence["Panel"]) -> "Panel":
        if not panels:
            return cls.empty()
        return cls(*(np.concatenate([getattr(p, c) for p in panels]) for c in PANEL_COLUMNS))

    @classmethod
    def empty(cls) -> "Panel":
        return cls([], [], [], [], [], [], [])

    def sorted(self) -> "Panel":
        order = np.lexsort((self.loan_age, self.snapshot_month, self.loan_id.astype(str)))
        return self.take(order)

    def to_csv(self, path) -> None:
        """Write CSV; a ``.gz`` suffix selects gzip (with a fixed header timestamp)."""
        with _open_text(path, "w") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(PANEL_COLUMNS)
            snap = [format_month(m) for m in self.snapshot_month]
            cal = [format_month(m) for m in self.calendar_month]
            for i in range(len(self)):
                w.writerow([self.loan_id[i], snap[i], cal[i], int(self.loan_age[i]),
                            int(self.snapshot_mob[i]), int(self.status[i]), repr(float(self.weight[i]))])

    @classmethod
    def from_csv(cls, path) -> "Panel":
        cols = {c: [] for c in PANEL_COLUMNS}
        with _open_text(path, "r") as fh:
            for r in csv.DictReader(fh):
                for c in PANEL_COLUMNS:
                    cols[c].append(r[c])
        months = {}

        def pm(s):
            if s not in months:
                months[s] = parse_month(s)
            return months[s]

        return cls(cols["loan_id"], [pm(s) for s in cols["snapshot_month"]],
                   [pm(s) for s in cols["calendar_month"]], np.array(cols["loan_age"], dtype=np.int64),
                   np.array(cols["snapshot_mob"], dtype=np.int64), np.array(cols["status"], dtype=np.int8),
                   np.array(cols["weight"], dtype=np.float64))


def explode_panel(histories: Iterable[LoanHistory], mob_offset: int = 0) -> Panel:
    """Materialise the full exploded panel (test-scale inputs only)."""
    rows = [r for h in histories for r in explode_full(h, mob_offset)]
    return Panel([r.loan_id for r in rows], [r.snapshot_month for r in rows],
                 [r.calendar_month for r in rows], [r.loan_age for r in rows],
                 [r.snapshot_mob for r in rows], [r.status for r in rows], np.ones(len(rows)))


def original_panel(histories: Iterable[LoanHistory], mob_offset: int = 0) -> Panel:
    """The unexploded data: one snapshot per loan at its first month, weight 1."""
    ids, snap, cal, age, st = [], [], [], [], []
    for h in histories:
        n = len(h)
        ids.extend([h.loan_id] * n)
        snap.extend([h.months[0]] * n)
        cal.extend(h.months)
        age.extend(range(n))
        st.extend(h.statuses)
    return Panel(ids, snap, cal, age, np.full(len(st), mob_offset), st, np.ones(len(st)))


@dataclass
class _Flat:
    """Per-observation arrays for a block of loans."""

    loan: np.ndarray  # index into the block's loan list
    key: np.ndarray  # uint64 loan key
    index: np.ndarray  # 1-based month index within the loan
    month: np.ndarray
    status: np.ndarray


def _flatten(histories: Sequence[LoanHistory], keys: np.ndarray) -> _Flat:
    lengths = np.fromiter((len(h) for h in histories), dtype=np.int64, count=len(histories))
    loan = np.repeat(np.arange(len(histories)), lengths)
    starts = np.cumsum(lengths) - lengths
    index = np.arange(len(loan)) - np.repeat(starts, lengths) + 1
    month = np.fromiter(chain.from_iterable(h.months for h in histories), dtype=np.int64, count=len(loan))
    status = np.fromiter(chain.from_iterable(h.statuses for h in histories), dtype=np.int8, count=len(loan))
    return _Flat(loan, keys[loan], index, month, status)


def _row_rates(flat: _Flat, counts: MonthlyCounts, table: SamplingRateTable, months=None, statuses=None):
    months = flat.month if months is None else months
    statuses = flat.status if statuses is None else statuses
    codes = months * 2 + statuses
    uniq, inverse = np.unique(codes, return_inverse=True)
    rates = np.empty(len(uniq))
    for i, code in enumerate(uniq.tolist()):
        m, s = divmod(code, 2)
        if m not in counts:
            raise SamplingError(f"calendar month {format_month(m)} absent from the count table")
        rates[i] = rate_for(s, counts.count(m, s), table)
    return rates[inverse.reshape(-1)]


@lru_cache(maxsize=256)
def _binom_cdf(p: float, max_m: int) -> np.ndarray:
    # cdf[trials, k]; entries with k >= trials are exactly 1
    trials = np.arange(max_m + 1)[:, None]
    grid = np.arange(max_m + 1)[None, :]
    cdf = binom.cdf(grid, trials, p)
    cdf[grid >= trials] = 1.0
    return cdf


def _binomial_draw(u: np.ndarray, m: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Inverse-CDF Binomial(m, p) draws from uniforms ``u``."""
    k = np.zeros(len(u), dtype=np.int64)
    if len(u) == 0:
        return k
    levels, p_idx = np.unique(p, return_inverse=True)
    max_m = int(m.max())
    cdf = np.stack([_binom_cdf(float(pv), max_m) for pv in levels])
    return (cdf[p_idx.reshape(-1), m, :] <= u[:, None]).sum(axis=1)


def _floyd_subsets(seed, keys, m, k) -> np.ndarray:
    """Uniform ``k``-subsets of ``1..m`` per row (Floyd's algorithm).

    Returns the chosen members row by row in ascending order.
    """
    width = int(m.max()) if len(m) else 0
    member = np.zeros((len(m), width + 1), dtype=bool)
    for i in range(int(k.max()) if len(k) else 0):
        rows = np.flatnonzero(k > i)
        j = m[rows] - k[rows] + 1 + i
        u = _random.uniforms(seed, keys[rows], m[rows] * 65536 + i, stream=1)
        t = np.minimum((u * j).astype(np.int64) + 1, j)
        t = np.where(member[rows, t], j, t)
        member[rows, t] = True
    return np.nonzero(member)[1]


def _sample_block(histories, keys, counts, table, seed, unit, mob_offset) -> Panel:
    flat = _flatten(histories, keys)
    first_month = np.fromiter((h.months[0] for h in histories), dtype=np.int64, count=len(histories))
    if unit == "row":
        p = _row_rates(flat, counts, table)
        u = _random.uniforms(seed, flat.key, flat.index, stream=0)
        k = _binomial_draw(u, flat.index, p)
        chosen = np.flatnonzero(k)
        snapshot_idx = _floyd_subsets(seed, flat.key[chosen], flat.index[chosen], k[chosen])
        obs = np.repeat(chosen, k[chosen])
        weight = 1.0 / p[obs]
    elif unit == "panel":
        # one draw per snapshot sub-panel, keyed on the loan's final row
        lengths = np.bincount(flat.loan, minlength=len(histories))
        last = np.cumsum(lengths) - 1
        p_loan = _row_rates(flat, counts, table, flat.month[last], flat.status[last])
        p = p_loan[flat.loan]
        u = _random.uniforms(seed, flat.key, flat.index, stream=2)
        kept_snapshots = np.flatnonzero(u < p)
        # snapshot s of loan L keeps observations s..n
        reps = lengths[flat.loan[kept_snapshots]] - flat.index[kept_snapshots] + 1
        snap_obs = np.repeat(kept_snapshots, reps)
        offs = np.arange(len(snap_obs)) - np.repeat(np.cumsum(reps) - reps, reps)
        obs = snap_obs + offs
        snapshot_idx = flat.index[snap_obs]
        weight = 1.0 / p[snap_obs]
    else:
        raise ValueError(f"unknown sampling unit {unit!r}")

    loan = flat.loan[obs]
    snapshot_month = first_month[loan] + snapshot_idx - 1
    ids = np.array([h.loan_id for h in histories], dtype=object)
    age = flat.index[obs] - snapshot_idx
    # rows sorted by loan, snapshot, age; ages are below 2**20
    order = np.argsort((loan * 4096 + snapshot_idx) * 1048576 + age, kind="stable")
    return Panel(ids[loan], snapshot_month, flat.month[obs], age,
                 snapshot_idx - 1 + mob_offset, flat.status[obs], weight).take(order)


def backward_weighted_sample(histories: Sequence[LoanHistory], counts: MonthlyCounts,
                             table: SamplingRateTable = DEFAULT_RATE_TABLE, seed: int = 0,
                             unit: str = "row", mob_offset: int = 0, threads: int = 1,
                             block_size: int = 2048) -> Panel:
    """Inverse-probability weighted sample of the exploded panel.

    ``counts`` must come from the same population (the training loans).
    ``unit="row"`` samples exploded rows independently; ``unit="panel"``
    keeps or drops whole snapshot sub-panels, keyed on the status and month
    of the loan's final row.  Randomness is keyed on ``(seed, loan_id)``, so
    the result is independent of input order, block size and ``threads``.
    Rows come back sorted by loan id, snapshot and loan age.
    """
    histories = sorted(histories, key=lambda h: h.loan_id)
    if not histories:
        return Panel.empty()
    keys = _random.string_keys([h.loan_id for h in histories])
    blocks = [(histories[i:i + block_size], keys[i:i + block_size])
              for i in range(0, len(histories), block_size)]

    def run(block):
        return _sample_block(block[0], block[1], counts, table, seed, unit, mob_offset)

    if threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, blocks))
    else:
        parts = [run(b) for b in blocks]
    return Panel.concat(parts)


def selection_probabilities(panel: Panel, counts: MonthlyCounts,
                            table: SamplingRateTable = DEFAULT_RATE_TABLE) -> np.ndarray:
    """Row-level selection probability of each row of ``panel``."""
    return _row_rates(None, counts, table, panel.calendar_month.astype(np.int64), panel.status.astype(np.int64))


@dataclass
class SplitAssignment:
    assignment: dict[str, str]
    train_fraction: float

    @property
    def train_ids(self) -> list[str]:
        return sorted(k for k, v in self.assignment.items() if v == "train")

    @property
    def test_ids(self) -> list[str]:
        return sorted(k for k, v in self.assignment.items() if v == "test")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["loan_id", "sample"])
            for k in sorted(self.assignment):
                w.writerow([k, self.assignment[k]])

    @classmethod
    def from_csv(cls, path, train_fraction: float = float("nan")) -> "SplitAssignment":
        with open(path, newline="") as fh:
            return cls({r["loan_id"]: r["sample"] for r in csv.DictReader(fh)}, train_fraction)


def stratified_split(histories: Iterable[LoanHistory], train_fraction: float = 0.7,
                     seed: int = 0) -> SplitAssignment:
    """Assign loans to train/test, splitting bads and goods separately.

    Within each stratum loans are ordered by a seeded hash of their id and
    the first ``round(train_fraction * n)`` go to train.
    """
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must lie in (0, 1)")
    strata: dict[int, list[str]] = {GOOD: [], BAD: []}
    for h in histories:
        strata[h.terminal_status].append(h.loan_id)
    assignment = {}
    for ids in strata.values():
        if not ids:
            continue
        ids = sorted(ids)
        u = _random.uniforms(seed, _random.string_keys(ids), 0, stream=7)
        order = np.lexsort((np.arange(len(ids)), u))
        n_train = math.floor(train_fraction * len(ids) + 0.5)
        for rank, i in enumerate(order):
            assignment[ids[i]] = "train" if rank < n_train else "test"
    return SplitAssignment(assignment, train_fraction)
