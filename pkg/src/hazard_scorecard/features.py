"""Regressors for the monthly hazard model.

Degree-1 truncated-power splines, spread at origination, macro series
transforms, calendar indicators and the FICO x original-balance interaction,
assembled per panel row either one at a time (:func:`assemble`) or
column-wise (:func:`build_design`).
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .ingest import LoanOrigination, MacroSeries
from .months import format_month, month_of_year, parse_month
from .panel import Panel, PanelRow

TRANSFORMS = ("yoy_diff", "qoq_diff", "yoy_pctchg", "qoq_pctchg", "lag")
_SUFFIX = {"yoy_diff": "y_to_y_diff", "qoq_diff": "q_to_q_diff",
           "yoy_pctchg": "y_to_y_pctchg", "qoq_pctchg": "q_to_q_pctchg"}

COVID_MONTHS = tuple(parse_month(f"2020-{m:02d}") for m in range(4, 10))


class MacroUnavailable(LookupError):
    """A macro regressor cannot be evaluated for a month; ``reason`` says why."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


def pspline(x, knot):
    """Truncated linear basis ``max(x - knot, 0)``."""
    if np.ndim(x):
        return np.maximum(np.asarray(x, dtype=float) - knot, 0.0)
    return max(x - knot, 0.0)


def sato(orig_int_rt, market_rate_at_orig, sign: int = 1):
    """Spread at origination; ``sign=1`` gives note rate minus market rate."""
    return sign * (orig_int_rt - market_rate_at_orig)


@dataclass(frozen=True)
class MacroTransformSpec:
    series: str
    transform: str
    lag_months: int = 0

    def __post_init__(self):
        if self.transform not in TRANSFORMS:
            raise ValueError(f"unknown transform {self.transform!r}")
        if self.lag_months < 0:
            raise ValueError("lag_months must be >= 0")

    @property
    def name(self) -> str:
        if self.transform == "lag":
            return f"{self.series}_lag_{self.lag_months}month"
        return f"{self.series}_{_SUFFIX[self.transform]}"


class _Lookup:
    """Month -> value with quarterly series held constant within their quarter."""

    def __init__(self, series: MacroSeries):
        self.series = series
        self.months = np.asarray(series.months, dtype=np.int64)
        self.values = np.asarray(series.values, dtype=float)
        self.quarterly = series.native_frequency == "quarterly"

    def index(self, month):
        """Observation index holding at ``month`` (-1 if none)."""
        month = np.asarray(month, dtype=np.int64)
        i = np.searchsorted(self.months, month, side="right") - 1
        ok = i >= 0
        span = 3 if self.quarterly else 1
        safe = np.where(ok, i, 0)
        ok &= month - self.months[safe] < span
        return np.where(ok, i, -1)

    def value_at(self, month):
        i = self.index(month)
        return np.where(i >= 0, self.values[np.maximum(i, 0)], np.nan), i >= 0


def _transform_arrays(lookup: _Lookup, spec: MacroTransformSpec, months: np.ndarray):
    """Transform values and a reason code per month (0 = usable)."""
    months = np.asarray(months, dtype=np.int64)
    if spec.transform == "lag":
        vals, ok = lookup.value_at(months - spec.lag_months)
        return vals, np.where(ok, 0, 1)
    cur_i = lookup.index(months)
    if lookup.quarterly:
        steps = 4 if spec.transform.startswith("yoy") else 1
        base_i = np.where(cur_i >= steps, cur_i - steps, -1)
        base_i = np.where(cur_i >= 0, base_i, -1)
    else:
        back = 12 if spec.transform.startswith("yoy") else 3
        base_i = lookup.index(months - back)
    ok = (cur_i >= 0) & (base_i >= 0)
    cur = lookup.values[np.maximum(cur_i, 0)]
    base = lookup.values[np.maximum(base_i, 0)]
    reason = np.where(ok, 0, 1)
    if spec.transform.endswith("pctchg"):
        zero = ok & (base == 0)
        reason = np.where(zero, 2, reason)
        ok &= ~zero
        with np.errstate(divide="ignore", invalid="ignore"):
            vals = (cur - base) / base
    else:
        vals = cur - base
    return np.where(ok, vals, np.nan), reason


_REASONS = {1: "missing base observation", 2: "zero base for percentage change"}


def macro_transform(series: MacroSeries, spec: MacroTransformSpec, month: int) -> float:
    """Differences, percentage changes or lags of a macro series at ``month``.

    On a monthly series ``qoq`` compares with three months earlier and
    ``yoy`` with twelve; on a quarterly series the bases are one and four
    observations back.  Raises :class:`MacroUnavailable` when the base
    observation is missing or, for percentage changes, zero.
    """
    vals, reason = _transform_arrays(_Lookup(series), spec, np.array([month]))
    if reason[0]:
        raise MacroUnavailable(f"{spec.name} at {format_month(month)}: {_REASONS[int(reason[0])]}")
    return float(vals[0])


def indicators(calendar_month):
    """``(covid_index, quarter1, quarter3)``; the fourth quarter is the reference."""
    moy = month_of_year(calendar_month)
    covid = np.isin(calendar_month, COVID_MONTHS) if np.ndim(calendar_month) else calendar_month in COVID_MONTHS
    q1 = moy <= 3
    q3 = (moy >= 7) & (moy <= 9)
    if np.ndim(calendar_month):
        return covid.astype(float), q1.astype(float), q3.astype(float)
    return int(covid), int(q1), int(q3)


@dataclass(frozen=True)
class InteractionSpec:
    upb_band_edges: tuple[float, ...]
    band_multipliers: tuple[float, ...]
    average_slope: float
    slopes: tuple[float, ...] = ()

    def __post_init__(self):
        if len(self.band_multipliers) != len(self.upb_band_edges) + 1:
            raise ValueError("need one multiplier per band (edges + 1)")
        if any(not m > 0 for m in self.band_multipliers):
            raise ValueError("multipliers must be positive")
        if any(b <= a for a, b in zip(self.upb_band_edges, self.upb_band_edges[1:])):
            raise ValueError("band edges must increase")

    @classmethod
    def identity(cls, edges=(160000.0, 238000.0, 350000.0)) -> "InteractionSpec":
        return cls(tuple(edges), (1.0,) * (len(edges) + 1), float("nan"))


PUBLISHED_INTERACTION = InteractionSpec(
    upb_band_edges=(160000.0, 238000.0, 350000.0),
    band_multipliers=(1.011120904, 1.062573458, 0.98437428, 0.948754518),
    average_slope=0.000658133,
    slopes=(0.000650895, 0.000619377, 0.00066858, 0.000693681),
)


class InteractionError(ValueError):
    pass


def interaction_from_bad_rates(bad_rates, upb_band_edges) -> InteractionSpec:
    """Multipliers that equalise the low-to-high FICO slope across balance bands.

    ``bad_rates[g, f]`` is the bad rate of balance band ``g`` and FICO group
    ``f`` (group 0 = lowest FICO).  The slope of band ``g`` is the drop in
    bad rate from the first to the last FICO group per group step; each
    band's multiplier is the average slope over its own.
    """
    rates = np.asarray(bad_rates, dtype=float)
    n_upb, n_fico = rates.shape
    if n_fico < 2:
        raise InteractionError("need at least two FICO groups")
    slopes = (rates[:, 0] - rates[:, -1]) / (n_fico - 1)
    for g, s in enumerate(slopes):
        if not s > 0:
            raise InteractionError(f"balance band {g + 1}: bad rate does not fall with FICO (slope {s})")
    average = math.fsum(slopes) / n_upb
    return InteractionSpec(tuple(float(e) for e in upb_band_edges),
                           tuple(float(average / s) for s in slopes), average,
                           tuple(float(s) for s in slopes))


def weighted_quantile_edges(x, weight, n_groups: int) -> np.ndarray:
    """Interior cut points splitting ``x`` into ``n_groups`` equal-weight groups."""
    x = np.asarray(x, dtype=float)
    w = np.asarray(weight, dtype=float)
    order = np.argsort(x, kind="stable")
    cw = np.cumsum(w[order])
    targets = cw[-1] * np.arange(1, n_groups) / n_groups
    pos = np.searchsorted(cw, targets, side="left")
    return x[order][np.minimum(pos + 1, len(x) - 1)]


def fit_interaction(fico, orig_upb, status, weight=None, n_fico_groups: int = 5,
                    n_upb_groups: int = 4) -> InteractionSpec:
    """Estimate balance-band multipliers from row-level data.

    Both FICO and balance are cut into equal-weight groups; group ``g``
    holds values in ``[edge[g-1], edge[g])``, the same banding that
    :func:`apply_interaction` uses.
    """
    fico = np.asarray(fico, dtype=float)
    upb = np.asarray(orig_upb, dtype=float)
    y = np.asarray(status, dtype=float)
    w = np.ones_like(y) if weight is None else np.asarray(weight, dtype=float)
    upb_edges = weighted_quantile_edges(upb, w, n_upb_groups)
    fico_edges = weighted_quantile_edges(fico, w, n_fico_groups)
    g = np.searchsorted(upb_edges, upb, side="right")
    f = np.searchsorted(fico_edges, fico, side="right")
    cell = g * n_fico_groups + f
    size = n_upb_groups * n_fico_groups
    wsum = np.bincount(cell, weights=w, minlength=size)
    bsum = np.bincount(cell, weights=w * y, minlength=size)
    for c in np.flatnonzero(wsum == 0):
        gi, fi = divmod(int(c), n_fico_groups)
        raise InteractionError(f"empty cell: balance group {gi + 1}, FICO group {fi + 1}")
    rates = (bsum / wsum).reshape(n_upb_groups, n_fico_groups)
    return interaction_from_bad_rates(rates, upb_edges)


def apply_interaction(fico, orig_upb, spec: InteractionSpec):
    band = np.searchsorted(spec.upb_band_edges, orig_upb, side="right")
    mult = np.asarray(spec.band_multipliers)[band]
    if np.ndim(band):
        return np.asarray(fico, dtype=float) * mult
    return fico * float(mult)


DEFAULT_MACROS = (
    MacroTransformSpec("RCMFLBACTDPDPCT90P", "qoq_pctchg"),
    MacroTransformSpec("UNRATENSA", "lag", 1),
)


@dataclass
class FeatureSpec:
    """Everything needed to rebuild the regressors bit-identically."""

    loan_age_knots: tuple[float, ...] = (8.0, 20.0)
    snapshot_mob_knots: tuple[float, ...] = (9.0, 21.0)
    cltv_knots: tuple[float, ...] = (80.0,)
    interaction: InteractionSpec = PUBLISHED_INTERACTION
    macro_transforms: tuple[MacroTransformSpec, ...] = DEFAULT_MACROS
    market_rate_series: str = "MORTGAGE30US"
    sato_sign: int = 1

    @property
    def names(self) -> list[str]:
        out = ["loan_age"] + [f"loan_age_pspline{i + 1}" for i in range(len(self.loan_age_knots))]
        out += ["snapshot_mob"] + [f"snapshot_mob_pspline{i + 1}" for i in range(len(self.snapshot_mob_knots))]
        out += ["fico", "dti", "orig_int_rt", "cltv"]
        out += [f"cltv_pspline{i + 1}" for i in range(len(self.cltv_knots))]
        out += ["sato", "fico_orig_upb"]
        out += [t.name for t in self.macro_transforms]
        out += ["covid_index", "quarter1", "quarter3"]
        return out

    @property
    def series_needed(self) -> list[str]:
        return sorted({self.market_rate_series, *(t.series for t in self.macro_transforms)})

    def to_dict(self) -> dict:
        d = asdict(self)
        d["interaction"] = asdict(self.interaction)
        d["macro_transforms"] = [asdict(t) for t in self.macro_transforms]
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "FeatureSpec":
        d = dict(d)
        kw = {}
        for k in ("loan_age_knots", "snapshot_mob_knots", "cltv_knots"):
            if k in d:
                kw[k] = tuple(float(v) for v in d[k])
        if "interaction" in d:
            i = d["interaction"]
            kw["interaction"] = InteractionSpec(tuple(i["upb_band_edges"]), tuple(i["band_multipliers"]),
                                                float(i["average_slope"]), tuple(i.get("slopes", ())))
        if "macro_transforms" in d:
            kw["macro_transforms"] = tuple(MacroTransformSpec(**t) for t in d["macro_transforms"])
        for k in ("market_rate_series", "sato_sign"):
            if k in d:
                kw[k] = d[k]
        return cls(**kw)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]


def _market_rate(macros: Mapping[str, MacroSeries], spec: FeatureSpec, orig_month):
    series = macros.get(spec.market_rate_series)
    if series is None:
        raise KeyError(f"market rate series {spec.market_rate_series} not loaded")
    vals, ok = _Lookup(series).value_at(orig_month)
    if not np.all(ok):
        bad = np.atleast_1d(orig_month)[~np.atleast_1d(ok)][0]
        raise KeyError(f"no {spec.market_rate_series} rate for origination month {format_month(bad)}")
    return vals


def assemble(row: PanelRow, loan: LoanOrigination, macros: Mapping[str, MacroSeries],
             spec: FeatureSpec) -> dict[str, float]:
    """Regressor values for one panel row, keyed in model order.

    Raises :class:`MacroUnavailable` when a macro transform is undefined
    at the row's calendar month.
    """
    out: dict[str, float] = {"loan_age": float(row.loan_age)}
    for i, k in enumerate(spec.loan_age_knots):
        out[f"loan_age_pspline{i + 1}"] = pspline(float(row.loan_age), k)
    out["snapshot_mob"] = float(row.snapshot_mob)
    for i, k in enumerate(spec.snapshot_mob_knots):
        out[f"snapshot_mob_pspline{i + 1}"] = pspline(float(row.snapshot_mob), k)
    out["fico"] = float(loan.fico)
    out["dti"] = float(loan.dti)
    out["orig_int_rt"] = float(loan.orig_int_rt)
    out["cltv"] = float(loan.cltv)
    for i, k in enumerate(spec.cltv_knots):
        out[f"cltv_pspline{i + 1}"] = pspline(float(loan.cltv), k)
    market = float(_market_rate(macros, spec, np.array([loan.orig_month]))[0])
    out["sato"] = sato(loan.orig_int_rt, market, spec.sato_sign)
    out["fico_orig_upb"] = float(apply_interaction(loan.fico, loan.orig_upb, spec.interaction))
    for t in spec.macro_transforms:
        out[t.name] = macro_transform(macros[t.series], t, row.calendar_month)
    covid, q1, q3 = indicators(row.calendar_month)
    out["covid_index"], out["quarter1"], out["quarter3"] = float(covid), float(q1), float(q3)
    return out


@dataclass
class DesignMatrix:
    names: list[str]
    X: np.ndarray
    status: np.ndarray
    weight: np.ndarray
    loan_id: np.ndarray
    calendar_month: np.ndarray
    snapshot_month: np.ndarray
    dropped: dict[str, int] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.status)

    def columns(self, names: Sequence[str]) -> np.ndarray:
        idx = [self.names.index(n) for n in names]
        return self.X[:, idx]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["loan_id", "snapshot_month", "calendar_month", "status", "weight", *self.names])
            snap = [format_month(m) for m in self.snapshot_month]
            cal = [format_month(m) for m in self.calendar_month]
            for i in range(len(self)):
                w.writerow([self.loan_id[i], snap[i], cal[i], int(self.status[i]),
                            repr(float(self.weight[i])), *map(repr, self.X[i].tolist())])

    @classmethod
    def from_csv(cls, path) -> "DesignMatrix":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = list(reader)
        names = header[5:]
        cols = list(zip(*rows)) if rows else [[] for _ in header]
        months = {}

        def pm(s):
            if s not in months:
                months[s] = parse_month(s)
            return months[s]

        X = np.array([list(map(float, r[5:])) for r in rows]).reshape(len(rows), len(names))
        return cls(names, X, np.array(cols[3], dtype=np.int8), np.array(cols[4], dtype=float),
                   np.array(cols[0], dtype=object), np.array([pm(s) for s in cols[2]], dtype=np.int64),
                   np.array([pm(s) for s in cols[1]], dtype=np.int64))


def _design_block(panel: Panel, loans: Mapping[str, LoanOrigination], lookups, spec: FeatureSpec,
                  macros):
    n = len(panel)
    recs = [loans[i] for i in panel.loan_id]
    fico = np.fromiter((r.fico for r in recs), float, n)
    dti = np.fromiter((r.dti for r in recs), float, n)
    rate = np.fromiter((r.orig_int_rt for r in recs), float, n)
    cltv = np.fromiter((r.cltv for r in recs), float, n)
    upb = np.fromiter((r.orig_upb for r in recs), float, n)
    orig = np.fromiter((r.orig_month for r in recs), np.int64, n)
    age = panel.loan_age.astype(float)
    mob = panel.snapshot_mob.astype(float)
    cols = [age] + [pspline(age, k) for k in spec.loan_age_knots]
    cols += [mob] + [pspline(mob, k) for k in spec.snapshot_mob_knots]
    cols += [fico, dti, rate, cltv] + [pspline(cltv, k) for k in spec.cltv_knots]
    market = _market_rate(macros, spec, orig) if n else np.zeros(0)
    cols += [sato(rate, market, spec.sato_sign), apply_interaction(fico, upb, spec.interaction)]
    reason = np.zeros(n, dtype=np.int64)
    dropped: dict[str, int] = {}
    for t in spec.macro_transforms:
        vals, r = _transform_arrays(lookups[t.series], t, panel.calendar_month)
        cols.append(vals)
        for code in (1, 2):
            hit = (r == code) & (reason == 0)
            if hit.any():
                key = f"{t.name}: {_REASONS[code]}"
                dropped[key] = dropped.get(key, 0) + int(hit.sum())
        reason = np.where(reason == 0, r, reason)
    cols += list(indicators(panel.calendar_month))
    X = np.column_stack(cols) if n else np.zeros((0, len(spec.names)))
    return X, reason == 0, dropped


def build_design(panel: Panel, loans: Mapping[str, LoanOrigination], macros: Mapping[str, MacroSeries],
                 spec: FeatureSpec, threads: int = 1, block_size: int = 65536) -> DesignMatrix:
    """Column-wise :func:`assemble` over a panel.

    Rows whose macro regressors are undefined are dropped and tallied by
    reason in ``DesignMatrix.dropped``.
    """
    missing = [s for s in spec.series_needed if s not in macros]
    if missing:
        raise KeyError(f"macro series not loaded: {missing}")
    lookups = {name: _Lookup(s) for name, s in macros.items()}
    blocks = [panel.take(slice(i, i + block_size)) for i in range(0, max(len(panel), 1), block_size)]

    def run(b):
        return _design_block(b, loans, lookups, spec, macros)

    if threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, blocks))
    else:
        parts = [run(b) for b in blocks]
    X = np.vstack([p[0] for p in parts])
    keep = np.concatenate([p[1] for p in parts])
    dropped: dict[str, int] = {}
    for p in parts:
        for k, v in p[2].items():
            dropped[k] = dropped.get(k, 0) + v
    return DesignMatrix(spec.names, X[keep], panel.status[keep].copy(), panel.weight[keep].copy(),
                        panel.loan_id[keep].copy(), panel.calendar_month[keep].copy(),
                        panel.snapshot_month[keep].copy(), dict(sorted(dropped.items())))


@dataclass(frozen=True)
class BivariateBin:
    bin: int
    lo: float
    hi: float
    weight: float
    bad_weight: float
    bad_rate: float
    log_odds: float | None
    flag: str = ""


def bivariate_logodds_table(values, status, weight=None, n_bins: int = 10) -> list[BivariateBin]:
    """Weighted bad rate and log-odds over equal-weight bins of ``values``.

    Bins whose bad rate is 0 or 1 carry ``log_odds=None`` and a flag rather
    than an infinite value.
    """
    if n_bins < 2:
        raise ValueError("n_bins must be at least 2")
    x = np.asarray(values, dtype=float)
    y = np.asarray(status, dtype=float)
    w = np.ones_like(y) if weight is None else np.asarray(weight, dtype=float)
    edges = np.unique(weighted_quantile_edges(x, w, n_bins))
    b = np.searchsorted(edges, x, side="right")
    out = []
    for k in range(len(edges) + 1):
        sel = b == k
        if not sel.any():
            continue
        ws = math.fsum(w[sel])
        bw = math.fsum(w[sel] * y[sel])
        rate = bw / ws
        if rate <= 0.0:
            lo_odds, flag = None, "all good"
        elif rate >= 1.0:
            lo_odds, flag = None, "all bad"
        else:
            lo_odds, flag = math.log(rate / (1.0 - rate)), ""
        out.append(BivariateBin(k, float(x[sel].min()), float(x[sel].max()), ws, bw, rate, lo_odds, flag))
    return out


def write_bivariate(path, variable: str, table: Sequence[BivariateBin]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["variable", "bin", "lo", "hi", "weight", "bad_weight", "bad_rate", "log_odds", "flag"])
        for r in table:
            w.writerow([variable, r.bin, repr(r.lo), repr(r.hi), repr(r.weight), repr(r.bad_weight),
                        repr(r.bad_rate), "" if r.log_odds is None else repr(r.log_odds), r.flag])


def collinearity_diagnostic(X, names: Sequence[str], threshold: float = 0.95) -> dict:
    """Highly correlated regressor pairs and the scaled condition number."""
    X = np.asarray(X, dtype=float)
    sd = X.std(axis=0)
    live = sd > 0
    Z = (X[:, live] - X[:, live].mean(axis=0)) / sd[live]
    live_names = [n for n, ok in zip(names, live) if ok]
    corr = np.corrcoef(Z, rowvar=False) if Z.shape[1] > 1 else np.ones((1, 1))
    pairs = []
    for i in range(len(live_names)):
        for j in range(i + 1, len(live_names)):
            if abs(corr[i, j]) >= threshold:
                pairs.append((live_names[i], live_names[j], float(corr[i, j])))
    sv = np.linalg.svd(Z, compute_uv=False) if Z.size else np.ones(1)
    return {"high_correlation_pairs": pairs,
            "condition_number": float(sv[0] / sv[-1]) if sv[-1] > 0 else float("inf"),
            "constant_columns": [n for n, ok in zip(names, live) if not ok]}
