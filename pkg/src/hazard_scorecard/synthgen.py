"""Synthetic loan portfolios drawn from a known monthly hazard model.

Loan attributes and macro paths come from simple seeded parametric
families.  Each loan then defaults in month ``t`` with probability equal to
the true hazard of that month's regressors (computed by the same feature
code the fit uses) and writes its history in the ingest file formats.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
from scipy.special import expit
from scipy.stats import truncnorm

from . import _random
from .features import FeatureSpec, assemble, build_design
from .ingest import (LoanOrigination, MacroSeries, PerformanceRow, write_loans, write_macro,
                     write_performance)
from .months import format_month, parse_month, quarter_start
from .panel import Panel, PanelRow


class GeneratorError(ValueError):
    pass


@dataclass(frozen=True)
class TruncNormal:
    mean: float
    sd: float
    lo: float
    hi: float

    def ppf(self, u):
        a, b = (self.lo - self.mean) / self.sd, (self.hi - self.mean) / self.sd
        return truncnorm.ppf(u, a, b, loc=self.mean, scale=self.sd)


@dataclass(frozen=True)
class MacroPath:
    """``base + trend + seasonal wave + random walk``, floored, plus additive shocks."""

    name: str
    frequency: str = "monthly"
    base: float = 1.0
    trend_per_year: float = 0.0
    amplitude: float = 0.0
    period_months: float = 12.0
    noise_sd: float = 0.0
    floor: float = 0.0
    shocks: tuple[tuple[str, str, float], ...] = ()


DEFAULT_COEFFICIENTS = {
    "Intercept": -1.2,
    "loan_age": 0.06,
    "loan_age_pspline1": -0.03,
    "loan_age_pspline2": -0.025,
    "fico": -0.006,
    "dti": 0.03,
    "orig_int_rt": 0.2,
    "cltv": 0.008,
    "cltv_pspline1": 0.03,
    "sato": 0.3,
    "fico_orig_upb": -0.006,
    "RCMFLBACTDPDPCT90P_q_to_q_pctchg": 0.8,
    "UNRATENSA_lag_1month": 0.12,
    "covid_index": -0.2,
    "quarter1": -0.05,
    "quarter3": -0.15,
}

DEFAULT_MACROS = (
    MacroPath("MORTGAGE30US", "monthly", base=4.2, amplitude=0.7, period_months=60, noise_sd=0.06, floor=2.5),
    MacroPath("UNRATENSA", "monthly", base=4.6, trend_per_year=-0.1, amplitude=0.3, period_months=12,
              noise_sd=0.08, floor=2.0, shocks=(("2020-04", "2020-09", 6.0),)),
    MacroPath("RCMFLBACTDPDPCT90P", "quarterly", base=1.1, amplitude=0.15, period_months=36,
              noise_sd=0.04, floor=0.3),
)


@dataclass
class GeneratorSpec:
    n_loans: int = 5000
    orig_start: str = "2018-01"
    orig_end: str = "2021-06"
    data_end: str = "2024-09"
    horizon: int = 36
    trailing_months: int = 4
    post_default_months: int = 2
    fico: TruncNormal = TruncNormal(745, 45, 600, 840)
    dti: TruncNormal = TruncNormal(36, 9, 1, 50)
    cltv: TruncNormal = TruncNormal(76, 15, 20, 97)
    orig_upb: TruncNormal = TruncNormal(260000, 120000, 40000, 766550)
    rate_spread: TruncNormal = TruncNormal(0.25, 0.5, -1.5, 2.5)
    coefficients: dict = field(default_factory=lambda: dict(DEFAULT_COEFFICIENTS))
    macros: tuple = DEFAULT_MACROS
    features: FeatureSpec = field(default_factory=FeatureSpec)
    seed: int = 20240901

    def __post_init__(self):
        if self.n_loans < 0:
            raise GeneratorError("n_loans must be >= 0")
        if parse_month(self.orig_end) < parse_month(self.orig_start):
            raise GeneratorError("orig_end precedes orig_start")
        if parse_month(self.orig_end) + 1 > parse_month(self.data_end):
            raise GeneratorError("data_end leaves no performance months")
        unknown = set(self.coefficients) - set(self.features.names) - {"Intercept"}
        if unknown:
            raise GeneratorError(f"coefficients for unknown regressors: {sorted(unknown)}")
        have = {m.name for m in self.macros}
        missing = set(self.features.series_needed) - have
        if missing:
            raise GeneratorError(f"no macro path for {sorted(missing)}")

    @property
    def beta(self) -> np.ndarray:
        """True coefficients in ``features.names`` order (intercept excluded)."""
        return np.array([float(self.coefficients.get(n, 0.0)) for n in self.features.names])

    @property
    def intercept(self) -> float:
        return float(self.coefficients.get("Intercept", 0.0))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["features"] = self.features.to_dict()
        d["macros"] = [asdict(m) for m in self.macros]
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "GeneratorSpec":
        d = dict(d)
        for k in ("fico", "dti", "cltv", "orig_upb", "rate_spread"):
            if k in d:
                d[k] = TruncNormal(**d[k])
        if "macros" in d:
            d["macros"] = tuple(MacroPath(**{**m, "shocks": tuple(tuple(s) for s in m.get("shocks", ()))})
                                for m in d["macros"])
        if "features" in d:
            d["features"] = FeatureSpec.from_dict(d["features"])
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


@dataclass
class SyntheticPortfolio:
    loans: list[LoanOrigination]
    performance: list[PerformanceRow]
    macros: dict[str, MacroSeries]
    hazard_loan_id: np.ndarray
    hazard_month: np.ndarray
    hazard: np.ndarray

    @property
    def n_bads(self) -> int:
        return sum(1 for r in self.performance if r.dlq_status == 2)


def _macro_window(spec: GeneratorSpec) -> tuple[int, int]:
    return parse_month(spec.orig_start) - 24, parse_month(spec.data_end) + spec.horizon + 12


def generate_macros(spec: GeneratorSpec) -> dict[str, MacroSeries]:
    start, end = _macro_window(spec)
    out = {}
    for k, path in enumerate(spec.macros):
        step = 3 if path.frequency == "quarterly" else 1
        first = quarter_start(start) if step == 3 else start
        months = np.arange(first, end + 1, step)
        t = (months - months[0]).astype(float)
        walk = np.cumsum(_random.normals(spec.seed, [k + 1], np.arange(len(months)), stream=11)) * path.noise_sd
        vals = (path.base + path.trend_per_year * t / 12 + path.amplitude * np.sin(2 * np.pi * t / path.period_months)
                + walk)
        for a, b, add in path.shocks:
            vals = vals + add * ((months >= parse_month(a)) & (months <= parse_month(b)))
        vals = np.maximum(vals, path.floor)
        out[path.name] = MacroSeries(path.name, tuple(int(m) for m in months),
                                     tuple(round(float(v), 6) for v in vals), path.frequency)
    return out


def _draw_loans(spec: GeneratorSpec, macros) -> list[LoanOrigination]:
    n = spec.n_loans
    ids = [f"S{i:07d}" for i in range(n)]
    keys = _random.string_keys(ids)
    u = [_random.uniforms(spec.seed, keys, 0, stream=20 + j) for j in range(6)]
    lo, hi = parse_month(spec.orig_start), parse_month(spec.orig_end)
    orig = lo + np.minimum((u[0] * (hi - lo + 1)).astype(np.int64), hi - lo)
    fico = np.rint(spec.fico.ppf(u[1])).astype(int)
    dti = np.round(spec.dti.ppf(u[2]), 0)
    cltv = np.round(spec.cltv.ppf(u[3]), 0)
    upb = np.round(spec.orig_upb.ppf(u[4]) / 1000.0) * 1000.0
    market = macros[spec.features.market_rate_series]
    mk = dict(zip(market.months, market.values))
    rate = np.array([mk[int(m)] for m in orig]) + spec.rate_spread.ppf(u[5])
    rate = np.round(np.maximum(rate, 0.5) * 8) / 8  # note rates quoted in eighths
    return [LoanOrigination(ids[i], int(orig[i]), int(fico[i]), float(dti[i]), float(cltv[i]), float(upb[i]),
                            float(rate[i])) for i in range(n)]


def simulate(spec: GeneratorSpec) -> SyntheticPortfolio:
    macros = generate_macros(spec)
    loans = _draw_loans(spec, macros)
    data_end = parse_month(spec.data_end)
    first = np.array([ln.orig_month + 1 for ln in loans], dtype=np.int64)
    observed = np.minimum(spec.horizon + spec.trailing_months, data_end - first + 1)
    at_risk = np.minimum(observed, spec.horizon)

    ids = np.array([ln.loan_id for ln in loans], dtype=object)
    loan_idx = np.repeat(np.arange(len(loans)), at_risk)
    age = np.arange(len(loan_idx)) - np.repeat(np.cumsum(at_risk) - at_risk, at_risk)
    months = first[loan_idx] + age
    panel = Panel(ids[loan_idx], first[loan_idx], months, age, np.zeros(len(age)),
                  np.zeros(len(age)), np.ones(len(age)))
    design = build_design(panel, {ln.loan_id: ln for ln in loans}, macros, spec.features)
    if len(design) != len(panel):
        raise GeneratorError(f"macro paths do not cover every simulated month: {design.dropped}")
    with np.errstate(over="ignore"):
        hazard = expit(spec.intercept + design.X @ spec.beta)
    if len(hazard):
        share = float(np.mean((hazard > 0) & (hazard < 0.5)))
        if share < 0.99:
            raise GeneratorError(f"only {share:.1%} of monthly hazards lie in (0, 0.5)")

    u = _random.uniforms(spec.seed, _random.string_keys(list(ids[loan_idx])) if len(loan_idx) else
                         np.zeros(0, np.uint64), age, stream=30)
    event = u < hazard
    perf = []
    start = 0
    for i, ln in enumerate(loans):
        n_risk = int(at_risk[i])
        hits = np.flatnonzero(event[start:start + n_risk])
        start += n_risk
        f = int(first[i])
        if len(hits):
            t = int(hits[0])
            for a in range(t + 1):
                dlq = 2 if a == t else (1 if a == t - 1 else 0)
                perf.append(PerformanceRow(ln.loan_id, f + a, dlq))
            for extra in range(1, spec.post_default_months + 1):
                if f + t + extra > data_end:
                    break
                perf.append(PerformanceRow(ln.loan_id, f + t + extra, 2 + extra))
        else:
            for a in range(int(observed[i])):
                perf.append(PerformanceRow(ln.loan_id, f + a, 0))
    return SyntheticPortfolio(loans, perf, macros, ids[loan_idx], months, hazard)


@dataclass
class GeneratedFiles:
    loans: Path
    performance: Path
    macros: dict[str, Path]
    spec: Path


def generate(spec: GeneratorSpec, out_dir) -> GeneratedFiles:
    """Simulate and write ``loans.txt``, ``performance.txt``, ``macro/<NAME>.csv``."""
    out = Path(out_dir)
    (out / "macro").mkdir(parents=True, exist_ok=True)
    port = simulate(spec)
    loans_path, perf_path = out / "loans.txt", out / "performance.txt"
    write_loans(loans_path, port.loans)
    write_performance(perf_path, port.performance)
    macro_paths = {}
    for name, series in sorted(port.macros.items()):
        macro_paths[name] = out / "macro" / f"{name}.csv"
        write_macro(macro_paths[name], series)
    spec_path = out / "generator_spec.json"
    spec_path.write_text(spec.to_json() + "\n")
    return GeneratedFiles(loans_path, perf_path, macro_paths, spec_path)


def true_hazard(spec: GeneratorSpec, loan: LoanOrigination, month: int,
                macros: Mapping[str, MacroSeries] | None = None) -> float:
    """The generating hazard of ``loan`` in calendar ``month``."""
    macros = generate_macros(spec) if macros is None else macros
    first = loan.orig_month + 1
    if month < first:
        raise GeneratorError(f"{format_month(month)} precedes the first performance month")
    row = PanelRow(loan.loan_id, first, month, month - first, 0, 0)
    x = assemble(row, loan, macros, spec.features)
    eta = spec.intercept + math.fsum(spec.coefficients.get(n, 0.0) * v for n, v in x.items())
    return float(expit(eta))
