"""Backtests, ROC/Youden cutoffs, score scaling, band tables and confusion metrics."""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .months import format_month

SCORE_MIN, SCORE_MAX = 300, 850


class EvaluationError(ValueError):
    pass


@dataclass
class BacktestReport:
    months: np.ndarray
    actual: np.ndarray
    predicted: np.ndarray
    weight: np.ndarray
    mae: float
    rmse: float
    mape: float | None
    n_zero_actual: int

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["month", "actual_bad_rate", "predicted_bad_rate", "weight"])
            for m, a, p, wt in zip(self.months, self.actual, self.predicted, self.weight):
                w.writerow([format_month(m), repr(float(a)), repr(float(p)), repr(float(wt))])

    def summary(self) -> dict:
        return {"mae": self.mae, "rmse": self.rmse, "mape": self.mape,
                "months": int(len(self.months)), "zero_actual_months_excluded_from_mape": self.n_zero_actual}


def backtest(months, status, weight, hazard) -> BacktestReport:
    """Weighted actual vs. predicted bad rate per calendar month.

    MAPE skips months whose actual rate is zero and reports how many.
    """
    months = np.asarray(months, dtype=np.int64)
    y = np.asarray(status, dtype=float)
    w = np.asarray(weight, dtype=float)
    h = np.asarray(hazard, dtype=float)
    if len(months) == 0:
        raise EvaluationError("backtest needs at least one month")
    uniq, inv = np.unique(months, return_inverse=True)
    wsum = np.bincount(inv, weights=w)
    actual = np.bincount(inv, weights=w * y) / wsum
    pred = np.bincount(inv, weights=w * h) / wsum
    err = np.abs(actual - pred)
    mae = math.fsum(err) / len(err)
    rmse = math.sqrt(math.fsum(err ** 2) / len(err))
    nz = actual > 0
    mape = math.fsum(err[nz] / actual[nz]) / int(nz.sum()) if nz.any() else None
    return BacktestReport(uniq, actual, pred, wsum, mae, rmse, mape, int((~nz).sum()))


@dataclass
class RocCurve:
    thresholds: np.ndarray  # descending; the first is +inf (nothing flagged)
    tpr: np.ndarray
    fpr: np.ndarray
    auc: float

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["threshold", "tpr", "fpr"])
            for t, a, b in zip(self.thresholds, self.tpr, self.fpr):
                w.writerow([repr(float(t)), repr(float(a)), repr(float(b))])


def roc(labels, weights, predictions) -> RocCurve:
    """ROC over every distinct prediction; a row is flagged when prediction >= threshold."""
    y = np.asarray(labels, dtype=float)
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=float)
    s = np.asarray(predictions, dtype=float)
    pos = math.fsum(w * y)
    neg = math.fsum(w * (1 - y))
    if pos <= 0 or neg <= 0:
        raise EvaluationError("ROC needs both classes with positive weight")
    thresholds, inv = np.unique(-s, return_inverse=True)
    thresholds = -thresholds
    tp = np.cumsum(np.bincount(inv, weights=w * y, minlength=len(thresholds)))
    fp = np.cumsum(np.bincount(inv, weights=w * (1 - y), minlength=len(thresholds)))
    tpr = np.concatenate([[0.0], tp / pos])
    fpr = np.concatenate([[0.0], fp / neg])
    tpr[-1] = fpr[-1] = 1.0
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2))
    return RocCurve(np.concatenate([[np.inf], thresholds]), tpr, fpr, auc)


def youden_cutoff(curve: RocCurve) -> tuple[float, float]:
    """Finite threshold maximising ``TPR - FPR``; ties go to the higher threshold."""
    j = curve.tpr[1:] - curve.fpr[1:]
    # values within a few ulp of the maximum are rounding ties of equal J;
    # the first of them is the highest threshold
    best = int(np.argmax(j >= j.max() - 4 * np.finfo(float).eps))
    return float(curve.thresholds[1:][best]), float(j[best])


@dataclass(frozen=True)
class ScoreScale:
    """Affine map from default log-odds to a 300-850 score.

    ``range_calibrated``: ``logodds_lo`` maps to 850 and ``logodds_hi`` to
    300.  ``anchor_based``: a hazard whose good:bad odds equal
    ``anchor_odds`` scores ``anchor_score`` and every doubling of the
    odds adds ``points_to_double_odds``.
    """

    mode: str
    logodds_lo: float = float("nan")
    logodds_hi: float = float("nan")
    anchor_score: float = float("nan")
    anchor_odds: float = float("nan")
    points_to_double_odds: float = float("nan")

    def __post_init__(self):
        if self.mode == "range_calibrated":
            if not self.logodds_hi > self.logodds_lo:
                raise ValueError("logodds_hi must exceed logodds_lo")
        elif self.mode == "anchor_based":
            if not (self.anchor_odds > 0 and self.points_to_double_odds > 0):
                raise ValueError("anchor_odds and points_to_double_odds must be positive")
        else:
            raise ValueError(f"unknown score mode {self.mode!r}")

    @classmethod
    def range_calibrated(cls, logodds_lo, logodds_hi) -> "ScoreScale":
        return cls("range_calibrated", logodds_lo=float(logodds_lo), logodds_hi=float(logodds_hi))

    @classmethod
    def anchor_based(cls, anchor_score, anchor_odds, points_to_double_odds) -> "ScoreScale":
        return cls("anchor_based", anchor_score=float(anchor_score), anchor_odds=float(anchor_odds),
                   points_to_double_odds=float(points_to_double_odds))

    @classmethod
    def from_hazards(cls, hazards) -> "ScoreScale":
        lo = logit(np.asarray(hazards, dtype=float))
        return cls.range_calibrated(float(lo.min()), float(lo.max()))

    @property
    def slope(self) -> float:
        """Score points per unit of default log-odds (negative)."""
        if self.mode == "range_calibrated":
            return (SCORE_MIN - SCORE_MAX) / (self.logodds_hi - self.logodds_lo)
        return -self.points_to_double_odds / math.log(2.0)

    @property
    def intercept(self) -> float:
        if self.mode == "range_calibrated":
            return SCORE_MAX - self.slope * self.logodds_lo
        return self.anchor_score + self.slope * math.log(self.anchor_odds)

    def raw(self, logodds):
        return self.intercept + self.slope * np.asarray(logodds, dtype=float)

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if not (isinstance(v, float) and math.isnan(v))}

    @classmethod
    def from_dict(cls, d) -> "ScoreScale":
        return cls(**d)


def logit(h):
    h = np.asarray(h, dtype=float)
    return np.log(h) - np.log1p(-h)


def to_score(hazard, scale: ScoreScale):
    """Integer score in [300, 850], decreasing in the hazard."""
    h = np.asarray(hazard, dtype=float)
    if np.any((h <= 0) | (h >= 1)):
        raise EvaluationError("hazard must lie strictly between 0 and 1")
    s = np.clip(np.floor(scale.raw(logit(h)) + 0.5), SCORE_MIN, SCORE_MAX).astype(np.int64)
    return int(s) if s.ndim == 0 else s


def from_score(score, scale: ScoreScale):
    """Hazard whose unrounded score equals ``score``."""
    lo = (np.asarray(score, dtype=float) - scale.intercept) / scale.slope
    out = 1.0 / (1.0 + np.exp(-lo))
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class ScoreBand:
    lo: int
    hi: int
    bads: float
    goods: float
    total: float
    mean_predicted: float

    @property
    def label(self) -> str:
        return f"{self.lo}-{self.hi}"


def band_edges(band_width: int = 50, lo: int = SCORE_MIN, top: int = 800) -> list[tuple[int, int]]:
    """``[300, 350], [351, 400], ..., [751, 800], [801, 850]``."""
    edges = [(lo, lo + band_width)]
    while edges[-1][1] < top:
        a = edges[-1][1] + 1
        edges.append((a, edges[-1][1] + band_width))
    if edges[-1][1] < SCORE_MAX:
        edges.append((edges[-1][1] + 1, SCORE_MAX))
    return edges


def score_band_table(scores, status, weight, hazard, band_width: int = 50,
                     top: int = 800) -> list[ScoreBand]:
    """Weighted bads, goods and mean predicted hazard per score band.

    Empty bands are reported with zeros.
    """
    s = np.asarray(scores)
    y = np.asarray(status, dtype=float)
    w = np.asarray(weight, dtype=float)
    h = np.asarray(hazard, dtype=float)
    out = []
    for lo, hi in band_edges(band_width, SCORE_MIN, top):
        sel = (s >= lo) & (s <= hi)
        tot = math.fsum(w[sel])
        bads = math.fsum(w[sel] * y[sel])
        mean = math.fsum(w[sel] * h[sel]) / tot if tot > 0 else 0.0
        out.append(ScoreBand(lo, hi, bads, tot - bads, tot, mean))
    return out


def write_bands(path, bands: Sequence[ScoreBand]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["score_band", "bads_weighted", "goods_weighted", "total_weighted", "mean_predicted_bad_rate"])
        for b in bands:
            w.writerow([b.label, repr(b.bads), repr(b.goods), repr(b.total), repr(b.mean_predicted)])


@dataclass(frozen=True)
class ConfusionMatrix:
    tn: float
    fp: float
    fn: float
    tp: float

    @property
    def total(self) -> float:
        return self.tn + self.fp + self.fn + self.tp


def confusion_at(scores, actual_bad, cutoff_score, weight=None) -> ConfusionMatrix:
    """Predicted bad when the score is strictly below the cutoff."""
    s = np.asarray(scores)
    y = np.asarray(actual_bad).astype(bool)
    w = np.ones(len(s)) if weight is None else np.asarray(weight, dtype=float)
    pred = s < cutoff_score

    def tally(mask):
        v = math.fsum(w[mask])
        return int(v) if weight is None else v

    return ConfusionMatrix(tn=tally(~y & ~pred), fp=tally(~y & pred), fn=tally(y & ~pred), tp=tally(y & pred))


@dataclass(frozen=True)
class ClassificationMetrics:
    """``None`` marks a metric whose denominator is zero."""

    accuracy: float | None
    precision: float | None
    recall: float | None
    f1: float | None


def classification_metrics(m: ConfusionMatrix) -> ClassificationMetrics:
    total = m.total
    accuracy = (m.tp + m.tn) / total if total > 0 else None
    precision = m.tp / (m.tp + m.fp) if m.tp + m.fp > 0 else None
    recall = m.tp / (m.tp + m.fn) if m.tp + m.fn > 0 else None
    if precision is None or recall is None or precision + recall == 0:
        f1 = None
    else:
        f1 = 2 * recall * precision / (recall + precision)
    return ClassificationMetrics(accuracy, precision, recall, f1)
