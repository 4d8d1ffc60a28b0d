"""Weighted logistic regression for the monthly default hazard.

The fit maximises ``sum w_i [y_i log h_i + (1 - y_i) log(1 - h_i)]`` with
``h = expit(X beta)`` by Newton-Raphson (IRLS) with step halving.  Score
and information are accumulated over fixed-size row chunks, so the result
does not depend on how many threads share the work.
"""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.special import expit, log_expit

CHUNK_ROWS = 1 << 16
MAX_LINEAR_PREDICTOR = 40.0


class FitError(RuntimeError):
    pass


class ConvergenceError(FitError):
    def __init__(self, message, coefficients=None):
        super().__init__(message)
        self.coefficients = coefficients


class SingularInformationError(FitError):
    def __init__(self, message, columns=()):
        super().__init__(message)
        self.columns = list(columns)


class SeparationError(FitError):
    pass


def chi2_sf_1df(x: float) -> float:
    """Upper tail of chi-square with one degree of freedom."""
    if x <= 0:
        return 1.0
    return math.erfc(math.sqrt(x / 2.0))


@dataclass
class CoefficientTable:
    names: list[str]
    estimates: np.ndarray
    standard_errors: np.ndarray
    covariance: np.ndarray
    iterations: int = 0
    gradient_norm: float = float("nan")
    log_likelihood: float = float("nan")
    n_rows: int = 0
    total_weight: float = float("nan")
    metadata: dict = field(default_factory=dict)

    @property
    def wald_chi_square(self) -> np.ndarray:
        return (self.estimates / self.standard_errors) ** 2

    @property
    def p_values(self) -> np.ndarray:
        return np.array([chi2_sf_1df(x) for x in self.wald_chi_square])

    def __getitem__(self, name: str) -> float:
        return float(self.estimates[self.names.index(name)])

    def rows(self):
        for n, b, se, wald, p in zip(self.names, self.estimates, self.standard_errors,
                                     self.wald_chi_square, self.p_values):
            yield n, float(b), float(se), float(wald), float(p)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["parameter", "estimate", "standard_error", "wald_chi_square", "p_value"])
            for r in self.rows():
                w.writerow([r[0], *map(repr, r[1:])])

    def to_model_dict(self, feature_spec_hash: str = "") -> dict:
        return {"names": list(self.names),
                "estimates": [float(b) for b in self.estimates],
                "standard_errors": [float(s) for s in self.standard_errors],
                "feature_spec_hash": feature_spec_hash,
                "iterations": self.iterations,
                "gradient_norm": self.gradient_norm,
                "log_likelihood": self.log_likelihood,
                "n_rows": self.n_rows,
                "total_weight": self.total_weight}

    def save(self, path, feature_spec_hash: str = "") -> None:
        with open(path, "w") as fh:
            json.dump(self.to_model_dict(feature_spec_hash), fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "CoefficientTable":
        with open(path) as fh:
            d = json.load(fh)
        se = np.array(d["standard_errors"], dtype=float)
        t = cls(list(d["names"]), np.array(d["estimates"], dtype=float), se, np.diag(se ** 2),
                d.get("iterations", 0), d.get("gradient_norm", float("nan")),
                d.get("log_likelihood", float("nan")), d.get("n_rows", 0), d.get("total_weight", float("nan")))
        t.metadata["feature_spec_hash"] = d.get("feature_spec_hash", "")
        return t


def _with_intercept(X):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return np.column_stack([np.ones(len(X)), X])


def weighted_loglik(beta, X, y, w) -> float:
    """Weighted Bernoulli log-likelihood (``X`` includes any intercept column)."""
    eta = np.asarray(X) @ beta
    return math.fsum(w * (y * log_expit(eta) + (1 - y) * log_expit(-eta)))


def weighted_score(beta, X, y, w) -> np.ndarray:
    """Gradient of :func:`weighted_loglik`."""
    h = expit(np.asarray(X) @ beta)
    return np.asarray(X).T @ (w * (y - h))


def _fsum_stack(parts):
    stacked = np.stack(parts)
    flat = stacked.reshape(len(parts), -1)
    return np.array([math.fsum(col) for col in flat.T]).reshape(stacked.shape[1:])


class _Accumulator:
    def __init__(self, X, y, w, threads):
        n = len(y)
        self.chunks = [slice(i, min(i + CHUNK_ROWS, n)) for i in range(0, n, CHUNK_ROWS)]
        self.X, self.y, self.w = X, y, w
        self.threads = threads

    def _map(self, fn):
        if self.threads > 1 and len(self.chunks) > 1:
            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                return list(pool.map(fn, self.chunks))
        return [fn(c) for c in self.chunks]

    def loglik(self, beta):
        def part(c):
            eta = self.X[c] @ beta
            y, w = self.y[c], self.w[c]
            return np.array([math.fsum(w * (y * log_expit(eta) + (1 - y) * log_expit(-eta))),
                             float(np.max(np.abs(eta), initial=0.0))])
        parts = self._map(part)
        return math.fsum(p[0] for p in parts), max(p[1] for p in parts)

    def score_info(self, beta):
        def part(c):
            X = self.X[c]
            h = expit(X @ beta)
            w = self.w[c]
            g = X.T @ (w * (self.y[c] - h))
            H = X.T @ (X * (w * h * (1 - h))[:, None])
            return g, H
        parts = self._map(part)
        return _fsum_stack([p[0] for p in parts]), _fsum_stack([p[1] for p in parts])


def _dependent_columns(info, names):
    scale = np.sqrt(np.clip(np.diag(info), 1e-300, None))
    corr = info / np.outer(scale, scale)
    u, s, vt = np.linalg.svd(corr)
    null = vt[s < 1e-10 * s[0]]
    if not len(null):
        null = vt[-1:]
    involved = np.any(np.abs(null) > 0.1, axis=0)
    return [n for n, hit in zip(names, involved) if hit]


def fit(X, y, weight=None, names: Sequence[str] | None = None, tol: float = 1e-8,
        max_iter: int = 100, ridge: float = 0.0, add_intercept: bool = True,
        threads: int = 1) -> CoefficientTable:
    """Fit the weighted logistic hazard model.

    Convergence is declared when the largest score component, computed
    with weights divided by their mean, is at most ``tol``.  Standard
    errors come from the inverse weighted information matrix at the
    optimum (model-based variance).  ``ridge`` adds an L2 penalty on the
    non-intercept coefficients of the mean-normalised likelihood and is off
    by default.
    """
    y = np.asarray(y, dtype=float)
    w = np.ones_like(y) if weight is None else np.asarray(weight, dtype=float)
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    p_in = X.shape[1]
    names = list(names) if names is not None else [f"x{i}" for i in range(p_in)]
    if len(names) != p_in:
        raise ValueError("names do not match columns")
    if len(y) == 0 or not (np.any(y == 1) and np.any(y == 0)):
        raise FitError("need at least one row of each status")
    if np.any(~np.isfinite(w)) or np.any(w <= 0):
        raise FitError("weights must be finite and positive")
    if not np.all(np.isfinite(X)):
        raise FitError("non-finite regressor values")
    constant = [n for n, j in zip(names, range(p_in)) if np.ptp(X[:, j]) == 0]
    if add_intercept and constant:
        raise SingularInformationError(f"regressors constant across all rows: {constant}", constant)
    if add_intercept:
        X = _with_intercept(X)
        names = ["Intercept"] + names
    p = X.shape[1]

    mean_w = math.fsum(w) / len(w)
    wn = w / mean_w
    acc = _Accumulator(X, y, wn, threads)
    penalty = np.full(p, float(ridge))
    if add_intercept:
        penalty[0] = 0.0

    beta = np.zeros(p)
    if add_intercept:
        ybar = math.fsum(wn * y) / math.fsum(wn)
        beta[0] = math.log(ybar / (1 - ybar))

    def objective(b):
        ll, eta_max = acc.loglik(b)
        return ll - 0.5 * float(np.sum(penalty * b * b)), eta_max

    obj, _ = objective(beta)
    it = 0
    grad_norm = float("inf")
    while True:
        g, H = acc.score_info(beta)
        g = g - penalty * beta
        H = H + np.diag(penalty)
        grad_norm = float(np.max(np.abs(g)))
        if grad_norm <= tol:
            break
        if it >= max_iter:
            raise ConvergenceError(f"no convergence in {max_iter} iterations (max |score| {grad_norm:.3g})",
                                   dict(zip(names, beta.tolist())))
        try:
            L = np.linalg.cholesky(H)
            step = np.linalg.solve(L.T, np.linalg.solve(L, g))
        except np.linalg.LinAlgError:
            cols = _dependent_columns(H, names)
            raise SingularInformationError(f"singular information matrix; dependent columns: {cols}",
                                           cols) from None
        if np.linalg.cond(H) > 1e15:
            cols = _dependent_columns(H, names)
            raise SingularInformationError(f"information matrix numerically singular; dependent columns: {cols}",
                                           cols)
        t = 1.0
        for _ in range(40):
            cand = beta + t * step
            new_obj, eta_max = objective(cand)
            if new_obj >= obj - 1e-12 * abs(obj):
                break
            t *= 0.5
        else:
            raise ConvergenceError("step halving failed to improve the likelihood",
                                   dict(zip(names, beta.tolist())))
        if eta_max > MAX_LINEAR_PREDICTOR:
            raise SeparationError(f"linear predictor reached {eta_max:.1f}; the data look separable "
                                  "(coefficients diverging)")
        beta, obj = cand, new_obj
        it += 1

    _, H_raw = acc.score_info(beta)
    info = H_raw * mean_w + np.diag(penalty) * mean_w
    try:
        cov = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        cols = _dependent_columns(info, names)
        raise SingularInformationError(f"singular information matrix; dependent columns: {cols}", cols) from None
    se = np.sqrt(np.diag(cov))
    ll, _ = acc.loglik(beta)
    return CoefficientTable(names, beta, se, cov, it, grad_norm, ll * mean_w, len(y), math.fsum(w))


def linear_predictor(X, coefficients: CoefficientTable, names: Sequence[str] | None = None) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    coef = coefficients
    if names is not None:
        want = [n for n in coef.names if n != "Intercept"]
        X = X[:, [list(names).index(n) for n in want]]
    if coef.names and coef.names[0] == "Intercept":
        return coef.estimates[0] + X @ coef.estimates[1:]
    return X @ coef.estimates


def predict_hazard(features, coefficients: CoefficientTable, names: Sequence[str] | None = None):
    """Monthly hazard ``expit(b0 + x . b)``.

    ``features`` is a mapping of regressor values (one row) or a 2-D array;
    with an array, ``names`` gives its column order when it differs from
    the model's.
    """
    if isinstance(features, Mapping):
        x = np.array([[features[n] for n in coefficients.names if n != "Intercept"]])
        return float(expit(linear_predictor(x, coefficients))[0])
    return expit(linear_predictor(features, coefficients, names))


def horizon_pd(monthly_hazards) -> float:
    """Probability of default within the horizon, ``1 - prod(1 - h_t)``."""
    h = np.asarray(monthly_hazards, dtype=float)
    if np.any(h >= 1) or np.any(h < 0):
        raise ValueError("monthly hazards must lie in [0, 1)")
    return float(-np.expm1(np.sum(np.log1p(-h))))


def format_p_value(p: float) -> str:
    return "<.0001" if p < 1e-4 else f"{p:.4f}"


def wald_report(coefficients: CoefficientTable) -> str:
    header = f"{'Parameter':<34}{'Estimate':>14}{'Standard Error':>17}{'Wald Chi-Square':>18}{'Pr > ChiSq':>12}"
    lines = [header, "-" * len(header)]
    for name, b, se, wald, p in coefficients.rows():
        lines.append(f"{name:<34}{b:>14.6g}{se:>17.6g}{wald:>18.4f}{format_p_value(p):>12}")
    return "\n".join(lines) + "\n"
