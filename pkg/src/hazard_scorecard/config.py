"""Pipeline configuration: a JSON file merged over :data:`DEFAULTS`.

Relative paths are resolved against the directory holding the config
file.  Unknown keys are rejected so typos fail before any work starts.
"""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from .features import FeatureSpec, MacroTransformSpec
from .panel import DEFAULT_RATE_TABLE, SamplingRateTable
from .synthgen import GeneratorSpec


class ConfigError(ValueError):
    pass


DEFAULTS: dict = {
    "paths": {"loans": None, "performance": None, "macro_dir": None},
    "loan_format": {"delimiter": "|", "skip_header": False, "columns": None},
    "performance_format": {"delimiter": "|", "skip_header": False, "columns": None},
    "macro_series": {
        "MORTGAGE30US": {"frequency": "monthly", "aggregate": False},
        "UNRATENSA": {"frequency": "monthly", "aggregate": False},
        "RCMFLBACTDPDPCT90P": {"frequency": "quarterly", "aggregate": False},
    },
    "horizon": 36,
    "bad_threshold": 2,
    "clock_offset": 0,
    "mob_offset": 0,
    "train_fraction": 0.7,
    "seed": 20240901,
    "sampling": {"unit": "row", "compress": False, **DEFAULT_RATE_TABLE.to_dict()},
    "features": {
        "loan_age_knots": [8, 20],
        "snapshot_mob_knots": [9, 21],
        "cltv_knots": [80],
        "macro_transforms": [{"series": "RCMFLBACTDPDPCT90P", "transform": "qoq_pctchg", "lag_months": 0},
                             {"series": "UNRATENSA", "transform": "lag", "lag_months": 1}],
        "market_rate_series": "MORTGAGE30US",
        "sato_sign": 1,
        "fit_interaction": True,
        "interaction": None,
        "n_fico_groups": 5,
        "n_upb_groups": 4,
        "bivariate_bins": 10,
    },
    "model": {"features": None, "tol": 1e-8, "max_iter": 100, "ridge": 0.0},
    "score": {"mode": "range_calibrated", "anchor_score": 621.0, "anchor_odds": 799.0,
              "points_to_double_odds": 40.0, "band_width": 50},
    "cutoffs": [600, 621, 640],
    "synth": None,
}


def _merge(base: dict, override: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if k not in base:
            raise ConfigError(f"unknown config key {where}{k}")
        if isinstance(base[k], dict) and isinstance(v, dict) and k not in ("macro_series",):
            out[k] = _merge(base[k], v, f"{where}{k}.")
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class PipelineConfig:
    data: dict
    base_dir: Path

    @classmethod
    def load(cls, path=None, overrides: dict | None = None) -> "PipelineConfig":
        raw = {}
        base = Path.cwd()
        if path is not None:
            path = Path(path)
            try:
                raw = json.loads(path.read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot read config {path}: {exc}") from exc
            base = path.resolve().parent
        data = _merge(DEFAULTS, raw)
        for k, v in (overrides or {}).items():
            data[k] = v
        cfg = cls(data, base)
        cfg.validate()
        return cfg

    def __getitem__(self, key):
        return self.data[key]

    def path(self, key: str) -> Path | None:
        v = self.data["paths"].get(key)
        if v is None:
            return None
        p = Path(v)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def seed(self) -> int:
        return int(self.data["seed"])

    @property
    def rate_table(self) -> SamplingRateTable:
        s = self.data["sampling"]
        return SamplingRateTable.from_dict({"bad_tiers": s["bad_tiers"], "good_tiers": s["good_tiers"]})

    def feature_spec(self, interaction=None) -> FeatureSpec:
        f = self.data["features"]
        d = {k: f[k] for k in ("loan_age_knots", "snapshot_mob_knots", "cltv_knots", "market_rate_series",
                               "sato_sign")}
        d["macro_transforms"] = f["macro_transforms"]
        if interaction is not None:
            d["interaction"] = interaction
        elif f["interaction"] is not None:
            d["interaction"] = f["interaction"]
        return FeatureSpec.from_dict(d)

    def generator_spec(self) -> GeneratorSpec | None:
        if self.data["synth"] is None:
            return None
        return GeneratorSpec.from_dict({**self.data["synth"], "seed": self.data["synth"].get("seed", self.seed)})

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.data, sort_keys=True).encode()).hexdigest()

    def validate(self) -> None:
        d = self.data
        if not 0 < float(d["train_fraction"]) < 1:
            raise ConfigError("train_fraction must lie in (0, 1)")
        if int(d["horizon"]) < 1 or int(d["horizon"]) <= int(d["clock_offset"]):
            raise ConfigError("horizon must be positive and exceed clock_offset")
        if int(d["bad_threshold"]) < 1:
            raise ConfigError("bad_threshold must be >= 1")
        if int(d["mob_offset"]) < 0:
            raise ConfigError("mob_offset must be >= 0")
        if d["sampling"]["unit"] not in ("row", "panel"):
            raise ConfigError("sampling.unit must be 'row' or 'panel'")
        try:
            self.rate_table
            spec = self.feature_spec()
            for t in d["features"]["macro_transforms"]:
                MacroTransformSpec(**t)
            gen = self.generator_spec()
        except (ValueError, TypeError, KeyError) as exc:
            raise ConfigError(str(exc)) from exc
        if d["score"]["mode"] not in ("range_calibrated", "anchor_based"):
            raise ConfigError("score.mode must be range_calibrated or anchor_based")
        if not all(isinstance(c, (int, float)) for c in d["cutoffs"]):
            raise ConfigError("cutoffs must be numbers")
        missing_series = set(spec.series_needed) - set(d["macro_series"])
        if missing_series:
            raise ConfigError(f"macro_series lacks {sorted(missing_series)}")
        for name, m in d["macro_series"].items():
            if m.get("frequency") not in ("monthly", "quarterly"):
                raise ConfigError(f"macro_series.{name}.frequency must be monthly or quarterly")
        model_feats = d["model"]["features"]
        if model_feats is not None:
            unknown = set(model_feats) - set(spec.names)
            if unknown:
                raise ConfigError(f"model.features names unknown regressors {sorted(unknown)}")
        if gen is None:
            for key in ("loans", "performance", "macro_dir"):
                p = self.path(key)
                if p is None:
                    raise ConfigError(f"paths.{key} is required when no synth section is given")
                if not p.exists():
                    raise ConfigError(f"paths.{key} does not exist: {p}")
        else:
            for key in ("loans", "performance", "macro_dir"):
                p = self.path(key)
                if p is not None and not p.exists():
                    raise ConfigError(f"paths.{key} does not exist: {p}")
