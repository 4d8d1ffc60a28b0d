"""File-to-file pipeline stages.

Each stage reads its predecessors' artifacts from the output directory and
writes its own, so any stage can be re-run alone.  ``manifest.json``
records the config digest, seed, row counts and stage timings.
"""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import scorecard_eval as ev
from .config import PipelineConfig
from .features import (DesignMatrix, FeatureSpec, build_design, bivariate_logodds_table,
                       collinearity_diagnostic, fit_interaction, write_bivariate)
from .hazard_model import CoefficientTable, fit, horizon_pd, predict_hazard, wald_report
from .ingest import (LoanHistory, MonthlyCounts, load_macro, monthly_counts, parse_loans,
                     parse_performance, read_histories, validate_and_label, write_exclusions,
                     write_histories, write_loans, write_rejections)
from .panel import (Panel, SplitAssignment, backward_weighted_sample, exploded_size, original_panel,
                    stratified_split)
from .synthgen import generate

log = logging.getLogger(__name__)

STAGES = ("synth", "ingest", "split", "counts", "sample", "features", "fit", "backtest", "score",
          "cutoff", "report")


class StageError(RuntimeError):
    pass


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _read_json(path: Path):
    return json.loads(path.read_text())


class Pipeline:
    def __init__(self, config: PipelineConfig, out_dir, threads: int = 1):
        self.cfg = config
        self.out = Path(out_dir)
        self.threads = max(1, int(threads))
        self.out.mkdir(parents=True, exist_ok=True)

    # artifact locations -------------------------------------------------
    def _p(self, *parts) -> Path:
        return self.out.joinpath(*parts)

    def _require(self, stage: str, *paths: Path) -> None:
        for p in paths:
            if not p.exists():
                raise StageError(f"missing {p.relative_to(self.out)}: run {stage} first")

    def _input_paths(self):
        cfg = self.cfg
        loans, perf, macro = cfg.path("loans"), cfg.path("performance"), cfg.path("macro_dir")
        if loans is None or perf is None or macro is None:
            data = self._p("data")
            self._require("synth", data / "loans.txt")
            loans = loans or data / "loans.txt"
            perf = perf or data / "performance.txt"
            macro = macro or data / "macro"
        return loans, perf, macro

    # shared loaders ------------------------------------------------------
    def _loans(self):
        self._require("ingest", self._p("ingest", "loans.txt"))
        res = parse_loans(self._p("ingest", "loans.txt"))
        return {ln.loan_id: ln for ln in res.records}

    def _histories(self, loans=None) -> list[LoanHistory]:
        self._require("ingest", self._p("ingest", "histories.csv"))
        return read_histories(self._p("ingest", "histories.csv"), loans or self._loans())

    def _split(self) -> SplitAssignment:
        self._require("split", self._p("split", "split.csv"))
        return SplitAssignment.from_csv(self._p("split", "split.csv"), self.cfg["train_fraction"])

    def _macros(self):
        _, _, macro_dir = self._input_paths()
        out = {}
        for name, m in sorted(self.cfg["macro_series"].items()):
            path = Path(macro_dir) / m.get("file", f"{name}.csv")
            out[name] = load_macro(path, m["frequency"], name, bool(m.get("aggregate", False)))
        return out

    def _feature_spec(self) -> FeatureSpec:
        self._require("features", self._p("features", "feature_spec.json"))
        return FeatureSpec.from_dict(_read_json(self._p("features", "feature_spec.json")))

    def _model(self) -> CoefficientTable:
        self._require("fit", self._p("model", "model.json"))
        model = CoefficientTable.load(self._p("model", "model.json"))
        spec = self._feature_spec()
        if model.metadata.get("feature_spec_hash") != spec.digest():
            raise StageError("model was fitted on a different feature spec: run fit again")
        return model

    @property
    def _sample_path(self) -> Path:
        name = "train_sample.csv.gz" if self.cfg["sampling"]["compress"] else "train_sample.csv"
        return self._p("sample", name)

    def _predict(self, design: DesignMatrix, model: CoefficientTable) -> np.ndarray:
        return predict_hazard(design.X, model, design.names)

    # stages ----------------------------------------------------------------
    def synth(self) -> dict:
        spec = self.cfg.generator_spec()
        if spec is None:
            raise StageError("config has no synth section")
        files = generate(spec, self._p("data"))
        n_perf = sum(1 for _ in open(files.performance))
        return {"loans": spec.n_loans, "performance_rows": n_perf}

    def ingest(self) -> dict:
        loans_path, perf_path, _ = self._input_paths()
        lf, pf = self.cfg["loan_format"], self.cfg["performance_format"]
        loans = parse_loans(loans_path, lf["columns"], lf["delimiter"], lf["skip_header"])
        perf = parse_performance(perf_path, pf["columns"], pf["delimiter"], pf["skip_header"])
        labeled = validate_and_label(loans.records, perf.records, self.cfg["horizon"],
                                     self.cfg["bad_threshold"], self.cfg["clock_offset"])
        self._macros()  # fail early on unreadable or inconsistent macro files
        d = self._p("ingest")
        d.mkdir(exist_ok=True)
        kept = {h.loan_id for h in labeled.histories}
        write_loans(d / "loans.txt", sorted((ln for ln in loans.records if ln.loan_id in kept),
                                            key=lambda ln: ln.loan_id))
        write_histories(d / "histories.csv", labeled.histories)
        write_exclusions(d / "exclusions.csv", labeled.exclusions)
        write_rejections(d / "rejections.csv", [*loans.rejections, *perf.rejections])
        summary = {
            "loan_rows": loans.n_rows, "loan_rejections": len(loans.rejections),
            "performance_rows": perf.n_rows, "performance_rejections": len(perf.rejections),
            "loans_kept": len(labeled.histories), "exclusions": labeled.exclusion_counts(),
            "bads": sum(h.terminal_status for h in labeled.histories),
            "observations": sum(len(h) for h in labeled.histories),
        }
        _write_json(d / "summary.json", summary)
        return {k: v for k, v in summary.items() if k != "exclusions"}

    def split(self) -> dict:
        histories = self._histories()
        split = stratified_split(histories, self.cfg["train_fraction"], self.cfg.seed)
        d = self._p("split")
        d.mkdir(exist_ok=True)
        split.to_csv(d / "split.csv")
        summary = {}
        for part in ("train", "test"):
            hs = [h for h in histories if split.assignment[h.loan_id] == part]
            summary[part] = {"loans": len(hs), "bads": sum(h.terminal_status for h in hs),
                             "goods": sum(1 - h.terminal_status for h in hs),
                             "observations": sum(len(h) for h in hs)}
        _write_json(d / "summary.json", summary)
        return {"train_loans": summary["train"]["loans"], "test_loans": summary["test"]["loans"]}

    def counts(self) -> dict:
        histories = self._histories()
        split = self._split()
        d = self._p("counts")
        d.mkdir(exist_ok=True)
        everything = monthly_counts(histories)
        train = monthly_counts([h for h in histories if split.assignment[h.loan_id] == "train"])
        everything.to_csv(d / "monthly_counts_all.csv")
        train.to_csv(d / "monthly_counts_train.csv")
        return {"months": len(everything), "observations": everything.total, "train_observations": train.total}

    def sample(self) -> dict:
        histories = self._histories()
        split = self._split()
        self._require("counts", self._p("counts", "monthly_counts_train.csv"))
        counts = MonthlyCounts.from_csv(self._p("counts", "monthly_counts_train.csv"))
        train = [h for h in histories if split.assignment[h.loan_id] == "train"]
        panel = backward_weighted_sample(train, counts, self.cfg.rate_table, self.cfg.seed,
                                         self.cfg["sampling"]["unit"], self.cfg["mob_offset"], self.threads)
        d = self._p("sample")
        d.mkdir(exist_ok=True)
        panel.to_csv(self._sample_path)
        summary = {"original_observations": sum(len(h) for h in train),
                   "full_exploded_rows": sum(exploded_size(len(h)) for h in train),
                   "sampled_rows": len(panel), "total_weight": panel.total_weight}
        _write_json(d / "summary.json", summary)
        return {k: v for k, v in summary.items() if k != "total_weight"}

    def features(self) -> dict:
        loans = self._loans()
        histories = self._histories(loans)
        split = self._split()
        self._require("sample", self._sample_path)
        panel = Panel.from_csv(self._sample_path)
        macros = self._macros()
        fcfg = self.cfg["features"]
        interaction = None
        if fcfg["fit_interaction"]:
            recs = [loans[i] for i in panel.loan_id]
            interaction = fit_interaction([r.fico for r in recs], [r.orig_upb for r in recs], panel.status,
                                          panel.weight, fcfg["n_fico_groups"], fcfg["n_upb_groups"])
            interaction = asdict(interaction)
        spec = self.cfg.feature_spec(interaction)
        d = self._p("features")
        (d / "bivariate").mkdir(parents=True, exist_ok=True)
        _write_json(d / "feature_spec.json", spec.to_dict())
        train = build_design(panel, loans, macros, spec, self.threads)
        test_h = [h for h in histories if split.assignment[h.loan_id] == "test"]
        test = build_design(original_panel(test_h, self.cfg["mob_offset"]), loans, macros, spec, self.threads)
        train.to_csv(d / "design_train.csv")
        test.to_csv(d / "design_test.csv")

        recs = [loans[i] for i in train.loan_id]
        variables = {n: train.X[:, i] for i, n in enumerate(train.names)
                     if n not in ("covid_index", "quarter1", "quarter3") and "pspline" not in n}
        variables["orig_upb"] = np.array([r.orig_upb for r in recs])
        for name, values in variables.items():
            table = bivariate_logodds_table(values, train.status, train.weight, fcfg["bivariate_bins"])
            write_bivariate(d / "bivariate" / f"{name}.csv", name, table)
        diag = collinearity_diagnostic(train.X, train.names)
        summary = {"train_rows": len(train), "test_rows": len(test), "train_dropped": train.dropped,
                   "test_dropped": test.dropped, "feature_spec_hash": spec.digest(), "collinearity": diag,
                   "interaction": spec.to_dict()["interaction"]}
        _write_json(d / "summary.json", summary)
        return {"train_rows": len(train), "test_rows": len(test)}

    def _model_columns(self, design: DesignMatrix):
        names = self.cfg["model"]["features"] or design.names
        return design.columns(names), list(names)

    def fit(self) -> dict:
        spec = self._feature_spec()
        self._require("features", self._p("features", "design_train.csv"))
        design = DesignMatrix.from_csv(self._p("features", "design_train.csv"))
        X, names = self._model_columns(design)
        m = self.cfg["model"]
        table = fit(X, design.status, design.weight, names, tol=m["tol"], max_iter=m["max_iter"],
                    ridge=m["ridge"], threads=self.threads)
        d = self._p("model")
        d.mkdir(exist_ok=True)
        table.to_csv(d / "coefficients.csv")
        table.save(d / "model.json", spec.digest())
        (d / "wald_report.txt").write_text(wald_report(table))
        return {"rows": len(design), "parameters": len(names), "iterations": table.iterations}

    def backtest(self) -> dict:
        model = self._model()
        d = self._p("backtest")
        d.mkdir(exist_ok=True)
        summary = {}
        for part in ("train", "test"):
            self._require("features", self._p("features", f"design_{part}.csv"))
            design = DesignMatrix.from_csv(self._p("features", f"design_{part}.csv"))
            h = self._predict(design, model)
            report = ev.backtest(design.calendar_month, design.status, design.weight, h)
            report.to_csv(d / f"{part}_by_month.csv")
            summary[part] = report.summary()
        _write_json(d / "summary.json", summary)
        return {"train_months": summary["train"]["months"], "test_months": summary["test"]["months"]}

    def _loan_level_scores(self, model, spec, scale):
        """Horizon PD for each test loan from its origination snapshot."""
        loans = self._loans()
        histories = self._histories(loans)
        split = self._split()
        macros = self._macros()
        horizon = self.cfg["horizon"] - self.cfg["clock_offset"]
        test = [h for h in histories if split.assignment[h.loan_id] == "test"]
        n = len(test)
        ids = np.repeat(np.array([h.loan_id for h in test], dtype=object), horizon)
        first = np.repeat(np.array([h.months[0] for h in test], dtype=np.int64), horizon)
        age = np.tile(np.arange(horizon), n)
        panel = Panel(ids, first, first + age, age, np.full(len(age), self.cfg["mob_offset"]),
                      np.zeros(len(age)), np.ones(len(age)))
        design = build_design(panel, loans, macros, spec, self.threads)
        hz = self._predict(design, model)
        rows = []
        order = {h.loan_id: i for i, h in enumerate(test)}
        grouped = [[] for _ in test]
        for lid, h in zip(design.loan_id, hz):
            grouped[order[lid]].append(h)
        for h, hs in zip(test, grouped):
            if not hs:
                continue
            pd_ = horizon_pd(hs)
            eq = -math.expm1(math.log1p(-pd_) / len(hs))
            rows.append((h.loan_id, h.terminal_status, pd_, eq, ev.to_score(eq, scale), len(hs)))
        return rows

    def score(self) -> dict:
        model = self._model()
        spec = self._feature_spec()
        design = DesignMatrix.from_csv(self._p("features", "design_train.csv"))
        h = self._predict(design, model)
        s = self.cfg["score"]
        if s["mode"] == "range_calibrated":
            scale = ev.ScoreScale.from_hazards(h)
        else:
            scale = ev.ScoreScale.anchor_based(s["anchor_score"], s["anchor_odds"], s["points_to_double_odds"])
        d = self._p("score")
        d.mkdir(exist_ok=True)
        _write_json(d / "score_scale.json", scale.to_dict())
        scores = ev.to_score(h, scale)
        bands = ev.score_band_table(scores, design.status, design.weight, h, s["band_width"])
        ev.write_bands(d / "score_bands.csv", bands)
        rows = self._loan_level_scores(model, spec, scale)
        with open(d / "test_loan_scores.csv", "w") as fh:
            fh.write("loan_id,terminal_status,horizon_pd,equivalent_monthly_hazard,score,months_scored\n")
            for lid, st, pd_, eq, sc, nm in rows:
                fh.write(f"{lid},{st},{pd_!r},{eq!r},{sc},{nm}\n")
        return {"train_rows_scored": len(design), "test_loans_scored": len(rows)}

    def _read_loan_scores(self):
        self._require("score", self._p("score", "test_loan_scores.csv"))
        data = np.genfromtxt(self._p("score", "test_loan_scores.csv"), delimiter=",", names=True,
                             dtype=None, encoding="utf-8")
        data = np.atleast_1d(data)
        return data["terminal_status"].astype(int), data["equivalent_monthly_hazard"].astype(float), \
            data["score"].astype(int)

    def cutoff(self) -> dict:
        self._require("score", self._p("score", "score_scale.json"))
        scale = ev.ScoreScale.from_dict(_read_json(self._p("score", "score_scale.json")))
        y, hz, _ = self._read_loan_scores()
        curve = ev.roc(y, None, hz)
        threshold, j = ev.youden_cutoff(curve)
        d = self._p("cutoff")
        d.mkdir(exist_ok=True)
        curve.to_csv(d / "roc.csv")
        # a loan is flagged when hazard >= threshold, i.e. score <= score(threshold);
        # "score below cutoff" therefore needs cutoff = score(threshold) + 1
        cut_score = ev.to_score(threshold, scale)
        result = {"youden_hazard": threshold, "youden_j": j, "auc": curve.auc,
                  "youden_score": cut_score, "cutoff_score": cut_score + 1}
        _write_json(d / "cutoff.json", result)
        return {"roc_points": len(curve.thresholds)}

    def report(self) -> dict:
        self._require("cutoff", self._p("cutoff", "cutoff.json"))
        cut = _read_json(self._p("cutoff", "cutoff.json"))
        y, _, scores = self._read_loan_scores()
        cutoffs = sorted({*map(int, self.cfg["cutoffs"]), int(cut["cutoff_score"])})
        table = {}
        for c in cutoffs:
            m = ev.confusion_at(scores, y, c)
            met = ev.classification_metrics(m)
            table[str(c)] = {"confusion": {"tn": m.tn, "fp": m.fp, "fn": m.fn, "tp": m.tp},
                             "accuracy": met.accuracy, "precision": met.precision, "recall": met.recall,
                             "f1": met.f1, "predicted_bads": m.fp + m.tp}
        d = self._p("report")
        d.mkdir(exist_ok=True)
        with open(d / "metrics.csv", "w") as fh:
            fh.write("measure," + ",".join(f"cutoff_{c}" for c in cutoffs) + "\n")
            for key in ("accuracy", "precision", "recall", "f1"):
                vals = ["" if table[str(c)][key] is None else repr(table[str(c)][key]) for c in cutoffs]
                fh.write(f"{key}," + ",".join(vals) + "\n")
        backtest = _read_json(self._p("backtest", "summary.json")) if self._p("backtest", "summary.json").exists() \
            else None
        _write_json(d / "summary.json", {"cutoff": cut, "by_cutoff": table, "backtest": backtest})
        return {"cutoffs": len(cutoffs)}

    # orchestration ---------------------------------------------------------
    def run(self, name: str) -> dict:
        if name == "all":
            names = STAGES if self.cfg.generator_spec() is not None else STAGES[1:]
            out = {}
            for n in names:
                out[n] = self.run(n)
            return out
        if name not in STAGES:
            raise StageError(f"unknown stage {name!r}")
        t0 = time.perf_counter()
        rows = getattr(self, name)()
        elapsed = time.perf_counter() - t0
        log.info("%s done in %.2fs: %s", name, elapsed, rows)
        self._record(name, rows, elapsed)
        return rows

    def _record(self, name, rows, elapsed) -> None:
        path = self._p("manifest.json")
        manifest = _read_json(path) if path.exists() else {}
        manifest["config_sha256"] = self.cfg.digest()
        manifest["seed"] = self.cfg.seed
        manifest.setdefault("stages", {})[name] = rows
        manifest.setdefault("timings", {})[name] = round(elapsed, 4)
        _write_json(path, manifest)
