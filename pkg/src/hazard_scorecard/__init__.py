"""Discrete-time hazard credit scorecard.

Loan-month panels, backward weighted sampling of the exploded panel,
weighted logistic hazard fits and score-based evaluation.
"""
from .ingest import (IngestError, LabelResult, LoanHistory, LoanOrigination, MacroSeries, MonthlyCounts,
                     PerformanceRow, load_macro, monthly_counts, parse_loans, parse_performance,
                     validate_and_label)
from .panel import (DEFAULT_RATE_TABLE, Panel, SamplingError, SamplingRateTable, backward_weighted_sample,
                    explode_full, explode_panel, exploded_size, rate_for, stratified_split)
from .features import (PUBLISHED_INTERACTION, DesignMatrix, FeatureSpec, InteractionSpec, MacroTransformSpec,
                       build_design, fit_interaction, interaction_from_bad_rates, macro_transform, pspline, sato)
from .hazard_model import (CoefficientTable, ConvergenceError, FitError, SeparationError,
                           SingularInformationError, fit, horizon_pd, predict_hazard)
from .scorecard_eval import (ClassificationMetrics, ConfusionMatrix, ScoreScale, backtest,
                             classification_metrics, confusion_at, roc, score_band_table, to_score,
                             youden_cutoff)
from .synthgen import GeneratorSpec, generate, simulate
from .config import ConfigError, PipelineConfig
from .pipeline import Pipeline, StageError

__version__ = "0.1.0"
