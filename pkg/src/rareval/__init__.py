"""rareval: prevalence-aware statistical evaluation of rare-event classifiers.

Core workflow: ingest an evaluation dataset (``datamodel``), estimate
prevalence-corrected metrics with intervals (``metrics``), sweep thresholds
(``curves``), size comparison studies (``design``), sample cases for human
review (``scle``), probe robustness (``robustness``), and compile everything
into a checklist-driven report (``report``). ``synth`` generates seeded
populations with exact ground truth for verification.
"""

from .curves import CostSpec, CurvePoint, auc, pr_curve, rare_event_warnings, roc_curve, select_operating_point
from .datamodel import Dataset, EvaluationCase, ReferenceLabel, StratumSpec, apply_threshold, emit, ingest
from .design import (
    PairPrevalenceSpec,
    PrecisionStudyAssumptions,
    build_paired_precision_test,
    pair_prevalence,
    simulate_precision_power,
    solve_sample_size,
)
from .errors import EvaluationError, InfeasibleError, IngestError, InputError
from .metrics import (
    ConfusionCounts,
    MetricEstimate,
    bayes_adjusted_precision,
    bootstrap_metric,
    concordance_and_override,
    confusion,
    estimate_metric,
    f_beta,
    npv,
    precision,
    precision_at_k,
    recall,
    specificity,
    wilson_interval,
)
from .report import ChecklistItem, EvaluationOutputs, prefill_checklist, render_report
from .robustness import resampling_variability, stability, subset_metrics
from .scle import ScleAnnotation, ScleConfig, ScleSample, aggregate, draw_sample, emit_review_sheet, ingest_annotations
from .synth import EnrichmentRule, PopulationSpec, TruthSidecar, generate

__version__ = "0.1.0"

__all__ = [
    "CostSpec",
    "CurvePoint",
    "auc",
    "pr_curve",
    "rare_event_warnings",
    "roc_curve",
    "select_operating_point",
    "Dataset",
    "EvaluationCase",
    "ReferenceLabel",
    "StratumSpec",
    "apply_threshold",
    "emit",
    "ingest",
    "PairPrevalenceSpec",
    "PrecisionStudyAssumptions",
    "build_paired_precision_test",
    "pair_prevalence",
    "simulate_precision_power",
    "solve_sample_size",
    "EvaluationError",
    "InfeasibleError",
    "IngestError",
    "InputError",
    "ConfusionCounts",
    "MetricEstimate",
    "bayes_adjusted_precision",
    "bootstrap_metric",
    "concordance_and_override",
    "confusion",
    "estimate_metric",
    "f_beta",
    "npv",
    "precision",
    "precision_at_k",
    "recall",
    "specificity",
    "wilson_interval",
    "ChecklistItem",
    "EvaluationOutputs",
    "prefill_checklist",
    "render_report",
    "resampling_variability",
    "stability",
    "subset_metrics",
    "ScleAnnotation",
    "ScleConfig",
    "ScleSample",
    "aggregate",
    "draw_sample",
    "emit_review_sheet",
    "ingest_annotations",
    "EnrichmentRule",
    "PopulationSpec",
    "TruthSidecar",
    "generate",
    "__version__",
]
