"""Subset breakdowns, stability of nondeterministic output, and resampling.

Global metrics can hide systematic failures inside subgroups, so
``subset_metrics`` breaks the standard estimates down by a case attribute
and screens whether errors cluster by category (chi-squared, switching to a
seeded permutation test when expected cells are small). ``stability``
summarizes label agreement across repeated runs of a nondeterministic
classifier. ``resampling_variability`` quantifies evaluation-set sampling
noise via bootstrap or k-fold splits of the evaluation set; it deliberately
does not retrain anything, so it measures evaluation variability, not
model-fitting variability.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import chi2_contingency

from .datamodel import Dataset, ReferenceLabel
from .errors import InfeasibleError, InputError
from .metrics import PROPORTION_METRICS, confusion, estimate_metric, metric_from_counts
from .provenance import derive_seed, replicate_rng

UNKNOWN_CATEGORY = "unknown"


@dataclass(frozen=True, slots=True)
class HeterogeneityResult:
    flagged: bool
    p_value: float
    test_name: str
    alpha: float

    def to_json_dict(self) -> dict:
        return {
            "flagged": self.flagged,
            "p_value": self.p_value,
            "test": self.test_name,
            "alpha": self.alpha,
        }


@dataclass(slots=True)
class SubsetReport:
    """Per-category metric estimates plus an error-clustering screen."""

    attribute: str
    categories: dict  # category -> {"n": int, "counts": ConfusionCounts, "metrics": {name: MetricEstimate}}
    heterogeneity: HeterogeneityResult
    total_evaluable: int

    def to_json_dict(self) -> dict:
        return {
            "attribute": self.attribute,
            "total_evaluable": self.total_evaluable,
            "heterogeneity": self.heterogeneity.to_json_dict(),
            "categories": {
                category: {
                    "n": entry["n"],
                    "metrics": {
                        name: est.to_json_dict(name) for name, est in entry["metrics"].items()
                    },
                }
                for category, entry in self.categories.items()
            },
        }

    def to_markdown(self) -> str:
        lines = [f"## Subset breakdown by `{self.attribute}`", ""]
        h = self.heterogeneity
        lines.append(
            f"Error-clustering screen: p={h.p_value!r} ({h.test_name}); "
            f"{'heterogeneity flagged' if h.flagged else 'no heterogeneity flagged'} at alpha={h.alpha}"
        )
        lines.append("")
        metric_names = sorted({m for e in self.categories.values() for m in e["metrics"]})
        lines.append("| category | n | " + " | ".join(metric_names) + " |")
        lines.append("|---" * (2 + len(metric_names)) + "|")
        for category in sorted(self.categories):
            entry = self.categories[category]
            cells = []
            for name in metric_names:
                est = entry["metrics"].get(name)
                cells.append("-" if est is None or est.value is None else repr(est.value))
            lines.append(f"| {category} | {entry['n']} | " + " | ".join(cells) + " |")
        return "\n".join(lines) + "\n"


def _chi2_from_error_counts(err_by_cat: np.ndarray, nj: np.ndarray, total_err: float, n: int) -> float:
    stat = 0.0
    ok_by_cat = nj - err_by_cat
    total_ok = n - total_err
    for total, observed in ((total_err, err_by_cat), (total_ok, ok_by_cat)):
        if total == 0:
            continue
        expected = nj * total / n
        stat += float(((observed - expected) ** 2 / expected).sum())
    return stat


def _heterogeneity_screen(
    table: np.ndarray, alpha: float, n_permutations: int, seed: int
) -> HeterogeneityResult:
    """Chi-squared screen of the error-indicator x category table.

    Falls back to a seeded Monte Carlo permutation p-value whenever any
    expected cell drops below 5, which is the norm for rare-event errors.
    """
    table = table[:, table.sum(axis=0) > 0]
    if table.shape[1] < 2 or table.sum(axis=1).min() == 0:
        return HeterogeneityResult(False, 1.0, "degenerate (single category or no variation)", alpha)

    chi2, p_value, _, expected = chi2_contingency(table, correction=False)
    test_name = "chi-squared"
    if expected.min() < 5:
        test_name = "permutation (Monte Carlo)"
        rng = replicate_rng(derive_seed(seed, "heterogeneity"), 0)
        nj = table.sum(axis=0)
        n = int(nj.sum())
        categories = np.repeat(np.arange(table.shape[1]), nj.astype(int))
        errors = np.concatenate(
            [
                np.concatenate([np.ones(int(table[1, j])), np.zeros(int(table[0, j]))])
                for j in range(table.shape[1])
            ]
        )
        total_err = float(errors.sum())
        count_ge = 0
        for _ in range(n_permutations):
            perm = rng.permutation(errors)
            err_by_cat = np.bincount(categories, weights=perm, minlength=table.shape[1])
            stat = _chi2_from_error_counts(err_by_cat, nj, total_err, n)
            if stat >= chi2 - 1e-12:
                count_ge += 1
        p_value = (1 + count_ge) / (1 + n_permutations)
    return HeterogeneityResult(bool(p_value < alpha), float(p_value), test_name, alpha)


def subset_metrics(
    dataset: Dataset,
    attribute: str,
    metrics: Sequence[str] = ("recall", "precision", "specificity"),
    alpha: float = 0.05,
    n_permutations: int = 2000,
    seed: int = 0,
    ci_level: float = 0.95,
) -> SubsetReport:
    """Break the requested metrics down by one subgroup attribute.

    Cases missing the attribute form their own "unknown" category, so the
    categories always partition the evaluable cases.
    """
    for m in metrics:
        if m not in PROPORTION_METRICS:
            raise InputError(f"unknown metric {m!r} (expected one of {PROPORTION_METRICS})")
    evaluable = [c for c in dataset.cases if c.evaluable]
    if not evaluable:
        raise InputError("dataset has no evaluable cases")
    if not any(attribute in c.subgroups for c in evaluable):
        raise InputError(f"attribute {attribute!r} is absent from every case")

    groups: dict[str, list] = {}
    for case in evaluable:
        groups.setdefault(case.subgroups.get(attribute, UNKNOWN_CATEGORY), []).append(case)

    categories: dict[str, dict] = {}
    table = np.zeros((2, len(groups)), dtype=float)
    for j, category in enumerate(sorted(groups)):
        cases = groups[category]
        sub = dataset.replace_cases(cases)
        counts = confusion(sub)
        ests = {
            m: estimate_metric(sub, m, ci_level=ci_level, seed=derive_seed(seed, f"subset:{category}"))
            for m in metrics
        }
        categories[category] = {"n": len(cases), "counts": counts, "metrics": ests}
        errors = sum(
            1
            for c in cases
            if c.predicted != (c.reference is ReferenceLabel.POSITIVE)
        )
        table[1, j] = errors
        table[0, j] = len(cases) - errors

    heterogeneity = _heterogeneity_screen(table, alpha, n_permutations, seed)
    return SubsetReport(
        attribute=attribute,
        categories=categories,
        heterogeneity=heterogeneity,
        total_evaluable=len(evaluable),
    )


@dataclass(frozen=True, slots=True)
class StabilityReport:
    """Label agreement across repeated executions."""

    n_runs: int
    n_cases: int
    unanimity_rate: float
    pairwise_agreement: float
    flip_counts: Mapping[str, int]

    def to_json_dict(self) -> dict:
        return {
            "n_runs": self.n_runs,
            "n_cases": self.n_cases,
            "unanimity_rate": self.unanimity_rate,
            "pairwise_agreement": self.pairwise_agreement,
            "flip_counts": dict(self.flip_counts),
        }


def stability(dataset: Dataset) -> StabilityReport:
    """Unanimity and mean pairwise agreement of repeated-run labels.

    Every non-excluded case must carry the same number of repeated labels
    (at least 2 runs). Reference labels play no role: stability is a
    property of the classifier's output alone.
    """
    cases = [c for c in dataset.cases if c.reference is not ReferenceLabel.EXCLUDED]
    if not cases:
        raise InputError("dataset has no cases with repeated labels")
    run_counts = set()
    for case in cases:
        if case.repeated_labels is None:
            raise InputError(f"case {case.case_id!r} has no repeated_labels")
        run_counts.add(len(case.repeated_labels))
    if len(run_counts) != 1:
        raise InputError(f"unequal run counts across cases: {sorted(run_counts)}")
    n_runs = run_counts.pop()
    if n_runs < 2:
        raise InputError("stability needs at least 2 runs per case")

    unanimous = 0
    agreement_sum = 0.0
    flip_counts: dict[str, int] = {}
    pair_total = n_runs * (n_runs - 1) / 2
    for case in cases:
        labels = case.repeated_labels
        ones = sum(labels)
        zeros = n_runs - ones
        if ones == 0 or zeros == 0:
            unanimous += 1
        else:
            flip_counts[case.case_id] = min(ones, zeros)
        agreeing_pairs = ones * (ones - 1) / 2 + zeros * (zeros - 1) / 2
        agreement_sum += agreeing_pairs / pair_total
    return StabilityReport(
        n_runs=n_runs,
        n_cases=len(cases),
        unanimity_rate=unanimous / len(cases),
        pairwise_agreement=agreement_sum / len(cases),
        flip_counts=flip_counts,
    )


@dataclass(slots=True)
class ResamplingSummary:
    """Distribution of a metric over evaluation-set resamples."""

    metric: str
    scheme: str
    n: int
    seed: int
    values: tuple[float, ...]
    mean: float
    std: float
    percentile_low: float
    percentile_high: float
    ci_level: float
    n_undefined: int

    def to_json_dict(self) -> dict:
        return {
            "metric": self.metric,
            "scheme": self.scheme,
            "n": self.n,
            "seed": self.seed,
            "mean": self.mean,
            "std": self.std,
            "percentile_low": self.percentile_low,
            "percentile_high": self.percentile_high,
            "ci_level": self.ci_level,
            "n_undefined": self.n_undefined,
            "values": list(self.values),
        }


def resampling_variability(
    dataset: Dataset,
    metric: str,
    scheme: str = "bootstrap",
    n: int = 200,
    seed: int = 0,
    ci_level: float = 0.95,
) -> ResamplingSummary:
    """Metric variability over bootstrap resamples or k-fold splits.

    Bootstrap draws n case-resamples of the evaluation set; k_fold computes
    the metric inside each of n seeded folds. Deterministic per seed.
    """
    if metric not in PROPORTION_METRICS:
        raise InputError(f"unknown metric {metric!r} (expected one of {PROPORTION_METRICS})")
    evaluable = [c for c in dataset.cases if c.evaluable]
    if not evaluable:
        raise InputError("dataset has no evaluable cases")

    values: list[float] = []
    if scheme == "bootstrap":
        rng = replicate_rng(derive_seed(seed, "resample-bootstrap"), 0)
        for _ in range(n):
            idx = rng.integers(0, len(evaluable), size=len(evaluable))
            sub = dataset.replace_cases([_reid(evaluable[i], pos) for pos, i in enumerate(idx)])
            est = metric_from_counts(confusion(sub), metric)
            values.append(float("nan") if est.value is None else est.value)
    elif scheme == "k_fold":
        if n > len(evaluable):
            raise InfeasibleError(f"k_fold with k={n} exceeds the {len(evaluable)} evaluable cases")
        if n < 2:
            raise InputError("k_fold needs k >= 2")
        rng = replicate_rng(derive_seed(seed, "resample-kfold"), 0)
        order = rng.permutation(len(evaluable))
        folds = np.array_split(order, n)
        for fold in folds:
            sub = dataset.replace_cases([evaluable[int(i)] for i in fold])
            est = metric_from_counts(confusion(sub), metric)
            values.append(float("nan") if est.value is None else est.value)
    else:
        raise InputError(f"unknown scheme {scheme!r} (expected 'bootstrap' or 'k_fold')")

    arr = np.array(values, dtype=float)
    defined = arr[np.isfinite(arr)]
    n_undefined = int(arr.size - defined.size)
    if defined.size == 0:
        raise InfeasibleError(f"metric {metric!r} was undefined in every resample")
    alpha = (1.0 - ci_level) / 2.0
    return ResamplingSummary(
        metric=metric,
        scheme=scheme,
        n=n,
        seed=seed,
        values=tuple(float(v) for v in arr),
        mean=float(defined.mean()),
        std=float(defined.std(ddof=1)) if defined.size > 1 else 0.0,
        percentile_low=float(np.quantile(defined, alpha)),
        percentile_high=float(np.quantile(defined, 1.0 - alpha)),
        ci_level=ci_level,
        n_undefined=n_undefined,
    )


def _reid(case, position: int):
    """Bootstrap resamples repeat cases; give copies unique ids."""
    return replace(case, case_id=f"{case.case_id}#{position}")
