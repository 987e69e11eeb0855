"""Structured case-level examination: sampling, review sheets, aggregation.

Human review of concrete classifications complements summary metrics. This
module draws seeded stratified samples of false positives, false negatives,
true positives (and optionally true negatives), emits a CSV review sheet,
re-ingests the annotated sheet, and aggregates diagnostic tags into raw and
weight-projected frequencies.

Only reference-labeled cases fall into the four confusion cells; ambiguous
cases stay visible in datasets and reports but have no cell, and excluded
cases are invisible downstream. Reviewer verdicts never mutate the dataset
they came from: ``apply_verdicts`` produces a new dataset version instead.
"""

from __future__ import annotations

import csv
import enum
import math
import warnings as _warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .datamodel import Dataset, EvaluationCase, ReferenceLabel
from .errors import InputError
from .metrics import wilson_interval
from .provenance import config_hash, derive_seed, replicate_rng

CELLS = ("FP", "FN", "TP", "TN")
BENCHMARK_CELLS = (
    "model+/benchmark+",
    "model+/benchmark-",
    "model-/benchmark+",
    "model-/benchmark-",
)
DISAGREEMENT_CELLS = ("model+/benchmark-", "model-/benchmark+")

TAG_COLUMNS = ("never_event", "unexpected_error", "input_data_issue", "test_set_issue")
SHEET_COLUMNS_FIXED = ("reviewer",) + TAG_COLUMNS + ("triviality", "note", "verdict")

REMEDIAL_ACTIONS = {
    "test_set_issue": "update annotations/guidelines",
    "input_data_issue": "data quality improvement",
    "unexpected_error": "re-training/threshold review",
    "never_event": "escalate",
}


class TagCategory(enum.Enum):
    NEVER_EVENT = "never_event"
    UNEXPECTED_ERROR = "unexpected_error"
    INPUT_DATA_ISSUE = "input_data_issue"
    TEST_SET_ISSUE = "test_set_issue"


class Triviality(enum.Enum):
    TRIVIAL = "trivial"
    NON_TRIVIAL = "non_trivial"
    UNCLEAR = "unclear"


@dataclass(frozen=True, slots=True)
class ScleConfig:
    """Requested review sample sizes and stratification options."""

    n_fp: int = 0
    n_fn: int = 0
    n_tp: int = 0
    n_tn: int = 0
    substratify_by: tuple[str, ...] = ()
    boundary_bins: int | None = None
    benchmark_mode: bool = False
    disagreement_oversample_factor: float = 1.0
    seed: int = 0

    def __post_init__(self):
        for name in ("n_fp", "n_fn", "n_tp", "n_tn"):
            if getattr(self, name) < 0:
                raise InputError(f"{name} must be >= 0")
        if self.n_fp + self.n_fn + self.n_tp <= 0:
            raise InputError("at least one of n_fp, n_fn, n_tp must be positive")
        if self.boundary_bins is not None and self.boundary_bins < 2:
            raise InputError("boundary_bins must be >= 2 when given")
        if self.disagreement_oversample_factor < 1.0:
            raise InputError("disagreement_oversample_factor must be >= 1")
        object.__setattr__(self, "substratify_by", tuple(self.substratify_by))

    @property
    def total_requested(self) -> int:
        return self.n_fp + self.n_fn + self.n_tp + self.n_tn

    def to_json_dict(self) -> dict:
        return {
            "n_fp": self.n_fp,
            "n_fn": self.n_fn,
            "n_tp": self.n_tp,
            "n_tn": self.n_tn,
            "substratify_by": list(self.substratify_by),
            "boundary_bins": self.boundary_bins,
            "benchmark_mode": self.benchmark_mode,
            "disagreement_oversample_factor": self.disagreement_oversample_factor,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ScleConfig":
        return cls(
            n_fp=int(data.get("n_fp", 0)),
            n_fn=int(data.get("n_fn", 0)),
            n_tp=int(data.get("n_tp", 0)),
            n_tn=int(data.get("n_tn", 0)),
            substratify_by=tuple(data.get("substratify_by", ()) or ()),
            boundary_bins=int(data["boundary_bins"]) if data.get("boundary_bins") else None,
            benchmark_mode=bool(data.get("benchmark_mode", False)),
            disagreement_oversample_factor=float(data.get("disagreement_oversample_factor", 1.0)),
            seed=int(data.get("seed", 0)),
        )


@dataclass(frozen=True, slots=True)
class ScleRow:
    case_id: str
    cell: str
    benchmark_cell: str | None
    strata: Mapping[str, str]
    sampling_weight: float

    def to_json_dict(self) -> dict:
        return {
            "case_id": self.case_id,
            "cell": self.cell,
            "benchmark_cell": self.benchmark_cell,
            "strata": dict(self.strata),
            "sampling_weight": self.sampling_weight,
        }


@dataclass(frozen=True, slots=True)
class ScleSample:
    """A drawn review sample with its provenance."""

    rows: tuple[ScleRow, ...]
    config: ScleConfig
    seed: int
    cell_population_sizes: Mapping[str, int]
    cell_sample_sizes: Mapping[str, int]
    shortfalls: Mapping[str, tuple[int, int]]  # cell -> (requested, obtained)

    @property
    def config_hash(self) -> str:
        return config_hash(
            {
                "config": self.config.to_json_dict(),
                "seed": self.seed,
                "case_ids": [r.case_id for r in self.rows],
            }
        )

    def to_json_dict(self) -> dict:
        return {
            "kind": "scle_sample",
            "seed": self.seed,
            "config": self.config.to_json_dict(),
            "config_hash": self.config_hash,
            "cell_population_sizes": dict(self.cell_population_sizes),
            "cell_sample_sizes": dict(self.cell_sample_sizes),
            "shortfalls": {k: list(v) for k, v in self.shortfalls.items()},
            "rows": [r.to_json_dict() for r in self.rows],
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "ScleSample":
        if data.get("kind") != "scle_sample":
            raise InputError("not a serialized review sample")
        rows = tuple(
            ScleRow(
                case_id=r["case_id"],
                cell=r["cell"],
                benchmark_cell=r.get("benchmark_cell"),
                strata=dict(r.get("strata", {})),
                sampling_weight=float(r["sampling_weight"]),
            )
            for r in data["rows"]
        )
        return cls(
            rows=rows,
            config=ScleConfig.from_dict(data["config"]),
            seed=int(data["seed"]),
            cell_population_sizes={k: int(v) for k, v in data["cell_population_sizes"].items()},
            cell_sample_sizes={k: int(v) for k, v in data["cell_sample_sizes"].items()},
            shortfalls={k: (int(v[0]), int(v[1])) for k, v in data["shortfalls"].items()},
        )


@dataclass(frozen=True, slots=True)
class ScleAnnotation:
    """One reviewed case: category tags, triviality, note, optional verdict."""

    case_id: str
    reviewer: str
    categories: tuple[TagCategory, ...] = ()
    triviality: Triviality | None = None
    note: str = ""
    verdict: ReferenceLabel | None = None


def _cell_of(case: EvaluationCase) -> str:
    positive = case.reference is ReferenceLabel.POSITIVE
    if case.predicted:
        return "TP" if positive else "FP"
    return "FN" if positive else "TN"


def _benchmark_cell_of(case: EvaluationCase) -> str:
    m = "+" if case.predicted else "-"
    b = "+" if case.benchmark_predicted else "-"
    return f"model{m}/benchmark{b}"


def _largest_remainder(total: int, sizes: Sequence[int], keys: Sequence) -> list[int]:
    """Proportional integer allocation over strata; sums exactly to total."""
    n = sum(sizes)
    if n == 0 or total == 0:
        return [0] * len(sizes)
    quotas = [total * s / n for s in sizes]
    base = [math.floor(q) for q in quotas]
    leftover = total - sum(base)
    order = sorted(
        range(len(sizes)),
        key=lambda i: (-(quotas[i] - base[i]), keys[i]),
    )
    for i in order:
        if leftover == 0:
            break
        if base[i] < sizes[i]:
            base[i] += 1
            leftover -= 1
    return base


def _effective_threshold(dataset: Dataset) -> float | None:
    """Lowest score among predicted positives: the threshold in effect."""
    positives = [c.score for c in dataset.cases if c.predicted and c.score is not None]
    return min(positives) if positives else None


def _boundary_bin(rank: int, n: int, bins: int) -> int:
    return min(bins - 1, rank * bins // n)


def _benchmark_targets(config: ScleConfig) -> dict[str, int]:
    """Oversampled disagreement-cell targets, normalized to the requested total."""
    factor = config.disagreement_oversample_factor
    raw = {
        cell: (factor if cell in DISAGREEMENT_CELLS else 1.0) for cell in BENCHMARK_CELLS
    }
    total = config.total_requested
    weights = [raw[c] for c in BENCHMARK_CELLS]
    quotas = [total * w / sum(weights) for w in weights]
    base = [math.floor(q) for q in quotas]
    leftover = total - sum(base)
    order = sorted(range(4), key=lambda i: (-(quotas[i] - base[i]), BENCHMARK_CELLS[i]))
    for i in order:
        if leftover == 0:
            break
        base[i] += 1
        leftover -= 1
    return dict(zip(BENCHMARK_CELLS, base))


def draw_sample(dataset: Dataset, config: ScleConfig) -> ScleSample:
    """Seeded stratified sample of classifications for human review.

    Each requested cell is sampled uniformly without replacement; with
    sub-stratification the cell's target is spread proportionally across
    strata by largest-remainder rounding, and with boundary bins the most
    boundary-distant ("confident") bin always contributes at least one case
    when it is nonempty. Cell shortfalls are reported, never padded.
    """
    evaluable = [c for c in dataset.cases if c.evaluable]
    for case in evaluable:
        if case.predicted is None:
            raise InputError(f"case {case.case_id!r} has no predicted label")
    if config.benchmark_mode:
        for case in evaluable:
            if case.benchmark_predicted is None:
                raise InputError(
                    f"benchmark_mode requires benchmark labels; case {case.case_id!r} has none"
                )
    if config.boundary_bins is not None and any(c.score is None for c in evaluable):
        missing = next(c.case_id for c in evaluable if c.score is None)
        raise InputError(f"boundary_bins requires scored cases; case {missing!r} has no score")

    if config.benchmark_mode:
        cell_names: tuple[str, ...] = BENCHMARK_CELLS
        targets = _benchmark_targets(config)
        cell_key = _benchmark_cell_of
    else:
        cell_names = CELLS
        targets = {"FP": config.n_fp, "FN": config.n_fn, "TP": config.n_tp, "TN": config.n_tn}
        cell_key = _cell_of

    populations: dict[str, list[EvaluationCase]] = {name: [] for name in cell_names}
    for case in evaluable:
        populations[cell_key(case)].append(case)

    threshold = _effective_threshold(dataset) if config.boundary_bins is not None else None

    rng = replicate_rng(derive_seed(config.seed, "scle"), 0)
    rows: list[ScleRow] = []
    sample_sizes: dict[str, int] = {}
    shortfalls: dict[str, tuple[int, int]] = {}

    for cell in cell_names:
        requested = targets[cell]
        population = populations[cell]
        pop_size = len(population)
        if requested == 0:
            sample_sizes[cell] = 0
            continue
        ranks = (
            _distance_ranks(population, threshold) if config.boundary_bins is not None else None
        )
        if pop_size <= requested:
            chosen = list(population)
            if pop_size < requested:
                shortfalls[cell] = (requested, pop_size)
                _warnings.warn(
                    f"cell {cell}: only {pop_size} of {requested} requested cases available",
                    stacklevel=2,
                )
        else:
            chosen = _sample_cell(population, requested, config, ranks, rng)
        sample_sizes[cell] = len(chosen)
        weight = pop_size / len(chosen) if chosen else 0.0
        for case in chosen:
            strata = {}
            for attr in config.substratify_by:
                strata[attr] = case.subgroups.get(attr, "unknown")
            if ranks is not None:
                bin_index = _boundary_bin(ranks[case.case_id], pop_size, config.boundary_bins)
                strata["boundary_bin"] = f"bin_{bin_index}"
            rows.append(
                ScleRow(
                    case_id=case.case_id,
                    cell=cell if not config.benchmark_mode else _cell_of(case),
                    benchmark_cell=_benchmark_cell_of(case) if config.benchmark_mode else None,
                    strata=strata,
                    sampling_weight=weight,
                )
            )

    return ScleSample(
        rows=tuple(rows),
        config=config,
        seed=config.seed,
        cell_population_sizes={c: len(populations[c]) for c in cell_names},
        cell_sample_sizes=sample_sizes,
        shortfalls=shortfalls,
    )


def _distance_ranks(population: list[EvaluationCase], threshold: float | None) -> dict[str, int]:
    t = threshold if threshold is not None else 0.0
    ordered = sorted(population, key=lambda c: (abs((c.score or 0.0) - t), c.case_id))
    return {c.case_id: i for i, c in enumerate(ordered)}


def _sample_cell(
    population: list[EvaluationCase],
    requested: int,
    config: ScleConfig,
    ranks: dict[str, int] | None,
    rng: np.random.Generator,
) -> list[EvaluationCase]:
    strata: dict[tuple, list[EvaluationCase]] = {}
    for case in population:
        key_parts: list[str] = [case.subgroups.get(a, "unknown") for a in config.substratify_by]
        if config.boundary_bins is not None:
            assert ranks is not None
            key_parts.append(
                f"bin_{_boundary_bin(ranks[case.case_id], len(population), config.boundary_bins):06d}"
            )
        strata.setdefault(tuple(key_parts), []).append(case)

    keys = sorted(strata.keys())
    sizes = [len(strata[k]) for k in keys]
    alloc = _largest_remainder(requested, sizes, keys)

    if config.boundary_bins is not None and requested >= 1:
        # the most boundary-distant bin holds the "confident" calls; keep it visible
        top_bin = max(k[-1] for k in keys)
        top_idx = [i for i, k in enumerate(keys) if k[-1] == top_bin]
        if top_idx and all(alloc[i] == 0 for i in top_idx):
            donor = max(
                (i for i in range(len(keys)) if alloc[i] > 0),
                key=lambda i: (alloc[i], keys[i]),
                default=None,
            )
            if donor is not None:
                alloc[donor] -= 1
                alloc[top_idx[0]] += 1

    chosen: list[EvaluationCase] = []
    for key, take in zip(keys, alloc):
        if take == 0:
            continue
        group = strata[key]
        idx = rng.choice(len(group), size=take, replace=False)
        chosen.extend(group[int(i)] for i in sorted(idx))
    return chosen


# --- review sheet round trip -------------------------------------------------

_FLAG_TRUE = {"1", "true"}
_FLAG_FALSE = {"", "0", "false"}


def emit_review_sheet(
    sample: ScleSample,
    dataset: Dataset,
    context_fields: Sequence[str] = (),
    path: str | Path = "review_sheet.csv",
    generated_at: str | None = None,
) -> Path:
    """Write the annotation sheet: context columns plus empty tag columns.

    A three-line comment header records the seed, the sample's config hash,
    and the generation timestamp; ingestion verifies the hash so annotations
    cannot be applied to the wrong sample.
    """
    by_id = {c.case_id: c for c in dataset.cases}
    known_subgroups = {name for c in dataset.cases for name in c.subgroups}
    metadata = dataset.metadata
    for fieldname in context_fields:
        if (
            fieldname not in known_subgroups
            and fieldname not in metadata
            and fieldname not in ("score", "stratum_id")
        ):
            raise InputError(f"unknown context field {fieldname!r}")

    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# seed: {sample.seed}\n")
        fh.write(f"# config_hash: {sample.config_hash}\n")
        fh.write(f"# generated_at: {generated_at or 'unspecified'}\n")
        writer = csv.writer(fh)
        header = ["case_id", "cell", "benchmark_cell", *context_fields, *SHEET_COLUMNS_FIXED]
        writer.writerow(header)
        for row in sample.rows:
            case = by_id.get(row.case_id)
            if case is None:
                raise InputError(f"sampled case {row.case_id!r} is not in the dataset")
            context = []
            for fieldname in context_fields:
                if fieldname == "score":
                    context.append("" if case.score is None else repr(case.score))
                elif fieldname == "stratum_id":
                    context.append(case.stratum_id or "")
                elif fieldname in case.subgroups:
                    context.append(case.subgroups[fieldname])
                else:
                    context.append(str(metadata.get(fieldname, "")))
            writer.writerow(
                [row.case_id, row.cell, row.benchmark_cell or "", *context]
                + [""] * len(SHEET_COLUMNS_FIXED)
            )
    return path


def ingest_annotations(sheet: str | Path, sample: ScleSample) -> list[ScleAnnotation]:
    """Parse an annotated review sheet back into annotations.

    Rows left completely untouched yield no annotation. Unknown tag values
    and duplicate or unknown case ids are rejected with their row numbers;
    a true-positive row that was annotated without a triviality judgment is
    flagged with a warning.
    """
    sheet = Path(sheet)
    lines = sheet.read_text(encoding="utf-8").splitlines()
    header_meta: dict[str, str] = {}
    body_start = 0
    for i, line in enumerate(lines):
        if line.startswith("#"):
            if ":" in line:
                key, _, value = line[1:].partition(":")
                header_meta[key.strip()] = value.strip()
            body_start = i + 1
        else:
            break
    sheet_hash = header_meta.get("config_hash", "")
    if sheet_hash != sample.config_hash:
        raise InputError(
            f"sheet config_hash {sheet_hash!r} does not match sample config_hash "
            f"{sample.config_hash!r}"
        )

    cells_by_id = {r.case_id: r.cell for r in sample.rows}
    reader = csv.DictReader(lines[body_start:])
    annotations: list[ScleAnnotation] = []
    seen: set[str] = set()
    problems: list[str] = []
    for offset, raw in enumerate(reader):
        row_number = body_start + 2 + offset  # header line + 1-based
        case_id = (raw.get("case_id") or "").strip()
        if case_id not in cells_by_id:
            problems.append(f"row {row_number}: case_id {case_id!r} is not part of the sample")
            continue
        if case_id in seen:
            problems.append(f"row {row_number}: duplicate case_id {case_id!r}")
            continue
        seen.add(case_id)

        categories: list[TagCategory] = []
        bad = False
        for column in TAG_COLUMNS:
            value = (raw.get(column) or "").strip().lower()
            if value in _FLAG_TRUE:
                categories.append(TagCategory(column))
            elif value not in _FLAG_FALSE:
                problems.append(
                    f"row {row_number}: field {column!r}: unknown tag value {raw.get(column)!r}"
                )
                bad = True

        triviality_raw = (raw.get("triviality") or "").strip().lower()
        triviality: Triviality | None = None
        if triviality_raw:
            try:
                triviality = Triviality(triviality_raw)
            except ValueError:
                problems.append(
                    f"row {row_number}: field 'triviality': unknown value {raw.get('triviality')!r}"
                )
                bad = True

        verdict_raw = (raw.get("verdict") or "").strip()
        verdict: ReferenceLabel | None = None
        if verdict_raw:
            try:
                verdict = ReferenceLabel.parse(verdict_raw)
            except InputError:
                problems.append(
                    f"row {row_number}: field 'verdict': unknown value {verdict_raw!r}"
                )
                bad = True

        if bad:
            continue
        note = (raw.get("note") or "").strip()
        reviewer = (raw.get("reviewer") or "").strip()
        touched = bool(categories or triviality or note or verdict or reviewer)
        if not touched:
            continue
        if cells_by_id[case_id] == "TP" and triviality is None:
            _warnings.warn(
                f"row {row_number}: true-positive case {case_id!r} annotated without a "
                "triviality judgment",
                stacklevel=2,
            )
        annotations.append(
            ScleAnnotation(
                case_id=case_id,
                reviewer=reviewer,
                categories=tuple(categories),
                triviality=triviality,
                note=note,
                verdict=verdict,
            )
        )
    if problems:
        raise InputError("; ".join(problems))
    return annotations


# --- aggregation --------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class TagProjection:
    raw_count: int
    projected: float
    ci_low: float
    ci_high: float

    def to_json_dict(self) -> dict:
        return {
            "raw_count": self.raw_count,
            "projected": self.projected,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
        }


@dataclass(slots=True)
class ScleSummary:
    """Aggregated review findings, raw and projected to the cell populations."""

    no_findings: bool
    n_annotations: int
    per_cell_tags: dict  # cell -> tag -> TagProjection
    triviality_rate: float | None
    triviality_ci: tuple[float, float] | None
    n_tp_sampled: int
    never_events: list[dict]
    per_subgroup_tags: dict  # attr -> category -> tag -> count
    remedial_actions: list[str]
    verdict_changes: int
    seed: int

    def to_json_dict(self) -> dict:
        return {
            "kind": "scle_summary",
            "no_findings": self.no_findings,
            "n_annotations": self.n_annotations,
            "per_cell_tags": {
                cell: {tag: proj.to_json_dict() for tag, proj in tags.items()}
                for cell, tags in self.per_cell_tags.items()
            },
            "triviality_rate": self.triviality_rate,
            "triviality_ci": list(self.triviality_ci) if self.triviality_ci else None,
            "n_tp_sampled": self.n_tp_sampled,
            "never_events": self.never_events,
            "per_subgroup_tags": self.per_subgroup_tags,
            "remedial_actions": self.remedial_actions,
            "verdict_changes": self.verdict_changes,
            "seed": self.seed,
        }

    def to_markdown(self) -> str:
        lines = ["## Case-level examination summary", ""]
        if self.no_findings:
            lines.append("No findings: no annotations were returned for this sample.")
            return "\n".join(lines) + "\n"
        lines.append(f"Annotations: {self.n_annotations}")
        if self.triviality_rate is not None:
            lo, hi = self.triviality_ci or (0.0, 1.0)
            lines.append(
                f"Triviality rate among sampled true positives: {self.triviality_rate!r} "
                f"(95% CI {lo!r} to {hi!r}, n={self.n_tp_sampled})"
            )
        if self.never_events:
            lines.append("")
            lines.append("### Never events (itemized)")
            for item in self.never_events:
                note = f" - {item['note']}" if item.get("note") else ""
                lines.append(f"- `{item['case_id']}` [{item['cell']}]{note}")
        if self.per_cell_tags:
            lines.append("")
            lines.append("### Tag frequencies by cell")
            lines.append("| cell | tag | raw | projected | ci_low | ci_high |")
            lines.append("|---|---|---|---|---|---|")
            for cell in sorted(self.per_cell_tags):
                for tag, proj in sorted(self.per_cell_tags[cell].items()):
                    lines.append(
                        f"| {cell} | {tag} | {proj.raw_count} | {proj.projected!r} "
                        f"| {proj.ci_low!r} | {proj.ci_high!r} |"
                    )
        if self.remedial_actions:
            lines.append("")
            lines.append("### Suggested remedial actions (advisory)")
            for action in self.remedial_actions:
                lines.append(f"- {action}")
        return "\n".join(lines) + "\n"


def aggregate(
    annotations: Sequence[ScleAnnotation],
    sample: ScleSample,
    n_resamples: int = 1000,
    ci_level: float = 0.95,
    seed: int | None = None,
) -> ScleSummary:
    """Aggregate diagnostic tags per cell with weighted population projections.

    Projections multiply raw tag counts by the cell's sampling weight; their
    intervals come from a seeded bootstrap over the cell's sampled rows.
    Never-event cases are always itemized individually, whatever their
    weight.
    """
    rows_by_id = {r.case_id: r for r in sample.rows}
    for ann in annotations:
        if ann.case_id not in rows_by_id:
            raise InputError(f"annotation for case {ann.case_id!r} is not part of the sample")
    ids = [a.case_id for a in annotations]
    if len(ids) != len(set(ids)):
        raise InputError("duplicate annotations for the same case_id")

    agg_seed = seed if seed is not None else derive_seed(sample.seed, "scle-aggregate")
    rng = replicate_rng(agg_seed, 0)
    n_tp_sampled = sum(1 for r in sample.rows if r.cell == "TP")

    if not annotations:
        return ScleSummary(
            no_findings=True,
            n_annotations=0,
            per_cell_tags={},
            triviality_rate=None,
            triviality_ci=None,
            n_tp_sampled=n_tp_sampled,
            never_events=[],
            per_subgroup_tags={},
            remedial_actions=[],
            verdict_changes=0,
            seed=agg_seed,
        )

    ann_by_id = {a.case_id: a for a in annotations}
    alpha = (1.0 - ci_level) / 2.0

    def sampling_cell(row: ScleRow) -> str:
        return row.benchmark_cell or row.cell

    per_cell_tags: dict[str, dict[str, TagProjection]] = {}
    cells_present = sorted({sampling_cell(r) for r in sample.rows})
    for cell in cells_present:
        cell_rows = [r for r in sample.rows if sampling_cell(r) == cell]
        n_sampled = len(cell_rows)
        if n_sampled == 0:
            continue
        weight = cell_rows[0].sampling_weight
        tags: dict[str, TagProjection] = {}
        for tag in TAG_COLUMNS:
            flags = np.array(
                [
                    ann_by_id.get(r.case_id) is not None
                    and TagCategory(tag) in ann_by_id[r.case_id].categories
                    for r in cell_rows
                ],
                dtype=float,
            )
            raw = int(flags.sum())
            if raw == 0:
                continue
            draws = rng.binomial(n_sampled, raw / n_sampled, size=n_resamples)
            projections = draws * weight
            tags[tag] = TagProjection(
                raw_count=raw,
                projected=raw * weight,
                ci_low=float(np.quantile(projections, alpha)),
                ci_high=float(np.quantile(projections, 1.0 - alpha)),
            )
        if tags:
            per_cell_tags[cell] = tags

    triviality_rate = None
    triviality_ci = None
    if n_tp_sampled > 0:
        trivial = sum(
            1
            for r in sample.rows
            if r.cell == "TP"
            and ann_by_id.get(r.case_id) is not None
            and ann_by_id[r.case_id].triviality is Triviality.TRIVIAL
        )
        triviality_rate = trivial / n_tp_sampled
        triviality_ci = wilson_interval(trivial, n_tp_sampled, ci_level)

    never_events = [
        {"case_id": a.case_id, "cell": rows_by_id[a.case_id].cell, "note": a.note}
        for a in annotations
        if TagCategory.NEVER_EVENT in a.categories
    ]

    per_subgroup: dict[str, dict[str, dict[str, int]]] = {}
    for attr in sample.config.substratify_by:
        breakdown: dict[str, dict[str, int]] = {}
        for row in sample.rows:
            ann = ann_by_id.get(row.case_id)
            if ann is None:
                continue
            category = row.strata.get(attr, "unknown")
            bucket = breakdown.setdefault(category, {})
            for tag in ann.categories:
                bucket[tag.value] = bucket.get(tag.value, 0) + 1
        if breakdown:
            per_subgroup[attr] = breakdown

    observed_tags = {t.value for a in annotations for t in a.categories}
    remedial = sorted(REMEDIAL_ACTIONS[t] for t in observed_tags)

    verdict_changes = sum(1 for a in annotations if a.verdict is not None)

    return ScleSummary(
        no_findings=False,
        n_annotations=len(annotations),
        per_cell_tags=per_cell_tags,
        triviality_rate=triviality_rate,
        triviality_ci=triviality_ci,
        n_tp_sampled=n_tp_sampled,
        never_events=never_events,
        per_subgroup_tags=per_subgroup,
        remedial_actions=remedial,
        verdict_changes=verdict_changes,
        seed=agg_seed,
    )


def annotations_to_json_dict(annotations: Sequence[ScleAnnotation]) -> dict:
    return {
        "kind": "scle_annotations",
        "annotations": [
            {
                "case_id": a.case_id,
                "reviewer": a.reviewer,
                "categories": [c.value for c in a.categories],
                "triviality": a.triviality.value if a.triviality else None,
                "note": a.note,
                "verdict": a.verdict.value if a.verdict else None,
            }
            for a in annotations
        ],
    }


def annotations_from_json_dict(data: dict) -> list[ScleAnnotation]:
    if data.get("kind") != "scle_annotations":
        raise InputError("not a serialized annotations document")
    out = []
    for a in data["annotations"]:
        out.append(
            ScleAnnotation(
                case_id=a["case_id"],
                reviewer=a.get("reviewer", ""),
                categories=tuple(TagCategory(c) for c in a.get("categories", [])),
                triviality=Triviality(a["triviality"]) if a.get("triviality") else None,
                note=a.get("note", ""),
                verdict=ReferenceLabel.parse(a["verdict"]) if a.get("verdict") else None,
            )
        )
    return out


def apply_verdicts(dataset: Dataset, annotations: Sequence[ScleAnnotation]) -> Dataset:
    """New dataset version with reviewer verdicts applied as reference labels.

    The input dataset is untouched; this is the only sanctioned way reviewer
    corrections reach the reference standard, keeping it auditable.
    """
    verdicts = {a.case_id: a.verdict for a in annotations if a.verdict is not None}
    unknown = set(verdicts) - {c.case_id for c in dataset.cases}
    if unknown:
        raise InputError(f"verdicts for unknown case ids: {sorted(unknown)}")
    new_cases = []
    for case in dataset.cases:
        verdict = verdicts.get(case.case_id)
        if verdict is None or verdict is case.reference:
            new_cases.append(case)
            continue
        new_cases.append(
            EvaluationCase(
                case_id=case.case_id,
                reference=verdict,
                score=case.score,
                predicted=case.predicted,
                benchmark_predicted=case.benchmark_predicted,
                stratum_id=case.stratum_id,
                subgroups=case.subgroups,
                repeated_labels=case.repeated_labels,
            )
        )
    metadata = dataset.metadata
    metadata["verdicts_applied"] = metadata.get("verdicts_applied", 0) + len(verdicts)
    return Dataset(new_cases, dataset.design, metadata)
