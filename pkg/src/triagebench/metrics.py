"""Evaluation outputs computed from run records.

Accuracy is reported per technique, per model × technique, per group ×
technique and per model, with a 12 × 13 confusion matrix (true category ×
predicted category + UNPARSED) and per model × technique efficiency
aggregates. Percentages round half-up to one decimal via exact Decimal
arithmetic; means use math.fsum so results do not depend on record order.

UNPARSED finals count as incorrect, matching the binary correct/incorrect
presentation, and are additionally surfaced as an unparsed_percent column.
"""
from __future__ import annotations

import csv
import io
import math
import os
import tempfile
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .backend import ModelGroup, ModelSpec, builtin_model_registry
from .runner import RunRecord
from .taxonomy import CategoryCode

METRICS_SCHEMA_VERSION = 1

SCOPE_TECHNIQUE = "technique"
SCOPE_MODEL_TECHNIQUE = "model_technique"
SCOPE_GROUP_TECHNIQUE = "group_technique"
SCOPE_MODEL = "model"


class MetricsError(ValueError):
    """Unusable input for metric computation or rendering."""


def round1_percent(numerator: int, denominator: int) -> float:
    """100 * numerator / denominator, half-up to one decimal, exactly."""
    if denominator <= 0:
        raise MetricsError("denominator must be positive")
    frac = Decimal(numerator) * 100 / Decimal(denominator)
    return float(frac.quantize(Decimal("0.1"), rounding=ROUND_HALF_UP))


def mean(values: Sequence[float]) -> float:
    """Order-independent arithmetic mean (correctly rounded sum, then divide)."""
    if not values:
        raise MetricsError("mean of empty sequence")
    return math.fsum(values) / len(values)


@dataclass(frozen=True)
class AccuracyCell:
    scope_type: str
    scope_key: str
    n_total: int
    n_correct: int
    n_unparsed: int

    @property
    def accuracy_percent(self) -> float:
        return round1_percent(self.n_correct, self.n_total)

    @property
    def incorrect_percent(self) -> float:
        return round1_percent(self.n_total - self.n_correct, self.n_total)

    @property
    def unparsed_percent(self) -> float:
        return round1_percent(self.n_unparsed, self.n_total)

    def to_dict(self) -> dict:
        return {
            "scope_type": self.scope_type,
            "scope_key": self.scope_key,
            "n_total": self.n_total,
            "n_correct": self.n_correct,
            "n_unparsed": self.n_unparsed,
            "accuracy_percent": self.accuracy_percent,
            "unparsed_percent": self.unparsed_percent,
        }


@dataclass(frozen=True)
class EfficiencyCell:
    model: str
    technique: str
    n_records: int
    mean_latency_ms: float
    mean_response_chars: float
    total_turns: int

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "technique": self.technique,
            "n_records": self.n_records,
            "mean_latency_ms": self.mean_latency_ms,
            "mean_response_chars": self.mean_response_chars,
            "total_turns": self.total_turns,
        }


@dataclass(frozen=True)
class MetricsReport:
    by_technique: tuple[AccuracyCell, ...]
    by_model_technique: tuple[AccuracyCell, ...]
    by_group_technique: tuple[AccuracyCell, ...]
    by_model: tuple[AccuracyCell, ...]
    confusion: tuple[tuple[int, ...], ...]  # 12 true rows x 13 predicted cols
    efficiency: tuple[EfficiencyCell, ...]
    n_records: int

    def cells(self) -> tuple[AccuracyCell, ...]:
        return (
            self.by_technique
            + self.by_model_technique
            + self.by_group_technique
            + self.by_model
        )

    def to_dict(self) -> dict:
        return {
            "schema_version": METRICS_SCHEMA_VERSION,
            "n_records": self.n_records,
            "by_technique": [c.to_dict() for c in self.by_technique],
            "by_model_technique": [c.to_dict() for c in self.by_model_technique],
            "by_group_technique": [c.to_dict() for c in self.by_group_technique],
            "by_model": [c.to_dict() for c in self.by_model],
            "confusion": [list(row) for row in self.confusion],
            "efficiency": [e.to_dict() for e in self.efficiency],
        }


def registry_group_mapping(
    extra: Iterable[ModelSpec] = (),
) -> dict[str, ModelGroup]:
    mapping = {spec.name: spec.group for spec in builtin_model_registry()}
    for spec in extra:
        mapping[spec.name] = spec.group
    return mapping


def _resolve_group(
    record: RunRecord, registry: Mapping[str, ModelGroup] | None
) -> ModelGroup:
    group = record.trace.model_group
    if group is not None:
        return group
    if registry and record.trace.model in registry:
        return registry[record.trace.model]
    raise MetricsError(f"no group mapping for model {record.trace.model!r}")


def _accuracy_cells(
    scope_type: str, grouped: dict[str, list[RunRecord]]
) -> tuple[AccuracyCell, ...]:
    cells = []
    for key in sorted(grouped):
        records = grouped[key]
        cells.append(
            AccuracyCell(
                scope_type=scope_type,
                scope_key=key,
                n_total=len(records),
                n_correct=sum(1 for r in records if r.correct),
                n_unparsed=sum(
                    1 for r in records if r.trace.final is CategoryCode.UNPARSED
                ),
            )
        )
    return tuple(cells)


def compute_metrics(
    records: Sequence[RunRecord],
    registry: Mapping[str, ModelGroup] | None = None,
) -> MetricsReport:
    """Aggregate run records into the full metrics report.

    Pure function of its inputs; scopes with no records are simply absent,
    never zero-filled. The registry argument is only consulted for records
    whose trace does not already carry its model group.
    """
    if not records:
        raise MetricsError("no records to compute metrics from")

    by_technique: dict[str, list[RunRecord]] = {}
    by_model_technique: dict[str, list[RunRecord]] = {}
    by_group_technique: dict[str, list[RunRecord]] = {}
    by_model: dict[str, list[RunRecord]] = {}

    codes = CategoryCode.taxonomy_codes()
    row_index = {code: i for i, code in enumerate(codes)}
    col_index = dict(row_index)
    col_index[CategoryCode.UNPARSED] = len(codes)
    confusion = [[0] * (len(codes) + 1) for _ in codes]

    for record in records:
        technique = record.trace.technique.value
        model = record.trace.model
        group = _resolve_group(record, registry).value
        by_technique.setdefault(technique, []).append(record)
        by_model_technique.setdefault(f"{model}|{technique}", []).append(record)
        by_group_technique.setdefault(f"{group}|{technique}", []).append(record)
        by_model.setdefault(model, []).append(record)
        confusion[row_index[record.ground_truth]][col_index[record.trace.final]] += 1

    efficiency = []
    for key in sorted(by_model_technique):
        recs = by_model_technique[key]
        model, technique = key.split("|", 1)
        efficiency.append(
            EfficiencyCell(
                model=model,
                technique=technique,
                n_records=len(recs),
                mean_latency_ms=mean(
                    [r.trace.telemetry_totals.total_latency_ms for r in recs]
                ),
                mean_response_chars=mean(
                    [float(r.trace.telemetry_totals.total_response_chars) for r in recs]
                ),
                total_turns=sum(r.trace.rounds_used for r in recs),
            )
        )

    return MetricsReport(
        by_technique=_accuracy_cells(SCOPE_TECHNIQUE, by_technique),
        by_model_technique=_accuracy_cells(SCOPE_MODEL_TECHNIQUE, by_model_technique),
        by_group_technique=_accuracy_cells(SCOPE_GROUP_TECHNIQUE, by_group_technique),
        by_model=_accuracy_cells(SCOPE_MODEL, by_model),
        confusion=tuple(tuple(row) for row in confusion),
        efficiency=tuple(efficiency),
        n_records=len(records),
    )


# Published Group 1 / Group 2 accuracy figures used as informational
# reference points; bands are (low, high) with low == high for exact values.
@dataclass(frozen=True)
class ReferenceEntry:
    group: ModelGroup
    technique: str
    low: float
    high: float
    display: str


PAPER_REFERENCE: tuple[ReferenceEntry, ...] = (
    ReferenceEntry(ModelGroup.G1, "PHP", 61.7, 61.7, "61.7"),
    ReferenceEntry(ModelGroup.G1, "PRP", 59.0, 60.0, "59-60"),
    ReferenceEntry(ModelGroup.G1, "SHP", 59.0, 60.0, "59-60"),
    ReferenceEntry(ModelGroup.G1, "ZSL", 56.8, 56.8, "56.8"),
    ReferenceEntry(ModelGroup.G1, "HTP", 35.2, 35.2, "35.2"),
    ReferenceEntry(ModelGroup.G2, "PHP", 52.0, 54.0, "~53"),
    ReferenceEntry(ModelGroup.G2, "SHP", 52.0, 54.0, "~53"),
    ReferenceEntry(ModelGroup.G2, "PRP", 49.0, 51.0, "49-51"),
    ReferenceEntry(ModelGroup.G2, "ZSL", 49.0, 51.0, "49-51"),
    ReferenceEntry(ModelGroup.G2, "HTP", 18.9, 18.9, "18.9"),
)


@dataclass(frozen=True)
class ComparisonRow:
    group: str
    technique: str
    reference: str
    measured: float | None  # None when the run has no data for the scope

    @property
    def delta(self) -> float | None:
        """Signed distance to the reference value or band; 0 inside a band."""
        if self.measured is None:
            return None
        entry = next(
            e
            for e in PAPER_REFERENCE
            if e.group.value == self.group and e.technique == self.technique
        )
        if self.measured < entry.low:
            return round(self.measured - entry.low, 1)
        if self.measured > entry.high:
            return round(self.measured - entry.high, 1)
        return 0.0


def compare_to_reference(
    report: MetricsReport,
    reference: Sequence[ReferenceEntry] = PAPER_REFERENCE,
) -> tuple[ComparisonRow, ...]:
    """Side-by-side view of this run's group accuracies against the published
    figures. Purely informational, never a pass/fail gate."""
    measured = {c.scope_key: c.accuracy_percent for c in report.by_group_technique}
    return tuple(
        ComparisonRow(
            group=entry.group.value,
            technique=entry.technique,
            reference=entry.display,
            measured=measured.get(f"{entry.group.value}|{entry.technique}"),
        )
        for entry in reference
    )


def render_comparison_markdown(rows: Sequence[ComparisonRow]) -> str:
    lines = [
        "| Group | Technique | Reference | This run | Delta |",
        "| --- | --- | --- | --- | --- |",
    ]
    for row in rows:
        if row.measured is None:
            lines.append(
                f"| {row.group} | {row.technique} | {row.reference} "
                f"| no data | no data |"
            )
        else:
            lines.append(
                f"| {row.group} | {row.technique} | {row.reference} "
                f"| {row.measured:.1f} | {row.delta:+.1f} |"
            )
    return "\n".join(lines) + "\n"


CSV_COLUMNS = (
    "scope_type",
    "scope_key",
    "n_total",
    "n_correct",
    "accuracy_percent",
    "unparsed_percent",
    "mean_latency_ms",
    "mean_response_chars",
)


def render_csv(report: MetricsReport) -> str:
    """One row per accuracy cell; efficiency means filled where defined."""
    efficiency = {f"{e.model}|{e.technique}": e for e in report.efficiency}
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for cell in report.cells():
        eff = (
            efficiency.get(cell.scope_key)
            if cell.scope_type == SCOPE_MODEL_TECHNIQUE
            else None
        )
        writer.writerow(
            [
                cell.scope_type,
                cell.scope_key,
                cell.n_total,
                cell.n_correct,
                f"{cell.accuracy_percent:.1f}",
                f"{cell.unparsed_percent:.1f}",
                f"{eff.mean_latency_ms:.3f}" if eff else "",
                f"{eff.mean_response_chars:.1f}" if eff else "",
            ]
        )
    return buf.getvalue()


def render_markdown(
    report: MetricsReport, comparison: Sequence[ComparisonRow] | None = None
) -> str:
    lines = ["# Classification metrics", ""]
    lines.append(f"Records: {report.n_records}")
    lines.append("")

    lines.append("## Accuracy by technique")
    lines.append("")
    lines.append("| Technique | n | Correct | Accuracy % | Unparsed % |")
    lines.append("| --- | --- | --- | --- | --- |")
    for cell in report.by_technique:
        lines.append(
            f"| {cell.scope_key} | {cell.n_total} | {cell.n_correct} "
            f"| {cell.accuracy_percent:.1f} | {cell.unparsed_percent:.1f} |"
        )
    lines.append("")

    lines.append("## Accuracy by model and technique")
    lines.append("")
    lines.append("| Model | Technique | n | Correct | Accuracy % | Unparsed % |")
    lines.append("| --- | --- | --- | --- | --- | --- |")
    for cell in report.by_model_technique:
        model, technique = cell.scope_key.split("|", 1)
        lines.append(
            f"| {model} | {technique} | {cell.n_total} | {cell.n_correct} "
            f"| {cell.accuracy_percent:.1f} | {cell.unparsed_percent:.1f} |"
        )
    lines.append("")

    if report.by_group_technique:
        lines.append("## Accuracy by model group and technique")
        lines.append("")
        lines.append("| Group | Technique | n | Correct | Accuracy % |")
        lines.append("| --- | --- | --- | --- | --- |")
        for cell in report.by_group_technique:
            group, technique = cell.scope_key.split("|", 1)
            lines.append(
                f"| {group} | {technique} | {cell.n_total} | {cell.n_correct} "
                f"| {cell.accuracy_percent:.1f} |"
            )
        lines.append("")

    lines.append("## Confusion matrix (true rows, predicted columns)")
    lines.append("")
    codes = [c.value for c in CategoryCode.taxonomy_codes()]
    header = ["true\\pred", *codes, "UNPARSED"]
    lines.append("| " + " | ".join(header) + " |")
    lines.append("|" + " --- |" * len(header))
    for code, row in zip(codes, report.confusion):
        lines.append("| " + " | ".join([code, *[str(v) for v in row]]) + " |")
    lines.append("")

    lines.append("## Efficiency by model and technique")
    lines.append("")
    lines.append("| Model | Technique | n | Mean latency ms | Mean reply chars | Turns |")
    lines.append("| --- | --- | --- | --- | --- | --- |")
    for eff in report.efficiency:
        lines.append(
            f"| {eff.model} | {eff.technique} | {eff.n_records} "
            f"| {eff.mean_latency_ms:.3f} | {eff.mean_response_chars:.1f} "
            f"| {eff.total_turns} |"
        )
    lines.append("")

    if comparison is not None:
        lines.append("## Comparison with published reference figures")
        lines.append("")
        lines.append(render_comparison_markdown(comparison).rstrip("\n"))
        lines.append("")

    return "\n".join(lines)


def render_plot_data(report: MetricsReport) -> dict:
    """Plot-ready correct/incorrect pairs (each sums to 100.0 within rounding)."""

    def pair(cell: AccuracyCell) -> dict:
        return {
            "correct_percent": cell.accuracy_percent,
            "incorrect_percent": cell.incorrect_percent,
        }

    return {
        "schema_version": METRICS_SCHEMA_VERSION,
        "by_technique": {c.scope_key: pair(c) for c in report.by_technique},
        "by_model_technique": {
            c.scope_key: pair(c) for c in report.by_model_technique
        },
    }


def render_report(
    report: MetricsReport,
    out_dir: str | Path,
    formats: Iterable[str] = ("csv", "md", "plot-json"),
    comparison: Sequence[ComparisonRow] | None = None,
) -> list[Path]:
    """Write the requested artifacts to out_dir; all or nothing.

    Contents are rendered and staged to temporary files first, then moved
    into place, so an unwritable destination leaves no partial output.
    """
    from .util import canonical_dumps

    out_dir = Path(out_dir)
    wanted = list(formats)
    unknown = [f for f in wanted if f not in ("csv", "md", "plot-json")]
    if unknown:
        raise MetricsError(f"unknown report format(s): {', '.join(unknown)}")

    contents: dict[str, str] = {}
    if "csv" in wanted:
        contents["metrics.csv"] = render_csv(report)
    if "md" in wanted:
        contents["metrics.md"] = render_markdown(report, comparison)
    if "plot-json" in wanted:
        contents["plot_data.json"] = canonical_dumps(render_plot_data(report)) + "\n"

    out_dir.mkdir(parents=True, exist_ok=True)
    staged: list[tuple[str, str]] = []
    try:
        for name, text in contents.items():
            fd, tmp = tempfile.mkstemp(dir=out_dir, prefix=f".{name}.")
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                fh.write(text)
            staged.append((tmp, name))
        written = []
        for tmp, name in staged:
            os.replace(tmp, out_dir / name)
            written.append(out_dir / name)
        return written
    except OSError:
        for tmp, _ in staged:
            try:
                os.unlink(tmp)
            except OSError:
                pass
        raise
