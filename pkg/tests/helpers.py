"""Shared builders for tests: synthetic traces, records and run files."""
from __future__ import annotations

import random
from pathlib import Path

from triagebench.backend import ModelGroup
from triagebench.runner import RunRecord
from triagebench.taxonomy import CategoryCode
from triagebench.techniques import (
    ClassificationTrace,
    TechniqueId,
    TraceTotals,
    default_templates,
)
from triagebench.util import canonical_dumps

CODES = list(CategoryCode.taxonomy_codes())


def make_trace(
    incident_id: str = "inc-x",
    model: str = "model-a",
    group: ModelGroup = ModelGroup.G1,
    technique: TechniqueId = TechniqueId.ZSL,
    final: CategoryCode = CategoryCode.CAT1,
    rounds_used: int = 1,
    latency_ms: float = 0.0,
    response_chars: int = 0,
    converged: bool = True,
) -> ClassificationTrace:
    """Trace with empty turns; enough structure for grading and metrics."""
    return ClassificationTrace(
        incident_id=incident_id,
        model=model,
        model_group=group,
        technique=technique,
        turns=(),
        final=final,
        rounds_used=rounds_used,
        converged=converged,
        telemetry_totals=TraceTotals(
            total_latency_ms=latency_ms, total_response_chars=response_chars
        ),
        template_hash=default_templates().template_hash,
    )


def make_record(
    truth: CategoryCode = CategoryCode.CAT1,
    final: CategoryCode = CategoryCode.CAT1,
    error: str | None = None,
    **trace_kwargs,
) -> RunRecord:
    trace = make_trace(final=final, **trace_kwargs)
    return RunRecord(
        trace=trace,
        ground_truth=truth,
        correct=error is None and final == truth,
        error=error,
    )


def random_records(
    rng: random.Random,
    n: int,
    models: tuple[tuple[str, ModelGroup], ...] = (
        ("model-a", ModelGroup.G1),
        ("model-b", ModelGroup.G1),
        ("model-c", ModelGroup.G2),
    ),
) -> list[RunRecord]:
    """Records with unique task keys and varied outcomes and telemetry."""
    techniques = list(TechniqueId)
    records = []
    for i in range(n):
        model, group = models[rng.randrange(len(models))]
        truth = CODES[rng.randrange(len(CODES))]
        final = (
            CategoryCode.UNPARSED
            if rng.random() < 0.08
            else CODES[rng.randrange(len(CODES))]
        )
        records.append(
            make_record(
                truth=truth,
                final=final,
                incident_id=f"inc-{i:04d}",
                model=model,
                group=group,
                technique=techniques[rng.randrange(len(techniques))],
                rounds_used=rng.randint(1, 3),
                latency_ms=rng.uniform(0.0, 5000.0),
                response_chars=rng.randint(0, 4000),
            )
        )
    return records


def write_run_file(path: Path, records) -> Path:
    with path.open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(canonical_dumps(record.to_dict()) + "\n")
    return path
