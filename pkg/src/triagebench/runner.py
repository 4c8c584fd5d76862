"""Experiment-matrix execution: (incident × technique × model) with resume.

Tasks are ordered incident-outer, technique-middle, model-inner so a partial
run covers every technique early. Records are appended to the run file as
each task completes; one writer (the calling thread) owns the file, workers
only compute. A crash mid-write leaves at most one torn trailing line, which
resume_scan ignores.
"""
from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass
from json import JSONDecodeError, loads
from pathlib import Path
from typing import Callable, Sequence

from .backend import Backend, GenerationParams, ModelSpec
from .corpus import Corpus
from .taxonomy import CategoryCode, Taxonomy, builtin_taxonomy
from .techniques import (
    ClassificationError,
    ClassificationTrace,
    TechniqueConfig,
    TechniqueId,
    classify,
)
from .util import canonical_dumps

logger = logging.getLogger(__name__)

RUN_SCHEMA_VERSION = 1

TaskKey = tuple[str, str, str]  # (model name, technique, incident id)


class RunError(Exception):
    """Run-file or plan-level failure (not a single-task failure)."""


@dataclass(frozen=True)
class RunPlan:
    models: tuple[ModelSpec, ...]
    techniques: tuple[TechniqueId, ...]
    corpus: Corpus
    params: GenerationParams
    technique_config: TechniqueConfig
    seed: int
    output_path: Path
    parallelism: int = 1

    def __post_init__(self) -> None:
        if not self.models or not self.techniques or not len(self.corpus):
            raise RunError("plan needs at least one model, technique and incident")
        if self.parallelism < 1:
            raise RunError("parallelism must be >= 1")

    def task_keys(self) -> list[TaskKey]:
        return [
            (model.name, technique.value, incident.id)
            for incident in self.corpus.records
            for technique in self.techniques
            for model in self.models
        ]


@dataclass(frozen=True)
class RunRecord:
    trace: ClassificationTrace
    ground_truth: CategoryCode
    correct: bool
    error: str | None = None

    @property
    def key(self) -> TaskKey:
        return (self.trace.model, self.trace.technique.value, self.trace.incident_id)

    def to_dict(self) -> dict:
        d = {
            "schema_version": RUN_SCHEMA_VERSION,
            "trace": self.trace.to_dict(),
            "ground_truth": self.ground_truth.value,
            "correct": self.correct,
        }
        if self.error is not None:
            d["error"] = self.error
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        return cls(
            trace=ClassificationTrace.from_dict(d["trace"]),
            ground_truth=CategoryCode(d["ground_truth"]),
            correct=d["correct"],
            error=d.get("error"),
        )


def grade(trace: ClassificationTrace, truth: CategoryCode) -> RunRecord:
    """Correct iff the trace's final answer equals the expert label.

    UNPARSED finals are always incorrect (truth is never UNPARSED).
    """
    if truth is CategoryCode.UNPARSED:
        raise RunError("ground truth may not be UNPARSED")
    return RunRecord(trace=trace, ground_truth=truth, correct=trace.final == truth)


def _record_key(d: dict) -> TaskKey:
    trace = d["trace"]
    return (trace["model"], trace["technique"], trace["incident_id"])


def resume_scan(output_path: str | Path) -> set[TaskKey]:
    """Keys of well-formed records already in the run file.

    A malformed trailing line is the expected artifact of a killed run and
    is skipped with a warning, as are duplicates (later line wins).
    """
    path = Path(output_path)
    if not path.exists():
        return set()
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise RunError(f"cannot read run file {path}: {exc}") from exc

    keys: set[TaskKey] = set()
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            d = loads(line)
            key = _record_key(d)
        except (JSONDecodeError, KeyError, TypeError):
            if lineno == len(lines):
                logger.warning(
                    "%s:%d: ignoring torn trailing line (crash artifact)",
                    path.name, lineno,
                )
                continue
            logger.warning("%s:%d: skipping malformed record line", path.name, lineno)
            continue
        if key in keys:
            logger.warning(
                "%s:%d: duplicate record for %s; later line wins", path.name, lineno, key
            )
        keys.add(key)
    return keys


def load_run_records(path: str | Path) -> list[RunRecord]:
    """Read back a run file, resolving duplicate keys to the latest line."""
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    by_key: dict[TaskKey, RunRecord] = {}
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            d = loads(line)
            record = RunRecord.from_dict(d)
        except (JSONDecodeError, KeyError, TypeError, ValueError):
            if lineno == len(lines):
                logger.warning(
                    "%s:%d: ignoring torn trailing line (crash artifact)",
                    path.name, lineno,
                )
                continue
            logger.warning("%s:%d: skipping malformed record line", path.name, lineno)
            continue
        by_key[record.key] = record
    return list(by_key.values())


@dataclass(frozen=True)
class RunSummary:
    planned: int
    skipped: int
    executed: int
    failed: int

    def __str__(self) -> str:
        return (
            f"{self.executed} of {self.planned} tasks executed "
            f"({self.skipped} resumed, {self.failed} failed-as-recorded)"
        )


def execute(
    plan: RunPlan,
    backend: Backend,
    taxonomy: Taxonomy | None = None,
    resume: bool = False,
    on_record: Callable[[RunRecord, int, int], None] | None = None,
) -> RunSummary:
    """Run the full plan, appending one RunRecord line per task.

    A task whose backend calls keep failing is recorded as a failed record
    (final UNPARSED, error note) and the run continues; only run-file I/O
    failures abort. With resume=True, keys already present in the output
    file are skipped.
    """
    taxonomy = taxonomy or builtin_taxonomy()
    path = Path(plan.output_path)

    done: set[TaskKey] = set()
    if resume:
        done = resume_scan(path)
    elif path.exists() and path.stat().st_size > 0:
        raise RunError(
            f"output file {path} already exists; pass resume=True or use a fresh path"
        )

    incidents = {rec.id: rec for rec in plan.corpus.records}
    tasks = [key for key in plan.task_keys() if key not in done]
    models = {m.name: m for m in plan.models}
    total = len(plan.task_keys())

    def work(key: TaskKey) -> RunRecord:
        model_name, technique_value, incident_id = key
        incident = incidents[incident_id]
        try:
            trace = classify(
                incident,
                TechniqueId(technique_value),
                models[model_name],
                backend,
                taxonomy,
                plan.params,
                plan.technique_config,
            )
            return grade(trace, incident.ground_truth)
        except ClassificationError as exc:
            logger.warning("task %s failed: %s", key, exc)
            return RunRecord(
                trace=exc.partial_trace,
                ground_truth=incident.ground_truth,
                correct=False,
                error=str(exc),
            )

    executed = failed = 0
    completed = len(done)
    path.parent.mkdir(parents=True, exist_ok=True)
    needs_newline = False
    if path.exists() and path.stat().st_size > 0:
        with path.open("rb") as fh:
            fh.seek(-1, os.SEEK_END)
            # A torn trailing line (crash artifact) must not swallow the
            # next record; seal it off so new lines start clean.
            needs_newline = fh.read(1) != b"\n"
    with path.open("a", encoding="utf-8") as out:
        if needs_newline:
            out.write("\n")

        def write(record: RunRecord) -> None:
            nonlocal executed, failed, completed
            out.write(canonical_dumps(record.to_dict()) + "\n")
            out.flush()
            executed += 1
            completed += 1
            if record.error is not None:
                failed += 1
            if on_record is not None:
                on_record(record, completed, total)

        if plan.parallelism == 1:
            # Serial path keeps record order identical to plan order.
            for key in tasks:
                write(work(key))
        else:
            with ThreadPoolExecutor(max_workers=plan.parallelism) as pool:
                futures = [pool.submit(work, key) for key in tasks]
                for future in as_completed(futures):
                    write(future.result())

    summary = RunSummary(
        planned=total, skipped=len(done), executed=executed, failed=failed
    )
    logger.info("run complete: %s", summary)
    return summary
