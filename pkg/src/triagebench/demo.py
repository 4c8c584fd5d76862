"""Offline end-to-end demo: bundled corpus, scripted replies, golden metrics.

The demo replays a deterministic reply script through the real engines, so
it exercises prompting, parsing, running, grading and reporting without any
model server. The resulting metrics summary is compared byte-for-byte with
a committed golden file; template or corpus edits change the embedded
hashes and make the comparison fail loudly.

Scripted outcomes are spread so the report is interesting: per technique a
fixed number of the 24 incidents is answered correctly (PHP 18, SHP 16,
PRP 15, ZSL 14, HTP 8, with two HTP finals left unparseable). Which
incidents are correct, and every wrong answer, derive from stable hashes,
so the script is identical on every machine.
"""
from __future__ import annotations

import difflib
import tempfile
from importlib import resources
from pathlib import Path

from .backend import GenerationParams, ModelSpec, ScriptedBackend, resolve_model
from .corpus import Corpus, load_corpus
from .metrics import MetricsReport, compute_metrics
from .runner import RunPlan, execute, load_run_records
from .taxonomy import CategoryCode, builtin_taxonomy
from .techniques import TechniqueConfig, TechniqueId
from .util import canonical_dumps, sha256_hex, stable_hash_int

DEMO_SCHEMA_VERSION = 1
DEMO_MODEL_NAME = "demo"

DEMO_TECHNIQUES = (
    TechniqueId.ZSL,
    TechniqueId.PHP,
    TechniqueId.SHP,
    TechniqueId.HTP,
    TechniqueId.PRP,
)

# Of 24 incidents per technique. HTP additionally leaves 2 finals unparsed.
_TARGET_CORRECT = {
    TechniqueId.ZSL: 14,
    TechniqueId.PHP: 18,
    TechniqueId.SHP: 16,
    TechniqueId.HTP: 8,
    TechniqueId.PRP: 15,
}
_HTP_UNPARSED = 2

_INDICATOR_PHRASES = (
    "unusual timing of events",
    "an unexpected outbound connection",
    "credential prompts reported by staff",
    "an automated platform alert",
    "entries preserved in audit logs",
    "a user-submitted report",
)


class DemoError(Exception):
    """Internal inconsistency between the reply script and the engines."""


def demo_model() -> ModelSpec:
    return resolve_model(DEMO_MODEL_NAME)


def _corpus_resource():
    return resources.files("triagebench").joinpath("data/demo_corpus.jsonl")


def demo_corpus_bytes() -> bytes:
    return _corpus_resource().read_bytes()


def load_demo_corpus() -> Corpus:
    with resources.as_file(_corpus_resource()) as path:
        return load_corpus(path)


def golden_path():
    return resources.files("triagebench").joinpath("data/golden_demo_metrics.json")


def _tech_hash(technique: TechniqueId, incident_id: str) -> int:
    return stable_hash_int(f"demo:{technique.value}:{incident_id}")


def _plan_outcomes(
    technique: TechniqueId, ids: tuple[str, ...]
) -> tuple[frozenset[str], frozenset[str]]:
    """(ids answered correctly, ids left unparsed) for one technique."""
    ranked = sorted(ids, key=lambda i: (_tech_hash(technique, i), i))
    correct = frozenset(ranked[: _TARGET_CORRECT[technique]])
    unparsed: frozenset[str] = frozenset()
    if technique is TechniqueId.HTP:
        wrong = [i for i in ranked if i not in correct]
        unparsed = frozenset(wrong[:_HTP_UNPARSED])
    return correct, unparsed


def _wrong_answer(truth: CategoryCode, h: int) -> CategoryCode:
    codes = list(CategoryCode.taxonomy_codes())
    shift = 1 + h % (len(codes) - 1)
    return codes[(codes.index(truth) + shift) % len(codes)]


def _others(pred: CategoryCode, h: int) -> tuple[CategoryCode, CategoryCode]:
    """Two categories differing from pred and from each other, hash-picked."""
    pool = [c for c in CategoryCode.taxonomy_codes() if c is not pred]
    first = pool[(h >> 4) % len(pool)]
    second = pool[(h >> 8) % len(pool)]
    if second is first:
        second = pool[((h >> 8) + 1) % len(pool)]
    return first, second


def _final_line(code: CategoryCode) -> str:
    return f"FINAL: {code.value}"


def _zsl_replies(pred: CategoryCode, h: int) -> list[str]:
    lead = (
        "The report fits one category clearly."
        if h % 2 == 0
        else "Weighing the details, a single label applies."
    )
    return [f"{lead}\n{_final_line(pred)}"]


def _iterative_replies(pred: CategoryCode, h: int, verify: bool) -> list[str]:
    """Reply sequence for the two self-correcting techniques.

    Three shapes: settle immediately (2 rounds, converged), change once then
    hold (3 rounds, converged), or keep changing (3 rounds, not converged).
    """
    first, second = _others(pred, h)
    hold = (
        "On review the answer stands."
        if verify
        else "The earlier answer still fits best."
    )
    move = (
        "On review the earlier answer was wrong."
        if verify
        else "The hint changes the picture."
    )
    shape = h % 3
    if shape == 0:
        return [
            f"Initial read of the report.\n{_final_line(pred)}",
            f"{hold}\n{_final_line(pred)}",
        ]
    if shape == 1:
        return [
            f"Initial read of the report.\n{_final_line(first)}",
            f"{move}\n{_final_line(pred)}",
            f"{hold}\n{_final_line(pred)}",
        ]
    return [
        f"Initial read of the report.\n{_final_line(first)}",
        f"{move}\n{_final_line(second)}",
        f"{move}\n{_final_line(pred)}",
    ]


def _shp_replies(pred: CategoryCode, h: int) -> list[str]:
    start = h % len(_INDICATOR_PHRASES)
    picks = [
        _INDICATOR_PHRASES[(start + j) % len(_INDICATOR_PHRASES)] for j in range(3)
    ]
    indicators = "Indicators:\n" + "\n".join(f"- {p}" for p in picks)
    return [
        indicators,
        f"Given the extracted indicators, the classification follows.\n"
        f"{_final_line(pred)}",
    ]


def _htp_replies(pred: CategoryCode, unparsed: bool) -> list[str]:
    replies = [
        "Two candidate readings of the report were formed for testing.",
        "Tested both readings against the decisive details; one survives.",
    ]
    if unparsed:
        replies.append(
            "The two readings remain equally supported and the tie cannot be "
            "broken with the available evidence."
        )
    else:
        replies.append(f"The surviving hypothesis decides it.\n{_final_line(pred)}")
    return replies


def build_demo_script(
    corpus: Corpus,
    techniques: tuple[TechniqueId, ...] = DEMO_TECHNIQUES,
    n_models: int = 1,
) -> list[str]:
    """Reply queue matching the exact call order of a serial run.

    Reply blocks nest incident-outer, technique-middle, model-inner, the
    same order the runner executes in, so replay only works with
    parallelism 1. Each model gets an identical block per task.
    """
    ids = tuple(rec.id for rec in corpus.records)
    outcomes = {t: _plan_outcomes(t, ids) for t in techniques}

    script: list[str] = []
    for incident in corpus.records:
        for technique in techniques:
            correct_ids, unparsed_ids = outcomes[technique]
            h = _tech_hash(technique, incident.id)
            pred = (
                incident.ground_truth
                if incident.id in correct_ids
                else _wrong_answer(incident.ground_truth, h)
            )
            if technique is TechniqueId.ZSL:
                replies = _zsl_replies(pred, h)
            elif technique is TechniqueId.PHP:
                replies = _iterative_replies(pred, h, verify=False)
            elif technique is TechniqueId.SHP:
                replies = _shp_replies(pred, h)
            elif technique is TechniqueId.HTP:
                replies = _htp_replies(pred, incident.id in unparsed_ids)
            else:
                replies = _iterative_replies(pred, h, verify=True)
            for _ in range(n_models):
                script.extend(replies)
    return script


def run_demo(run_path: Path | None = None) -> tuple[MetricsReport, bytes]:
    """Execute the scripted demo and return (report, summary bytes).

    The summary embeds the template hash and the corpus digest, so the
    golden comparison covers prompts and data as well as metric values.
    """
    taxonomy = builtin_taxonomy()
    corpus = load_demo_corpus()
    config = TechniqueConfig()
    backend = ScriptedBackend(build_demo_script(corpus))

    def _run(path: Path) -> MetricsReport:
        plan = RunPlan(
            models=(demo_model(),),
            techniques=DEMO_TECHNIQUES,
            corpus=corpus,
            params=GenerationParams(),
            technique_config=config,
            seed=0,
            output_path=path,
            parallelism=1,
        )
        execute(plan, backend, taxonomy)
        if backend.remaining() != 0:
            raise DemoError(
                f"{backend.remaining()} scripted replies left over; the "
                f"script no longer matches the engines"
            )
        records = load_run_records(path)
        failures = [r for r in records if r.error is not None]
        if failures:
            raise DemoError(f"{len(failures)} demo tasks failed: {failures[0].error}")
        return compute_metrics(records)

    if run_path is not None:
        report = _run(Path(run_path))
    else:
        with tempfile.TemporaryDirectory(prefix="triagebench-demo-") as tmp:
            report = _run(Path(tmp) / "demo_run.jsonl")

    summary = {
        "schema_version": DEMO_SCHEMA_VERSION,
        "template_hash": config.templates.template_hash,
        "corpus_sha256": sha256_hex(demo_corpus_bytes()),
        "metrics": report.to_dict(),
    }
    return report, (canonical_dumps(summary) + "\n").encode("utf-8")


def diff_against_golden(summary: bytes) -> str | None:
    """None when the summary matches the committed golden file byte for byte,
    else a unified diff of the two JSON documents."""
    golden = golden_path().read_bytes()
    if golden == summary:
        return None
    diff = difflib.unified_diff(
        golden.decode("utf-8", errors="replace").splitlines(keepends=True),
        summary.decode("utf-8", errors="replace").splitlines(keepends=True),
        fromfile="golden_demo_metrics.json",
        tofile="this run",
    )
    return "".join(diff) or "files differ in whitespace or encoding only"
