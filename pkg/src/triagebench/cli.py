"""Command-line front end: validate, anonymize, run, report, demo.

Exit codes are a stable contract: 0 success, 1 domain failure (findings,
unreachable backend, metrics mismatch), 2 usage or input error. Settings
resolve in precedence order defaults, config file, environment, flags.

The config file is INI-style with [backend], [generation] and [run]
sections; TRIAGE_CONFIG points at it and TRIAGE_BACKEND_URL overrides the
server URL. All output paths are explicit flags.
"""
from __future__ import annotations

import argparse
import configparser
import os
import sys
from dataclasses import dataclass, replace
from pathlib import Path

from .anonymizer import (
    RedactionRule,
    RuleCompileError,
    RuleKind,
    anonymize,
    compile_rules,
    default_rules,
)
from .backend import (
    DEFAULT_BASE_URL,
    GenerationParams,
    OllamaBackend,
    ScriptedBackend,
    resolve_model,
)
from .corpus import Corpus, CorpusError, load_corpus, save_corpus, validate_corpus
from .demo import (
    DEMO_MODEL_NAME,
    build_demo_script,
    diff_against_golden,
    golden_path,
    load_demo_corpus,
    run_demo,
)
from .metrics import (
    MetricsError,
    compare_to_reference,
    compute_metrics,
    render_report,
)
from .runner import RunError, RunPlan, RunRecord, execute, load_run_records
from .taxonomy import builtin_taxonomy
from .techniques import TechniqueConfig, TechniqueId, TemplateError, load_templates
from .util import canonical_dumps

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

ENV_BACKEND_URL = "TRIAGE_BACKEND_URL"
ENV_CONFIG = "TRIAGE_CONFIG"

ALL_TECHNIQUES = tuple(t.value for t in TechniqueId)


class CliError(Exception):
    """Carries the exit code alongside the message."""

    def __init__(self, message: str, code: int = EXIT_USAGE) -> None:
        super().__init__(message)
        self.code = code


@dataclass(frozen=True)
class CliConfig:
    backend_url: str = DEFAULT_BASE_URL
    retries: int = 2
    models: tuple[str, ...] = (DEMO_MODEL_NAME,)
    techniques: tuple[str, ...] = ALL_TECHNIQUES
    temperature: float = 0.0
    max_output_tokens: int = 1024
    input_token_budget: int = 8192
    request_timeout: float = 120.0
    seed: int = 0
    max_rounds: int = 3
    parallelism: int = 1
    templates_dir: str | None = None


_CONFIG_SCHEMA = {
    "backend": {"url": str, "retries": int},
    "generation": {
        "temperature": float,
        "max_output_tokens": int,
        "input_token_budget": int,
        "request_timeout": float,
        "seed": int,
    },
    "run": {
        "models": str,
        "techniques": str,
        "max_rounds": int,
        "parallelism": int,
        "templates_dir": str,
    },
}

# config-file key -> CliConfig field, where the names differ
_KEY_TO_FIELD = {("backend", "url"): "backend_url"}


def _split_list(raw: str) -> tuple[str, ...]:
    return tuple(part.strip() for part in raw.split(",") if part.strip())


def load_config_file(path: str | Path, base: CliConfig) -> CliConfig:
    parser = configparser.ConfigParser()
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise CliError(f"cannot read config file {path}: {exc}")
    except configparser.Error as exc:
        raise CliError(f"bad config file {path}: {exc}")

    updates: dict[str, object] = {}
    for section in parser.sections():
        if section not in _CONFIG_SCHEMA:
            raise CliError(f"{path}: unknown config section [{section}]")
        for key, raw in parser.items(section):
            if key not in _CONFIG_SCHEMA[section]:
                raise CliError(f"{path}: unknown key {key!r} in [{section}]")
            field = _KEY_TO_FIELD.get((section, key), key)
            caster = _CONFIG_SCHEMA[section][key]
            try:
                value: object = caster(raw)
            except ValueError:
                raise CliError(
                    f"{path}: bad value for {key!r} in [{section}]: {raw!r}"
                )
            if field in ("models", "techniques"):
                value = _split_list(raw)
            updates[field] = value
    return replace(base, **updates)


def resolve_config(args: argparse.Namespace) -> CliConfig:
    """defaults <- config file <- environment <- flags."""
    config = CliConfig()

    config_path = getattr(args, "config", None) or os.environ.get(ENV_CONFIG)
    if config_path:
        config = load_config_file(config_path, config)

    env_url = os.environ.get(ENV_BACKEND_URL)
    if env_url:
        config = replace(config, backend_url=env_url)

    overrides: dict[str, object] = {}
    for field in (
        "backend_url",
        "models",
        "techniques",
        "temperature",
        "max_rounds",
        "parallelism",
        "seed",
        "templates_dir",
    ):
        value = getattr(args, field, None)
        if value is not None:
            overrides[field] = value
    if overrides:
        config = replace(config, **overrides)
    return config


def _parse_techniques(names: tuple[str, ...]) -> tuple[TechniqueId, ...]:
    techs = []
    for name in names:
        try:
            techs.append(TechniqueId.parse(name))
        except ValueError:
            raise CliError(
                f"unknown technique {name!r}; valid: {', '.join(ALL_TECHNIQUES)}"
            )
    if not techs:
        raise CliError("no techniques given")
    return tuple(dict.fromkeys(techs))


def _load_corpus_arg(path: str | None) -> Corpus:
    if path is None:
        try:
            return load_demo_corpus()
        except FileNotFoundError:
            raise CliError("bundled demo corpus is missing from the installation")
    try:
        return load_corpus(path)
    except FileNotFoundError:
        raise CliError(f"corpus file not found: {path}")
    except CorpusError as exc:
        raise CliError(f"bad corpus: {exc}")


def cmd_validate(args: argparse.Namespace) -> int:
    corpus = _load_corpus_arg(args.corpus)
    report = validate_corpus(corpus)
    print(report.to_text())
    return EXIT_OK if report.ok else EXIT_FAILURE


def _parse_custom_rule(spec: str) -> RedactionRule:
    stem, sep, pattern = spec.partition("=")
    if not sep or not stem or not pattern:
        raise CliError(f"bad --custom rule {spec!r}; expected STEM=REGEX")
    return RedactionRule(RuleKind.CUSTOM, stem, pattern=pattern)


def cmd_anonymize(args: argparse.Namespace) -> int:
    corpus = _load_corpus_arg(args.corpus)
    rules = list(default_rules()) + [_parse_custom_rule(s) for s in args.custom]
    try:
        compile_rules(rules)
    except RuleCompileError as exc:
        raise CliError(f"bad redaction rule: {exc}")

    keep = args.write_mapping is not None
    out_records = []
    mappings: dict[str, dict[str, str]] = {}
    totals: dict[str, int] = {}
    for rec in corpus.records:
        text, report = anonymize(rec.text, rules, keep_mapping=keep)
        out_records.append(replace(rec, text=text))
        for kind, count in report.counts.items():
            totals[kind] = totals.get(kind, 0) + count
        if keep and report.mapping:
            mappings[rec.id] = report.mapping

    save_corpus(replace(corpus, records=tuple(out_records)), args.out)
    if keep:
        Path(args.write_mapping).write_text(
            canonical_dumps(mappings) + "\n", encoding="utf-8"
        )
        print(f"mapping written to {args.write_mapping} (sensitive, handle with care)")
    summary = ", ".join(f"{k}={v}" for k, v in sorted(totals.items())) or "nothing"
    print(f"anonymized {len(out_records)} records to {args.out}: replaced {summary}")
    return EXIT_OK


def _progress(record: RunRecord, completed: int, total: int) -> None:
    status = record.trace.final.value
    if record.error is not None:
        status = f"error ({record.error})"
    print(
        f"[{completed}/{total}] {record.trace.model} "
        f"{record.trace.technique.value} {record.trace.incident_id}: {status}",
        flush=True,
    )


def cmd_run(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    techniques = _parse_techniques(config.techniques)
    corpus = _load_corpus_arg(args.corpus)
    if not config.models:
        raise CliError("no models given")
    models = tuple(resolve_model(name) for name in config.models)

    try:
        technique_config = TechniqueConfig(
            max_rounds=config.max_rounds,
            templates=(
                load_templates(config.templates_dir)
                if config.templates_dir
                else TechniqueConfig().templates
            ),
        )
    except (TemplateError, ValueError) as exc:
        raise CliError(str(exc))

    params = GenerationParams(
        temperature=config.temperature,
        max_output_tokens=config.max_output_tokens,
        input_token_budget=config.input_token_budget,
        seed=config.seed,
        request_timeout=config.request_timeout,
    )

    scripted = args.backend == "scripted"
    parallelism = config.parallelism
    if scripted:
        if args.resume:
            raise CliError("--resume is not supported with the scripted backend")
        if parallelism != 1:
            print("scripted backend replays in plan order; forcing --parallelism 1")
            parallelism = 1
        backend = ScriptedBackend(
            build_demo_script(corpus, techniques=techniques, n_models=len(models))
        )
    else:
        url = args.backend if args.backend else config.backend_url
        backend = OllamaBackend(url, retries=config.retries)
        if not backend.is_reachable():
            raise CliError(f"backend at {url} is not reachable", code=EXIT_FAILURE)

    plan = RunPlan(
        models=models,
        techniques=techniques,
        corpus=corpus,
        params=params,
        technique_config=technique_config,
        seed=config.seed,
        output_path=Path(args.out),
        parallelism=parallelism,
    )
    try:
        summary = execute(
            plan,
            backend,
            builtin_taxonomy(),
            resume=args.resume,
            on_record=_progress,
        )
    except RunError as exc:
        raise CliError(str(exc))
    print(summary)
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    path = Path(args.run_file)
    if not path.exists():
        raise CliError(f"run file not found: {path}")
    records = load_run_records(path)
    if not records:
        raise CliError(f"run file {path} has no records", code=EXIT_FAILURE)

    try:
        report = compute_metrics(records)
        comparison = compare_to_reference(report) if args.compare_paper else None
        formats = tuple(args.format) if args.format else ("csv", "md", "plot-json")
        written = render_report(report, args.out_dir, formats, comparison)
    except MetricsError as exc:
        raise CliError(str(exc), code=EXIT_FAILURE)
    except OSError as exc:
        raise CliError(f"cannot write report: {exc}", code=EXIT_FAILURE)
    for p in written:
        print(f"wrote {p}")
    return EXIT_OK


def cmd_demo(args: argparse.Namespace) -> int:
    try:
        load_demo_corpus()
    except (FileNotFoundError, CorpusError) as exc:
        raise CliError(f"bundled demo corpus unusable: {exc}")

    out_dir = Path(args.out_dir) if args.out_dir else None
    run_path = out_dir / "demo_run.jsonl" if out_dir else None
    if run_path is not None:
        run_path.parent.mkdir(parents=True, exist_ok=True)
        if run_path.exists():
            run_path.unlink()
    report, summary = run_demo(run_path)

    if args.write_golden:
        target = Path(str(golden_path()))
        target.write_bytes(summary)
        print(f"golden metrics written to {target}")
        return EXIT_OK

    if out_dir is not None:
        render_report(report, out_dir)
        print(f"demo artifacts written to {out_dir}")

    diff = diff_against_golden(summary)
    if diff is None:
        print(f"demo metrics match golden ({report.n_records} records)")
        return EXIT_OK
    print("demo metrics differ from golden:")
    print(diff, end="")
    return EXIT_FAILURE


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="triagebench",
        description=(
            "Classify security incident reports into a 12-category taxonomy "
            "with local language models and benchmark five prompting "
            "techniques."
        ),
    )
    parser.add_argument(
        "--config",
        help=f"INI config file (also via {ENV_CONFIG})",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a corpus for residual PII and bad labels")
    p.add_argument("corpus", nargs="?", help="corpus path (default: bundled demo corpus)")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("anonymize", help="redact PII from a corpus")
    p.add_argument("corpus", help="input corpus (JSONL or CSV)")
    p.add_argument("--out", required=True, help="output corpus path (JSONL)")
    p.add_argument(
        "--custom",
        action="append",
        default=[],
        metavar="STEM=REGEX",
        help="additional redaction rule; may repeat",
    )
    p.add_argument(
        "--write-mapping",
        metavar="PATH",
        help=(
            "also write the placeholder-to-original mapping as JSON. "
            "SENSITIVE: the mapping contains every redacted value; "
            "store it separately from the anonymized corpus"
        ),
    )
    p.set_defaults(func=cmd_anonymize)

    p = sub.add_parser("run", help="execute a model x technique x incident matrix")
    p.add_argument("--models", type=_split_list, help="comma-separated model names")
    p.add_argument(
        "--techniques",
        type=_split_list,
        help=f"comma-separated techniques ({', '.join(ALL_TECHNIQUES)})",
    )
    p.add_argument("--corpus", help="corpus path (default: bundled demo corpus)")
    p.add_argument("--out", required=True, help="run file to append records to")
    p.add_argument("--max-rounds", type=int, dest="max_rounds")
    p.add_argument("--temperature", type=float)
    p.add_argument("--parallelism", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--templates", dest="templates_dir", help="custom template directory")
    p.add_argument(
        "--backend",
        help='server URL, or "scripted" for the offline deterministic backend',
    )
    p.add_argument(
        "--resume",
        action="store_true",
        help="skip (model, technique, incident) keys already in the run file",
    )
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="compute metrics from a run file")
    p.add_argument("run_file")
    p.add_argument(
        "--format",
        action="append",
        choices=["csv", "md", "plot-json"],
        help="artifact to write; may repeat (default: all)",
    )
    p.add_argument("--out-dir", required=True, help="directory for report artifacts")
    p.add_argument(
        "--compare-paper",
        action="store_true",
        help="include the published reference accuracy table in the Markdown report",
    )
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("demo", help="offline end-to-end check against golden metrics")
    p.add_argument(
        "--out-dir", help="keep the demo run file and report here instead of a temp dir"
    )
    p.add_argument("--write-golden", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_demo)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        # A named config file must be readable and well formed for every
        # subcommand, including the ones that take no settings from it.
        config_path = getattr(args, "config", None) or os.environ.get(ENV_CONFIG)
        if config_path:
            load_config_file(config_path, CliConfig())
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
