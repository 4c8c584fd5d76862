import json

import pytest

from triagebench import cli
from triagebench.cli import (
    EXIT_FAILURE,
    EXIT_OK,
    EXIT_USAGE,
    CliConfig,
    CliError,
    load_config_file,
    resolve_config,
)
from triagebench.corpus import load_corpus
from triagebench.demo import diff_against_golden, run_demo
from triagebench.runner import load_run_records


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    monkeypatch.delenv(cli.ENV_BACKEND_URL, raising=False)
    monkeypatch.delenv(cli.ENV_CONFIG, raising=False)


def write_corpus(path, rows):
    with path.open("w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
    return path


GOOD_ROW = {"id": "a1", "text": "Ransom note on [HOST_1].", "ground_truth": "CAT2"}


class TestConfigPrecedence:
    def test_file_then_env_then_flags(self, tmp_path, monkeypatch):
        ini = tmp_path / "triage.ini"
        ini.write_text(
            "[backend]\nurl = http://filehost:1\nretries = 5\n"
            "[generation]\ntemperature = 0.7\nseed = 42\n"
            "[run]\nmodels = m-a, m-b\nparallelism = 3\n",
            encoding="utf-8",
        )
        args = cli.build_parser().parse_args(
            ["--config", str(ini), "run", "--out", "x.jsonl"]
        )
        config = resolve_config(args)
        assert config.backend_url == "http://filehost:1"
        assert config.retries == 5
        assert config.temperature == 0.7
        assert config.seed == 42
        assert config.models == ("m-a", "m-b")
        assert config.parallelism == 3

        monkeypatch.setenv(cli.ENV_BACKEND_URL, "http://envhost:2")
        assert resolve_config(args).backend_url == "http://envhost:2"

        args = cli.build_parser().parse_args(
            [
                "--config", str(ini),
                "run", "--out", "x.jsonl",
                "--temperature", "0.0",
                "--models", "m-c",
                "--parallelism", "1",
            ]
        )
        config = resolve_config(args)
        assert config.backend_url == "http://envhost:2"
        assert config.temperature == 0.0
        assert config.models == ("m-c",)
        assert config.parallelism == 1
        assert config.seed == 42  # file value survives where no flag given

    def test_env_config_file_used_when_no_flag(self, tmp_path, monkeypatch):
        ini = tmp_path / "env.ini"
        ini.write_text("[backend]\nretries = 9\n", encoding="utf-8")
        monkeypatch.setenv(cli.ENV_CONFIG, str(ini))
        args = cli.build_parser().parse_args(["run", "--out", "x.jsonl"])
        assert resolve_config(args).retries == 9

    def test_unknown_section_rejected(self, tmp_path):
        ini = tmp_path / "bad.ini"
        ini.write_text("[nonsense]\nkey = 1\n", encoding="utf-8")
        with pytest.raises(CliError, match=r"\[nonsense\]"):
            load_config_file(ini, CliConfig())

    def test_unknown_key_rejected(self, tmp_path):
        ini = tmp_path / "bad.ini"
        ini.write_text("[backend]\nuri = http://x\n", encoding="utf-8")
        with pytest.raises(CliError, match="uri"):
            load_config_file(ini, CliConfig())

    def test_bad_value_rejected(self, tmp_path):
        ini = tmp_path / "bad.ini"
        ini.write_text("[generation]\nseed = elephant\n", encoding="utf-8")
        with pytest.raises(CliError, match="elephant"):
            load_config_file(ini, CliConfig())

    def test_missing_config_file_is_usage_error(self, tmp_path, capsys):
        rc = cli.main(
            ["--config", str(tmp_path / "nope.ini"), "validate"]
        )
        assert rc == EXIT_USAGE
        assert "cannot read config file" in capsys.readouterr().err


class TestValidate:
    def test_bundled_corpus_passes(self, capsys):
        assert cli.main(["validate"]) == EXIT_OK
        assert "0 finding" in capsys.readouterr().out

    def test_findings_exit_one(self, tmp_path, capsys):
        path = write_corpus(
            tmp_path / "dirty.jsonl",
            [
                GOOD_ROW,
                {
                    "id": "a2",
                    "text": "Contact admin@example.com about 10.0.0.5.",
                    "ground_truth": "CAT4",
                },
            ],
        )
        assert cli.main(["validate", str(path)]) == EXIT_FAILURE
        assert "a2" in capsys.readouterr().out

    def test_missing_file_exit_two(self, tmp_path, capsys):
        rc = cli.main(["validate", str(tmp_path / "missing.jsonl")])
        assert rc == EXIT_USAGE
        assert "not found" in capsys.readouterr().err


class TestAnonymize:
    def test_redacts_and_reports(self, tmp_path, capsys):
        src = write_corpus(
            tmp_path / "raw.jsonl",
            [
                {
                    "id": "a1",
                    "text": "User bob@corp.example logged in from 192.168.1.9.",
                    "ground_truth": "CAT1",
                }
            ],
        )
        out = tmp_path / "clean.jsonl"
        assert cli.main(["anonymize", str(src), "--out", str(out)]) == EXIT_OK
        text = load_corpus(out).records[0].text
        assert "[EMAIL_1]" in text and "[IP_1]" in text
        assert "bob@corp.example" not in text
        captured = capsys.readouterr().out
        assert "EMAIL=1" in captured and "IPV4=1" in captured
        assert not (tmp_path / "mapping.json").exists()

    def test_mapping_only_with_flag(self, tmp_path, capsys):
        src = write_corpus(
            tmp_path / "raw.jsonl",
            [
                {
                    "id": "a1",
                    "text": "Host web-01.corp.example touched 10.1.1.1.",
                    "ground_truth": "CAT5",
                }
            ],
        )
        out = tmp_path / "clean.jsonl"
        mapping = tmp_path / "mapping.json"
        rc = cli.main(
            [
                "anonymize", str(src),
                "--out", str(out),
                "--write-mapping", str(mapping),
            ]
        )
        assert rc == EXIT_OK
        data = json.loads(mapping.read_text(encoding="utf-8"))
        assert data["a1"]["[IP_1]"] == "10.1.1.1"
        assert "sensitive" in capsys.readouterr().out

    def test_custom_rule(self, tmp_path):
        src = write_corpus(
            tmp_path / "raw.jsonl",
            [
                {
                    "id": "a1",
                    "text": "Ticket SIR-12345 escalated.",
                    "ground_truth": "CAT7",
                }
            ],
        )
        out = tmp_path / "clean.jsonl"
        rc = cli.main(
            [
                "anonymize", str(src),
                "--out", str(out),
                "--custom", r"TICKET=SIR-\d+",
            ]
        )
        assert rc == EXIT_OK
        assert "[TICKET_1]" in load_corpus(out).records[0].text

    def test_bad_custom_spec_exit_two(self, tmp_path, capsys):
        src = write_corpus(tmp_path / "raw.jsonl", [GOOD_ROW])
        rc = cli.main(
            [
                "anonymize", str(src),
                "--out", str(tmp_path / "c.jsonl"),
                "--custom", "MISSING__SEPARATOR",
            ]
        )
        assert rc == EXIT_USAGE
        assert "STEM=REGEX" in capsys.readouterr().err

    def test_bad_custom_regex_exit_two(self, tmp_path, capsys):
        src = write_corpus(tmp_path / "raw.jsonl", [GOOD_ROW])
        rc = cli.main(
            [
                "anonymize", str(src),
                "--out", str(tmp_path / "c.jsonl"),
                "--custom", "BROKEN=[unclosed",
            ]
        )
        assert rc == EXIT_USAGE
        assert "rule" in capsys.readouterr().err


class TestRunScripted:
    def test_full_zsl_pass(self, tmp_path, capsys):
        out = tmp_path / "run.jsonl"
        rc = cli.main(
            [
                "run", "--backend", "scripted",
                "--models", "demo",
                "--techniques", "ZSL",
                "--out", str(out),
            ]
        )
        assert rc == EXIT_OK
        records = load_run_records(out)
        assert len(records) == 24
        stdout = capsys.readouterr().out
        assert "[24/24]" in stdout

    def test_resume_rejected(self, tmp_path, capsys):
        rc = cli.main(
            [
                "run", "--backend", "scripted",
                "--models", "demo",
                "--techniques", "ZSL",
                "--out", str(tmp_path / "run.jsonl"),
                "--resume",
            ]
        )
        assert rc == EXIT_USAGE
        assert "resume" in capsys.readouterr().err

    def test_parallelism_forced_serial(self, tmp_path, capsys):
        rc = cli.main(
            [
                "run", "--backend", "scripted",
                "--models", "demo",
                "--techniques", "ZSL",
                "--parallelism", "4",
                "--out", str(tmp_path / "run.jsonl"),
            ]
        )
        assert rc == EXIT_OK
        assert "forcing --parallelism 1" in capsys.readouterr().out

    def test_unknown_technique_exit_two(self, tmp_path, capsys):
        rc = cli.main(
            [
                "run", "--backend", "scripted",
                "--models", "demo",
                "--techniques", "BOGUS",
                "--out", str(tmp_path / "run.jsonl"),
            ]
        )
        assert rc == EXIT_USAGE
        err = capsys.readouterr().err
        assert "BOGUS" in err and "ZSL" in err

    def test_existing_output_exit_two(self, tmp_path, capsys):
        out = tmp_path / "run.jsonl"
        args = [
            "run", "--backend", "scripted",
            "--models", "demo",
            "--techniques", "ZSL",
            "--out", str(out),
        ]
        assert cli.main(args) == EXIT_OK
        capsys.readouterr()
        assert cli.main(args) == EXIT_USAGE
        assert "already exists" in capsys.readouterr().err


class TestRunRealBackend:
    def test_unreachable_server_exit_one(self, tmp_path, capsys):
        rc = cli.main(
            [
                "run", "--backend", "http://127.0.0.1:9",
                "--models", "demo",
                "--techniques", "ZSL",
                "--out", str(tmp_path / "run.jsonl"),
            ]
        )
        assert rc == EXIT_FAILURE
        assert "not reachable" in capsys.readouterr().err


@pytest.fixture()
def scripted_run_file(tmp_path):
    out = tmp_path / "run.jsonl"
    rc = cli.main(
        [
            "run", "--backend", "scripted",
            "--models", "demo",
            "--techniques", "ZSL,PHP",
            "--out", str(out),
        ]
    )
    assert rc == EXIT_OK
    return out


class TestReport:
    def test_all_formats_default(self, scripted_run_file, tmp_path, capsys):
        out_dir = tmp_path / "reports"
        rc = cli.main(["report", str(scripted_run_file), "--out-dir", str(out_dir)])
        assert rc == EXIT_OK
        names = sorted(p.name for p in out_dir.iterdir())
        assert names == ["metrics.csv", "metrics.md", "plot_data.json"]

    def test_format_selection(self, scripted_run_file, tmp_path):
        out_dir = tmp_path / "reports"
        rc = cli.main(
            [
                "report", str(scripted_run_file),
                "--out-dir", str(out_dir),
                "--format", "csv",
            ]
        )
        assert rc == EXIT_OK
        assert [p.name for p in out_dir.iterdir()] == ["metrics.csv"]

    def test_compare_paper_table(self, scripted_run_file, tmp_path):
        out_dir = tmp_path / "reports"
        rc = cli.main(
            [
                "report", str(scripted_run_file),
                "--out-dir", str(out_dir),
                "--format", "md",
                "--compare-paper",
            ]
        )
        assert rc == EXIT_OK
        text = (out_dir / "metrics.md").read_text(encoding="utf-8")
        assert "Reference" in text
        assert "no data" in text  # single-model run covers only a few scopes

    def test_missing_run_file_exit_two(self, tmp_path, capsys):
        rc = cli.main(
            ["report", str(tmp_path / "none.jsonl"), "--out-dir", str(tmp_path)]
        )
        assert rc == EXIT_USAGE

    def test_empty_run_file_exit_one(self, tmp_path, capsys):
        empty = tmp_path / "empty.jsonl"
        empty.touch()
        rc = cli.main(["report", str(empty), "--out-dir", str(tmp_path / "r")])
        assert rc == EXIT_FAILURE
        assert "no records" in capsys.readouterr().err


class TestDemo:
    def test_matches_golden(self, capsys):
        assert cli.main(["demo"]) == EXIT_OK
        assert "match golden" in capsys.readouterr().out

    def test_out_dir_keeps_artifacts(self, tmp_path):
        out_dir = tmp_path / "demo-out"
        assert cli.main(["demo", "--out-dir", str(out_dir)]) == EXIT_OK
        names = sorted(p.name for p in out_dir.iterdir())
        assert names == [
            "demo_run.jsonl",
            "metrics.csv",
            "metrics.md",
            "plot_data.json",
        ]
        assert len(load_run_records(out_dir / "demo_run.jsonl")) == 120

    def test_diff_reported_on_mismatch(self):
        _, summary = run_demo()
        assert diff_against_golden(summary) is None
        tampered = summary.replace(b'"n_records":120', b'"n_records":119')
        diff = diff_against_golden(tampered)
        assert diff is not None
        assert "119" in diff


class TestParser:
    def test_no_command_is_usage_error(self, capsys):
        with pytest.raises(SystemExit) as exc:
            cli.main([])
        assert exc.value.code == EXIT_USAGE

    def test_bad_format_choice(self, tmp_path, capsys):
        with pytest.raises(SystemExit) as exc:
            cli.main(
                ["report", "x.jsonl", "--out-dir", str(tmp_path), "--format", "pdf"]
            )
        assert exc.value.code == EXIT_USAGE
