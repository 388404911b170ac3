import filecmp
import io
import json
import os
import subprocess
import sys

import pytest

from healthtriage.cli import main


def run_cli(*argv):
    return main(list(argv))


class TestExitCodes:
    def test_unknown_subcommand_usage_error(self, capsys):
        assert run_cli("frobnicate") == 1
        assert "usage" in capsys.readouterr().err.lower()

    def test_no_subcommand_usage_error(self):
        assert run_cli() == 1

    def test_missing_required_flag(self):
        assert run_cli("ingest", "--corpus", "x") == 1  # --out missing

    def test_runtime_error_is_2(self, tmp_path):
        assert run_cli("ingest", "--corpus", str(tmp_path / "nope"), "--out", str(tmp_path / "o")) == 2

    def test_console_script_installed(self):
        proc = subprocess.run(
            [sys.executable, "-m", "healthtriage.cli", "bank-validate"],
            capture_output=True, text=True,
        )
        assert proc.returncode == 0
        assert "152 questions" in proc.stdout


class TestBankValidate:
    def test_reference_bank(self, capsys):
        assert run_cli("bank-validate") == 0
        assert "152 questions" in capsys.readouterr().out

    def test_bad_bank(self, tmp_path, capsys):
        bad = tmp_path / "bank.json"
        bad.write_text("[]")
        assert run_cli("bank-validate", "--bank", str(bad)) == 2


class TestGenSynthetic:
    def test_deterministic_tree(self, tmp_path, capsys):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            code = run_cli("gen-synthetic", "--out", str(out), "--seed", "7",
                           "--n-examples", "40", "--n-classes", "4")
            assert code == 0
        names = sorted(os.listdir(a))
        match, mismatch, errors = filecmp.cmpfiles(a, b, names, shallow=False)
        assert mismatch == [] and errors == []


@pytest.fixture(scope="module")
def world_dir(tmp_path_factory):
    path = tmp_path_factory.mktemp("world")
    code = main(["gen-synthetic", "--out", str(path), "--seed", "5",
                 "--n-examples", "48", "--n-classes", "4"])
    assert code == 0
    return path


@pytest.fixture(scope="module")
def artifacts_dir(world_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("artifacts")
    code = main([
        "train",
        "--corpus", str(world_dir / "corpus.jsonl"),
        "--bank", str(world_dir / "bank.json"),
        "--examples", str(world_dir / "examples.jsonl"),
        "--config", str(world_dir / "pipeline_config.json"),
        "--provider", str(world_dir / "provider.json"),
        "--answer-table", str(world_dir / "answer_table.json"),
        "--out-dir", str(out),
        "--seed", "5",
    ])
    assert code == 0
    return out


class TestPipelineCommands:
    def test_ingest(self, world_dir, tmp_path, capsys):
        out = tmp_path / "index.json"
        assert run_cli("ingest", "--corpus", str(world_dir / "corpus.jsonl"),
                       "--out", str(out), "--seed", "5") == 0
        assert out.exists()
        assert "build_digest" in capsys.readouterr().out

    def test_train_wrote_artifacts(self, artifacts_dir):
        for name in ("bank.json", "index.json", "revision.json", "model.json", "pipeline_config.json"):
            assert (artifacts_dir / name).exists()

    def test_eval_prints_table(self, world_dir, artifacts_dir, tmp_path, capsys):
        metrics_out = tmp_path / "metrics.json"
        code = run_cli(
            "eval", "--artifacts", str(artifacts_dir),
            "--examples", str(world_dir / "examples.jsonl"),
            "--provider", str(world_dir / "provider.json"),
            "--answer-table", str(world_dir / "answer_table.json"),
            "--metrics-out", str(metrics_out),
        )
        assert code == 0
        out = capsys.readouterr().out
        assert "Accuracy" in out and "trained-pipeline" in out
        body = json.loads(metrics_out.read_text())
        assert body["accuracy"] >= 0.9

    def test_predict_outputs_json(self, world_dir, artifacts_dir, capsys):
        examples = [json.loads(l) for l in (world_dir / "examples.jsonl").read_text().splitlines()]
        code = run_cli(
            "predict", "--artifacts", str(artifacts_dir),
            "--provider", str(world_dir / "provider.json"),
            "--answer-table", str(world_dir / "answer_table.json"),
            "--text", examples[0]["narrative"],
        )
        assert code == 0
        body = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert len(body["predicted"]) == 1
        assert set(body["probabilities"]) == {f"condition_{i:02d}" for i in range(4)}

    def test_score_one_report(self, world_dir, artifacts_dir, capsys):
        examples = [json.loads(l) for l in (world_dir / "examples.jsonl").read_text().splitlines()]
        code = run_cli(
            "score", "--text", examples[0]["narrative"],
            "--bank", str(world_dir / "bank.json"),
            "--index", str(artifacts_dir / "index.json"),
            "--provider", str(world_dir / "provider.json"),
            "--answer-table", str(world_dir / "answer_table.json"),
        )
        assert code == 0
        row = json.loads(capsys.readouterr().out.strip().splitlines()[0])
        assert row["report_id"] == "cli-report"
        assert all(v is None or 0.0 <= v <= 1.0 for v in row["values"].values())

    def test_consult_loop_over_stdin(self, monkeypatch, tmp_path, case_study_pipeline, capsys):
        from healthtriage.pipeline import save_pipeline
        from healthtriage.providers import canonical_prompt

        tp, provider = case_study_pipeline
        artifacts = tmp_path / "cs-artifacts"
        save_pipeline(tp, artifacts)
        table_path = tmp_path / "table.json"
        table_path.write_text(json.dumps(
            [{"prompt_digest": d, "response": r} for d, r in provider.answer_table.items()]
        ))
        provider_path = tmp_path / "provider.json"
        provider_path.write_text(json.dumps(provider.config.to_dict()))

        from case_study import USER_TURN_1, USER_TURN_2

        monkeypatch.setattr("sys.stdin", io.StringIO(USER_TURN_1 + "\n" + USER_TURN_2 + "\n"))
        code = run_cli(
            "consult", "--artifacts", str(artifacts),
            "--provider", str(provider_path),
            "--answer-table", str(table_path),
        )
        assert code == 0
        out = capsys.readouterr().out
        assert "Gastrointestinal dysfunction" in out
        assert "Diarrhea" in out
