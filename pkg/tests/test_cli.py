from __future__ import annotations

import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from cor_harness.cli import main
from cor_harness.corpus import load_canonical, save_canonical

from conftest import DATA_DIR
from synth import make_qa_examples

pytestmark = pytest.mark.usefixtures("tmp_path")


def run_cli(*args):
    return CliRunner().invoke(main, [str(a) for a in args])


def write_config(tmp_path: Path, dataset: Path, name="cfg.json", **overrides) -> Path:
    config = {
        "dataset": {"path": str(dataset)},
        "prompting": {"mode": "cor"},
        "retriever": {"k": 10},
        "backend": {"kind": "oracle", "max_in_flight": 2},
        "judge": {"kind": "constant", "text": "Yes", "seed": 0},
        "emit": {"p_golden": 1.0, "k": 5, "seed": 0, "out": str(tmp_path / "sft.jsonl")},
        "seed": 0,
    }
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(config.get(key), dict):
            config[key].update(value)
        else:
            config[key] = value
    path = tmp_path / name
    path.write_text(json.dumps(config), encoding="utf-8")
    return path


@pytest.fixture
def dataset(tmp_path) -> Path:
    path = tmp_path / "canon.jsonl"
    save_canonical(make_qa_examples(20, seed=0, n_contexts=10), path)
    return path


class TestIngestCommands:
    def test_ingest_hotpot(self, tmp_path):
        out = tmp_path / "hp.jsonl"
        result = run_cli(
            "ingest", "hotpot", "--input", DATA_DIR / "hotpot_mini.json", "--split", "dev", "--out", out
        )
        assert result.exit_code == 0, result.output
        assert len(load_canonical(out)) == 6

    def test_ingest_gorilla(self, tmp_path):
        out = tmp_path / "api.jsonl"
        result = run_cli(
            "ingest", "gorilla",
            "--api-db", DATA_DIR / "gorilla_api_fixture.jsonl",
            "--queries", DATA_DIR / "gorilla_queries_fixture.jsonl",
            "--framework", "mixed", "--out", out,
        )
        assert result.exit_code == 0, result.output
        examples = load_canonical(out)
        assert len(examples) == 12
        assert all(e.task_kind == "api" for e in examples)


class TestEvalCommand:
    def test_oracle_run_scores_perfectly(self, tmp_path, dataset):
        config = write_config(tmp_path, dataset)
        run_dir = tmp_path / "run1"
        result = run_cli("eval", "--config", config, "--out-dir", run_dir)
        assert result.exit_code == 0, result.output
        summary = json.loads((run_dir / "summary.json").read_text())
        assert summary["aggregates"]["em_pct"] == 100.0
        assert summary["aggregates"]["f1_pct"] == 100.0
        assert summary["aggregates"]["ranking_exact_pct"] == 100.0
        for name in ("run.json", "examples.jsonl", "summary.json", "table.txt"):
            assert (run_dir / name).exists()

    def test_forced_wrong_ranking_decouples(self, tmp_path, dataset):
        config = write_config(tmp_path, dataset)
        run_dir = tmp_path / "run2"
        result = run_cli(
            "eval", "--config", config, "--out-dir", run_dir, "--forced-ranking", "wrong"
        )
        assert result.exit_code == 0, result.output
        summary = json.loads((run_dir / "summary.json").read_text())
        assert summary["aggregates"]["ranking_exact_pct"] == 0.0
        assert summary["aggregates"]["ranking_contains_gold_pct"] == 0.0
        assert summary["aggregates"]["em_pct"] == 100.0

    def test_determinism_byte_identical_dirs(self, tmp_path, dataset):
        config = write_config(tmp_path, dataset)
        dirs = [tmp_path / "d1", tmp_path / "d2"]
        for d in dirs:
            assert run_cli("eval", "--config", config, "--out-dir", d).exit_code == 0
        for name in ("run.json", "examples.jsonl", "summary.json", "table.txt"):
            assert (dirs[0] / name).read_bytes() == (dirs[1] / name).read_bytes()

    def test_missing_config_is_config_error(self, tmp_path):
        result = run_cli("eval", "--config", tmp_path / "none.json", "--out-dir", tmp_path / "x")
        assert result.exit_code == 1

    def test_invalid_k_is_config_error(self, tmp_path, dataset):
        config = write_config(tmp_path, dataset, retriever={"k": 0})
        result = run_cli("eval", "--config", config, "--out-dir", tmp_path / "x")
        assert result.exit_code == 1

    def test_all_failures_exit_three(self, tmp_path, dataset):
        script = tmp_path / "empty.jsonl"
        script.write_text("")
        config = write_config(tmp_path, dataset, backend={"kind": "scripted", "script": str(script)})
        result = run_cli("eval", "--config", config, "--out-dir", tmp_path / "x")
        assert result.exit_code == 3

    def test_adversarial_backend_zeroes_ranking(self, tmp_path, dataset):
        config = write_config(tmp_path, dataset, backend={"kind": "adversarial"})
        run_dir = tmp_path / "run3"
        assert run_cli("eval", "--config", config, "--out-dir", run_dir).exit_code == 0
        summary = json.loads((run_dir / "summary.json").read_text())
        assert summary["aggregates"]["ranking_exact_pct"] == 0.0
        assert summary["aggregates"]["em_pct"] == 100.0

    def test_forced_correct_overrides_adversarial(self, tmp_path, dataset):
        config = write_config(tmp_path, dataset, backend={"kind": "adversarial"})
        run_dir = tmp_path / "run-fc"
        result = run_cli(
            "eval", "--config", config, "--out-dir", run_dir, "--forced-ranking", "correct"
        )
        assert result.exit_code == 0, result.output
        summary = json.loads((run_dir / "summary.json").read_text())
        assert summary["aggregates"]["ranking_exact_pct"] == 100.0
        assert summary["aggregates"]["em_pct"] == 100.0

    def test_forced_fixed_position_list(self, tmp_path, dataset):
        config = write_config(tmp_path, dataset)
        run_dir = tmp_path / "run-ff"
        result = run_cli(
            "eval", "--config", config, "--out-dir", run_dir, "--forced-ranking", "1,2"
        )
        assert result.exit_code == 0, result.output
        rows = [
            json.loads(l) for l in (run_dir / "examples.jsonl").read_text().splitlines()
        ]
        assert all(row["parsed"]["selected_positions"] == [1, 2] for row in rows)

    def test_forced_ranking_requires_cor_mode(self, tmp_path, dataset):
        config = write_config(tmp_path, dataset, prompting={"mode": "dsf"})
        result = run_cli(
            "eval", "--config", config, "--out-dir", tmp_path / "x", "--forced-ranking", "wrong"
        )
        assert result.exit_code == 1

    def test_combined_mode_end_to_end(self, tmp_path, dataset):
        config = write_config(tmp_path, dataset, prompting={"mode": "cor_plus_cot"})
        run_dir = tmp_path / "run-cc"
        result = run_cli("eval", "--config", config, "--out-dir", run_dir)
        assert result.exit_code == 0, result.output
        summary = json.loads((run_dir / "summary.json").read_text())
        assert summary["aggregates"]["em_pct"] == 100.0
        assert summary["aggregates"]["ranking_exact_pct"] == 100.0

    def test_shuffled_presentation_still_scores_and_differs(self, tmp_path, dataset):
        plain = write_config(tmp_path, dataset, name="plain.json")
        shuffled = write_config(
            tmp_path, dataset, name="shuf.json", prompting={"mode": "cor", "shuffle_contexts": True}
        )
        d1, d2, d3 = tmp_path / "s1", tmp_path / "s2", tmp_path / "s3"
        assert run_cli("eval", "--config", shuffled, "--out-dir", d1).exit_code == 0
        assert run_cli("eval", "--config", shuffled, "--out-dir", d2).exit_code == 0
        assert run_cli("eval", "--config", plain, "--out-dir", d3).exit_code == 0
        # oracle still finds golds under shuffled presentation
        summary = json.loads((d1 / "summary.json").read_text())
        assert summary["aggregates"]["em_pct"] == 100.0
        assert summary["aggregates"]["ranking_exact_pct"] == 100.0
        # shuffle is seed-deterministic, and actually changes presentation order
        assert (d1 / "examples.jsonl").read_bytes() == (d2 / "examples.jsonl").read_bytes()
        rows_shuffled = [json.loads(l) for l in (d1 / "examples.jsonl").read_text().splitlines()]
        rows_plain = [json.loads(l) for l in (d3 / "examples.jsonl").read_text().splitlines()]
        assert any(
            a["context_order"] != b["context_order"] for a, b in zip(rows_shuffled, rows_plain)
        )

    def test_metadata_records_decoding_and_pool_policy(self, tmp_path, dataset):
        config = write_config(tmp_path, dataset)
        run_dir = tmp_path / "run-md"
        assert run_cli("eval", "--config", config, "--out-dir", run_dir).exit_code == 0
        metadata = json.loads((run_dir / "summary.json").read_text())["metadata"]
        assert metadata["decoding"] == {"temperature": 0.0, "max_new_tokens": 256, "seed": None}
        assert "pool_policy" in metadata
        assert metadata["config_hash"]
        assert "dataset" in metadata["input_digests"]

    def test_hotpot_fixture_through_full_pipeline(self, tmp_path):
        canon = tmp_path / "hp.jsonl"
        run_cli("ingest", "hotpot", "--input", DATA_DIR / "hotpot_mini.json", "--out", canon)
        config = write_config(tmp_path, canon, name="hp_cfg.json")
        run_dir = tmp_path / "run-hp"
        result = run_cli("eval", "--config", config, "--out-dir", run_dir)
        assert result.exit_code == 0, result.output
        summary = json.loads((run_dir / "summary.json").read_text())
        assert summary["aggregates"]["em_pct"] == 100.0
        assert summary["aggregates"]["ranking_exact_pct"] == 100.0
        rows = [json.loads(l) for l in (run_dir / "examples.jsonl").read_text().splitlines()]
        assert all(len(row["context_order"]) == 10 for row in rows)
        assert all(row["gold_injected"] is False for row in rows)  # K=10 pools reorder only

    def test_api_adversarial_decouples_rank_from_ast(self, tmp_path):
        api_canon = tmp_path / "api.jsonl"
        run_cli(
            "ingest", "gorilla",
            "--api-db", DATA_DIR / "gorilla_api_fixture.jsonl",
            "--queries", DATA_DIR / "gorilla_queries_fixture.jsonl",
            "--framework", "mixed", "--out", api_canon,
        )
        config = write_config(
            tmp_path, api_canon, name="api_adv.json",
            retriever={"k": 5}, backend={"kind": "adversarial"},
        )
        run_dir = tmp_path / "run-api-adv"
        result = run_cli("eval", "--config", config, "--out-dir", run_dir)
        assert result.exit_code == 0, result.output
        aggregates = json.loads((run_dir / "summary.json").read_text())["aggregates"]
        assert aggregates["ranking_contains_gold_pct"] == 0.0
        assert aggregates["ast_pct"] == 100.0  # answers untouched by wrong ranking

    def test_api_task_reports_ast(self, tmp_path):
        api_canon = tmp_path / "api.jsonl"
        run_cli(
            "ingest", "gorilla",
            "--api-db", DATA_DIR / "gorilla_api_fixture.jsonl",
            "--queries", DATA_DIR / "gorilla_queries_fixture.jsonl",
            "--framework", "mixed", "--out", api_canon,
        )
        config = write_config(tmp_path, api_canon, retriever={"k": 5})
        run_dir = tmp_path / "run-api"
        result = run_cli("eval", "--config", config, "--out-dir", run_dir)
        assert result.exit_code == 0, result.output
        summary = json.loads((run_dir / "summary.json").read_text())
        assert summary["aggregates"]["ast_pct"] == 100.0


class TestEmitCommand:
    def test_emit_and_validate(self, tmp_path, dataset):
        config = write_config(tmp_path, dataset)
        result = run_cli("emit", "--config", config, "--p-golden", 0.8, "--seed", 5)
        assert result.exit_code == 0, result.output
        out = tmp_path / "sft.jsonl"
        assert out.exists()
        lines = [json.loads(l) for l in out.read_text().splitlines()]
        fraction = sum(l["meta"]["gold_present"] for l in lines) / len(lines)
        assert 0.6 < fraction <= 1.0  # 20 examples, loose binomial bound

    def test_emit_dsf_has_no_id_lines(self, tmp_path, dataset):
        config = write_config(tmp_path, dataset)
        result = run_cli("emit", "--config", config, "--mode", "dsf")
        assert result.exit_code == 0, result.output
        text = (tmp_path / "sft.jsonl").read_text()
        assert "Relevant Context ID" not in text.split('"completion": "')[1].split('"')[0]
        for line in text.splitlines():
            assert not json.loads(line)["completion"].startswith("## Relevant")

    def test_invalid_k_rejected_before_work(self, tmp_path, dataset):
        config = write_config(tmp_path, dataset, emit={"k": 0, "out": str(tmp_path / "s.jsonl")})
        result = run_cli("emit", "--config", config)
        assert result.exit_code == 1
        assert not (tmp_path / "s.jsonl").exists()


class TestJudgeCommand:
    def eval_run(self, tmp_path, dataset, **cfg):
        config = write_config(tmp_path, dataset, **cfg)
        run_dir = tmp_path / "jrun"
        assert run_cli("eval", "--config", config, "--out-dir", run_dir).exit_code == 0
        return config, run_dir

    def test_always_yes_judge(self, tmp_path, dataset):
        config, run_dir = self.eval_run(tmp_path, dataset)
        result = run_cli("judge", "--config", config, "--run-dir", run_dir)
        assert result.exit_code == 0, result.output
        summary = json.loads((run_dir / "summary.json").read_text())
        assert summary["aggregates"]["judge_yes_pct"] == 100.0
        assert (run_dir / "judge.jsonl").exists()

    def test_dsf_run_rejected(self, tmp_path, dataset):
        config, run_dir = self.eval_run(tmp_path, dataset, prompting={"mode": "dsf"})
        result = run_cli("judge", "--config", config, "--run-dir", run_dir)
        assert result.exit_code == 1

    def test_mixed_scripted_judge_recount(self, tmp_path, dataset):
        config, run_dir = self.eval_run(tmp_path, dataset)
        examples = load_canonical(dataset)
        script = tmp_path / "judge_script.jsonl"
        verdicts = ["Yes" if i % 4 else "No" for i in range(len(examples))]
        script.write_text(
            "\n".join(
                json.dumps({"match": e.example_id, "response": v})
                for e, v in zip(examples, verdicts)
            )
            + "\n"
        )
        config2 = write_config(
            tmp_path, dataset, name="cfg2.json", judge={"kind": "scripted", "script": str(script)}
        )
        result = run_cli("judge", "--config", config2, "--run-dir", run_dir)
        assert result.exit_code == 0, result.output
        summary = json.loads((run_dir / "summary.json").read_text())
        expected = verdicts.count("Yes") / len(verdicts) * 100.0
        assert summary["aggregates"]["judge_yes_pct"] == pytest.approx(expected)


class TestReportCommand:
    def test_single_and_multi_run_tables(self, tmp_path, dataset):
        config = write_config(tmp_path, dataset)
        d1, d2 = tmp_path / "r1", tmp_path / "r2"
        run_cli("eval", "--config", config, "--out-dir", d1)
        run_cli("eval", "--config", config, "--out-dir", d2, "--mode", "dsf")
        single = run_cli("report", d1)
        assert single.exit_code == 0
        assert "r1" in single.output and "EM" in single.output
        both = run_cli("report", d1, d2, "--out", tmp_path / "cmp")
        assert both.exit_code == 0
        assert (tmp_path / "cmp.txt").exists() and (tmp_path / "cmp.json").exists()
        assert "r2" in both.output

    def test_report_bytes_deterministic(self, tmp_path, dataset):
        config = write_config(tmp_path, dataset)
        d1 = tmp_path / "r1"
        run_cli("eval", "--config", config, "--out-dir", d1)
        out1 = run_cli("report", d1).output
        out2 = run_cli("report", d1).output
        assert out1 == out2

    def test_mixed_task_kinds_render_separate_sections(self, tmp_path, dataset):
        api_canon = tmp_path / "api.jsonl"
        run_cli(
            "ingest", "gorilla",
            "--api-db", DATA_DIR / "gorilla_api_fixture.jsonl",
            "--queries", DATA_DIR / "gorilla_queries_fixture.jsonl",
            "--framework", "mixed", "--out", api_canon,
        )
        qa_cfg = write_config(tmp_path, dataset)
        api_cfg = write_config(tmp_path, api_canon, name="api_cfg.json", retriever={"k": 5})
        dq, da = tmp_path / "rq", tmp_path / "ra"
        run_cli("eval", "--config", qa_cfg, "--out-dir", dq)
        run_cli("eval", "--config", api_cfg, "--out-dir", da)
        result = run_cli("report", dq, da)
        assert result.exit_code == 0
        assert "task: qa" in result.output
        assert "task: api" in result.output
