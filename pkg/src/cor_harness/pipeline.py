"""End-to-end run orchestration: eval, judge, emit, report rendering.

A run directory holds run.json (resolved config + input digests),
examples.jsonl (per-example rows, ordered by example id), summary.json
(aggregates + metadata), and table.txt. Nothing time-dependent is written,
so identical inputs with a deterministic backend reproduce a run directory
byte for byte.
"""

from __future__ import annotations

import hashlib
import json
import logging
import random
from pathlib import Path

from . import metrics
from .api_ast import ParseCallError, parse_call, subtree_match_detail
from .config import ConfigError, RunConfig, parse_forced_ranking
from .corpus import Example, load_canonical
from .judge import build_judge_tasks, judge_run
from .llm_backend import (
    AdversarialBackend,
    ConstantBackend,
    GenRequest,
    HttpBackend,
    OracleBackend,
    ScriptedBackend,
    generate_batch,
)
from .output_parser import parse_output
from .prompting import ReasoningMode, load_template, render_id_line, render_prompt
from .retriever import build_index, ensure_gold, retrieve
from .sft_emitter import MixingPolicy, ValidationReport, attach_reasoning, emit, save_sft

logger = logging.getLogger(__name__)


def _sha256_file(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def input_digests(config: RunConfig) -> dict[str, str]:
    digests = {}
    for label, value in (
        ("dataset", config["dataset"]["path"]),
        ("template", config["prompting"]["template"]),
        ("backend_script", config.section("backend").get("script")),
        ("judge_script", config.section("judge").get("script")),
    ):
        if value and Path(value).exists():
            digests[label] = _sha256_file(value)
    return digests


def build_backend(section: dict, examples: list[Example]):
    kind = section["kind"]
    if kind == "oracle":
        return OracleBackend(examples)
    if kind == "adversarial":
        return AdversarialBackend(examples)
    if kind == "scripted":
        return ScriptedBackend(section["script"])
    if kind == "constant":
        return ConstantBackend(section["text"])
    return HttpBackend(
        url=section["url"],
        model=section["model"] or "default",
        max_retries=section.get("max_retries", 3),
        timeout=section.get("timeout", 60.0),
    )


def _forced_prefix(policy, gold_positions: list[int], all_positions: list[int]) -> str | None:
    if policy is None:
        return None
    name, fixed = policy
    if name == "correct":
        positions = gold_positions
    elif name == "wrong":
        positions = [p for p in all_positions if p not in gold_positions]
    else:
        positions = fixed
    return render_id_line(positions) + "\n"


def _gold_texts(ex: Example) -> list[str]:
    return [ex.gold_api.api_call] if ex.task_kind == "api" else ex.gold_answers


def run_eval(config: RunConfig, out_dir: str | Path) -> tuple[metrics.RunReport, int]:
    """Execute the full per-example pipeline and write the run directory.

    Returns the report and the count of successfully scored examples.
    Per-example failures are recorded in the rows, never abort the run.
    """
    dataset_path = config["dataset"]["path"]
    if not dataset_path:
        raise ConfigError("dataset.path is required for eval")
    examples = load_canonical(dataset_path)
    if not examples:
        raise ConfigError(f"dataset {dataset_path} holds no examples")

    mode = config.mode
    retr = config.section("retriever")
    k = config.k
    template = None
    if config["prompting"]["template"]:
        template = load_template(config["prompting"]["template"])
    shuffle = bool(config["prompting"]["shuffle_contexts"])
    forced = parse_forced_ranking(config["forced_ranking"])
    backend_cfg = config.section("backend")
    backend = build_backend(backend_cfg, examples)

    requests_: list[GenRequest] = []
    prepared: list[dict] = []
    for ex in examples:
        index = build_index(ex.contexts, k1=retr["k1"], b=retr["b"])
        result = retrieve(index, ex.question, k)
        contexts = ensure_gold(result, ex, k)
        if shuffle:
            random.Random(f"{config['seed']}:{ex.example_id}").shuffle(contexts)
        rendered = render_prompt(mode, ex.question, contexts, template=template)
        gold_positions = [i for i, d in enumerate(contexts, start=1) if d.doc_id in ex.gold_ids]
        all_positions = list(range(1, len(contexts) + 1))
        prefix = _forced_prefix(forced, gold_positions, all_positions)
        prepared.append(
            {
                "example": ex,
                "context_order": rendered.context_order,
                "gold_injected": result.gold_injected,
                "forced_prefix": prefix,
            }
        )
        requests_.append(
            GenRequest(
                prompt=rendered.text,
                forced_prefix=prefix,
                max_new_tokens=backend_cfg["max_new_tokens"],
                temperature=backend_cfg["temperature"],
                seed=backend_cfg["seed"],
                tag=ex.example_id,
            )
        )

    outcomes = generate_batch(backend, requests_, backend_cfg["max_in_flight"])

    rows: list[dict] = []
    scores: list[metrics.ExampleScore] = []
    for prep, outcome in zip(prepared, outcomes):
        ex: Example = prep["example"]
        row = {
            "example_id": ex.example_id,
            "mode": mode.value,
            "context_order": prep["context_order"],
            "gold_ids": sorted(ex.gold_ids),
            "gold_injected": prep["gold_injected"],
        }
        if prep["forced_prefix"] is not None:
            row["forced_prefix"] = prep["forced_prefix"]
        if not outcome.ok:
            row["error"] = outcome.error
            rows.append(row)
            continue
        response = outcome.response
        parsed = parse_output(mode, response.text, prep["context_order"])
        ranking_exact, contains_gold = metrics.ranking_score(parsed, ex.gold_ids)
        ast_match = None
        if ex.task_kind == "api":
            try:
                ast_match, lenient = subtree_match_detail(parse_call(parsed.answer), ex.gold_api)
            except ParseCallError:
                ast_match, lenient = False, False
            row["ast_lenient"] = lenient
        score = metrics.ExampleScore(
            example_id=ex.example_id,
            em=metrics.exact_match(parsed.answer, _gold_texts(ex)),
            f1=metrics.f1_score(parsed.answer, _gold_texts(ex)),
            ranking_exact=ranking_exact,
            ranking_contains_gold=contains_gold,
            reasoning_tokens=metrics.reasoning_tokens(parsed, mode),
            reasoning_tokens_model=metrics.reasoning_tokens_model(
                parsed, mode, response.completion_tokens, response.text
            ),
            ast_match=ast_match,
            parse_flags=parsed.parse_flags,
        )
        scores.append(score)
        row["raw_output"] = response.text
        row["parsed"] = {
            "selected_positions": parsed.selected_positions,
            "selected_doc_ids": parsed.selected_doc_ids,
            "reasoning_text": parsed.reasoning_text,
            "answer": parsed.answer,
            "parse_flags": sorted(parsed.parse_flags),
            "id_line": parsed.id_line,
        }
        if response.prompt_tokens is not None:
            row["usage"] = {
                "prompt_tokens": response.prompt_tokens,
                "completion_tokens": response.completion_tokens,
            }
        row["score"] = score.to_row()
        rows.append(row)

    if not scores:
        # Still write the rows so failures can be inspected.
        _write_rows(Path(out_dir), config, rows)
        return metrics.RunReport(per_example=[], aggregates={}, metadata={}), 0

    metadata = {
        "mode": mode.value,
        "k": k,
        "task_kind": examples[0].task_kind,
        "backend_id": getattr(backend, "backend_id", "unknown"),
        "config_hash": config.config_hash(),
        "input_digests": input_digests(config),
        "decoding": {
            "temperature": backend_cfg["temperature"],
            "max_new_tokens": backend_cfg["max_new_tokens"],
            "seed": backend_cfg["seed"],
        },
        "retriever": {"k1": retr["k1"], "b": retr["b"], "k": k},
        "seed": config["seed"],
        "forced_ranking": config["forced_ranking"],
        "shuffle_contexts": shuffle,
        "dataset_path": str(dataset_path),
        "examples_total": len(examples),
        "examples_failed": len(examples) - len(scores),
        "pool_policy": "per-example pool; api pools are per-framework",
        "prefix_fallback_used": bool(getattr(backend, "prefix_fallback_used", False)),
    }
    report = metrics.aggregate(scores, metadata)
    write_run_dir(Path(out_dir), config, rows, report)
    return report, len(scores)


def _write_rows(out_dir: Path, config: RunConfig, rows: list[dict]) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "run.json").write_text(
        json.dumps(
            {"config": config.data, "config_hash": config.config_hash(), "input_digests": input_digests(config)},
            sort_keys=True,
            indent=2,
            ensure_ascii=False,
        )
        + "\n",
        encoding="utf-8",
    )
    with (out_dir / "examples.jsonl").open("w", encoding="utf-8") as fh:
        for row in sorted(rows, key=lambda r: r["example_id"]):
            fh.write(json.dumps(row, sort_keys=True, ensure_ascii=False))
            fh.write("\n")


def write_run_dir(out_dir: Path, config: RunConfig, rows: list[dict], report: metrics.RunReport) -> None:
    _write_rows(out_dir, config, rows)
    (out_dir / "summary.json").write_text(
        json.dumps(report.to_dict(), sort_keys=True, indent=2, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )
    # Fixed row label keeps rerun directories byte-identical wherever they live.
    (out_dir / "table.txt").write_text(
        render_table([("run", report.aggregates, report.metadata)]) + "\n", encoding="utf-8"
    )


_COLUMNS = [
    ("EM", "em_pct"),
    ("F1", "f1_pct"),
    ("AST", "ast_pct"),
    ("RankExact", "ranking_exact_pct"),
    ("RankGold", "ranking_contains_gold_pct"),
    ("JudgeYes", "judge_yes_pct"),
    ("ReasTok", "reasoning_tokens_mean"),
]


def render_table(entries: list[tuple[str, dict, dict]]) -> str:
    """Aligned plain-text comparison of run aggregates, grouped by task kind."""
    sections: dict[str, list[tuple[str, dict, dict]]] = {}
    for entry in entries:
        sections.setdefault(entry[2].get("task_kind", "?"), []).append(entry)
    blocks = []
    for task_kind in sorted(sections):
        rows = [["run", "mode", "N"] + [c[0] for c in _COLUMNS]]
        for label, aggregates, metadata in sections[task_kind]:
            row = [label, str(metadata.get("mode", "?")), str(aggregates.get("examples", 0))]
            for _, key in _COLUMNS:
                value = aggregates.get(key)
                row.append("-" if value is None else f"{value:.2f}")
            rows.append(row)
        widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
        lines = [f"task: {task_kind}"]
        for i, row in enumerate(rows):
            lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
            if i == 0:
                lines.append("  ".join("-" * w for w in widths))
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks)


def run_judge(config: RunConfig, run_dir: str | Path) -> float:
    """Judge a completed eval run and fold the yes-rate into its summary."""
    run_dir = Path(run_dir)
    summary_path = run_dir / "summary.json"
    if not summary_path.exists():
        raise ConfigError(f"{run_dir} holds no completed eval run (missing summary.json)")
    summary = json.loads(summary_path.read_text(encoding="utf-8"))
    run_mode = summary["metadata"]["mode"]
    if ReasoningMode.parse(run_mode) == ReasoningMode.DSF:
        raise ConfigError(f"run mode {run_mode} produces no reasoning regions to judge")

    rows = []
    for line in (run_dir / "examples.jsonl").read_text(encoding="utf-8").splitlines():
        if line.strip():
            rows.append(json.loads(line))
    scored_rows = [r for r in rows if "parsed" in r]
    dataset_path = summary["metadata"]["dataset_path"]
    examples_by_id = {ex.example_id: ex for ex in load_canonical(dataset_path)}

    judge_cfg = config.section("judge")
    backend = build_backend(judge_cfg, list(examples_by_id.values()))
    tasks = build_judge_tasks(scored_rows, examples_by_id, seed=judge_cfg["seed"])
    if not tasks:
        raise ConfigError("no judgeable rows in the run")
    yes_rate, tasks = judge_run(tasks, backend, judge_cfg["max_in_flight"])

    verdict_by_id = {t.example_id: t.verdict for t in tasks}
    with (run_dir / "judge.jsonl").open("w", encoding="utf-8") as fh:
        for task in sorted(tasks, key=lambda t: t.example_id):
            fh.write(
                json.dumps(
                    {
                        "example_id": task.example_id,
                        "verdict": task.verdict,
                        "reasoning_text": task.reasoning_text,
                        "context_doc_ids": [d.doc_id for d in task.contexts],
                    },
                    sort_keys=True,
                    ensure_ascii=False,
                )
                + "\n"
            )

    for row in rows:
        verdict = verdict_by_id.get(row["example_id"])
        if verdict is not None and "score" in row:
            row["score"]["judge_verdict"] = verdict
    with (run_dir / "examples.jsonl").open("w", encoding="utf-8") as fh:
        for row in sorted(rows, key=lambda r: r["example_id"]):
            fh.write(json.dumps(row, sort_keys=True, ensure_ascii=False))
            fh.write("\n")

    verdicts = [t.verdict for t in tasks]
    summary["aggregates"]["judge_yes_pct"] = yes_rate * 100.0
    summary["aggregates"]["judge_unparseable"] = verdicts.count("unparseable")
    summary["metadata"]["judge_backend_id"] = getattr(backend, "backend_id", "unknown")
    summary_path.write_text(
        json.dumps(summary, sort_keys=True, indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
    )
    (run_dir / "table.txt").write_text(
        render_table([("run", summary["aggregates"], summary["metadata"])]) + "\n",
        encoding="utf-8",
    )
    return yes_rate


def run_emit(config: RunConfig) -> tuple[list, ValidationReport, Path]:
    """Emit SFT records per the config, validate, and write them."""
    dataset_path = config["dataset"]["path"]
    if not dataset_path:
        raise ConfigError("dataset.path is required for emit")
    emit_cfg = config.section("emit")
    out_path = emit_cfg["out"]
    if not out_path:
        raise ConfigError("emit.out is required")
    examples = load_canonical(dataset_path)
    mode = config.mode
    k = emit_cfg["k"] or config.k
    policy = MixingPolicy(
        p_golden=float(emit_cfg["p_golden"]),
        distractor_source=emit_cfg["distractor_source"],
        seed=int(emit_cfg["seed"]),
    )
    template = None
    if config["prompting"]["template"]:
        template = load_template(config["prompting"]["template"])

    reasoning_map = None
    if mode in (ReasoningMode.COT, ReasoningMode.CON):
        prompt_file = emit_cfg["reasoning_prompt"]
        if not prompt_file:
            raise ConfigError(f"mode {mode.value} requires emit.reasoning_prompt")
        cache_dir = emit_cfg["cache_dir"] or str(Path(out_path).parent)
        backend = build_backend(config.section("backend"), examples)
        reasoning_map = attach_reasoning(
            examples, prompt_file, backend, cache_dir, config.section("backend")["max_in_flight"]
        )

    retr = config.section("retriever")
    records = emit(
        examples,
        mode,
        policy,
        k,
        k1=retr["k1"],
        b=retr["b"],
        reasoning_map=reasoning_map,
        template=template,
        shuffle_contexts=bool(config["prompting"]["shuffle_contexts"]),
    )
    report = validate_records(records)
    save_sft(records, out_path)
    validation_path = Path(str(out_path) + ".validation.json")
    validation_path.write_text(
        json.dumps(
            {
                "checked": report.checked,
                "failures": report.failures,
                "config_hash": config.config_hash(),
                "gold_present_fraction": (
                    sum(1 for r in records if r.gold_present) / len(records) if records else None
                ),
                "gold_absent_policy": "closed-book: empty ID list, gold answer kept",
            },
            sort_keys=True,
            indent=2,
            ensure_ascii=False,
        )
        + "\n",
        encoding="utf-8",
    )
    return records, report, Path(out_path)


def validate_records(records) -> ValidationReport:
    from .sft_emitter import validate

    return validate(records)


def report_runs(run_dirs: list[str | Path]) -> tuple[str, dict]:
    """Side-by-side comparison of completed runs (text and JSON forms)."""
    entries = []
    json_runs = []
    for run_dir in run_dirs:
        summary_path = Path(run_dir) / "summary.json"
        if not summary_path.exists():
            raise ConfigError(f"{run_dir} holds no summary.json")
        summary = json.loads(summary_path.read_text(encoding="utf-8"))
        entries.append((Path(run_dir).name, summary["aggregates"], summary["metadata"]))
        json_runs.append(
            {
                "run": Path(run_dir).name,
                "aggregates": summary["aggregates"],
                "metadata": summary["metadata"],
            }
        )
    return render_table(entries), {"runs": json_runs}
