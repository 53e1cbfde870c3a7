"""Command-line entry points.

Exit codes: 0 success, 1 configuration error, 2 validation failure,
3 no example survived the run.
"""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click

from .config import ConfigError, load_config
from .corpus import CanonicalFormatError, IngestError, ingest_gorilla, ingest_hotpot, save_canonical
from .pipeline import report_runs, run_emit, run_eval, run_judge

logger = logging.getLogger(__name__)

EXIT_CONFIG = 1
EXIT_VALIDATION = 2
EXIT_ALL_FAILED = 3


@click.group()
@click.option("--verbose", is_flag=True, help="Enable debug logging.")
def main(verbose: bool):
    """Batch harness for rank-then-answer retrieval-augmented generation."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )


@main.group()
def ingest():
    """Convert upstream dataset files into the canonical example format."""


@ingest.command("hotpot")
@click.option("--input", "input_path", required=True, type=click.Path(exists=True))
@click.option("--split", type=click.Choice(["train", "dev"]), default="dev")
@click.option("--out", "out_path", required=True, type=click.Path())
def ingest_hotpot_cmd(input_path: str, split: str, out_path: str):
    """Ingest a distractor-format multi-hop QA JSON file."""
    try:
        examples = ingest_hotpot(input_path, split)
    except IngestError as exc:
        click.echo(f"ingestion error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    save_canonical(examples, out_path)
    click.echo(f"wrote {len(examples)} examples to {out_path}")


@ingest.command("gorilla")
@click.option("--api-db", required=True, type=click.Path(exists=True))
@click.option("--queries", required=True, type=click.Path(exists=True))
@click.option("--framework", required=True)
@click.option("--out", "out_path", required=True, type=click.Path())
def ingest_gorilla_cmd(api_db: str, queries: str, framework: str, out_path: str):
    """Ingest an API database plus its instruction file."""
    try:
        refs, examples = ingest_gorilla(api_db, queries, framework)
    except IngestError as exc:
        click.echo(f"ingestion error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    save_canonical(examples, out_path)
    click.echo(f"wrote {len(examples)} examples over {len(refs)} APIs to {out_path}")


def _overrides(mode, k, seed, backend_url, forced_ranking) -> dict:
    overrides: dict = {}
    if mode is not None:
        overrides.setdefault("prompting", {})["mode"] = mode
    if k is not None:
        overrides.setdefault("retriever", {})["k"] = k
    if seed is not None:
        overrides["seed"] = seed
    if backend_url is not None:
        overrides.setdefault("backend", {})["url"] = backend_url
    if forced_ranking is not None:
        overrides["forced_ranking"] = forced_ranking
    return overrides


@main.command("eval")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--mode", default=None, help="Override prompting.mode.")
@click.option("--k", default=None, type=int, help="Override retriever.k.")
@click.option("--seed", default=None, type=int, help="Override the run seed.")
@click.option("--backend-url", default=None, help="Override backend.url.")
@click.option("--forced-ranking", default=None, help="correct | wrong | comma list of positions.")
@click.option("--out-dir", default=None, type=click.Path(), help="Override out_dir.")
def eval_cmd(config_path, mode, k, seed, backend_url, forced_ranking, out_dir):
    """Run the retrieve-prompt-generate-parse-score pipeline."""
    try:
        config = load_config(config_path, _overrides(mode, k, seed, backend_url, forced_ranking))
        target_dir = out_dir or config["out_dir"]
        if not target_dir:
            raise ConfigError("out_dir is required (config out_dir or --out-dir)")
        report, scored = run_eval(config, target_dir)
    except (ConfigError, CanonicalFormatError) as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    if scored == 0:
        click.echo("no example succeeded", err=True)
        sys.exit(EXIT_ALL_FAILED)
    click.echo((Path(target_dir) / "table.txt").read_text(encoding="utf-8").rstrip())
    click.echo(f"run written to {target_dir}")


@main.command("emit")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--mode", default=None)
@click.option("--seed", default=None, type=int, help="Override emit.seed.")
@click.option("--p-golden", default=None, type=float, help="Override emit.p_golden.")
@click.option("--out", "out_path", default=None, type=click.Path(), help="Override emit.out.")
def emit_cmd(config_path, mode, seed, p_golden, out_path):
    """Emit supervised-finetuning records and validate them."""
    overrides: dict = {}
    if mode is not None:
        overrides.setdefault("prompting", {})["mode"] = mode
    emit_over: dict = {}
    if seed is not None:
        emit_over["seed"] = seed
    if p_golden is not None:
        emit_over["p_golden"] = p_golden
    if out_path is not None:
        emit_over["out"] = out_path
    if emit_over:
        overrides["emit"] = emit_over
    try:
        config = load_config(config_path, overrides)
        records, report, written = run_emit(config)
    except (ConfigError, CanonicalFormatError, ValueError) as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    gold = sum(1 for r in records if r.gold_present)
    click.echo(f"emitted {len(records)} records to {written} (gold fraction {gold / max(len(records), 1):.3f})")
    if not report.ok:
        for failure in report.failures[:20]:
            click.echo(f"validation failure: {failure}", err=True)
        click.echo(f"{len(report.failures)} validation failures", err=True)
        sys.exit(EXIT_VALIDATION)
    click.echo(f"validation: {report.checked} records, zero failures")


@main.command("judge")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--run-dir", required=True, type=click.Path(exists=True))
def judge_cmd(config_path, run_dir):
    """Judge the reasoning of a completed eval run."""
    try:
        config = load_config(config_path)
        yes_rate = run_judge(config, run_dir)
    except (ConfigError, CanonicalFormatError) as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    click.echo(f"judge yes-rate: {yes_rate * 100.0:.2f}%")


@main.command("report")
@click.argument("run_dirs", nargs=-1, required=True, type=click.Path(exists=True))
@click.option("--out", "out_base", default=None, type=click.Path(), help="Write <out>.txt and <out>.json.")
def report_cmd(run_dirs, out_base):
    """Side-by-side comparison table over completed runs."""
    try:
        text, data = report_runs(list(run_dirs))
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    click.echo(text)
    if out_base:
        Path(f"{out_base}.txt").write_text(text + "\n", encoding="utf-8")
        Path(f"{out_base}.json").write_text(
            json.dumps(data, sort_keys=True, indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
        )
        click.echo(f"wrote {out_base}.txt and {out_base}.json")


if __name__ == "__main__":
    main()
