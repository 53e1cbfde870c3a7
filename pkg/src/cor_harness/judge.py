"""LLM-as-judge reasoning evaluation.

Each judged example gets exactly five contexts: the gold context(s) plus
the top-ranked distractors, shuffled with a per-example seeded RNG so runs
are reproducible. ID-selection reasoning is restated as a prose sentence in
the judge prompt's own numbering; free-text reasoning passes through
verbatim. All prompts render through the single judge template.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass

from .corpus import ContextDoc, Example
from .llm_backend import GenRequest, generate_batch
from .output_parser import parse_judge
from .prompting import ReasoningMode, render_judge_prompt

logger = logging.getLogger(__name__)

JUDGE_CONTEXT_COUNT = 5


@dataclass
class JudgeTask:
    example_id: str
    question: str
    contexts: list[ContextDoc]  # exactly 5
    reasoning_text: str
    verdict: str | None = None


def _restate_selection(judge_positions: list[int]) -> str:
    if not judge_positions:
        return "The reasoning selected none of the shown contexts."
    labels = [f"Context{p}" for p in judge_positions]
    if len(labels) == 1:
        return f"The reasoning selected {labels[0]}."
    return f"The reasoning selected {', '.join(labels[:-1])} and {labels[-1]}."


def build_judge_tasks(rows: list[dict], examples_by_id: dict[str, Example], seed: int) -> list[JudgeTask]:
    """Build five-context judge tasks from eval rows.

    rows are per-example eval records carrying context_order, the parsed
    selection, and the reasoning text. Examples lacking a presented gold
    context (or with fewer than five presented contexts) are skipped with a
    warning.
    """
    tasks: list[JudgeTask] = []
    skipped = 0
    for row in rows:
        example_id = row["example_id"]
        ex = examples_by_id.get(example_id)
        if ex is None:
            logger.warning("judge: no canonical example for %s, skipped", example_id)
            skipped += 1
            continue
        mode = ReasoningMode.parse(row["mode"])
        presented = [ex.doc_by_id(d) for d in row["context_order"]]
        golds = [d for d in presented if d.doc_id in ex.gold_ids]
        if not golds:
            logger.warning("judge: %s has no gold context presented, skipped", example_id)
            skipped += 1
            continue
        distractors = [d for d in presented if d.doc_id not in ex.gold_ids]
        chosen = golds[:JUDGE_CONTEXT_COUNT]
        chosen += distractors[: JUDGE_CONTEXT_COUNT - len(chosen)]
        if len(chosen) < JUDGE_CONTEXT_COUNT:
            logger.warning("judge: %s has only %d contexts, skipped", example_id, len(chosen))
            skipped += 1
            continue
        rng = random.Random(f"{seed}:{example_id}")
        rng.shuffle(chosen)

        parsed = row["parsed"]
        if mode in (ReasoningMode.COR, ReasoningMode.COR_PLUS_COT):
            selected = set(parsed.get("selected_doc_ids", []))
            judge_positions = [i for i, d in enumerate(chosen, start=1) if d.doc_id in selected]
            reasoning = _restate_selection(judge_positions)
            extra = parsed.get("reasoning_text")
            if mode == ReasoningMode.COR_PLUS_COT and extra:
                reasoning = f"{reasoning}\n{extra}"
        else:
            reasoning = parsed.get("reasoning_text") or ""
        tasks.append(
            JudgeTask(
                example_id=example_id,
                question=ex.question,
                contexts=chosen,
                reasoning_text=reasoning,
            )
        )
    if skipped:
        logger.warning("judge: skipped %d of %d rows", skipped, len(rows))
    return tasks


def judge_run(tasks: list[JudgeTask], backend, max_in_flight: int = 1) -> tuple[float, list[JudgeTask]]:
    """Evaluate all tasks through the judge backend.

    Returns the yes-rate over all tasks (unparseable verdicts and backend
    failures count as failures) and the tasks with verdicts filled in.
    """
    if not tasks:
        raise ValueError("no judge tasks")
    requests_ = [
        GenRequest(
            prompt=render_judge_prompt(t.question, t.contexts, t.reasoning_text),
            tag=t.example_id,
        )
        for t in tasks
    ]
    outcomes = generate_batch(backend, requests_, max_in_flight)
    yes = 0
    for task, outcome in zip(tasks, outcomes):
        if not outcome.ok:
            logger.warning("judge backend failed for %s: %s", task.example_id, outcome.error)
            task.verdict = "unparseable"
            continue
        task.verdict = parse_judge(outcome.response.text)
        if task.verdict == "yes":
            yes += 1
    return yes / len(tasks), tasks
