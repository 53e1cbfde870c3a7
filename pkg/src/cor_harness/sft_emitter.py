"""Supervised-finetuning record generation.

Each record pairs a K-context prompt with a target that teaches the joint
rank-then-answer objective. The mixing policy controls how often the
context set is guaranteed to include a gold document; gold-absent records
keep the gold answer but supervise an empty selection, teaching closed-book
behavior. Emission is deterministic: every random choice derives from a
per-example RNG keyed by (seed, example_id), so identical inputs produce
byte-identical output files.
"""

from __future__ import annotations

import hashlib
import json
import logging
import random
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import Example
from .llm_backend import GenRequest, generate_batch
from .output_parser import parse_answer_only, parse_cor, parse_reasoned
from .prompting import ReasoningMode, render_prompt, render_target
from .retriever import DEFAULT_B, DEFAULT_K1, build_index, ensure_gold, retrieve

logger = logging.getLogger(__name__)


@dataclass
class MixingPolicy:
    p_golden: float = 1.0
    distractor_source: str = "retrieved"  # "retrieved" | "random"
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.p_golden <= 1.0:
            raise ValueError(f"p_golden must lie in [0, 1], got {self.p_golden}")
        if self.distractor_source not in ("retrieved", "random"):
            raise ValueError(f"unknown distractor_source {self.distractor_source!r}")


@dataclass
class SftRecord:
    prompt: str
    target: str
    example_id: str
    mode: ReasoningMode
    gold_present: bool
    context_order: list[int]
    # Self-contained validation payload: what the target must parse back to.
    target_positions: list[int] = field(default_factory=list)
    answer: str = ""
    gold_doc_ids: list[int] = field(default_factory=list)

    def to_json_dict(self) -> dict:
        return {
            "prompt": self.prompt,
            "completion": self.target,
            "meta": {
                "example_id": self.example_id,
                "mode": self.mode.value,
                "gold_present": self.gold_present,
                "context_order": self.context_order,
                "target_positions": self.target_positions,
                "answer": self.answer,
                "gold_doc_ids": self.gold_doc_ids,
            },
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "SftRecord":
        meta = data["meta"]
        return cls(
            prompt=data["prompt"],
            target=data["completion"],
            example_id=meta["example_id"],
            mode=ReasoningMode.parse(meta["mode"]),
            gold_present=meta["gold_present"],
            context_order=list(meta["context_order"]),
            target_positions=list(meta["target_positions"]),
            answer=meta["answer"],
            gold_doc_ids=list(meta["gold_doc_ids"]),
        )


@dataclass
class ValidationReport:
    checked: int = 0
    failures: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures


def _gold_answer(ex: Example) -> str:
    return ex.gold_api.api_call if ex.task_kind == "api" else ex.gold_answers[0]


def emit(
    examples: list[Example],
    mode: ReasoningMode,
    policy: MixingPolicy,
    k: int,
    k1: float = DEFAULT_K1,
    b: float = DEFAULT_B,
    reasoning_map: dict[str, str] | None = None,
    template: str | None = None,
    shuffle_contexts: bool = False,
) -> list[SftRecord]:
    """Generate one training record per example under the mixing policy.

    With probability p_golden the context set passes through gold injection
    (gold guaranteed present); otherwise golds are excluded and replaced by
    the next-best distractors (or random ones, per the policy). Examples
    whose pool cannot fill K slots, or that lack reasoning in the modes
    that need it, are skipped with a warning.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    needs_reasoning = mode in (ReasoningMode.COT, ReasoningMode.CON)
    if needs_reasoning and reasoning_map is None:
        raise ValueError(f"mode {mode.value} requires a reasoning map (see attach_reasoning)")

    records: list[SftRecord] = []
    skipped = 0
    for ex in examples:
        rng = random.Random(f"{policy.seed}:{ex.example_id}")
        want_gold = rng.random() < policy.p_golden
        index = build_index(ex.contexts, k1=k1, b=b)
        result = retrieve(index, ex.question, k)

        if want_gold:
            contexts = ensure_gold(result, ex, k)
            if len(contexts) < k:
                logger.warning("emit: %s pool smaller than k=%d, skipped", ex.example_id, k)
                skipped += 1
                continue
        else:
            non_gold = [doc_id for doc_id, _ in result.full_ranking if doc_id not in ex.gold_ids]
            if len(non_gold) < k:
                logger.warning("emit: %s lacks %d non-gold distractors, skipped", ex.example_id, k)
                skipped += 1
                continue
            chosen = rng.sample(non_gold, k) if policy.distractor_source == "random" else non_gold[:k]
            contexts = [ex.doc_by_id(d) for d in chosen]

        if shuffle_contexts:
            rng.shuffle(contexts)

        reasoning = None
        if needs_reasoning:
            reasoning = (reasoning_map or {}).get(ex.example_id)
            if not reasoning:
                logger.warning("emit: %s has no reasoning text, skipped", ex.example_id)
                skipped += 1
                continue
        elif mode == ReasoningMode.COR_PLUS_COT and reasoning_map:
            # combined mode takes reasoning opportunistically: ID+answer alone
            # is still a valid target when no reasoning was generated
            reasoning = reasoning_map.get(ex.example_id)

        rendered = render_prompt(mode, ex.question, contexts, template=template)
        gold_present = any(d.doc_id in ex.gold_ids for d in contexts)
        positions = [i for i, d in enumerate(contexts, start=1) if d.doc_id in ex.gold_ids]
        answer = _gold_answer(ex)
        target = render_target(
            mode,
            positions,
            reasoning,
            answer,
            n_contexts=len(contexts),
            allow_empty_ids=not gold_present,
        )
        records.append(
            SftRecord(
                prompt=rendered.text,
                target=target,
                example_id=ex.example_id,
                mode=mode,
                gold_present=gold_present,
                context_order=rendered.context_order,
                target_positions=positions if mode in (ReasoningMode.COR, ReasoningMode.COR_PLUS_COT) else [],
                answer=answer,
                gold_doc_ids=sorted(ex.gold_ids),
            )
        )
    if skipped:
        logger.warning("emit: skipped %d of %d examples", skipped, len(examples))
    return records


def attach_reasoning(
    examples: list[Example],
    prompt_file: str | Path,
    backend,
    cache_dir: str | Path,
    max_in_flight: int = 1,
) -> dict[str, str]:
    """Generate (or reuse cached) reasoning text for each example.

    The generation prompt is a user-supplied template with {question},
    {contexts}, {golden_contexts}, and {answer} placeholders. Results are
    cached on disk keyed by (example_id, prompt-file hash) so regeneration
    is incremental. Backend failures leave the example out of the mapping.
    """
    template = Path(prompt_file).read_text(encoding="utf-8")
    prompt_hash = hashlib.sha256(template.encode("utf-8")).hexdigest()[:12]
    cache_path = Path(cache_dir) / "reasoning_cache.json"
    cache: dict[str, str] = {}
    if cache_path.exists():
        cache = json.loads(cache_path.read_text(encoding="utf-8"))

    def render_gen_prompt(ex: Example) -> str:
        block = "\n".join(
            f"Context{i}: {d.title}: {d.body}" if d.title else f"Context{i}: {d.body}"
            for i, d in enumerate(ex.contexts, start=1)
        )
        gold_block = "\n".join(
            f"Context{i}: {d.title}: {d.body}" if d.title else f"Context{i}: {d.body}"
            for i, d in enumerate(ex.gold_docs(), start=1)
        )
        text = template.replace("{question}", ex.question)
        text = text.replace("{contexts}", block).replace("{context_N}", block)
        text = text.replace("{golden_contexts}", gold_block)
        return text.replace("{answer}", _gold_answer(ex))

    out: dict[str, str] = {}
    pending: list[Example] = []
    for ex in examples:
        key = f"{ex.example_id}:{prompt_hash}"
        if key in cache:
            out[ex.example_id] = cache[key]
        else:
            pending.append(ex)

    if pending:
        requests_ = [GenRequest(prompt=render_gen_prompt(ex), tag=ex.example_id) for ex in pending]
        outcomes = generate_batch(backend, requests_, max_in_flight)
        for ex, outcome in zip(pending, outcomes):
            if not outcome.ok:
                logger.warning("attach_reasoning: backend failed for %s: %s", ex.example_id, outcome.error)
                continue
            text = outcome.response.text.strip()
            out[ex.example_id] = text
            cache[f"{ex.example_id}:{prompt_hash}"] = text
        cache_path.parent.mkdir(parents=True, exist_ok=True)
        cache_path.write_text(json.dumps(cache, sort_keys=True, ensure_ascii=False), encoding="utf-8")
    return out


def validate(records: list[SftRecord]) -> ValidationReport:
    """Re-parse every target and itemize round-trip or invariant breaches."""
    report = ValidationReport()
    for rec in records:
        report.checked += 1
        rid = rec.example_id
        gold_in_pool = bool(set(rec.gold_doc_ids) & set(rec.context_order))
        if rec.gold_present != gold_in_pool:
            report.failures.append(f"{rid}: gold_present={rec.gold_present} but pool says {gold_in_pool}")
        if rec.mode in (ReasoningMode.COR, ReasoningMode.COR_PLUS_COT):
            parsed = parse_cor(rec.target, rec.context_order)
            if parsed.selected_positions != rec.target_positions:
                report.failures.append(
                    f"{rid}: target positions {parsed.selected_positions} != expected {rec.target_positions}"
                )
            if rec.gold_present:
                expected = [
                    i for i, d in enumerate(rec.context_order, start=1) if d in set(rec.gold_doc_ids)
                ]
                if rec.target_positions != expected:
                    report.failures.append(
                        f"{rid}: gold positions {expected} not supervised (got {rec.target_positions})"
                    )
        elif rec.mode == ReasoningMode.DSF:
            parsed = parse_answer_only(rec.target)
        else:
            parsed = parse_reasoned(rec.target)
            if not parsed.reasoning_text:
                report.failures.append(f"{rid}: {rec.mode.value} target has no reasoning block")
        if parsed.answer != rec.answer:
            report.failures.append(f"{rid}: answer round-trip {parsed.answer!r} != {rec.answer!r}")
        if parsed.parse_flags:
            report.failures.append(f"{rid}: target parses with flags {sorted(parsed.parse_flags)}")
    return report


def save_sft(records: list[SftRecord], path: str | Path) -> None:
    """Write records as line-delimited prompt/completion JSON."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json_dict(), sort_keys=True, ensure_ascii=False))
            fh.write("\n")


def load_sft(path: str | Path) -> list[SftRecord]:
    records = []
    for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            records.append(SftRecord.from_json_dict(json.loads(line)))
        except (json.JSONDecodeError, KeyError) as exc:
            raise ValueError(f"{path}: line {line_no}: corrupt SFT record: {exc}") from exc
    return records
