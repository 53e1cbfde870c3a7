"""Answer-quality and cost metrics.

Exact match and token-overlap F1 follow the standard extractive-QA scorer
lineage: lowercase, strip ASCII punctuation, drop whole-word articles,
collapse whitespace; token overlap is a multiset intersection and the score
is the max over gold answers. Unicode punctuation beyond ASCII is left
intact. When prediction and gold both normalize to nothing, F1 falls back
to agreement (1.0), keeping f1 >= em on every example.
"""

from __future__ import annotations

import re
import string
from collections import Counter
from dataclasses import dataclass, field

from .output_parser import ParsedOutput
from .prompting import ReasoningMode

_PUNCT = set(string.punctuation)
_ARTICLES = re.compile(r"\b(a|an|the)\b")


def normalize_answer(text: str) -> str:
    """Normalize an answer string for comparison."""
    text = text.lower()
    text = "".join(ch for ch in text if ch not in _PUNCT)
    text = _ARTICLES.sub(" ", text)
    return " ".join(text.split())


def exact_match(prediction: str, golds: list[str]) -> int:
    """1 iff the normalized prediction equals some normalized gold."""
    if not golds:
        raise ValueError("golds is empty")
    pred = normalize_answer(prediction)
    return int(any(pred == normalize_answer(g) for g in golds))


def _f1_single(pred_tokens: list[str], gold_tokens: list[str]) -> float:
    if not pred_tokens or not gold_tokens:
        return float(pred_tokens == gold_tokens)
    common = Counter(pred_tokens) & Counter(gold_tokens)
    overlap = sum(common.values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(pred_tokens)
    recall = overlap / len(gold_tokens)
    return 2 * precision * recall / (precision + recall)


def f1_score(prediction: str, golds: list[str]) -> float:
    """Token-overlap F1 against the best-matching gold answer."""
    if not golds:
        raise ValueError("golds is empty")
    pred_tokens = normalize_answer(prediction).split()
    return max(_f1_single(pred_tokens, normalize_answer(g).split()) for g in golds)


def ranking_score(parsed: ParsedOutput, gold_ids: set[int]) -> tuple[int, int]:
    """(exact, contains_gold): selection equals the gold set / covers it."""
    selected = set(parsed.selected_doc_ids)
    exact = int(selected == set(gold_ids))
    contains = int(set(gold_ids) <= selected)
    return exact, contains


def reasoning_region(parsed: ParsedOutput, mode: ReasoningMode) -> str:
    """The part of the output that counts as reasoning under the given mode."""
    if mode == ReasoningMode.DSF:
        return ""
    if mode == ReasoningMode.COR:
        return parsed.id_line or ""
    if mode == ReasoningMode.COR_PLUS_COT:
        parts = [p for p in (parsed.id_line, parsed.reasoning_text) if p]
        return "\n".join(parts)
    return parsed.reasoning_text or ""


def reasoning_tokens(parsed: ParsedOutput, mode: ReasoningMode) -> int:
    """Whitespace-token count of the reasoning region."""
    return len(reasoning_region(parsed, mode).split())


def reasoning_tokens_model(
    parsed: ParsedOutput, mode: ReasoningMode, completion_tokens: int | None, full_text: str
) -> int | None:
    """Backend-token estimate for the reasoning region.

    Usage reports cover the whole completion, so the region's share is
    estimated proportionally by character count. Recorded as a clearly
    labeled secondary column, never used as the primary cost metric.
    """
    if completion_tokens is None or not full_text:
        return None
    region = reasoning_region(parsed, mode)
    return round(completion_tokens * len(region) / len(full_text))


@dataclass
class ExampleScore:
    example_id: str
    em: int
    f1: float
    ranking_exact: int
    ranking_contains_gold: int
    reasoning_tokens: int
    reasoning_tokens_model: int | None = None
    ast_match: bool | None = None  # api task only
    judge_verdict: str | None = None
    parse_flags: set[str] = field(default_factory=set)

    def to_row(self) -> dict:
        row = {
            "example_id": self.example_id,
            "em": self.em,
            "f1": self.f1,
            "ranking_exact": self.ranking_exact,
            "ranking_contains_gold": self.ranking_contains_gold,
            "reasoning_tokens": self.reasoning_tokens,
            "parse_flags": sorted(self.parse_flags),
        }
        if self.reasoning_tokens_model is not None:
            row["reasoning_tokens_model"] = self.reasoning_tokens_model
        if self.ast_match is not None:
            row["ast_match"] = self.ast_match
        if self.judge_verdict is not None:
            row["judge_verdict"] = self.judge_verdict
        return row


@dataclass
class RunReport:
    per_example: list[dict]
    aggregates: dict
    metadata: dict

    def to_dict(self) -> dict:
        return {"aggregates": self.aggregates, "metadata": self.metadata}


def _mean(values: list[float]) -> float:
    return sum(values) / len(values)


def compute_aggregates(scores: list[ExampleScore]) -> dict:
    """Aggregate per-example scores; percentage columns are means x100."""
    if not scores:
        raise ValueError("no scores to aggregate")
    aggregates = {
        "examples": len(scores),
        "em_pct": _mean([s.em for s in scores]) * 100.0,
        "f1_pct": _mean([s.f1 for s in scores]) * 100.0,
        "ranking_exact_pct": _mean([s.ranking_exact for s in scores]) * 100.0,
        "ranking_contains_gold_pct": _mean([s.ranking_contains_gold for s in scores]) * 100.0,
        "reasoning_tokens_mean": _mean([s.reasoning_tokens for s in scores]),
    }
    ast_scores = [s.ast_match for s in scores if s.ast_match is not None]
    if ast_scores:
        aggregates["ast_pct"] = _mean([float(a) for a in ast_scores]) * 100.0
    model_tokens = [s.reasoning_tokens_model for s in scores if s.reasoning_tokens_model is not None]
    if model_tokens:
        aggregates["reasoning_tokens_model_mean"] = _mean(model_tokens)
    verdicts = [s.judge_verdict for s in scores if s.judge_verdict is not None]
    if verdicts:
        aggregates["judge_yes_pct"] = verdicts.count("yes") / len(verdicts) * 100.0
        aggregates["judge_unparseable"] = verdicts.count("unparseable")
    return aggregates


def aggregate(scores: list[ExampleScore], metadata: dict) -> RunReport:
    """Build a RunReport with per-example rows ordered by example_id."""
    ordered = sorted(scores, key=lambda s: s.example_id)
    return RunReport(
        per_example=[s.to_row() for s in ordered],
        aggregates=compute_aggregates(scores),
        metadata=dict(metadata),
    )
