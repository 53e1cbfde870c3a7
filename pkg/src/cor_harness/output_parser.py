"""Tolerant, deterministic parsing of model completions.

Parsing is total: arbitrary input yields a ParsedOutput, and every
degradation (dropped ID, missing section, trailing junk) is witnessed by a
parse flag rather than an exception. ID headers are matched earliest-first,
which resists echoed prompts; the answer search runs after the ID line
first and falls back to a whole-text scan so out-of-order sections still
parse.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .prompting import ANSWER_PREFIX, ID_LINE_PREFIX, ReasoningMode

FLAG_MISSING_ID_LINE = "missing_id_line"
FLAG_OUT_OF_RANGE_ID = "out_of_range_id"
FLAG_DUPLICATE_ID = "duplicate_id"
FLAG_MISSING_ANSWER_LINE = "missing_answer_line"
FLAG_TRAILING_GARBAGE = "trailing_garbage"

_INT_TOKEN = re.compile(r"^[+-]?\d+$")
_YES_NO = re.compile(r"\b(yes|no)\b")


@dataclass
class ParsedOutput:
    selected_positions: list[int] = field(default_factory=list)
    selected_doc_ids: list[int] = field(default_factory=list)
    reasoning_text: str | None = None
    answer: str = ""
    parse_flags: set[str] = field(default_factory=set)
    id_line: str | None = None  # the matched ID header line, for token accounting


def _find_line(lines: list[str], prefix: str, start: int = 0) -> int | None:
    for i in range(start, len(lines)):
        if lines[i].lstrip().startswith(prefix):
            return i
    return None


def _answer_region(lines: list[str], j: int, flags: set[str]) -> str:
    first = lines[j].lstrip()[len(ANSWER_PREFIX):]
    region = [first]
    for line in lines[j + 1:]:
        if line.lstrip().startswith("## "):
            flags.add(FLAG_TRAILING_GARBAGE)
            break
        region.append(line)
    return "\n".join(region).strip()


def parse_cor(raw: str, context_order: list[int]) -> ParsedOutput:
    """Parse a rank-then-answer completion into positions, reasoning, and answer.

    Scans for the first ID header line and the first subsequent answer line.
    IDs are comma/whitespace-separated integers; out-of-range and duplicate
    values are dropped with flags. A missing answer line degrades to the
    whole trimmed text; a missing ID line degrades to an empty selection.
    """
    flags: set[str] = set()
    lines = raw.split("\n")
    n = len(context_order)

    id_idx = _find_line(lines, ID_LINE_PREFIX)
    positions: list[int] = []
    id_line = None
    if id_idx is None:
        flags.add(FLAG_MISSING_ID_LINE)
    else:
        id_line = lines[id_idx].strip()
        rest = lines[id_idx].lstrip()[len(ID_LINE_PREFIX):]
        for token in re.split(r"[,\s]+", rest.strip()):
            if not token or not _INT_TOKEN.match(token):
                continue
            value = int(token)
            if not 1 <= value <= n:
                flags.add(FLAG_OUT_OF_RANGE_ID)
            elif value in positions:
                flags.add(FLAG_DUPLICATE_ID)
            else:
                positions.append(value)

    ans_idx = _find_line(lines, ANSWER_PREFIX, start=id_idx + 1 if id_idx is not None else 0)
    if ans_idx is None and id_idx is not None:
        ans_idx = _find_line(lines, ANSWER_PREFIX)  # tolerate out-of-order sections
    if ans_idx is None:
        flags.add(FLAG_MISSING_ANSWER_LINE)
        answer = raw.strip()
    else:
        answer = _answer_region(lines, ans_idx, flags)

    reasoning = None
    if id_idx is not None and ans_idx is not None and ans_idx > id_idx + 1:
        between = "\n".join(lines[id_idx + 1:ans_idx]).strip()
        reasoning = between or None

    return ParsedOutput(
        selected_positions=positions,
        selected_doc_ids=[context_order[p - 1] for p in positions],
        reasoning_text=reasoning,
        answer=answer,
        parse_flags=flags,
        id_line=id_line,
    )


def parse_answer_only(raw: str) -> ParsedOutput:
    """Parse an answer-only completion (no ID line expected)."""
    flags: set[str] = set()
    lines = raw.split("\n")
    ans_idx = _find_line(lines, ANSWER_PREFIX)
    if ans_idx is None:
        flags.add(FLAG_MISSING_ANSWER_LINE)
        return ParsedOutput(answer=raw.strip(), parse_flags=flags)
    answer = _answer_region(lines, ans_idx, flags)
    return ParsedOutput(answer=answer, parse_flags=flags)


def parse_reasoned(raw: str) -> ParsedOutput:
    """Parse a free-text-reasoning completion: reasoning block, then answer line."""
    flags: set[str] = set()
    lines = raw.split("\n")
    ans_idx = _find_line(lines, ANSWER_PREFIX)
    if ans_idx is None:
        flags.add(FLAG_MISSING_ANSWER_LINE)
        return ParsedOutput(answer=raw.strip(), parse_flags=flags)
    answer = _answer_region(lines, ans_idx, flags)
    reasoning = "\n".join(lines[:ans_idx]).strip() or None
    return ParsedOutput(reasoning_text=reasoning, answer=answer, parse_flags=flags)


def parse_output(mode: ReasoningMode, raw: str, context_order: list[int]) -> ParsedOutput:
    """Parse raw under the given mode's grammar."""
    if mode in (ReasoningMode.COR, ReasoningMode.COR_PLUS_COT):
        return parse_cor(raw, context_order)
    if mode == ReasoningMode.DSF:
        return parse_answer_only(raw)
    return parse_reasoned(raw)


def parse_judge(raw: str) -> str:
    """Extract the judge verdict: last standalone yes/no token wins."""
    matches = _YES_NO.findall(raw.lower())
    if not matches:
        return "unparseable"
    return matches[-1]
