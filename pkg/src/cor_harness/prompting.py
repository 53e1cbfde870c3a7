"""Prompt and supervision-target rendering for the five reasoning modes.

The rank-then-answer (cor) prompt and the judge prompt are fixed templates;
dsf/cot/con wordings ship as documented defaults and can be overridden with
UTF-8 template files using {question} and {context_N} placeholders. Context
labels in prompts are presentation positions 1..N; the mapping back to
document ids travels in RenderedPrompt.context_order.

User text is rendered verbatim (no escaping): supervision fidelity wins
over robustness, and label collisions are logged instead of repaired.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

from .corpus import ContextDoc

logger = logging.getLogger(__name__)

ID_LINE_PREFIX = "## Relevant Context ID:"
ANSWER_PREFIX = "## Answer:"

_CONTEXT_LABEL = re.compile(r"^Context\d+:", re.MULTILINE)


class ReasoningMode(str, Enum):
    DSF = "dsf"
    COT = "cot"
    CON = "con"
    COR = "cor"
    COR_PLUS_COT = "cor_plus_cot"

    @classmethod
    def parse(cls, value: str) -> "ReasoningMode":
        normalized = value.strip().lower().replace("+", "_plus_").replace("-", "_")
        normalized = re.sub(r"_+", "_", normalized)
        for mode in cls:
            if mode.value == normalized:
                return mode
        raise ValueError(f"unknown reasoning mode {value!r}")


@dataclass
class RenderedPrompt:
    text: str
    context_order: list[int]  # presentation position i (1-based) shows context_order[i-1]
    mode: ReasoningMode


COR_PROMPT_HEADER = (
    "Contexts and Question are given.\n"
    "\n"
    "Let's think step by step to make correct output.\n"
    "\n"
    "First, reranking goal: select the relevant contexts, important to answer the question correctly.\n"
    "\n"
    "Then, answering goal: Focusing on the selected context, answer the question.\n"
)

DSF_PROMPT_HEADER = (
    "Contexts and Question are given.\n"
    "\n"
    "Answering goal: Focusing on the given contexts, answer the question.\n"
)

COT_PROMPT_HEADER = (
    "Contexts and Question are given.\n"
    "\n"
    "Let's think step by step to make correct output.\n"
    "\n"
    "First, reasoning goal: write a short reasoning that works out the answer from the relevant contexts.\n"
    "\n"
    "Then, answering goal: Based on the reasoning, answer the question.\n"
)

CON_PROMPT_HEADER = (
    "Contexts and Question are given.\n"
    "\n"
    "Let's think step by step to make correct output.\n"
    "\n"
    "First, noting goal: write a brief note for each context summarizing what it contributes to the question.\n"
    "\n"
    "Then, answering goal: Based on the notes, answer the question.\n"
)

COR_PLUS_COT_PROMPT_HEADER = (
    "Contexts and Question are given.\n"
    "\n"
    "Let's think step by step to make correct output.\n"
    "\n"
    "First, reranking goal: select the relevant contexts, important to answer the question correctly.\n"
    "\n"
    "Then, reasoning goal: focusing on the selected contexts, think step by step about the answer.\n"
    "\n"
    "Finally, answering goal: answer the question.\n"
)

_DEFAULT_HEADERS = {
    ReasoningMode.DSF: DSF_PROMPT_HEADER,
    ReasoningMode.COT: COT_PROMPT_HEADER,
    ReasoningMode.CON: CON_PROMPT_HEADER,
    ReasoningMode.COR: COR_PROMPT_HEADER,
    ReasoningMode.COR_PLUS_COT: COR_PLUS_COT_PROMPT_HEADER,
}

JUDGE_PROMPT_TEMPLATE = (
    "You are an expert at evaluating reasoning based on provided information. "
    "Given a question, five retrieved contexts, and reasoning, your task is to "
    "determine whether the reasoning is based on the correct context. The correct "
    "context is the one that contains the most relevant and accurate information "
    "to answer the question.\n"
    "\n"
    "Follow these steps:\n"
    "1. Identify which retrieved context contains the most accurate information "
    'to answer the question (the "golden context").\n'
    "2. Evaluate if the reasoning is based primarily on this golden context.\n"
    "3. Provide a clear answer (Yes or No).\n"
    "\n"
    "### Question:\n"
    "{question}\n"
    "\n"
    "### Retrieved Contexts:\n"
    "1. {context_1}\n"
    "2. {context_2}\n"
    "3. {context_3}\n"
    "4. {context_4}\n"
    "5. {context_5}\n"
    "\n"
    "### Reasoning:\n"
    "{reasoning}\n"
    "\n"
    "### Evaluation:\n"
    'Is the reasoning based on the correct context? Answer with "Yes" or "No".'
)


def context_line_text(doc: ContextDoc) -> str:
    """The text shown for one context line: title-prefixed when titled."""
    return f"{doc.title}: {doc.body}" if doc.title else doc.body


def _context_block(contexts: list[ContextDoc]) -> str:
    return "\n".join(f"Context{i}: {context_line_text(doc)}" for i, doc in enumerate(contexts, start=1))


def _warn_on_collisions(question: str, contexts: list[ContextDoc]) -> None:
    for label, text in [("question", question)] + [
        (f"context {d.doc_id}", context_line_text(d)) for d in contexts
    ]:
        if _CONTEXT_LABEL.search(text) or any(ln.startswith("## ") for ln in text.splitlines()):
            logger.warning("%s contains template-label text, rendered verbatim", label)


def render_cor(question: str, contexts: list[ContextDoc]) -> RenderedPrompt:
    """Render the fixed rank-then-answer prompt over contexts in the given order."""
    return render_prompt(ReasoningMode.COR, question, contexts)


def render_prompt(
    mode: ReasoningMode,
    question: str,
    contexts: list[ContextDoc],
    template: str | None = None,
) -> RenderedPrompt:
    """Render the prompt for any mode; template overrides the default header layout.

    A template is full prompt text containing {question} and {context_N}
    (alias {contexts}) placeholders; {context_1}.. are also substituted when
    present. Without a template the mode's documented default layout is used.
    """
    if not question.strip():
        raise ValueError("question is empty")
    if not contexts:
        raise ValueError("no contexts to render")
    _warn_on_collisions(question, contexts)
    block = _context_block(contexts)
    if template is not None:
        text = template.replace("{question}", question)
        text = text.replace("{context_N}", block).replace("{contexts}", block)
        for i, doc in enumerate(contexts, start=1):
            text = text.replace(f"{{context_{i}}}", context_line_text(doc))
    else:
        text = f"{_DEFAULT_HEADERS[mode]}\n\nQuestion: {question}\n{block}\n\nOutput:\n"
    return RenderedPrompt(text=text, context_order=[d.doc_id for d in contexts], mode=mode)


def load_template(path: str | Path) -> str:
    return Path(path).read_text(encoding="utf-8")


def format_id_list(positions: list[int]) -> str:
    return ", ".join(str(p) for p in positions)


def render_id_line(positions: list[int]) -> str:
    if not positions:
        return ID_LINE_PREFIX
    return f"{ID_LINE_PREFIX} {format_id_list(positions)}"


def render_target(
    mode: ReasoningMode,
    selected_positions: list[int],
    reasoning_text: str | None,
    answer: str,
    n_contexts: int | None = None,
    allow_empty_ids: bool = False,
) -> str:
    """Render the supervision target for one example.

    cor targets are the ID line then the answer line; dsf is the answer line
    alone; cot/con place the reasoning block before the answer line; the
    combined mode stacks ID line, reasoning, then answer. Positions must lie
    in 1..n_contexts when n_contexts is given. allow_empty_ids permits the
    deliberate zero-selection target used for gold-absent training records.
    """
    if mode in (ReasoningMode.COR, ReasoningMode.COR_PLUS_COT):
        if not selected_positions and not allow_empty_ids:
            raise ValueError("cor-family target requires at least one selected position")
        for pos in selected_positions:
            if pos < 1 or (n_contexts is not None and pos > n_contexts):
                raise ValueError(f"position {pos} outside 1..{n_contexts or '?'}")
    if mode in (ReasoningMode.COT, ReasoningMode.CON) and not (reasoning_text and reasoning_text.strip()):
        raise ValueError(f"{mode.value} target requires reasoning_text")

    answer_line = f"{ANSWER_PREFIX} {answer}"
    if mode == ReasoningMode.DSF:
        return answer_line
    if mode == ReasoningMode.COR:
        return f"{render_id_line(selected_positions)}\n{answer_line}"
    if mode in (ReasoningMode.COT, ReasoningMode.CON):
        return f"{reasoning_text}\n{answer_line}"
    # combined: ID line, reasoning (when present), answer
    parts = [render_id_line(selected_positions)]
    if reasoning_text and reasoning_text.strip():
        parts.append(reasoning_text)
    parts.append(answer_line)
    return "\n".join(parts)


def render_judge_prompt(question: str, contexts: list[ContextDoc], reasoning_text: str) -> str:
    """Render the fixed five-slot reasoning-evaluation prompt."""
    if len(contexts) != 5:
        raise ValueError(f"judge prompt requires exactly 5 contexts, got {len(contexts)}")
    text = JUDGE_PROMPT_TEMPLATE.replace("{question}", question)
    for i, doc in enumerate(contexts, start=1):
        text = text.replace(f"{{context_{i}}}", context_line_text(doc))
    return text.replace("{reasoning}", reasoning_text)
