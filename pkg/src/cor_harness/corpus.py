"""Canonical example/document model and dataset ingestion.

Two upstream families are supported: multi-hop QA files in the distractor
layout (one question, ten titled contexts, supporting-fact title references)
and API-documentation corpora (line-delimited API records plus instruction
files that name their gold API). Everything downstream works on the
canonical model defined here.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

logger = logging.getLogger(__name__)

CANONICAL_FORMAT = "cor-canonical"
CANONICAL_VERSION = 1

# Serialization order for API record fields when they are flattened into a
# retrievable document body.
_API_BODY_FIELDS = ("api_name", "description", "api_call", "api_arguments", "example_code")


class IngestError(Exception):
    """Raised when an upstream dataset file cannot be ingested."""


class CanonicalFormatError(Exception):
    """Raised when a canonical example file is malformed or version-mismatched."""


@dataclass
class ContextDoc:
    """One retrievable unit inside an example's candidate pool."""

    doc_id: int
    title: str
    body: str
    is_gold: bool = False


@dataclass
class ApiRef:
    """Reference API record: name, canonical call string, and required arguments."""

    api_name: str
    api_call: str
    api_arguments: dict[str, str] = field(default_factory=dict)
    description: str = ""
    framework: str = ""
    example_code: str = ""


@dataclass
class Example:
    """A query with its candidate context pool and gold supervision."""

    example_id: str
    question: str
    contexts: list[ContextDoc]
    gold_ids: set[int]
    gold_answers: list[str] = field(default_factory=list)
    gold_api: ApiRef | None = None
    task_kind: str = "qa"  # "qa" | "api"

    def doc_by_id(self, doc_id: int) -> ContextDoc:
        return self.contexts[doc_id - 1]

    def gold_docs(self) -> list[ContextDoc]:
        return [c for c in self.contexts if c.doc_id in self.gold_ids]


def check_example(ex: Example) -> None:
    """Validate the structural invariants of one canonical example.

    Raises ValueError naming the first violated invariant.
    """
    ids = [c.doc_id for c in ex.contexts]
    if ids != list(range(1, len(ids) + 1)):
        raise ValueError(f"{ex.example_id}: doc_ids must be contiguous from 1, got {ids}")
    for c in ex.contexts:
        if not c.body.strip():
            raise ValueError(f"{ex.example_id}: context {c.doc_id} has empty body")
    if not ex.gold_ids:
        raise ValueError(f"{ex.example_id}: gold_ids is empty")
    if not ex.gold_ids <= set(ids):
        raise ValueError(f"{ex.example_id}: gold_ids {ex.gold_ids} not all in pool")
    for doc in ex.contexts:
        if doc.is_gold != (doc.doc_id in ex.gold_ids):
            raise ValueError(f"{ex.example_id}: is_gold flag of doc {doc.doc_id} disagrees with gold_ids")
    if ex.task_kind == "qa":
        if not ex.gold_answers:
            raise ValueError(f"{ex.example_id}: qa example without gold_answers")
    elif ex.task_kind == "api":
        if ex.gold_api is None:
            raise ValueError(f"{ex.example_id}: api example without gold_api")
    else:
        raise ValueError(f"{ex.example_id}: unknown task_kind {ex.task_kind!r}")


def ingest_hotpot(path: str | Path, split: str = "dev") -> list[Example]:
    """Ingest a distractor-format multi-hop QA JSON file.

    One example per entry. Contexts are numbered 1..10 in file order; a
    context is gold iff its title appears among the entry's supporting
    facts; each context body is its sentences joined by single spaces.
    Entries whose supporting titles match no context (or that do not carry
    exactly ten contexts) are skipped with a logged warning.
    """
    if split not in ("train", "dev"):
        raise IngestError(f"unknown split {split!r} (expected 'train' or 'dev')")
    path = Path(path)
    try:
        entries = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise IngestError(f"cannot read {path}: {exc}") from exc
    if not isinstance(entries, list):
        raise IngestError(f"{path}: expected a JSON array of entries")

    examples: list[Example] = []
    skipped = 0
    for idx, entry in enumerate(entries):
        try:
            question = entry["question"]
            answer = entry["answer"]
            raw_contexts = entry["context"]
            supporting = entry["supporting_facts"]
        except (TypeError, KeyError) as exc:
            raise IngestError(f"entry {idx}: missing field {exc}") from exc
        if not isinstance(question, str) or not isinstance(answer, str):
            raise IngestError(f"entry {idx}: question/answer must be strings")

        contexts: list[ContextDoc] = []
        try:
            for pos, (title, sentences) in enumerate(raw_contexts, start=1):
                if not isinstance(sentences, (list, tuple)):
                    raise IngestError(f"entry {idx}: context {pos} sentences must be a list")
                body = " ".join(str(s) for s in sentences)
                if not body.strip():
                    raise IngestError(f"entry {idx}: context {pos} ({title!r}) has empty body")
                contexts.append(ContextDoc(doc_id=pos, title=str(title), body=body))
            support_titles = {str(title) for title, _ in supporting}
        except (TypeError, ValueError) as exc:
            if isinstance(exc, IngestError):
                raise
            raise IngestError(f"entry {idx}: malformed context or supporting_facts: {exc}") from exc

        if len(contexts) != 10:
            logger.warning("entry %d: %d contexts instead of 10, skipped", idx, len(contexts))
            skipped += 1
            continue
        gold_ids = {c.doc_id for c in contexts if c.title in support_titles}
        if not gold_ids:
            logger.warning("entry %d: supporting titles %s match no context, skipped", idx, sorted(support_titles))
            skipped += 1
            continue
        for c in contexts:
            c.is_gold = c.doc_id in gold_ids
        examples.append(
            Example(
                example_id=str(entry.get("_id", f"{split}-{idx}")),
                question=question,
                contexts=contexts,
                gold_ids=gold_ids,
                gold_answers=[answer],
                task_kind="qa",
            )
        )
    if skipped:
        logger.warning("ingest_hotpot: skipped %d of %d entries", skipped, len(entries))
    return examples


def _coerce_argument_map(raw) -> dict[str, str]:
    """Coerce the upstream api_arguments field into a name -> value-text mapping.

    Upstream files carry either a mapping or a list of single-entry
    mappings; anything else is treated as having no required arguments.
    """
    if isinstance(raw, dict):
        return {str(k): _value_text(v) for k, v in raw.items()}
    if isinstance(raw, list):
        merged: dict[str, str] = {}
        for item in raw:
            if isinstance(item, dict):
                for k, v in item.items():
                    merged[str(k)] = _value_text(v)
        return merged
    if raw not in (None, ""):
        logger.warning("unrecognized api_arguments shape %r, treating as empty", type(raw).__name__)
    return {}


def _value_text(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, bool):
        return "True" if value else "False"
    if value is None:
        return "None"
    if isinstance(value, (int, float)):
        return repr(value)
    return json.dumps(value, sort_keys=True)


def _flatten(text: str) -> str:
    """Collapse newlines so a document body stays a single prompt line."""
    return " ".join(str(text).split())


def api_doc_body(ref: ApiRef) -> str:
    """Deterministic single-line serialization of an API record."""
    parts = []
    for name in _API_BODY_FIELDS:
        if name == "api_arguments":
            value = json.dumps(ref.api_arguments, sort_keys=True)
        else:
            value = _flatten(getattr(ref, name))
        if value and value != "{}":
            parts.append(f"{name}: {value}")
    return "; ".join(parts)


def ingest_gorilla(
    api_db: str | Path, queries: str | Path, framework: str
) -> tuple[list[ApiRef], list[Example]]:
    """Ingest an API database plus its instruction/query file.

    Every API record becomes one ContextDoc in a shared per-framework pool;
    every query becomes an api-kind Example over that pool whose gold is
    the document of its referenced API. Query records name their gold API
    by exact api_call or, failing that, by unique api_name.
    """
    refs: list[ApiRef] = []
    by_call: dict[str, int] = {}
    by_name: dict[str, list[int]] = {}
    for line_no, line in enumerate(_read_jsonl(Path(api_db)), start=1):
        record = line
        api_call = record.get("api_call")
        if not api_call:
            raise IngestError(f"{api_db}: line {line_no}: record missing api_call")
        ref = ApiRef(
            api_name=str(record.get("api_name", "")),
            api_call=str(api_call),
            api_arguments=_coerce_argument_map(record.get("api_arguments")),
            description=str(record.get("description", "")),
            framework=framework,
            example_code=str(record.get("example_code", "")),
        )
        ordinal = len(refs)
        refs.append(ref)
        by_call.setdefault(ref.api_call, ordinal)
        by_name.setdefault(ref.api_name, []).append(ordinal)

    pool = [
        ContextDoc(doc_id=i + 1, title=ref.api_name, body=api_doc_body(ref))
        for i, ref in enumerate(refs)
    ]

    examples: list[Example] = []
    for line_no, record in enumerate(_read_jsonl(Path(queries)), start=1):
        question = record.get("question") or record.get("instruction")
        if not question:
            raise IngestError(f"{queries}: line {line_no}: query missing question/instruction")
        gold_ordinal = _resolve_gold(record, by_call, by_name, queries, line_no)
        contexts = [
            ContextDoc(doc_id=d.doc_id, title=d.title, body=d.body, is_gold=(d.doc_id == gold_ordinal + 1))
            for d in pool
        ]
        examples.append(
            Example(
                example_id=str(record.get("id", f"{framework}-{line_no}")),
                question=str(question),
                contexts=contexts,
                gold_ids={gold_ordinal + 1},
                gold_api=refs[gold_ordinal],
                task_kind="api",
            )
        )
    return refs, examples


def _resolve_gold(record, by_call, by_name, queries, line_no) -> int:
    call = record.get("api_call")
    if call is not None:
        try:
            return by_call[str(call)]
        except KeyError:
            raise IngestError(f"{queries}: line {line_no}: gold api_call {call!r} absent from api db") from None
    name = record.get("api_name")
    if name is not None:
        ordinals = by_name.get(str(name), [])
        if not ordinals:
            raise IngestError(f"{queries}: line {line_no}: gold api_name {name!r} absent from api db")
        if len(ordinals) > 1:
            raise IngestError(f"{queries}: line {line_no}: gold api_name {name!r} is ambiguous")
        return ordinals[0]
    raise IngestError(f"{queries}: line {line_no}: query names no gold API (api_call or api_name)")


def _read_jsonl(path: Path):
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IngestError(f"cannot read {path}: {exc}") from exc
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            yield json.loads(line)
        except json.JSONDecodeError as exc:
            raise IngestError(f"{path}: line {line_no}: invalid JSON: {exc}") from exc


def _example_to_dict(ex: Example) -> dict:
    data = {
        "example_id": ex.example_id,
        "question": ex.question,
        "task_kind": ex.task_kind,
        "contexts": [
            {"doc_id": c.doc_id, "title": c.title, "body": c.body, "is_gold": c.is_gold}
            for c in ex.contexts
        ],
        "gold_ids": sorted(ex.gold_ids),
    }
    if ex.task_kind == "qa":
        data["gold_answers"] = ex.gold_answers
    else:
        ref = ex.gold_api
        data["gold_api"] = {
            "api_name": ref.api_name,
            "api_call": ref.api_call,
            "api_arguments": ref.api_arguments,
            "description": ref.description,
            "framework": ref.framework,
            "example_code": ref.example_code,
        }
    return data


def _example_from_dict(data: dict) -> Example:
    gold_api = None
    if data.get("gold_api") is not None:
        gold_api = ApiRef(**data["gold_api"])
    return Example(
        example_id=data["example_id"],
        question=data["question"],
        contexts=[ContextDoc(**c) for c in data["contexts"]],
        gold_ids=set(data["gold_ids"]),
        gold_answers=list(data.get("gold_answers", [])),
        gold_api=gold_api,
        task_kind=data["task_kind"],
    )


def save_canonical(examples: list[Example], path: str | Path) -> None:
    """Write examples as line-delimited JSON with a leading version record."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        fh.write(json.dumps({"format": CANONICAL_FORMAT, "version": CANONICAL_VERSION}, sort_keys=True))
        fh.write("\n")
        for ex in examples:
            fh.write(json.dumps(_example_to_dict(ex), sort_keys=True, ensure_ascii=False))
            fh.write("\n")


def load_canonical(path: str | Path) -> list[Example]:
    """Load a canonical example file written by save_canonical."""
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise CanonicalFormatError(f"cannot read {path}: {exc}") from exc
    if not lines:
        raise CanonicalFormatError(f"{path}: empty file (missing version record)")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise CanonicalFormatError(f"{path}: line 1: invalid header: {exc}") from exc
    if header.get("format") != CANONICAL_FORMAT or header.get("version") != CANONICAL_VERSION:
        raise CanonicalFormatError(
            f"{path}: expected format={CANONICAL_FORMAT!r} version={CANONICAL_VERSION}, "
            f"found format={header.get('format')!r} version={header.get('version')!r}"
        )
    examples = []
    for line_no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            examples.append(_example_from_dict(json.loads(line)))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise CanonicalFormatError(f"{path}: line {line_no}: corrupt record: {exc}") from exc
    return examples
