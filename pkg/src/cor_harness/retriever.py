"""Okapi BM25 lexical retrieval over a document pool.

Scores use the non-negative IDF variant idf(t) = ln(1 + (N - df + 0.5) /
(df + 0.5)), so every score is >= 0. Ties are broken by ascending document
ordinal, which keeps rankings reproducible. ensure_gold() implements the
experiment guarantee that the final context set always contains at least
one gold document.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass, field

from .corpus import ContextDoc, Example

DEFAULT_K1 = 1.2
DEFAULT_B = 0.75

_TOKEN_SPLIT = re.compile(r"[^0-9a-z]+")


def tokenize(text: str) -> list[str]:
    """Lowercase and split on any non-alphanumeric character."""
    return [t for t in _TOKEN_SPLIT.split(text.lower()) if t]


@dataclass
class Bm25Index:
    postings: dict[str, list[tuple[int, int]]]  # term -> [(doc ordinal, tf)]
    doc_lengths: list[int]
    avg_doc_len: float
    doc_count: int
    k1: float
    b: float
    doc_ids: list[int] = field(default_factory=list)  # ordinal -> doc_id


@dataclass
class RetrievalResult:
    ranked: list[tuple[int, float]]  # (doc_id, score), scores non-increasing
    k_requested: int
    gold_injected: bool = False
    # Full pool ordering, used by gold injection to pick the best gold doc.
    full_ranking: list[tuple[int, float]] = field(default_factory=list)


def build_index(docs: list[ContextDoc], k1: float = DEFAULT_K1, b: float = DEFAULT_B) -> Bm25Index:
    """Index tokenize(title + " " + body) for each document."""
    if not docs:
        raise ValueError("cannot build an index over an empty document list")
    postings: dict[str, list[tuple[int, int]]] = {}
    doc_lengths: list[int] = []
    for ordinal, doc in enumerate(docs):
        terms = tokenize(doc.title + " " + doc.body)
        doc_lengths.append(len(terms))
        for term, tf in sorted(Counter(terms).items()):
            postings.setdefault(term, []).append((ordinal, tf))
    return Bm25Index(
        postings=postings,
        doc_lengths=doc_lengths,
        avg_doc_len=sum(doc_lengths) / len(doc_lengths),
        doc_count=len(doc_lengths),
        k1=k1,
        b=b,
        doc_ids=[d.doc_id for d in docs],
    )


def _idf(index: Bm25Index, term: str) -> float:
    df = len(index.postings.get(term, ()))
    return math.log(1.0 + (index.doc_count - df + 0.5) / (df + 0.5))


def score(index: Bm25Index, query_terms: list[str], ordinal: int) -> float:
    """Okapi BM25 score of one document against the query terms."""
    if not 0 <= ordinal < index.doc_count:
        raise IndexError(f"doc ordinal {ordinal} out of range 0..{index.doc_count - 1}")
    doc_len = index.doc_lengths[ordinal]
    norm = 1.0 - index.b + index.b * (doc_len / index.avg_doc_len if index.avg_doc_len else 0.0)
    total = 0.0
    for term in query_terms:
        tf = 0
        for post_ordinal, post_tf in index.postings.get(term, ()):
            if post_ordinal == ordinal:
                tf = post_tf
                break
        if tf == 0:
            continue
        total += _idf(index, term) * tf * (index.k1 + 1.0) / (tf + index.k1 * norm)
    return total


def retrieve(index: Bm25Index, question: str, k: int) -> RetrievalResult:
    """Top-k documents by BM25 score, ties broken by ascending ordinal."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    terms = tokenize(question)
    # Accumulate scores through the postings lists; docs sharing no term
    # keep score 0 and still participate in the ranking.
    scores = [0.0] * index.doc_count
    for term in terms:
        postings = index.postings.get(term)
        if not postings:
            continue
        idf = _idf(index, term)
        for ordinal, tf in postings:
            doc_len = index.doc_lengths[ordinal]
            norm = 1.0 - index.b + index.b * (doc_len / index.avg_doc_len if index.avg_doc_len else 0.0)
            scores[ordinal] += idf * tf * (index.k1 + 1.0) / (tf + index.k1 * norm)
    order = sorted(range(index.doc_count), key=lambda o: (-scores[o], o))
    full = [(index.doc_ids[o], scores[o]) for o in order]
    return RetrievalResult(ranked=full[:k], k_requested=k, full_ranking=full)


def ensure_gold(result: RetrievalResult, example: Example, k: int) -> list[ContextDoc]:
    """Guarantee at least one gold document among the returned contexts.

    If no gold doc made the top-k, the lowest-scoring retrieved doc is
    replaced (in place) by the highest-scoring gold doc; the relative order
    of the survivors is preserved. Output size is min(k, pool size).
    """
    if not example.gold_ids:
        raise ValueError(f"{example.example_id}: gold_ids is empty")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    selected = [doc_id for doc_id, _ in result.ranked[:k]]
    if example.gold_ids & set(selected):
        result.gold_injected = False
    else:
        best_gold = next(
            (doc_id for doc_id, _ in result.full_ranking if doc_id in example.gold_ids),
            min(example.gold_ids),  # result built without a full ranking
        )
        selected[-1] = best_gold
        result.gold_injected = True
    return [example.doc_by_id(doc_id) for doc_id in selected]
