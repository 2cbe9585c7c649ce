"""Embedded lexical retrieval over (question, answer) pairs.

A BM25 inverted index over question tokens stands in for an external search
service; `retrieve` returns the answers of the best-matching stored
questions.  idf uses the ln(1 + (N - df + 0.5)/(df + 0.5)) form so scores
are always non-negative.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .corpus import Dataset
from .norm import normalize
from .textprep import tokenize

K1 = 1.2
B = 0.75


@dataclass(frozen=True)
class QAPair:
    question: str
    answer: str

    def __post_init__(self):
        if not self.question:
            raise ValueError("question must be non-empty")
        if not self.answer:
            raise ValueError("answer must be non-empty")


def _terms(text: str) -> list[str]:
    return tokenize(text.lower())


class RetrievalIndex:
    """Immutable BM25 index; build with `build_index`."""

    def __init__(self, pairs: Sequence[QAPair]):
        if not pairs:
            raise ValueError("retrieval corpus must contain at least one pair")
        self.pairs = tuple(pairs)
        self.doc_terms = [_terms(p.question) for p in self.pairs]
        self.doc_len = [len(t) for t in self.doc_terms]
        self.avgdl = sum(self.doc_len) / len(self.doc_len)
        self.df: dict[str, int] = {}
        self.postings: dict[str, list[tuple[int, int]]] = {}
        for doc_id, terms in enumerate(self.doc_terms):
            counts: dict[str, int] = {}
            for t in terms:
                counts[t] = counts.get(t, 0) + 1
            for t, tf in counts.items():
                self.df[t] = self.df.get(t, 0) + 1
                self.postings.setdefault(t, []).append((doc_id, tf))

    def _idf(self, term: str) -> float:
        df = self.df.get(term, 0)
        n = len(self.pairs)
        return math.log(1.0 + (n - df + 0.5) / (df + 0.5))

    def scores(self, query: str) -> list[tuple[int, float]]:
        """(doc_id, score) for every document with a positive score,
        sorted by score descending, ties by insertion order."""
        acc: dict[int, float] = {}
        for term in dict.fromkeys(_terms(query)):
            idf = self._idf(term)
            for doc_id, tf in self.postings.get(term, ()):
                denom = tf + K1 * (1.0 - B + B * self.doc_len[doc_id] / self.avgdl)
                acc[doc_id] = acc.get(doc_id, 0.0) + idf * tf * (K1 + 1.0) / denom
        ranked = sorted(acc.items(), key=lambda kv: (-kv[1], kv[0]))
        return [(doc_id, score) for doc_id, score in ranked if score > 0.0]


def build_index(pairs: Sequence[QAPair]) -> RetrievalIndex:
    return RetrievalIndex(pairs)


def retrieve(index: RetrievalIndex, query: str, k: int = 10) -> list[str]:
    """Top-k answers by BM25 score of the query against stored questions,
    deduplicated after normalization.  Empty queries return no results."""
    if k < 1:
        raise ValueError("k must be >= 1")
    results: list[str] = []
    seen: set[str] = set()
    for doc_id, _ in index.scores(query):
        answer = index.pairs[doc_id].answer
        key = normalize(answer)
        if key in seen:
            continue
        seen.add(key)
        results.append(answer)
        if len(results) == k:
            break
    return results


def dataset_to_pairs(dataset: Dataset) -> list[QAPair]:
    """One pair per (question, distinct gold answer)."""
    pairs: list[QAPair] = []
    for sample in dataset.samples:
        seen: set[str] = set()
        for answer in sample.gold_answers:
            key = normalize(answer)
            if not key or key in seen:
                continue
            seen.add(key)
            pairs.append(QAPair(question=sample.question, answer=answer))
    return pairs


def load_qa_pairs(path: str | Path) -> list[QAPair]:
    pairs: list[QAPair] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                record = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}: line {lineno}: invalid JSON ({exc.msg})") from exc
            if "question" not in record or "answer" not in record:
                raise ValueError(f"{path}: line {lineno}: record needs question and answer")
            pairs.append(QAPair(question=str(record["question"]), answer=str(record["answer"])))
    return pairs


def save_qa_pairs(pairs: Sequence[QAPair], path: str | Path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for pair in pairs:
            fh.write(json.dumps({"question": pair.question, "answer": pair.answer}, ensure_ascii=False) + "\n")
