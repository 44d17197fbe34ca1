"""Lexical knowledge store and retriever.

Scoring is deliberately corpus-size independent: a query token t contributes
count(t, doc) * 1 / (1 + ln(1 + df(t))) so that ingesting a document which
shares no token with a query can never move that query's ranking. Results
sort by descending score, ties by ascending doc id; zero scores are dropped.
"""

from __future__ import annotations

import json
import math
import re
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

_TOKEN_RE = re.compile(r"[a-z0-9]+")

DOC_SOURCES = ("manual", "web", "trajectory")


class DuplicateId(ValueError):
    pass


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class KnowledgeDoc:
    id: str
    title: str
    body: str
    tags: tuple[str, ...] = ()
    source: str = "manual"

    def __post_init__(self):
        if not self.body:
            raise ValueError("document body must be non-empty")
        if self.source not in DOC_SOURCES:
            raise ValueError(f"source must be one of {DOC_SOURCES}")

    def tokens(self) -> list[str]:
        return tokenize(self.title) + tokenize(self.body) + [
            t for tag in self.tags for t in tokenize(tag)
        ]

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "title": self.title,
            "body": self.body,
            "tags": list(self.tags),
            "source": self.source,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KnowledgeDoc":
        return cls(
            id=d["id"],
            title=d.get("title", ""),
            body=d["body"],
            tags=tuple(d.get("tags", [])),
            source=d.get("source", "manual"),
        )


@dataclass(frozen=True)
class RetrievalResult:
    doc: KnowledgeDoc
    score: float


def term_weight(df: int) -> float:
    """Inverse-document-frequency damping for a term seen in df documents."""
    return 1.0 / (1.0 + math.log(1 + df))


def score_document(query_tokens: Iterable[str], doc_tokens: list[str], df: dict[str, int]) -> float:
    counts: dict[str, int] = {}
    for t in doc_tokens:
        counts[t] = counts.get(t, 0) + 1
    score = 0.0
    for t in set(query_tokens):
        if t in counts:
            score += counts[t] * term_weight(df.get(t, 1))
    return score


class KnowledgeStore:
    """In-memory document store; ingestion is atomic and exclusive, reads are
    concurrent and always see a consistent snapshot of the store."""

    def __init__(self):
        self._docs: dict[str, KnowledgeDoc] = {}
        self._df: dict[str, int] = {}
        self._lock = threading.RLock()

    def __len__(self) -> int:
        return len(self._docs)

    def ingest(self, docs: list[KnowledgeDoc]) -> int:
        with self._lock:
            fresh_ids = [d.id for d in docs]
            dupes = [i for i in fresh_ids if i in self._docs or fresh_ids.count(i) > 1]
            if dupes:
                raise DuplicateId(f"duplicate document ids {sorted(set(dupes))}")
            for doc in docs:
                self._docs[doc.id] = doc
                for t in set(doc.tokens()):
                    self._df[t] = self._df.get(t, 0) + 1
            return len(docs)

    def get(self, doc_id: str) -> KnowledgeDoc | None:
        with self._lock:
            return self._docs.get(doc_id)

    def documents(self) -> list[KnowledgeDoc]:
        with self._lock:
            return sorted(self._docs.values(), key=lambda d: d.id)

    def retrieve(self, query: str, k: int = 3) -> list[RetrievalResult]:
        if k < 1:
            raise ValueError("k must be >= 1")
        q_tokens = tokenize(query)
        with self._lock:
            scored = []
            for doc in self._docs.values():
                s = score_document(q_tokens, doc.tokens(), self._df)
                if s > 0.0:
                    scored.append(RetrievalResult(doc, s))
        scored.sort(key=lambda r: (-r.score, r.doc.id))
        return scored[:k]

    # -- persistence: one JSON document per file, plus a stable on-disk layout

    def save(self, directory: str | Path):
        root = Path(directory)
        root.mkdir(parents=True, exist_ok=True)
        for doc in self.documents():
            path = root / f"{doc.id}.json"
            path.write_text(json.dumps(doc.to_dict(), indent=2, sort_keys=True), encoding="utf-8")

    @classmethod
    def load(cls, directory: str | Path) -> "KnowledgeStore":
        store = cls()
        root = Path(directory)
        docs = []
        for path in sorted(root.glob("*.json")):
            docs.append(KnowledgeDoc.from_dict(json.loads(path.read_text(encoding="utf-8"))))
        store.ingest(docs)
        return store
