"""Lexical retrieval: BM25 inverted index over a local corpus.

Stands in for dense retrievers so that the whole toolkit runs offline and
deterministically. Scoring uses BM25 with k1=1.2, b=0.75 and the
non-negative idf variant

    idf(t) = ln(1 + (N - df + 0.5) / (df + 0.5))

summed over query tokens (repeated query tokens count once per occurrence).
Tokenization is lowercase alphanumeric runs: split on any non-alphanumeric
character, no stemming, no stopwords. Ties are broken by lexicographic
document id so results are reproducible across platforms.
"""

from __future__ import annotations

import json
import math
import re
import zlib
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

from .trajectory import Document

BM25_K1 = 1.2
BM25_B = 0.75

_INDEX_MAGIC = b"SRBM25IX"
_INDEX_VERSION = 1

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


class CorpusError(ValueError):
    """Corpus violates its contract (duplicate ids, empty bodies, ...)."""


class EmptyCorpus(CorpusError):
    """An index cannot be built over zero documents."""


class InvalidIndexFile(ValueError):
    """Persisted index file has a bad magic header, version, or payload."""


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class CorpusDoc:
    id: str
    title: str
    body: str


@dataclass(frozen=True)
class Corpus:
    docs: tuple[CorpusDoc, ...]

    def __post_init__(self):
        object.__setattr__(self, "docs", tuple(self.docs))
        seen = set()
        for doc in self.docs:
            if doc.id in seen:
                raise CorpusError(f"duplicate document id {doc.id!r}")
            seen.add(doc.id)
            if not doc.body:
                raise CorpusError(f"document {doc.id!r} has an empty body")

    def __len__(self) -> int:
        return len(self.docs)


def load_corpus_jsonl(path: str | Path) -> Corpus:
    """Load a corpus from JSONL with one {id, title, text} object per line."""
    docs = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{line_no}: invalid JSON: {exc}") from exc
            if "id" not in row or "text" not in row:
                raise CorpusError(f"{path}:{line_no}: corpus rows need 'id' and 'text' fields")
            docs.append(CorpusDoc(id=str(row["id"]), title=row.get("title", ""), body=row["text"]))
    return Corpus(docs=tuple(docs))


@dataclass(frozen=True)
class RetrievalResult:
    """A query with its ranked documents in presentation order. Document
    ranks always equal 1-based list position; perturbation metadata (shuffle
    permutations, replaced positions) lives in ``meta``."""

    question_id: str
    query: str
    docs: tuple[Document, ...]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "docs", tuple(self.docs))
        ids = [d.id for d in self.docs]
        if len(set(ids)) != len(ids):
            raise ValueError(f"retrieval result for {self.question_id!r} has duplicate doc ids")
        for pos, doc in enumerate(self.docs, start=1):
            if doc.rank != pos:
                raise ValueError(
                    f"doc {doc.id!r} has rank {doc.rank} at presentation position {pos}"
                )

    def to_dict(self) -> dict:
        return {
            "question_id": self.question_id,
            "query": self.query,
            "docs": [d.to_dict() for d in self.docs],
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RetrievalResult":
        return cls(
            question_id=str(d["question_id"]),
            query=d["query"],
            docs=tuple(Document.from_dict(x) for x in d["docs"]),
            meta=d.get("meta", {}),
        )


class Index:
    """Immutable inverted index: per-term postings (document position, term
    frequency), per-document token lengths, and the average document length."""

    def __init__(self, docs: tuple[CorpusDoc, ...], postings: dict[str, tuple[tuple[int, int], ...]],
                 doc_lens: tuple[int, ...]):
        self.docs = tuple(docs)
        self.postings = postings
        self.doc_lens = tuple(doc_lens)
        self.avgdl = (sum(doc_lens) / len(doc_lens)) if doc_lens else 0.0

    def __len__(self) -> int:
        return len(self.docs)

    @property
    def n_terms(self) -> int:
        return len(self.postings)

    def df(self, term: str) -> int:
        return len(self.postings.get(term, ()))


def build_index(corpus: Corpus) -> Index:
    """Build the inverted index for a corpus. Raises EmptyCorpus on zero docs."""
    if not corpus.docs:
        raise EmptyCorpus("cannot index an empty corpus")
    postings: dict[str, list[tuple[int, int]]] = {}
    doc_lens = []
    for pos, doc in enumerate(corpus.docs):
        tokens = tokenize(doc.title + " " + doc.body)
        doc_lens.append(len(tokens))
        for term, tf in Counter(tokens).items():
            postings.setdefault(term, []).append((pos, tf))
    frozen = {term: tuple(plist) for term, plist in postings.items()}
    return Index(docs=corpus.docs, postings=frozen, doc_lens=tuple(doc_lens))


def bm25_idf(n_docs: int, df: int) -> float:
    return math.log(1.0 + (n_docs - df + 0.5) / (df + 0.5))


def retrieve(index: Index, query: str, k: int = 5, *, question_id: str = "") -> RetrievalResult:
    """Top-k documents by BM25 score. Only positive-score documents are
    returned, so fewer than k may come back; an empty result is valid."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    n_docs = len(index.docs)
    scores: dict[int, float] = {}
    for term in tokenize(query):
        plist = index.postings.get(term)
        if not plist:
            continue
        idf = bm25_idf(n_docs, len(plist))
        for pos, tf in plist:
            dl = index.doc_lens[pos]
            norm = BM25_K1 * (1.0 - BM25_B + BM25_B * dl / index.avgdl)
            scores[pos] = scores.get(pos, 0.0) + idf * tf * (BM25_K1 + 1.0) / (tf + norm)
    ranked = sorted(
        ((score, index.docs[pos].id, pos) for pos, score in scores.items() if score > 0.0),
        key=lambda item: (-item[0], item[1]),
    )[:k]
    docs = tuple(
        Document(id=index.docs[pos].id, title=index.docs[pos].title, body=index.docs[pos].body,
                 rank=out_rank, score=score)
        for out_rank, (score, _doc_id, pos) in enumerate(ranked, start=1)
    )
    return RetrievalResult(question_id=question_id, query=query, docs=docs)


def save_index(index: Index, path: str | Path) -> None:
    """Persist to a single binary file: 8-byte magic, 1 version byte, then a
    zlib-compressed JSON payload. Internal format; must round-trip exactly."""
    payload = {
        "docs": [[d.id, d.title, d.body] for d in index.docs],
        "doc_lens": list(index.doc_lens),
        "postings": {term: [list(p) for p in plist] for term, plist in index.postings.items()},
    }
    blob = zlib.compress(json.dumps(payload, ensure_ascii=False, sort_keys=True).encode("utf-8"))
    with open(path, "wb") as fh:
        fh.write(_INDEX_MAGIC)
        fh.write(bytes([_INDEX_VERSION]))
        fh.write(blob)


def load_index(path: str | Path) -> Index:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < len(_INDEX_MAGIC) + 1 or raw[: len(_INDEX_MAGIC)] != _INDEX_MAGIC:
        raise InvalidIndexFile(f"{path}: not an index file (bad magic header)")
    version = raw[len(_INDEX_MAGIC)]
    if version != _INDEX_VERSION:
        raise InvalidIndexFile(f"{path}: unsupported index version {version}")
    try:
        payload = json.loads(zlib.decompress(raw[len(_INDEX_MAGIC) + 1 :]).decode("utf-8"))
    except (zlib.error, json.JSONDecodeError) as exc:
        raise InvalidIndexFile(f"{path}: corrupt index payload: {exc}") from exc
    docs = tuple(CorpusDoc(id=i, title=t, body=b) for i, t, b in payload["docs"])
    postings = {
        term: tuple((int(pos), int(tf)) for pos, tf in plist)
        for term, plist in payload["postings"].items()
    }
    return Index(docs=docs, postings=postings, doc_lens=tuple(payload["doc_lens"]))


class Retriever(Protocol):
    """Contract shared by the local index adapter and any remote retrieval
    service a user wires in. Implementations must be deterministic for a
    fixed configuration and return presentation-ordered results."""

    def retrieve(self, query: str, k: int = 5, *, question_id: str = "") -> RetrievalResult:
        ...


class LexicalRetriever:
    """Adapter giving a built Index the Retriever interface."""

    def __init__(self, index: Index):
        self.index = index

    def retrieve(self, query: str, k: int = 5, *, question_id: str = "") -> RetrievalResult:
        return retrieve(self.index, query, k, question_id=question_id)
