"""Evaluation metrics: short-form accuracy, EM recall over answer aspects,
citation recall/precision with a pluggable support judge, and three-class
fact-verification accuracy.

Long-form answers are segmented into statements; each statement may cite
documents with bracketed 1-based markers like ``[1]`` or ``[2][3]``. A
support judge maps (premise, claim) to full / partial / none; the default is
a deterministic lexical-overlap judge, and an external NLI model can be wired
in through the same callable contract.
"""

from __future__ import annotations

import enum
import re
import string
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

from .trajectory import FACT_LABELS, Document
from .retrieval import tokenize


class SupportVerdict(enum.Enum):
    FULL = "full"
    PARTIAL = "partial"
    NONE = "none"


# judge(premise, claim) -> SupportVerdict; must be pure and deterministic
# for a fixed configuration.
SupportJudge = Callable[[str, str], SupportVerdict]


class UnmappablePrediction(ValueError):
    """Prediction text does not map to any fact-verification class."""


class DanglingCitation(ValueError):
    """A citation index points beyond the document list."""


@dataclass(frozen=True)
class Statement:
    """One sentence of a long-form answer with its citation indices (1-based)
    and its position within the answer. Marker brackets are stripped from text."""

    text: str
    citations: tuple[int, ...]
    position: int

    def __post_init__(self):
        object.__setattr__(self, "citations", tuple(self.citations))
        if not self.text.strip():
            raise ValueError("statement text must be non-empty after marker stripping")
        if any(c < 1 for c in self.citations):
            raise ValueError("citation indices are 1-based")


@dataclass(frozen=True)
class MetricReport:
    """One metric over a batch: the aggregate is always the plain mean of the
    per-item values (0.0 for an empty batch). flags carries diagnostics such
    as dangling citations or unmappable predictions."""

    metric: str
    aggregate: float
    per_item: tuple[tuple[str, float], ...]
    n: int
    flags: tuple[dict, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "per_item", tuple(self.per_item))
        object.__setattr__(self, "flags", tuple(self.flags))
        if self.n != len(self.per_item):
            raise ValueError(f"n={self.n} but {len(self.per_item)} per-item values")
        expected = (sum(v for _, v in self.per_item) / self.n) if self.n else 0.0
        if abs(self.aggregate - expected) > 1e-12:
            raise ValueError(
                f"aggregate {self.aggregate!r} is not the mean of per-item values {expected!r}"
            )

    def to_dict(self) -> dict:
        return {
            "metric": self.metric,
            "aggregate": self.aggregate,
            "n": self.n,
            "per_item": [[item_id, value] for item_id, value in self.per_item],
            "flags": list(self.flags),
        }


def make_report(metric: str, per_item: Sequence[tuple[str, float]],
                flags: Sequence[dict] = ()) -> MetricReport:
    aggregate = (sum(v for _, v in per_item) / len(per_item)) if per_item else 0.0
    return MetricReport(metric=metric, aggregate=aggregate, per_item=tuple(per_item),
                        n=len(per_item), flags=tuple(flags))


def merge_reports(reports: Iterable[MetricReport]) -> MetricReport:
    """Merge same-metric reports; the merged aggregate is the n-weighted mean,
    so merging is associative."""
    reports = list(reports)
    if not reports:
        raise ValueError("nothing to merge")
    names = {r.metric for r in reports}
    if len(names) > 1:
        raise ValueError(f"cannot merge different metrics: {sorted(names)}")
    per_item: list[tuple[str, float]] = []
    flags: list[dict] = []
    for r in reports:
        per_item.extend(r.per_item)
        flags.extend(r.flags)
    return make_report(reports[0].metric, per_item, flags)


# --- statement segmentation ------------------------------------------------

# Trailing-dot abbreviations that do not end a sentence.
_ABBREVIATIONS = {
    "mr", "mrs", "ms", "dr", "prof", "sr", "jr", "st", "no", "vs", "etc",
    "e.g", "i.e", "fig", "al", "inc", "co", "ltd", "dept", "est", "approx",
}

_MARKER_RE = re.compile(r"\[\s*(\d{1,3})\s*\]")
_BRACKET_GROUP_RE = re.compile(r"\[[^\[\]]*\]")


def _is_sentence_break(text: str, i: int) -> bool:
    """True when the terminator at text[i] ends a sentence: it must be followed
    by whitespace/end (citation markers may intervene) and, for '.', the word
    before must not be a known abbreviation."""
    j = i + 1
    while j < len(text) and text[j] in ")]\"'":
        j += 1
    if j < len(text) and not text[j].isspace():
        return False
    if text[i] != ".":
        return True
    word_start = i
    while word_start > 0 and not text[word_start - 1].isspace():
        word_start -= 1
    word = text[word_start:i].lower().strip("([\"'")
    # single letters (initials) and dotted tokens (p.m, e.g, u.s) are abbreviations
    if len(word) == 1 and word.isalpha():
        return False
    if "." in word:
        return False
    return word not in _ABBREVIATIONS


def _split_sentences(text: str) -> list[str]:
    sentences = []
    start = 0
    for i, ch in enumerate(text):
        if ch in ".?!" and _is_sentence_break(text, i):
            end = i + 1
            while end < len(text) and text[end] in ")]\"'":
                end += 1
            # keep trailing citation markers with their sentence
            m = re.match(r"(\s*(\[\s*\d{1,3}\s*\])+)", text[end:])
            if m:
                end += m.end()
            chunk = text[start:end].strip()
            if chunk:
                sentences.append(chunk)
            start = end
    tail = text[start:].strip()
    if tail:
        sentences.append(tail)
    return sentences


def segment_statements_report(long_answer: str) -> tuple[list[Statement], int]:
    """Segment a long-form answer into statements and extract their citation
    markers. Returns (statements, number of ignored malformed bracket groups).
    Sentences that are empty once markers are stripped are dropped."""
    statements = []
    ignored = 0
    position = 0
    for sentence in _split_sentences(long_answer):
        citations = [int(m.group(1)) for m in _MARKER_RE.finditer(sentence)]
        for group in _BRACKET_GROUP_RE.findall(sentence):
            if not _MARKER_RE.fullmatch(group):
                ignored += 1
        text = _MARKER_RE.sub("", sentence)
        text = re.sub(r"\s+", " ", text).strip()
        text = re.sub(r"\s+([.?!,;:])", r"\1", text)
        if not text:
            continue
        statements.append(Statement(text=text, citations=tuple(citations), position=position))
        position += 1
    return statements, ignored


def segment_statements(long_answer: str) -> list[Statement]:
    return segment_statements_report(long_answer)[0]


# --- answer normalization and short-form metrics -----------------------------

_ARTICLE_RE = re.compile(r"\b(a|an|the)\b")
_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


def normalize_answer(text: str) -> str:
    """Lowercase, strip punctuation, drop articles, collapse whitespace."""
    text = text.lower().translate(_PUNCT_TABLE)
    text = _ARTICLE_RE.sub(" ", text)
    return " ".join(text.split())


def short_form_accuracy(prediction: str, gold: Sequence[Sequence[str]]) -> int:
    """1 iff any alias of any gold aspect set appears as a substring of the
    normalized prediction (containment, not strict exact match)."""
    if not gold:
        raise ValueError("short_form_accuracy needs at least one gold alias set")
    pred = normalize_answer(prediction)
    for alias_set in gold:
        for alias in alias_set:
            if normalize_answer(alias) in pred:
                return 1
    return 0


def em_recall(long_answer: str, gold: Sequence[Sequence[str]]) -> float:
    """Fraction of gold aspect sets with at least one alias appearing verbatim
    (after normalization) in the long answer."""
    if not gold:
        raise ValueError("em_recall needs at least one gold alias set")
    answer = normalize_answer(long_answer)
    covered = sum(
        1 for alias_set in gold if any(normalize_answer(a) in answer for a in alias_set)
    )
    return covered / len(gold)


# --- fact verification -------------------------------------------------------

_FACT_CANON = {re.sub(r"[\s_]+", "", label.lower()): label for label in FACT_LABELS}


def map_fact_label(prediction: str) -> str | None:
    """Map free text onto one of the three class labels; None if unmappable.
    Accepts case differences and internal whitespace/underscores."""
    key = re.sub(r"[\s_]+", "", prediction.strip().lower())
    return _FACT_CANON.get(key)


def fever_accuracy(prediction: str, gold: str) -> int:
    """Three-class accuracy for one item. Unmappable predictions score 0."""
    if gold not in FACT_LABELS:
        raise ValueError(f"gold label {gold!r} is not one of {FACT_LABELS}")
    return 1 if map_fact_label(prediction) == gold else 0


# --- citation metrics --------------------------------------------------------

def _statement_recall(statement: Statement, docs: Sequence[Document],
                      judge: SupportJudge) -> tuple[float, bool]:
    """Returns (recall value, dangling flag). A statement is recalled iff the
    concatenation of all its cited documents fully supports it; statements
    with no citations or with a dangling citation score 0."""
    if not statement.citations:
        return 0.0, False
    if any(c > len(docs) for c in statement.citations):
        return 0.0, True
    premise = "\n".join(docs[c - 1].body for c in statement.citations)
    verdict = judge(premise, statement.text)
    return (1.0 if verdict == SupportVerdict.FULL else 0.0), False


def citation_recall(statements: Sequence[Statement], docs: Sequence[Document],
                    judge: SupportJudge) -> MetricReport:
    """Per-statement citation recall, averaged over statements."""
    per_item = []
    flags = []
    for st in statements:
        value, dangling = _statement_recall(st, docs, judge)
        item_id = f"s{st.position}"
        per_item.append((item_id, value))
        if dangling:
            flags.append({"item": item_id, "flag": "dangling_citation",
                          "citations": list(st.citations), "n_docs": len(docs)})
    return make_report("citation_recall", per_item, flags)


def citation_precision(statements: Sequence[Statement], docs: Sequence[Document],
                       judge: SupportJudge) -> MetricReport:
    """Per-citation precision, averaged over all citations of all statements.
    A citation scores 1 iff its statement has recall 1 and the cited document
    alone at least partially supports the statement. Statements without
    citations contribute no terms."""
    per_item = []
    flags = []
    for st in statements:
        recall_value, _ = _statement_recall(st, docs, judge)
        for j, cite in enumerate(st.citations):
            item_id = f"s{st.position}:c{j}"
            if cite > len(docs):
                per_item.append((item_id, 0.0))
                flags.append({"item": item_id, "flag": "dangling_citation",
                              "citation": cite, "n_docs": len(docs)})
                continue
            if recall_value == 1.0:
                verdict = judge(docs[cite - 1].body, st.text)
                value = 1.0 if verdict in (SupportVerdict.FULL, SupportVerdict.PARTIAL) else 0.0
            else:
                value = 0.0
            per_item.append((item_id, value))
    return make_report("citation_precision", per_item, flags)


# --- default lexical support judge -------------------------------------------

_STOPWORDS = frozenset("""
a an the and or but if then else when while of in on at to for with by from as
that this these those it its he she they them his her their we you i me my our
your is are was were be been being am do does did will would can could shall
should may might must not no nor so such than too very just also there here
about into over under again further once during before after above below up
down out off only own same both each few more most other some any all
""".split())


def content_tokens(text: str) -> set[str]:
    return {t for t in tokenize(text) if t not in _STOPWORDS}


def lexical_overlap_judge(theta_full: float = 0.85, theta_partial: float = 0.4) -> SupportJudge:
    """Deterministic stand-in for an NLI support model. The verdict comes from
    content-word recall r = |claim content tokens ∩ premise tokens| / |claim
    content tokens|: full if r >= theta_full, partial if r >= theta_partial,
    else none. A claim with zero content tokens is never supported."""
    if not (0.0 <= theta_partial <= theta_full <= 1.0):
        raise ValueError(
            f"need 0 <= theta_partial <= theta_full <= 1, got {theta_partial}, {theta_full}"
        )

    def judge(premise: str, claim: str) -> SupportVerdict:
        claim_words = content_tokens(claim)
        if not claim_words:
            return SupportVerdict.NONE
        premise_words = set(tokenize(premise))
        r = len(claim_words & premise_words) / len(claim_words)
        if r >= theta_full:
            return SupportVerdict.FULL
        if r >= theta_partial:
            return SupportVerdict.PARTIAL
        return SupportVerdict.NONE

    return judge
