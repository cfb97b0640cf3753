"""Reasoning-trajectory schema: types, parsing, canonical serialization, grounding.

A trajectory has three parts emitted in a fixed order: a relevance judgment
(``relevant``, ``relevant_reason``), a list of evidence citations
(``cite_content``, ``reason_for_cite``, ``doc_index``), and a closing analysis
(``analysis``, ``answer``). The canonical wire form is a single flat JSON
object with exactly those field names, in that order.
"""

from __future__ import annotations

import json
import unicodedata
from dataclasses import dataclass, field

TASK_KINDS = ("short_qa", "long_qa", "fact_verification")
FACT_LABELS = ("Supported", "Refuted", "NotEnoughInfo")

MANDATORY_FIELDS = ("relevant", "relevant_reason", "evidence", "analysis", "answer")
EVIDENCE_FIELDS = ("cite_content", "reason_for_cite", "doc_index")


class TrajectoryError(Exception):
    """Base class for trajectory schema errors."""


class MalformedTrajectory(TrajectoryError):
    """No balanced, JSON-parseable object could be extracted from the text."""


class MissingField(TrajectoryError):
    """A mandatory field name is absent from the structured block."""


class SchemaViolation(TrajectoryError):
    """A field is present but violates a type or coupling invariant."""


class AnswerMismatch(TrajectoryError):
    """The standalone short answer disagrees with the trajectory's answer."""


class IndexOutOfRange(TrajectoryError):
    """An evidence doc_index points beyond the retrieved document list."""


def _require_str(value, name: str) -> str:
    if not isinstance(value, str):
        raise SchemaViolation(f"field {name!r} must be a string, got {type(value).__name__}")
    return value


def _require_nonempty_str(value, name: str) -> str:
    s = _require_str(value, name)
    if not s.strip():
        raise SchemaViolation(f"field {name!r} must be a non-empty string")
    return s


@dataclass(frozen=True)
class Question:
    """A question to answer. gold_answers is a list of alias sets; each set is
    the acceptable surface forms for one required answer aspect. For
    fact_verification the single gold is one of the three class labels."""

    id: str
    text: str
    gold_answers: tuple[tuple[str, ...], ...] = ()
    task_kind: str = "short_qa"

    def __post_init__(self):
        if self.task_kind not in TASK_KINDS:
            raise ValueError(f"unknown task_kind {self.task_kind!r}; expected one of {TASK_KINDS}")
        object.__setattr__(
            self, "gold_answers", tuple(tuple(aliases) for aliases in self.gold_answers)
        )

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "text": self.text,
            "gold_answers": [list(a) for a in self.gold_answers],
            "task_kind": self.task_kind,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Question":
        return cls(
            id=str(d["id"]),
            text=d["text"],
            gold_answers=tuple(tuple(a) for a in d.get("gold_answers") or ()),
            task_kind=d.get("task_kind", "short_qa"),
        )


@dataclass(frozen=True)
class Document:
    """A retrieved text unit. rank is the 1-based presentation position in its
    retrieval list; score is the (unitless) retrieval relevance score."""

    id: str
    title: str
    body: str
    rank: int = 1
    score: float = 0.0

    def __post_init__(self):
        if not self.body:
            raise ValueError(f"document {self.id!r} has an empty body")
        if self.rank < 1:
            raise ValueError(f"document {self.id!r} has rank {self.rank}; ranks are 1-based")

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "title": self.title,
            "body": self.body,
            "rank": self.rank,
            "score": self.score,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Document":
        return cls(
            id=str(d["id"]),
            title=d.get("title", ""),
            body=d["body"],
            rank=int(d.get("rank", 1)),
            score=float(d.get("score", 0.0)),
        )


@dataclass(frozen=True)
class RelevanceJudgment:
    relevant: bool
    relevant_reason: str

    def __post_init__(self):
        if not isinstance(self.relevant, bool):
            raise SchemaViolation("'relevant' must be a boolean")
        _require_nonempty_str(self.relevant_reason, "relevant_reason")


@dataclass(frozen=True)
class EvidenceItem:
    """One cited snippet. cite_content is expected to be a verbatim quote from
    the document at 1-based doc_index in the retrieval list."""

    cite_content: str
    reason_for_cite: str
    doc_index: int

    def __post_init__(self):
        _require_nonempty_str(self.cite_content, "cite_content")
        _require_str(self.reason_for_cite, "reason_for_cite")
        if isinstance(self.doc_index, bool) or not isinstance(self.doc_index, int):
            raise SchemaViolation("'doc_index' must be an integer")
        if self.doc_index < 1:
            raise SchemaViolation(f"'doc_index' must be >= 1, got {self.doc_index}")


@dataclass(frozen=True)
class Analysis:
    """Closing part of a trajectory: a long-form analysis (possibly with
    bracketed citation markers) and the short-form answer."""

    analysis: str
    answer: str

    def __post_init__(self):
        _require_str(self.analysis, "analysis")
        _require_nonempty_str(self.answer, "answer")


@dataclass(frozen=True)
class SelfReasoningTrajectory:
    """The full three-part reasoning record, always serialized in the order
    relevance judgment, evidence list, analysis."""

    rap: RelevanceJudgment
    eap: tuple[EvidenceItem, ...]
    tap: Analysis

    def __post_init__(self):
        object.__setattr__(self, "eap", tuple(self.eap))
        if not self.rap.relevant and self.eap:
            raise SchemaViolation(
                "evidence list must be empty when relevant=false "
                "(the irrelevance path answers from internal knowledge)"
            )

    def to_dict(self) -> dict:
        return {
            "relevant": self.rap.relevant,
            "relevant_reason": self.rap.relevant_reason,
            "evidence": [
                {
                    "cite_content": e.cite_content,
                    "reason_for_cite": e.reason_for_cite,
                    "doc_index": e.doc_index,
                }
                for e in self.eap
            ],
            "analysis": self.tap.analysis,
            "answer": self.tap.answer,
        }


@dataclass(frozen=True)
class ModelOutput:
    """A parsed generation: the trajectory plus the final short answer, which
    must equal the trajectory's own answer (the output is their concatenation)."""

    trajectory: SelfReasoningTrajectory
    final_answer: str

    def __post_init__(self):
        if self.final_answer != self.trajectory.tap.answer:
            raise AnswerMismatch(
                f"final_answer {self.final_answer!r} != trajectory answer "
                f"{self.trajectory.tap.answer!r}"
            )

    def to_dict(self) -> dict:
        return {"trajectory": self.trajectory.to_dict(), "final_answer": self.final_answer}


def trajectory_from_dict(obj: dict) -> SelfReasoningTrajectory:
    """Build a trajectory from an already-decoded JSON object, raising
    MissingField / SchemaViolation on contract violations."""
    missing = [f for f in MANDATORY_FIELDS if f not in obj]
    if missing:
        raise MissingField(f"missing mandatory fields: {', '.join(missing)}")
    relevant = obj["relevant"]
    if not isinstance(relevant, bool):
        raise SchemaViolation("'relevant' must be a JSON boolean")
    rap = RelevanceJudgment(relevant=relevant, relevant_reason=obj["relevant_reason"])
    evidence_raw = obj["evidence"]
    if not isinstance(evidence_raw, list):
        raise SchemaViolation("'evidence' must be a JSON array")
    items = []
    for i, entry in enumerate(evidence_raw):
        if not isinstance(entry, dict):
            raise SchemaViolation(f"evidence[{i}] must be a JSON object")
        ev_missing = [f for f in EVIDENCE_FIELDS if f not in entry]
        if ev_missing:
            raise MissingField(f"evidence[{i}] missing fields: {', '.join(ev_missing)}")
        items.append(
            EvidenceItem(
                cite_content=entry["cite_content"],
                reason_for_cite=entry["reason_for_cite"],
                doc_index=entry["doc_index"],
            )
        )
    tap = Analysis(analysis=obj["analysis"], answer=obj["answer"])
    return SelfReasoningTrajectory(rap=rap, eap=tuple(items), tap=tap)


def _balanced_objects(raw: str) -> list[dict]:
    """Extract every outermost balanced JSON object from free text, in order.
    Content inside a successfully decoded object is not re-scanned."""
    decoder = json.JSONDecoder()
    found: list[dict] = []
    i = 0
    while True:
        start = raw.find("{", i)
        if start == -1:
            break
        try:
            obj, consumed = decoder.raw_decode(raw[start:])
        except json.JSONDecodeError:
            i = start + 1
            continue
        if isinstance(obj, dict):
            found.append(obj)
            i = start + consumed
        else:
            i = start + 1
    return found


def parse_trajectory(raw: str) -> SelfReasoningTrajectory:
    """Parse a model generation into a trajectory.

    Surrounding prose is tolerated: the parser extracts the outermost balanced
    JSON object(s) and uses the first one that carries all five mandatory
    field names.

    Raises:
        MalformedTrajectory: no balanced JSON object in the text.
        MissingField: an object was found but mandatory field names are absent.
        SchemaViolation: fields present but typed wrong, or evidence non-empty
            while relevant is false.
    """
    if not isinstance(raw, str) or "{" not in raw:
        raise MalformedTrajectory("no structured block found in generation")
    candidates = _balanced_objects(raw)
    if not candidates:
        raise MalformedTrajectory("no balanced JSON object found in generation")
    # Prefer the first candidate with all mandatory fields; otherwise report
    # the closest candidate's missing set.
    best_missing: list[str] | None = None
    for obj in candidates:
        missing = [f for f in MANDATORY_FIELDS if f not in obj]
        if not missing:
            return trajectory_from_dict(obj)
        if best_missing is None or len(missing) < len(best_missing):
            best_missing = missing
    raise MissingField(f"missing mandatory fields: {', '.join(best_missing or MANDATORY_FIELDS)}")


def _dumps(value) -> str:
    return json.dumps(value, ensure_ascii=False)


def trajectory_segments(t: SelfReasoningTrajectory) -> tuple[str, str, str]:
    """The canonical serialization split into its three parts (relevance,
    evidence, analysis). Concatenating them yields serialize_trajectory(t);
    the split points let training-data preparation recover exact character
    spans per part."""
    rap = f'{{"relevant": {_dumps(t.rap.relevant)}, "relevant_reason": {_dumps(t.rap.relevant_reason)}, '
    evidence = [
        {
            "cite_content": e.cite_content,
            "reason_for_cite": e.reason_for_cite,
            "doc_index": e.doc_index,
        }
        for e in t.eap
    ]
    eap = f'"evidence": {json.dumps(evidence, ensure_ascii=False, separators=(", ", ": "))}, '
    tap = f'"analysis": {_dumps(t.tap.analysis)}, "answer": {_dumps(t.tap.answer)}}}'
    return rap, eap, tap


def serialize_trajectory(t: SelfReasoningTrajectory) -> str:
    """Canonical, byte-stable serialization: single-line JSON, fixed field
    order, one space after ':' and ','. An empty evidence list is serialized
    explicitly as []. parse_trajectory(serialize_trajectory(t)) == t."""
    return "".join(trajectory_segments(t))


def concat_output(t: SelfReasoningTrajectory, short_answer: str) -> ModelOutput:
    """Join a trajectory with its final short answer into a ModelOutput.
    Raises AnswerMismatch when short_answer differs from the trajectory's."""
    return ModelOutput(trajectory=t, final_answer=short_answer)


def normalize_for_grounding(text: str) -> str:
    """Normalization under which cited snippets are matched against document
    bodies: Unicode NFC, lowercase, whitespace runs collapsed to single spaces."""
    return " ".join(unicodedata.normalize("NFC", text).lower().split())


@dataclass(frozen=True)
class GroundingItem:
    evidence_index: int
    doc_index: int
    passed: bool
    match_offset: int | None = None
    reason: str | None = None

    def to_dict(self) -> dict:
        return {
            "evidence_index": self.evidence_index,
            "doc_index": self.doc_index,
            "passed": self.passed,
            "match_offset": self.match_offset,
            "reason": self.reason,
        }


@dataclass(frozen=True)
class GroundingReport:
    items: tuple[GroundingItem, ...] = field(default_factory=tuple)

    @property
    def passed(self) -> bool:
        return all(item.passed for item in self.items)

    @property
    def n_failed(self) -> int:
        return sum(1 for item in self.items if not item.passed)

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "n_items": len(self.items),
            "n_failed": self.n_failed,
            "items": [item.to_dict() for item in self.items],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, separators=(", ", ": "))


def validate_evidence_grounding(
    t: SelfReasoningTrajectory, docs: list[Document] | tuple[Document, ...]
) -> GroundingReport:
    """Check that every cited snippet is a contiguous substring of the indexed
    document's body under normalize_for_grounding. Failing items are flagged
    in the report, not dropped. Raises IndexOutOfRange when a doc_index
    exceeds the document list."""
    normalized_bodies: dict[int, str] = {}
    items = []
    for pos, ev in enumerate(t.eap):
        if ev.doc_index > len(docs):
            raise IndexOutOfRange(
                f"evidence[{pos}] cites document {ev.doc_index} but only "
                f"{len(docs)} documents were retrieved"
            )
        if ev.doc_index not in normalized_bodies:
            normalized_bodies[ev.doc_index] = normalize_for_grounding(docs[ev.doc_index - 1].body)
        body = normalized_bodies[ev.doc_index]
        snippet = normalize_for_grounding(ev.cite_content)
        offset = body.find(snippet)
        if offset >= 0:
            items.append(
                GroundingItem(
                    evidence_index=pos, doc_index=ev.doc_index, passed=True, match_offset=offset
                )
            )
        else:
            items.append(
                GroundingItem(
                    evidence_index=pos,
                    doc_index=ev.doc_index,
                    passed=False,
                    reason="normalized snippet is not a substring of the cited document body",
                )
            )
    return GroundingReport(items=tuple(items))
