"""Training-data synthesis and quality control.

Positive samples pair a question with its own retrieved documents; negative
samples pair it with the retrieval of a uniformly chosen different question,
with the presentation order shuffled to avoid order bias. A teacher backend
turns samples into candidate records (one generation each), and the quality
filter keeps a record only if its answer is correct and, for long-form
records, its citation recall and precision clear the configured thresholds
(default 0.8 for both).
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Callable, Sequence

from .evalsuite import (
    SupportJudge,
    citation_precision,
    citation_recall,
    em_recall,
    fever_accuracy,
    segment_statements,
    short_form_accuracy,
)
from .llm_gateway import GatewayError, GenerationRequest, build_datagen_prompt
from .retrieval import Retriever
from .trajectory import (
    Document,
    Question,
    SelfReasoningTrajectory,
    TrajectoryError,
    parse_trajectory,
    trajectory_from_dict,
)

DEFAULT_DELTA_P = 0.8
DEFAULT_DELTA_R = 0.8


class PoolTooSmall(ValueError):
    """Negative sampling needs at least one other question in the pool."""


class TeacherFailed(Exception):
    """Teacher backend failed after its own retries."""


class UnparseableTeacherOutput(Exception):
    """Teacher output held no valid trajectory; the candidate is dropped."""


@dataclass(frozen=True)
class CandidateSample:
    """A (question, documents) pair for the teacher. For negatives the docs
    come from source_question_id's retrieval, not the question's own."""

    question: Question
    docs: tuple[Document, ...]
    polarity: str
    source_question_id: str
    shuffle_seed: int

    def __post_init__(self):
        object.__setattr__(self, "docs", tuple(self.docs))
        if self.polarity not in ("positive", "negative"):
            raise ValueError(f"polarity must be 'positive' or 'negative', got {self.polarity!r}")
        if self.polarity == "positive" and self.source_question_id != self.question.id:
            raise ValueError("positive samples must use the question's own retrieval")
        if self.polarity == "negative" and self.source_question_id == self.question.id:
            raise ValueError("negative samples must use a different question's retrieval")

    def to_dict(self) -> dict:
        return {
            "question": self.question.to_dict(),
            "docs": [d.to_dict() for d in self.docs],
            "polarity": self.polarity,
            "source_question_id": self.source_question_id,
            "shuffle_seed": self.shuffle_seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CandidateSample":
        return cls(
            question=Question.from_dict(d["question"]),
            docs=tuple(Document.from_dict(x) for x in d["docs"]),
            polarity=d["polarity"],
            source_question_id=str(d["source_question_id"]),
            shuffle_seed=int(d["shuffle_seed"]),
        )


@dataclass(frozen=True)
class CandidateRecord:
    sample: CandidateSample
    trajectory: SelfReasoningTrajectory
    raw_teacher_output: str
    polarity_mismatch: bool = False

    def to_dict(self) -> dict:
        return {
            "sample": self.sample.to_dict(),
            "trajectory": self.trajectory.to_dict(),
            "raw_teacher_output": self.raw_teacher_output,
            "polarity_mismatch": self.polarity_mismatch,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CandidateRecord":
        return cls(
            sample=CandidateSample.from_dict(d["sample"]),
            trajectory=trajectory_from_dict(d["trajectory"]),
            raw_teacher_output=d.get("raw_teacher_output", ""),
            polarity_mismatch=bool(d.get("polarity_mismatch", False)),
        )


def _shuffled_presentation(docs: Sequence[Document], rng: random.Random) -> tuple[Document, ...]:
    order = list(range(len(docs)))
    rng.shuffle(order)
    return tuple(
        Document(id=docs[src].id, title=docs[src].title, body=docs[src].body,
                 rank=out_pos + 1, score=docs[src].score)
        for out_pos, src in enumerate(order)
    )


def make_positive_sample(q: Question, retriever: Retriever, rng_seed: int,
                         k: int = 5) -> CandidateSample:
    """Pair a question with its own top-k documents, presentation-shuffled
    with a permutation derived from rng_seed."""
    result = retriever.retrieve(q.text, k, question_id=q.id)
    docs = _shuffled_presentation(result.docs, random.Random(rng_seed))
    return CandidateSample(question=q, docs=docs, polarity="positive",
                           source_question_id=q.id, shuffle_seed=rng_seed)


def make_negative_sample(q: Question, pool: Sequence[Question], retriever: Retriever,
                         rng_seed: int, k: int = 5) -> CandidateSample:
    """Pair a question with the top-k documents of a uniformly chosen
    different question from the pool. Both the choice of the other question
    and the presentation shuffle are derived from rng_seed."""
    others = [p for p in pool if p.id != q.id]
    if not others:
        raise PoolTooSmall(
            f"need at least one question besides {q.id!r} to build a negative sample"
        )
    rng = random.Random(rng_seed)
    other = others[rng.randrange(len(others))]
    result = retriever.retrieve(other.text, k, question_id=other.id)
    docs = _shuffled_presentation(result.docs, rng)
    return CandidateSample(question=q, docs=docs, polarity="negative",
                           source_question_id=other.id, shuffle_seed=rng_seed)


def _gold_for_prompt(q: Question):
    if q.task_kind == "fact_verification":
        return q.gold_answers[0][0]
    return q.gold_answers


def generate_candidate(sample: CandidateSample, teacher, *,
                       temperature: float = 0.2, max_tokens: int = 2048) -> CandidateRecord:
    """One teacher generation for one sample. Raises TeacherFailed on backend
    errors and UnparseableTeacherOutput when no trajectory can be parsed.
    A trajectory whose relevance judgment contradicts the sample's polarity is
    retained but flagged; the quality filter decides its fate."""
    system, user = build_datagen_prompt(
        sample.question, sample.docs, _gold_for_prompt(sample.question),
        sample.question.task_kind, polarity=sample.polarity,
    )
    request = GenerationRequest(system_prompt=system, user_prompt=user,
                                temperature=temperature, max_tokens=max_tokens)
    try:
        response = teacher.generate(request)
    except GatewayError as exc:
        raise TeacherFailed(str(exc)) from exc
    try:
        trajectory = parse_trajectory(response.text)
    except TrajectoryError as exc:
        raise UnparseableTeacherOutput(str(exc)) from exc
    mismatch = trajectory.rap.relevant != (sample.polarity == "positive")
    return CandidateRecord(sample=sample, trajectory=trajectory,
                           raw_teacher_output=response.text, polarity_mismatch=mismatch)


@dataclass
class DatagenReport:
    n_samples: int = 0
    n_generated: int = 0
    n_unparseable: int = 0
    n_teacher_failed: int = 0
    n_polarity_mismatch: int = 0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def generate_candidates(samples: Sequence[CandidateSample], teacher,
                        **gen_kwargs) -> tuple[list[CandidateRecord], DatagenReport]:
    """Generate a record per sample; unparseable teacher outputs are dropped
    and counted, teacher failures likewise."""
    report = DatagenReport(n_samples=len(samples))
    records = []
    for sample in samples:
        try:
            record = generate_candidate(sample, teacher, **gen_kwargs)
        except UnparseableTeacherOutput:
            report.n_unparseable += 1
            continue
        except TeacherFailed:
            report.n_teacher_failed += 1
            continue
        records.append(record)
        report.n_generated += 1
        if record.polarity_mismatch:
            report.n_polarity_mismatch += 1
    return records, report


# --- quality control ----------------------------------------------------------

AnswerChecker = Callable[[CandidateRecord], bool]


def default_answer_checker(record: CandidateRecord, *, min_em_recall: float | None = None) -> bool:
    """Correctness bound to the task's own metric: containment accuracy for
    short-form QA, exact class match for fact verification, and for long-form
    QA an EM-recall floor over the analysis (default: at least one gold
    aspect matched)."""
    q = record.sample.question
    if not q.gold_answers:
        raise ValueError(f"question {q.id!r} has no gold answers; record is not evaluable")
    answer = record.trajectory.tap.answer
    if q.task_kind == "fact_verification":
        return fever_accuracy(answer, q.gold_answers[0][0]) == 1
    if q.task_kind == "long_qa":
        recall = em_recall(record.trajectory.tap.analysis, q.gold_answers)
        if min_em_recall is None:
            return recall * len(q.gold_answers) >= 1.0 - 1e-12
        return recall >= min_em_recall
    return short_form_accuracy(answer, q.gold_answers) == 1


@dataclass(frozen=True)
class QcScores:
    question_id: str
    polarity: str
    task_kind: str
    answer_correct: bool
    citation_recall: float | None
    citation_precision: float | None
    kept: bool

    def to_dict(self) -> dict:
        return {
            "question_id": self.question_id,
            "polarity": self.polarity,
            "task_kind": self.task_kind,
            "answer_correct": self.answer_correct,
            "citation_recall": self.citation_recall,
            "citation_precision": self.citation_precision,
            "kept": self.kept,
        }


@dataclass(frozen=True)
class QcReport:
    n_input: int
    n_dropped_incorrect_answer: int
    n_dropped_citation: int
    n_kept: int
    n_kept_long_form: int
    n_kept_other: int
    delta_p: float
    delta_r: float
    per_record: tuple[QcScores, ...]

    def to_dict(self) -> dict:
        return {
            "n_input": self.n_input,
            "n_dropped_incorrect_answer": self.n_dropped_incorrect_answer,
            "n_dropped_citation": self.n_dropped_citation,
            "n_kept": self.n_kept,
            "n_kept_long_form": self.n_kept_long_form,
            "n_kept_other": self.n_kept_other,
            "delta_p": self.delta_p,
            "delta_r": self.delta_r,
            "per_record": [s.to_dict() for s in self.per_record],
        }


def qc_filter(
    records: Sequence[CandidateRecord],
    delta_p: float = DEFAULT_DELTA_P,
    delta_r: float = DEFAULT_DELTA_R,
    judge: SupportJudge | None = None,
    answer_checker: AnswerChecker = default_answer_checker,
) -> tuple[list[CandidateRecord], QcReport]:
    """Two-gate quality filter over candidate records.

    Gate 1 drops any record whose answer is incorrect per answer_checker.
    Gate 2 applies to answer-correct long-form positive records only: their
    citation recall s_r and precision s_p (computed from the analysis's
    bracketed citations against the sample's documents, with the given judge)
    must satisfy s_r >= delta_r and s_p >= delta_p. Negative samples carry no
    citations and pass through gate 1 only. The kept set is the union of the
    surviving long-form and other records.
    """
    if judge is None:
        from .evalsuite import lexical_overlap_judge

        judge = lexical_overlap_judge()
    kept: list[CandidateRecord] = []
    scores: list[QcScores] = []
    n_answer_dropped = 0
    n_citation_dropped = 0
    n_kept_long = 0
    n_kept_other = 0
    for record in records:
        q = record.sample.question
        correct = answer_checker(record)
        s_r: float | None = None
        s_p: float | None = None
        keep = False
        if not correct:
            n_answer_dropped += 1
        elif q.task_kind == "long_qa" and record.sample.polarity == "positive":
            statements = segment_statements(record.trajectory.tap.analysis)
            s_r = citation_recall(statements, record.sample.docs, judge).aggregate
            s_p = citation_precision(statements, record.sample.docs, judge).aggregate
            if s_r >= delta_r and s_p >= delta_p:
                keep = True
                n_kept_long += 1
            else:
                n_citation_dropped += 1
        else:
            keep = True
            n_kept_other += 1
        if keep:
            kept.append(record)
        scores.append(
            QcScores(question_id=q.id, polarity=record.sample.polarity, task_kind=q.task_kind,
                     answer_correct=correct, citation_recall=s_r, citation_precision=s_p,
                     kept=keep)
        )
    report = QcReport(
        n_input=len(records),
        n_dropped_incorrect_answer=n_answer_dropped,
        n_dropped_citation=n_citation_dropped,
        n_kept=len(kept),
        n_kept_long_form=n_kept_long,
        n_kept_other=n_kept_other,
        delta_p=delta_p,
        delta_r=delta_r,
        per_record=tuple(scores),
    )
    return kept, report


def dsr_rows(kept: Sequence[CandidateRecord], report: QcReport) -> list[dict]:
    """Rows for the filtered-dataset JSONL: question, documents in
    presentation order, trajectory, polarity, and the record's QC scores.
    Kept records correspond one-to-one, in order, with the report's kept
    score entries."""
    kept_scores = [s for s in report.per_record if s.kept]
    if len(kept_scores) != len(kept):
        raise ValueError("kept records and report are out of step")
    rows = []
    for record, score in zip(kept, kept_scores):
        rows.append(
            {
                "question": record.sample.question.to_dict(),
                "docs": [d.to_dict() for d in record.sample.docs],
                "trajectory": record.trajectory.to_dict(),
                "polarity": record.sample.polarity,
                "qc_scores": {
                    "citation_recall": score.citation_recall,
                    "citation_precision": score.citation_precision,
                },
            }
        )
    return rows
