"""Retrieval perturbations and the comparative robustness experiment.

Two perturbation settings: presentation-order shuffling, and noise injection
that replaces a fraction (default 50%, rounded half up) of the retrieved
documents with distractors drawn from other questions' retrievals. Both are
pure functions of (input, seed). Perturbed results renumber document ranks to
presentation position so downstream citation indices always refer to what the
model actually saw; the original order is kept in the result metadata.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from typing import Sequence

from .evalsuite import em_recall, fever_accuracy, short_form_accuracy
from .pipeline import STATUS_OK, PipelineConfig, PipelineRecord, answer_question, summarize
from .retrieval import RetrievalResult, Retriever
from .trajectory import Document, Question
from .util import derive_seed

SETTINGS = ("baseline", "shuffled", "noisy")


class InsufficientDistractors(ValueError):
    """The distractor pool has fewer unseen documents than replacements needed."""


def round_half_up(x: float) -> int:
    return math.floor(x + 0.5)


def _positioned(doc: Document, position: int) -> Document:
    return Document(id=doc.id, title=doc.title, body=doc.body, rank=position, score=doc.score)


def shuffle_docs(result: RetrievalResult, seed: int) -> RetrievalResult:
    """Permute presentation order with a seed-derived uniform permutation.
    The document set is unchanged; meta records the permutation and the
    original (id, rank, score) order."""
    order = list(range(len(result.docs)))
    random.Random(seed).shuffle(order)
    docs = tuple(_positioned(result.docs[src], pos + 1) for pos, src in enumerate(order))
    meta = dict(result.meta)
    meta.update(
        {
            "perturbation": "shuffle",
            "seed": seed,
            "permutation": order,
            "original_order": [[d.id, d.rank, d.score] for d in result.docs],
        }
    )
    return RetrievalResult(question_id=result.question_id, query=result.query,
                           docs=docs, meta=meta)


def inject_noise(
    result: RetrievalResult,
    distractor_pool: Sequence[RetrievalResult],
    fraction: float = 0.5,
    seed: int = 0,
) -> RetrievalResult:
    """Replace round_half_up(fraction * len(docs)) positions, chosen uniformly
    by seed, with documents sampled (seeded, without replacement) from other
    questions' retrievals. Raises InsufficientDistractors when the pool holds
    fewer unseen distinct documents than replacements needed."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must be in [0, 1], got {fraction}")
    n = len(result.docs)
    n_replace = round_half_up(fraction * n)
    meta = dict(result.meta)
    meta.update({"perturbation": "noise", "seed": seed, "fraction": fraction})
    if n_replace == 0:
        meta.update({"replaced_positions": [], "distractor_ids": []})
        return RetrievalResult(question_id=result.question_id, query=result.query,
                               docs=result.docs, meta=meta)

    present = {d.id for d in result.docs}
    candidates: list[Document] = []
    seen: set[str] = set()
    for other in distractor_pool:
        for doc in other.docs:
            if doc.id in present or doc.id in seen:
                continue
            seen.add(doc.id)
            candidates.append(doc)
    if len(candidates) < n_replace:
        raise InsufficientDistractors(
            f"need {n_replace} distractors but the pool holds only {len(candidates)} "
            "distinct unseen documents"
        )

    rng = random.Random(seed)
    positions = sorted(rng.sample(range(n), n_replace))
    distractors = rng.sample(candidates, n_replace)
    docs = list(result.docs)
    for pos, distractor in zip(positions, distractors):
        docs[pos] = distractor
    docs = tuple(_positioned(doc, i + 1) for i, doc in enumerate(docs))
    meta.update(
        {
            "replaced_positions": positions,
            "distractor_ids": [d.id for d in distractors],
            "original_order": [[d.id, d.rank, d.score] for d in result.docs],
        }
    )
    return RetrievalResult(question_id=result.question_id, query=result.query,
                           docs=docs, meta=meta)


# --- experiment runner ---------------------------------------------------------

@dataclass(frozen=True)
class RobustnessRow:
    setting: str
    metric: str
    aggregate: float
    n: int
    delta_vs_baseline: float | None
    counts: dict

    def to_dict(self) -> dict:
        return {
            "setting": self.setting,
            "metric": self.metric,
            "aggregate": self.aggregate,
            "n": self.n,
            "delta_vs_baseline": self.delta_vs_baseline,
            "counts": self.counts,
        }


@dataclass(frozen=True)
class RobustnessReport:
    rows: tuple[RobustnessRow, ...]

    def row(self, setting: str) -> RobustnessRow:
        for r in self.rows:
            if r.setting == setting:
                return r
        raise KeyError(setting)

    def to_dict(self) -> dict:
        return {"rows": [r.to_dict() for r in self.rows]}

    def to_text(self) -> str:
        """Aligned plain-text comparison table."""
        headers = ["setting", "metric", "value", "delta", "n"]
        body = [
            [
                r.setting,
                r.metric,
                f"{r.aggregate:.4f}",
                "-" if r.delta_vs_baseline is None else f"{r.delta_vs_baseline:+.4f}",
                str(r.n),
            ]
            for r in self.rows
        ]
        widths = [max(len(h), *(len(row[i]) for row in body)) if body else len(h)
                  for i, h in enumerate(headers)]
        lines = [
            "  ".join(h.ljust(w) for h, w in zip(headers, widths)),
            "  ".join("-" * w for w in widths),
        ]
        lines += ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)) for row in body]
        return "\n".join(lines)


def _score_record(q: Question, record: PipelineRecord) -> float:
    """Task-kind metric for one record; anything unanswered scores 0."""
    if record.status != STATUS_OK or record.output is None:
        return 0.0
    if q.task_kind == "fact_verification":
        return float(fever_accuracy(record.output.final_answer, q.gold_answers[0][0]))
    if q.task_kind == "long_qa":
        return em_recall(record.output.trajectory.tap.analysis, q.gold_answers)
    return float(short_form_accuracy(record.output.final_answer, q.gold_answers))


_METRIC_BY_TASK = {
    "short_qa": "accuracy",
    "fact_verification": "accuracy",
    "long_qa": "em_recall",
}


def run_robustness_experiment(
    questions: Sequence[Question],
    retriever: Retriever,
    backend,
    settings: Sequence[str] = SETTINGS,
    *,
    master_seed: int = 0,
    fraction: float = 0.5,
    cfg: PipelineConfig = PipelineConfig(),
) -> RobustnessReport:
    """Run the pipeline under each setting with shared per-question seeds and
    compare the task metric across settings. Per-question failures are scored
    0 and never abort the table."""
    unknown = set(settings) - set(SETTINGS)
    if unknown:
        raise ValueError(f"unknown settings: {sorted(unknown)}; choose from {SETTINGS}")
    kinds = {q.task_kind for q in questions}
    if len(kinds) > 1:
        raise ValueError(f"robustness runs need a single task kind, got {sorted(kinds)}")
    metric = _METRIC_BY_TASK[next(iter(kinds))] if kinds else "accuracy"

    base = {q.id: retriever.retrieve(q.text, cfg.k, question_id=q.id) for q in questions}
    rows: list[RobustnessRow] = []
    baseline_value: float | None = None
    for setting in settings:
        records = []
        for i, q in enumerate(questions):
            seed_i = derive_seed(master_seed, i)  # shared across settings
            retrieval = base[q.id]
            if setting == "shuffled":
                retrieval = shuffle_docs(retrieval, seed_i)
            elif setting == "noisy":
                pool = [base[p.id] for p in questions if p.id != q.id]
                retrieval = inject_noise(retrieval, pool, fraction, seed_i)
            records.append(
                answer_question(q, None, backend, cfg, retrieval_override=retrieval)
            )
        values = [_score_record(q, r) for q, r in zip(questions, records)]
        aggregate = sum(values) / len(values) if values else 0.0
        if setting == "baseline":
            baseline_value = aggregate
        rows.append(
            RobustnessRow(
                setting=setting, metric=metric, aggregate=aggregate, n=len(values),
                delta_vs_baseline=None, counts=summarize(records),
            )
        )
    finished = []
    for row in rows:
        delta = None if baseline_value is None else row.aggregate - baseline_value
        finished.append(
            RobustnessRow(setting=row.setting, metric=row.metric, aggregate=row.aggregate,
                          n=row.n, delta_vs_baseline=delta, counts=row.counts)
        )
    return RobustnessReport(rows=tuple(finished))
