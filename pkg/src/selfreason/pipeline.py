"""End-to-end inference: retrieve, prompt, generate once, parse, record.

The trajectory and the short answer come out of one generation per question.
A parse failure gets exactly one retry with a format reminder appended; a
second failure is recorded (status "unparseable") and the batch moves on.
Backend failures after the gateway's own retries are recorded as "failed".
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .llm_gateway import (
    DEFAULT_MAX_TOKENS,
    DEFAULT_TEMPERATURE,
    GatewayError,
    GenerationRequest,
    build_inference_prompt,
)
from .retrieval import RetrievalResult, Retriever
from .trajectory import ModelOutput, Question, TrajectoryError, parse_trajectory
from .util import dumps_canonical

STATUS_OK = "ok"
STATUS_UNPARSEABLE = "unparseable"
STATUS_FAILED = "failed"

FORMAT_REMINDER = (
    "Format reminder: respond with only a single JSON object containing the fields"
    ' "relevant", "relevant_reason", "evidence", "analysis", and "answer", in that order.'
)


@dataclass(frozen=True)
class PipelineConfig:
    k: int = 5
    jobs: int = 1
    temperature: float = DEFAULT_TEMPERATURE
    max_tokens: int = DEFAULT_MAX_TOKENS
    seed: int | None = None
    # timing is off by default so that reruns are byte-identical
    record_timing: bool = False


@dataclass(frozen=True)
class PipelineRecord:
    question_id: str
    status: str
    internal_knowledge: bool
    retrieval: RetrievalResult
    output: ModelOutput | None
    raw_generation: str
    timing_ms: float = 0.0
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "question_id": self.question_id,
            "status": self.status,
            "internal_knowledge": self.internal_knowledge,
            "retrieval": self.retrieval.to_dict(),
            "output": self.output.to_dict() if self.output else None,
            "raw_generation": self.raw_generation,
            "timing_ms": self.timing_ms,
            "error": self.error,
        }


def answer_question(
    q: Question,
    retriever: Retriever | None,
    backend,
    cfg: PipelineConfig = PipelineConfig(),
    *,
    retrieval_override: RetrievalResult | None = None,
) -> PipelineRecord:
    """Run one question through retrieve -> prompt -> generate -> parse.

    Happy path issues exactly one backend call. retrieval_override skips
    retrieval and uses the given (possibly perturbed) document list instead;
    robustness experiments rely on this hook.
    """
    t0 = time.perf_counter()
    if retrieval_override is not None:
        retrieval = retrieval_override
    else:
        if retriever is None:
            raise ValueError("either a retriever or a retrieval_override is required")
        retrieval = retriever.retrieve(q.text, cfg.k, question_id=q.id)

    system_prompt, user_prompt = build_inference_prompt(q, retrieval.docs)
    request = GenerationRequest(
        system_prompt=system_prompt,
        user_prompt=user_prompt,
        temperature=cfg.temperature,
        max_tokens=cfg.max_tokens,
        seed=cfg.seed,
    )

    def _elapsed() -> float:
        return (time.perf_counter() - t0) * 1000.0 if cfg.record_timing else 0.0

    def _failed(exc: Exception) -> PipelineRecord:
        return PipelineRecord(
            question_id=q.id, status=STATUS_FAILED, internal_knowledge=False,
            retrieval=retrieval, output=None, raw_generation="",
            timing_ms=_elapsed(), error=f"GenerationFailed: {exc}",
        )

    try:
        response = backend.generate(request)
    except GatewayError as exc:
        return _failed(exc)

    raw = response.text
    first_error: TrajectoryError | None = None
    try:
        trajectory = parse_trajectory(raw)
    except TrajectoryError as exc:
        first_error = exc
        retry_request = GenerationRequest(
            system_prompt=system_prompt,
            user_prompt=user_prompt + "\n\n" + FORMAT_REMINDER,
            temperature=cfg.temperature,
            max_tokens=cfg.max_tokens,
            seed=cfg.seed,
        )
        try:
            response = backend.generate(retry_request)
        except GatewayError as retry_exc:
            return _failed(retry_exc)
        raw = response.text
        try:
            trajectory = parse_trajectory(raw)
        except TrajectoryError as second_error:
            return PipelineRecord(
                question_id=q.id, status=STATUS_UNPARSEABLE, internal_knowledge=False,
                retrieval=retrieval, output=None, raw_generation=raw,
                timing_ms=_elapsed(),
                error=f"UnparseableAfterRetry: first: {first_error}; retry: {second_error}",
            )

    output = ModelOutput(trajectory=trajectory, final_answer=trajectory.tap.answer)
    return PipelineRecord(
        question_id=q.id, status=STATUS_OK,
        internal_knowledge=not trajectory.rap.relevant,
        retrieval=retrieval, output=output, raw_generation=raw,
        timing_ms=_elapsed(), error=None,
    )


def summarize(records: Sequence[PipelineRecord]) -> dict:
    return {
        "total": len(records),
        "ok": sum(1 for r in records if r.status == STATUS_OK),
        "internal_knowledge": sum(
            1 for r in records if r.status == STATUS_OK and r.internal_knowledge
        ),
        "unparseable": sum(1 for r in records if r.status == STATUS_UNPARSEABLE),
        "failed": sum(1 for r in records if r.status == STATUS_FAILED),
    }


def run_batch(
    questions: Sequence[Question],
    retriever: Retriever,
    backend,
    cfg: PipelineConfig = PipelineConfig(),
    out_path: str | Path | None = None,
) -> tuple[list[PipelineRecord], dict]:
    """Answer every question; records are emitted in input order regardless of
    completion order, and per-question failures never abort the batch."""
    if cfg.jobs > 1 and questions:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            records = list(
                pool.map(lambda q: answer_question(q, retriever, backend, cfg), questions)
            )
    else:
        records = [answer_question(q, retriever, backend, cfg) for q in questions]

    if out_path is not None:
        with open(out_path, "w", encoding="utf-8") as fh:
            for record in records:
                fh.write(dumps_canonical(record.to_dict()))
                fh.write("\n")
    return records, summarize(records)
