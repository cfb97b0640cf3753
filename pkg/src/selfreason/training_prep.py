"""Stage-wise masked training-data preparation.

Converts filtered candidate records into training records whose target text
is the canonical trajectory serialization followed by the final answer, with
exact character spans for the four segments (relevance judgment, evidence,
analysis, answer). Three training stages mask progressively less of the
trajectory: stage 1 masks evidence+analysis, stage 2 masks analysis only,
stage 3 masks nothing; the answer segment is never masked. Masks are
character spans over the target text; mapping spans to tokens is the training
runner's job, which keeps this component tokenizer-free.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .datagen import CandidateRecord
from .llm_gateway import render_document_blocks
from .trajectory import (
    Document,
    Question,
    SelfReasoningTrajectory,
    serialize_trajectory,
    trajectory_segments,
)
from .util import dumps_canonical, read_json, write_json

SEGMENT_LABELS = ("rap", "eap", "tap", "answer")

STAGE_MASKS: dict[int, frozenset[str]] = {
    1: frozenset({"eap", "tap"}),
    2: frozenset({"tap"}),
    3: frozenset(),
}

DEFAULT_STAGE_LRS = (5e-5, 3e-5, 1e-5)
DEFAULT_EPOCHS = 3
DEFAULT_BATCH_SIZE = 32

ANSWER_SEPARATOR = "\n"


class SegmentationFailure(ValueError):
    """Segment offsets could not be recovered for a record."""


@dataclass(frozen=True)
class Segment:
    label: str
    start: int
    end: int

    def to_list(self) -> list:
        return [self.label, self.start, self.end]


@dataclass(frozen=True)
class TrainingRecord:
    """One training example: prompt (question + documents), target (serialized
    trajectory + final answer), contiguous non-overlapping segments covering
    the target exactly, and the per-stage masked label sets."""

    question_id: str
    prompt_text: str
    target_text: str
    segments: tuple[Segment, ...]

    def __post_init__(self):
        labels = tuple(s.label for s in self.segments)
        if labels != SEGMENT_LABELS:
            raise SegmentationFailure(f"segments must be labeled {SEGMENT_LABELS}, got {labels}")
        cursor = 0
        for seg in self.segments:
            if seg.start != cursor or seg.end < seg.start:
                raise SegmentationFailure(
                    f"segment {seg.label!r} [{seg.start}, {seg.end}) breaks contiguity at {cursor}"
                )
            cursor = seg.end
        if cursor != len(self.target_text):
            raise SegmentationFailure(
                f"segments cover {cursor} chars but target has {len(self.target_text)}"
            )

    @property
    def stage_masks(self) -> dict[int, frozenset[str]]:
        return dict(STAGE_MASKS)

    def masked_spans(self, stage: int) -> list[tuple[int, int]]:
        masked = STAGE_MASKS[stage]
        return [(s.start, s.end) for s in self.segments if s.label in masked]

    def to_stage_dict(self, stage: int) -> dict:
        return {
            "question_id": self.question_id,
            "stage": stage,
            "prompt_text": self.prompt_text,
            "target_text": self.target_text,
            "segments": [s.to_list() for s in self.segments],
            "masked_spans": [[a, b] for a, b in self.masked_spans(stage)],
        }


def render_prompt_text(question: Question, docs: Sequence[Document]) -> str:
    return render_document_blocks(docs) + f"\n\nQuestion: {question.text}"


def build_training_record(question: Question, docs: Sequence[Document],
                          trajectory: SelfReasoningTrajectory) -> TrainingRecord:
    """Assemble target text and recover exact segment offsets. The trajectory
    part re-serializes canonically; the final answer follows after a newline."""
    rap_text, eap_text, tap_text = trajectory_segments(trajectory)
    if rap_text + eap_text + tap_text != serialize_trajectory(trajectory):
        raise SegmentationFailure("trajectory segments do not re-assemble canonically")
    answer_text = ANSWER_SEPARATOR + trajectory.tap.answer
    target = rap_text + eap_text + tap_text + answer_text
    offsets = []
    cursor = 0
    for label, chunk in zip(SEGMENT_LABELS, (rap_text, eap_text, tap_text, answer_text)):
        offsets.append(Segment(label=label, start=cursor, end=cursor + len(chunk)))
        cursor += len(chunk)
    return TrainingRecord(
        question_id=question.id,
        prompt_text=render_prompt_text(question, docs),
        target_text=target,
        segments=tuple(offsets),
    )


def build_stage_records(
    dataset: Sequence[CandidateRecord],
    stage: int,
    out_path: str | Path,
) -> tuple[int, int]:
    """Write the masked record file for one stage. Returns (written, dropped);
    records whose segmentation fails are dropped and counted rather than
    aborting the stage."""
    if stage not in STAGE_MASKS:
        raise ValueError(f"stage must be one of {sorted(STAGE_MASKS)}, got {stage}")
    written = 0
    dropped = 0
    with open(out_path, "w", encoding="utf-8") as fh:
        for record in dataset:
            try:
                training = build_training_record(
                    record.sample.question, record.sample.docs, record.trajectory
                )
            except SegmentationFailure:
                dropped += 1
                continue
            fh.write(dumps_canonical(training.to_stage_dict(stage)))
            fh.write("\n")
            written += 1
    return written, dropped


@dataclass(frozen=True)
class StageSchedule:
    """Per-stage optimization settings; learning rates decrease across stages."""

    lrs: tuple[float, float, float] = DEFAULT_STAGE_LRS
    epochs: int = DEFAULT_EPOCHS
    batch_size: int = DEFAULT_BATCH_SIZE

    def __post_init__(self):
        if any(lr <= 0 for lr in self.lrs):
            raise ValueError("learning rates must be positive")
        if any(a < b for a, b in zip(self.lrs, self.lrs[1:])):
            raise ValueError(f"learning rates must be non-increasing across stages: {self.lrs}")


def emit_schedule(
    out_path: str | Path,
    records_files: Sequence[str],
    schedule: StageSchedule = StageSchedule(),
) -> dict:
    """Write the stage schedule JSON: one entry per records file, in stage
    order, each with its records file, learning rate, epochs, and batch size."""
    stages = []
    for i, records_file in enumerate(records_files):
        lr = schedule.lrs[i] if i < len(schedule.lrs) else schedule.lrs[-1]
        stages.append(
            {
                "stage": i + 1,
                "records_file": str(records_file),
                "lr": lr,
                "epochs": schedule.epochs,
                "batch_size": schedule.batch_size,
            }
        )
    payload = {"stages": stages}
    write_json(out_path, payload)
    return payload


def load_schedule(path: str | Path) -> dict:
    payload = read_json(path)
    if "stages" not in payload or not isinstance(payload["stages"], list):
        raise ValueError(f"{path}: schedule file needs a 'stages' list")
    return payload
