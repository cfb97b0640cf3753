import json
import random

import pytest

from helpers import make_docs, make_question, make_random_trajectory
from selfreason.datagen import CandidateRecord, CandidateSample
from selfreason.training_prep import (
    STAGE_MASKS,
    Segment,
    SegmentationFailure,
    StageSchedule,
    TrainingRecord,
    build_stage_records,
    build_training_record,
    emit_schedule,
    load_schedule,
)
from selfreason.trajectory import (
    Analysis,
    EvidenceItem,
    RelevanceJudgment,
    SelfReasoningTrajectory,
    serialize_trajectory,
)

DOCS = make_docs(["first body", "second body"])


def trajectory():
    return SelfReasoningTrajectory(
        rap=RelevanceJudgment(True, "covers the question"),
        eap=(EvidenceItem("first body", "support", 1),),
        tap=Analysis("The answer is blue [1].", "blue"),
    )


def record():
    q = make_question("tq1", "what color?", gold=("blue",))
    return build_training_record(q, DOCS, trajectory())


class TestTrainingRecord:
    def test_segments_cover_target_exactly_in_order(self):
        r = record()
        assert [s.label for s in r.segments] == ["rap", "eap", "tap", "answer"]
        assert r.segments[0].start == 0
        assert r.segments[-1].end == len(r.target_text)
        for a, b in zip(r.segments, r.segments[1:]):
            assert a.end == b.start

    def test_target_is_serialization_plus_answer(self):
        r = record()
        ser = serialize_trajectory(trajectory())
        assert r.target_text == ser + "\nblue"
        rap, eap, tap, ans = r.segments
        assert r.target_text[rap.start:rap.end].startswith('{"relevant"')
        assert r.target_text[eap.start:eap.end].startswith('"evidence"')
        assert r.target_text[tap.start:tap.end].startswith('"analysis"')
        assert r.target_text[ans.start:ans.end] == "\nblue"

    def test_prompt_contains_docs_and_question(self):
        r = record()
        assert "[1] title 1: first body" in r.prompt_text
        assert r.prompt_text.endswith("Question: what color?")

    def test_stage_masks_constants(self):
        assert STAGE_MASKS[1] == {"eap", "tap"}
        assert STAGE_MASKS[2] == {"tap"}
        assert STAGE_MASKS[3] == set()

    def test_stage1_masks_exactly_eap_and_tap_spans(self):
        r = record()
        spans = r.masked_spans(1)
        labeled = {(s.start, s.end): s.label for s in r.segments}
        assert [labeled[span] for span in spans] == ["eap", "tap"]

    def test_stage3_masks_nothing(self):
        assert record().masked_spans(3) == []

    def test_answer_segment_never_masked(self):
        r = record()
        answer_span = (r.segments[-1].start, r.segments[-1].end)
        for stage in (1, 2, 3):
            assert answer_span not in r.masked_spans(stage)

    def test_mask_nesting_over_random_records(self):
        rng = random.Random(14)
        q = make_question("rq", "q?", gold=("x",))
        for _ in range(50):
            t = make_random_trajectory(rng)
            r = build_training_record(q, DOCS, t)
            spans = {stage: set(r.masked_spans(stage)) for stage in (1, 2, 3)}
            assert spans[1] >= spans[2] >= spans[3]

    def test_invalid_segments_rejected(self):
        with pytest.raises(SegmentationFailure):
            TrainingRecord(
                question_id="x", prompt_text="p", target_text="abcdef",
                segments=(
                    Segment("rap", 0, 2), Segment("eap", 2, 3),
                    Segment("tap", 4, 5), Segment("answer", 5, 6),  # gap at 3
                ),
            )


class TestBuildStageRecords:
    def _dataset(self, n=5):
        rng = random.Random(3)
        out = []
        for i in range(n):
            q = make_question(f"d{i}", f"question {i}?", gold=("x",))
            sample = CandidateSample(question=q, docs=DOCS, polarity="positive",
                                     source_question_id=q.id, shuffle_seed=0)
            out.append(CandidateRecord(sample=sample,
                                       trajectory=make_random_trajectory(rng),
                                       raw_teacher_output=""))
        return out

    def test_writes_stage_file_with_masked_spans(self, tmp_path):
        out = tmp_path / "stage1.jsonl"
        written, dropped = build_stage_records(self._dataset(), 1, out)
        assert (written, dropped) == (5, 0)
        rows = [json.loads(line) for line in out.read_text().splitlines()]
        for row in rows:
            assert row["stage"] == 1
            segs = {label: (a, b) for label, a, b in row["segments"]}
            assert [tuple(span) for span in row["masked_spans"]] == [
                segs["eap"], segs["tap"]
            ]
            # masked spans never touch the answer segment
            ans = segs["answer"]
            assert all(span[1] <= ans[0] or span[0] >= ans[1]
                       for span in row["masked_spans"])

    def test_stage_validation(self, tmp_path):
        with pytest.raises(ValueError):
            build_stage_records(self._dataset(), 4, tmp_path / "x.jsonl")


class TestSchedule:
    def test_defaults(self, tmp_path):
        path = tmp_path / "schedule.json"
        payload = emit_schedule(path, ["s1.jsonl", "s2.jsonl", "s3.jsonl"])
        assert [s["lr"] for s in payload["stages"]] == [5e-5, 3e-5, 1e-5]
        assert all(s["epochs"] == 3 and s["batch_size"] == 32 for s in payload["stages"])
        assert [s["stage"] for s in payload["stages"]] == [1, 2, 3]

    def test_single_stage_override(self, tmp_path):
        path = tmp_path / "schedule.json"
        payload = emit_schedule(path, ["only.jsonl"],
                                StageSchedule(lrs=(1e-4, 1e-4, 1e-4), epochs=7, batch_size=4))
        assert payload["stages"] == [{"stage": 1, "records_file": "only.jsonl",
                                      "lr": 1e-4, "epochs": 7, "batch_size": 4}]

    def test_round_trip(self, tmp_path):
        path = tmp_path / "schedule.json"
        emitted = emit_schedule(path, ["a.jsonl", "b.jsonl", "c.jsonl"])
        loaded = load_schedule(path)
        assert loaded == emitted
        path2 = tmp_path / "schedule2.json"
        emit_schedule(path2, [s["records_file"] for s in loaded["stages"]])
        assert load_schedule(path2) == emitted

    def test_learning_rates_must_not_increase(self):
        with pytest.raises(ValueError):
            StageSchedule(lrs=(1e-5, 3e-5, 5e-5))
        with pytest.raises(ValueError):
            StageSchedule(lrs=(5e-5, -3e-5, 1e-5))
