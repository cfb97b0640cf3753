"""Turn a parsed trajectory into stage-wise masked training records.

The target text is the canonical trajectory serialization plus the final
answer; three stages mask progressively less of it (evidence+analysis, then
analysis, then nothing) while the answer is always trained. Masks are
character spans; the separate finetune-runner package maps them onto its
tokenizer and trains a tiny causal LM through the schedule.
"""

import tempfile
from pathlib import Path

from selfreason import Document, Question, build_training_record, emit_schedule, parse_trajectory
from selfreason.training_prep import STAGE_MASKS

question = Question(id="demo", text="when was the lighthouse first lit?",
                    gold_answers=(("1887",),))
docs = [Document(id="d1", title="Velmora Lighthouse",
                 body="The Velmora Lighthouse was first lit in 1887.", rank=1, score=8.0)]
trajectory = parse_trajectory(
    '{"relevant": true, "relevant_reason": "doc 1 has the year", '
    '"evidence": [{"cite_content": "first lit in 1887", '
    '"reason_for_cite": "the year asked", "doc_index": 1}], '
    '"analysis": "It was first lit in 1887 [1].", "answer": "1887"}'
)

record = build_training_record(question, docs, trajectory)
print("target text:")
print(" ", record.target_text.replace("\n", "\\n"))
for segment in record.segments:
    print(f"  {segment.label:7s} [{segment.start:4d}, {segment.end:4d})")

for stage in (1, 2, 3):
    spans = record.masked_spans(stage)
    masked_chars = sum(b - a for a, b in spans)
    print(f"stage {stage}: masks {sorted(STAGE_MASKS[stage])!r:20s} "
          f"({masked_chars} of {len(record.target_text)} chars)")

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "schedule.json"
    schedule = emit_schedule(path, ["stage1.jsonl", "stage2.jsonl", "stage3.jsonl"])
    print("\nschedule stages:",
          [(s["stage"], s["lr"], s["epochs"], s["batch_size"]) for s in schedule["stages"]])
