"""Answer the bundled 20-question fixture end to end, fully offline.

One generation per question produces the whole reasoning trajectory plus the
final answer; the scripted backend replays canned generations so the run is
deterministic and needs no network.
"""

from pathlib import Path

from selfreason import (
    LexicalRetriever,
    Question,
    ScriptedBackend,
    build_index,
    load_corpus_jsonl,
    run_batch,
    short_form_accuracy,
)
from selfreason.util import read_jsonl

desk = Path(__file__).parent.parent / "tests" / "fixtures" / "desk"
retriever = LexicalRetriever(build_index(load_corpus_jsonl(desk / "corpus.jsonl")))
backend = ScriptedBackend.from_rules_file(desk / "rules.json")
questions = [Question.from_dict(row) for row in read_jsonl(desk / "questions.jsonl")]

records, summary = run_batch(questions, retriever, backend)
print("summary:", summary)
print("backend calls:", backend.call_count, "(one per question)")

correct = sum(
    short_form_accuracy(r.output.final_answer, q.gold_answers)
    for q, r in zip(questions, records)
)
print(f"accuracy: {correct}/{len(questions)}")

sample = records[0]
print("\nfirst record:")
print("  retrieved:", [d.id for d in sample.retrieval.docs])
print("  evidence: ", sample.output.trajectory.eap[0].cite_content)
print("  answer:   ", sample.output.final_answer)
