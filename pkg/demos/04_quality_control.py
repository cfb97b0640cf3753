"""Synthesize candidate training records and quality-filter them.

Positive samples pair each question with its own retrieval; negatives reuse a
different question's documents (shuffled) and are expected to be judged
irrelevant. The filter keeps a record only if its answer is correct and, for
long-form records, its citation recall/precision reach the 0.8 thresholds.
"""

from pathlib import Path

from selfreason import (
    LexicalRetriever,
    Question,
    ScriptedBackend,
    build_index,
    generate_candidates,
    load_corpus_jsonl,
    make_negative_sample,
    make_positive_sample,
    qc_filter,
)
from selfreason.util import derive_seed, read_jsonl

desk = Path(__file__).parent.parent / "tests" / "fixtures" / "desk"
retriever = LexicalRetriever(build_index(load_corpus_jsonl(desk / "corpus.jsonl")))
teacher = ScriptedBackend.from_rules_file(desk / "rules.json")
questions = [Question.from_dict(row) for row in read_jsonl(desk / "questions.jsonl")]

samples = [make_positive_sample(q, retriever, derive_seed(0, "pos", i))
           for i, q in enumerate(questions)]
samples += [make_negative_sample(q, questions, retriever, derive_seed(0, "neg", i))
            for i, q in enumerate(questions[:8])]

records, gen_report = generate_candidates(samples, teacher)
print("generation:", gen_report.to_dict())

kept, qc_report = qc_filter(records, delta_p=0.8, delta_r=0.8)
print(f"kept {qc_report.n_kept}/{qc_report.n_input} "
      f"(answer gate dropped {qc_report.n_dropped_incorrect_answer}, "
      f"citation gate dropped {qc_report.n_dropped_citation})")
for scores in qc_report.per_record[:3]:
    print("  ", scores.to_dict())
