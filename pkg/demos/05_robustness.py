"""Compare answering accuracy under document shuffling and noise injection.

Shuffling permutes presentation order only; noise injection replaces half of
the retrieved documents (rounded half up) with distractors drawn from other
questions' retrievals. Both perturbations are pure functions of (input, seed).
"""

from pathlib import Path

from selfreason import (
    LexicalRetriever,
    Question,
    ScriptedBackend,
    build_index,
    load_corpus_jsonl,
    run_robustness_experiment,
    shuffle_docs,
)
from selfreason.util import read_jsonl

desk = Path(__file__).parent.parent / "tests" / "fixtures" / "desk"
retriever = LexicalRetriever(build_index(load_corpus_jsonl(desk / "corpus.jsonl")))
backend = ScriptedBackend.from_rules_file(desk / "rules.json")
questions = [Question.from_dict(row) for row in read_jsonl(desk / "questions.jsonl")]

r = retriever.retrieve(questions[0].text, 5, question_id=questions[0].id)
shuffled = shuffle_docs(r, seed=7)
print("original order:", [d.id for d in r.docs])
print("shuffled order:", [d.id for d in shuffled.docs])
print("permutation:   ", shuffled.meta["permutation"])

report = run_robustness_experiment(
    questions, retriever, backend, ["baseline", "shuffled", "noisy"],
    master_seed=5, fraction=0.5,
)
print("\n" + report.to_text())
