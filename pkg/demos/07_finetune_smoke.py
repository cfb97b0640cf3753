"""Drive the separate finetune-runner package from prepared records.

The two packages meet at a file boundary: this toolkit writes stage record
JSONL files plus a schedule JSON, and finetune-runner (installable from
finetune_runner/ in this repository) trains a tiny causal LM from them.
"""

import tempfile
from pathlib import Path

try:
    from finetune_runner import run_schedule
except ImportError:
    raise SystemExit("finetune-runner is not installed; run: pip install -e finetune_runner/")

from selfreason import (
    LexicalRetriever,
    Question,
    ScriptedBackend,
    build_index,
    build_stage_records,
    emit_schedule,
    generate_candidates,
    load_corpus_jsonl,
    make_positive_sample,
    qc_filter,
)
from selfreason.util import derive_seed, read_jsonl

desk = Path(__file__).parent.parent / "tests" / "fixtures" / "desk"
retriever = LexicalRetriever(build_index(load_corpus_jsonl(desk / "corpus.jsonl")))
teacher = ScriptedBackend.from_rules_file(desk / "rules.json")
questions = [Question.from_dict(row) for row in read_jsonl(desk / "questions.jsonl")][:12]

samples = [make_positive_sample(q, retriever, derive_seed(3, i))
           for i, q in enumerate(questions)]
records, _ = generate_candidates(samples, teacher)
kept, _ = qc_filter(records)

with tempfile.TemporaryDirectory() as tmp:
    tmp = Path(tmp)
    stage_files = []
    for stage in (1, 2, 3):
        path = tmp / f"stage{stage}.jsonl"
        written, dropped = build_stage_records(kept, stage, path)
        stage_files.append(str(path))
    emit_schedule(tmp / "schedule.json", stage_files)
    rows = run_schedule(tmp / "schedule.json", tmp / "ckpts", seed=0)
    for row in rows:
        print(f"stage {row.stage} epoch {row.epoch}: mean unmasked loss {row.mean_loss:.4f}")
    checkpoints = sorted(p.name for p in (tmp / "ckpts").glob("*.pt"))
    print("checkpoints:", checkpoints)
