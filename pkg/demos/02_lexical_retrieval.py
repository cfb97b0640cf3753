"""Build a BM25 index over the bundled fixture corpus and query it.

Scoring is BM25 (k1=1.2, b=0.75) with deterministic lexicographic
tie-breaking; the index round-trips through a single binary file.
"""

import tempfile
from pathlib import Path

from selfreason import build_index, load_corpus_jsonl, load_index, retrieve, save_index

desk = Path(__file__).parent.parent / "tests" / "fixtures" / "desk"
corpus = load_corpus_jsonl(desk / "corpus.jsonl")
index = build_index(corpus)
print(f"indexed {len(index)} documents, {index.n_terms} distinct terms")

result = retrieve(index, "in which year was the velmora charter0 sealed?", k=5,
                  question_id="demo")
for doc in result.docs:
    print(f"  rank {doc.rank}  score {doc.score:.3f}  {doc.id}  {doc.title}")

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "index.bin"
    save_index(index, path)
    reloaded = load_index(path)
    again = retrieve(reloaded, result.query, k=5, question_id="demo")
    assert again == result
    print(f"\npersisted to {path.name} ({path.stat().st_size} bytes) and reloaded identically")
