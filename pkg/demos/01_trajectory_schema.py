"""Parse a model generation into a reasoning trajectory and check its evidence.

The model output is one JSON object with five fields, in a fixed order:
relevance judgment, evidence list, analysis, answer. The parser tolerates
prose around the object; the serializer is canonical and byte-stable.
"""

from selfreason import (
    Document,
    parse_trajectory,
    serialize_trajectory,
    validate_evidence_grounding,
)

generation = """
Let me think about the documents first.

{"relevant": true,
 "relevant_reason": "document 1 states when the lighthouse was lit",
 "evidence": [{"cite_content": "first lit in 1887 by the harbor guild",
               "reason_for_cite": "it answers the year directly",
               "doc_index": 1}],
 "analysis": "The lighthouse was first lit in 1887 [1].",
 "answer": "1887"}

That is my final answer.
"""

trajectory = parse_trajectory(generation)
print("relevant:      ", trajectory.rap.relevant)
print("evidence items:", len(trajectory.eap))
print("answer:        ", trajectory.tap.answer)

canonical = serialize_trajectory(trajectory)
print("\ncanonical form:\n" + canonical)
assert parse_trajectory(canonical) == trajectory  # round-trip

docs = [
    Document(id="d1", title="Velmora Lighthouse",
             body="The Velmora Lighthouse was FIRST LIT in 1887 by the harbor guild.",
             rank=1, score=9.1),
]
report = validate_evidence_grounding(trajectory, docs)
print("\ngrounding passed:", report.passed)
print(report.to_json())
