"""Shared test utilities: seeded random-object generators and a table judge."""

from __future__ import annotations

import random

from selfreason.evalsuite import SupportVerdict
from selfreason.trajectory import (
    Analysis,
    Document,
    EvidenceItem,
    Question,
    RelevanceJudgment,
    SelfReasoningTrajectory,
)

# words with some punctuation/unicode/JSON-hostile characters mixed in
_WORDS = (
    "retrieval", "document", "answer", "citation", "évidence", "naïve", "tower",
    "1889", "quote\"inside", "brace{open", "brace}close", "back\\slash", "línea",
    "tab\tchar", "new\nline", "relevant", "所属", "z", "[3]", "comma,", "colon:",
)


def random_text(rng: random.Random, min_words: int = 1, max_words: int = 12) -> str:
    n = rng.randint(min_words, max_words)
    return " ".join(rng.choice(_WORDS) for _ in range(n))


def make_random_trajectory(rng: random.Random, k: int = 5) -> SelfReasoningTrajectory:
    relevant = rng.random() < 0.8
    if relevant:
        evidence = tuple(
            EvidenceItem(
                cite_content=random_text(rng),
                reason_for_cite=random_text(rng, 0, 6),
                doc_index=rng.randint(1, k),
            )
            for _ in range(rng.randint(0, 4))
        )
    else:
        evidence = ()
    return SelfReasoningTrajectory(
        rap=RelevanceJudgment(relevant=relevant, relevant_reason=random_text(rng)),
        eap=evidence,
        tap=Analysis(analysis=random_text(rng, 0, 30), answer=random_text(rng, 1, 4)),
    )


def make_docs(bodies: list[str], prefix: str = "d") -> tuple[Document, ...]:
    return tuple(
        Document(id=f"{prefix}{i}", title=f"title {i}", body=body, rank=i, score=float(10 - i))
        for i, body in enumerate(bodies, start=1)
    )


def make_question(qid: str = "q1", text: str = "when did the tower open?",
                  gold=("1889",), task_kind: str = "short_qa") -> Question:
    aliases = tuple((g,) if isinstance(g, str) else tuple(g) for g in gold)
    return Question(id=qid, text=text, gold_answers=aliases, task_kind=task_kind)


class TableJudge:
    """Support judge scripted by an exact (premise, claim) lookup table.
    Missing pairs get the default verdict. Records every call for assertions."""

    def __init__(self, table: dict[tuple[str, str], SupportVerdict],
                 default: SupportVerdict = SupportVerdict.NONE):
        self.table = dict(table)
        self.default = default
        self.calls: list[tuple[str, str]] = []

    def __call__(self, premise: str, claim: str) -> SupportVerdict:
        self.calls.append((premise, claim))
        return self.table.get((premise, claim), self.default)


class ClaimJudge:
    """Support judge keyed on the claim only: {claim: verdict}."""

    def __init__(self, by_claim: dict[str, SupportVerdict],
                 default: SupportVerdict = SupportVerdict.NONE):
        self.by_claim = dict(by_claim)
        self.default = default

    def __call__(self, premise: str, claim: str) -> SupportVerdict:
        return self.by_claim.get(claim, self.default)
