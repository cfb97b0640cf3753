import json
from collections import Counter

import pytest

from helpers import make_question
from selfreason.llm_gateway import ScriptedBackend, ScriptRule
from selfreason.retrieval import Corpus, CorpusDoc, LexicalRetriever, RetrievalResult, build_index
from selfreason.robustness import (
    InsufficientDistractors,
    inject_noise,
    round_half_up,
    run_robustness_experiment,
    shuffle_docs,
)
from selfreason.trajectory import Document
from selfreason.util import derive_seed


def result_with(n: int, prefix="d", qid="q1") -> RetrievalResult:
    docs = tuple(
        Document(id=f"{prefix}{i}", title=f"t{i}", body=f"body {prefix}{i}",
                 rank=i, score=float(100 - i))
        for i in range(1, n + 1)
    )
    return RetrievalResult(question_id=qid, query="query", docs=docs)


class TestShuffle:
    def test_deterministic(self):
        r = result_with(5)
        assert shuffle_docs(r, 42) == shuffle_docs(r, 42)

    def test_single_doc_unchanged(self):
        r = result_with(1)
        shuffled = shuffle_docs(r, 9)
        assert [d.id for d in shuffled.docs] == ["d1"]

    def test_multiset_preserved_and_ranks_renumbered(self):
        r = result_with(5)
        shuffled = shuffle_docs(r, 3)
        assert sorted(d.id for d in shuffled.docs) == sorted(d.id for d in r.docs)
        assert [d.rank for d in shuffled.docs] == [1, 2, 3, 4, 5]

    def test_metadata_records_permutation_and_original_order(self):
        r = result_with(4)
        shuffled = shuffle_docs(r, 17)
        perm = shuffled.meta["permutation"]
        assert sorted(perm) == [0, 1, 2, 3]
        assert [d.id for d in shuffled.docs] == [r.docs[src].id for src in perm]
        assert shuffled.meta["original_order"] == [[d.id, d.rank, d.score] for d in r.docs]

    def test_uniform_over_120_permutations_within_5_sigma(self):
        r = result_with(5)
        counts = Counter()
        trials = 2000
        for i in range(trials):
            shuffled = shuffle_docs(r, derive_seed(123, i))
            counts[tuple(d.id for d in shuffled.docs)] += 1
        assert len(counts) == 120
        p = 1 / 120
        bound = 5 * (trials * p * (1 - p)) ** 0.5
        for perm, count in counts.items():
            assert abs(count - trials * p) <= bound, (perm, count)


class TestInjectNoise:
    def _pool(self, n_results=4, docs_each=5):
        return [result_with(docs_each, prefix=f"x{j}_", qid=f"other{j}")
                for j in range(n_results)]

    def test_round_half_up(self):
        assert round_half_up(2.5) == 3
        assert round_half_up(2.4) == 2
        assert round_half_up(0.5) == 1
        assert round_half_up(2.0) == 2

    def test_exactly_three_of_five_replaced_at_half(self):
        r = result_with(5)
        noisy = inject_noise(r, self._pool(), fraction=0.5, seed=1)
        assert len(noisy.meta["replaced_positions"]) == 3
        changed = [i for i, (a, b) in enumerate(zip(r.docs, noisy.docs)) if a.id != b.id]
        assert changed == noisy.meta["replaced_positions"]

    def test_fraction_zero_is_identity(self):
        r = result_with(5)
        noisy = inject_noise(r, self._pool(), fraction=0.0, seed=1)
        assert [d.id for d in noisy.docs] == [d.id for d in r.docs]
        assert noisy.meta["replaced_positions"] == []

    def test_unreplaced_positions_untouched(self):
        r = result_with(5)
        noisy = inject_noise(r, self._pool(), fraction=0.5, seed=8)
        replaced = set(noisy.meta["replaced_positions"])
        for i, (a, b) in enumerate(zip(r.docs, noisy.docs)):
            if i in replaced:
                assert a.id != b.id
                assert b.id in noisy.meta["distractor_ids"]
            else:
                assert a.id == b.id and a.body == b.body

    def test_deterministic(self):
        r = result_with(5)
        a = inject_noise(r, self._pool(), fraction=0.5, seed=99)
        b = inject_noise(r, self._pool(), fraction=0.5, seed=99)
        assert a == b
        assert a.meta["distractor_ids"] == b.meta["distractor_ids"]

    def test_insufficient_distractors(self):
        r = result_with(5)
        with pytest.raises(InsufficientDistractors):
            inject_noise(r, [result_with(2, prefix="y", qid="o")], fraction=1.0, seed=0)

    def test_distractors_never_duplicate_present_docs(self):
        r = result_with(5)
        pool = self._pool() + [result_with(5)]  # pool includes the same ids as r
        noisy = inject_noise(r, pool, fraction=0.5, seed=3)
        assert len({d.id for d in noisy.docs}) == 5
        for did in noisy.meta["distractor_ids"]:
            assert not did.startswith("d")

    def test_fraction_validated(self):
        with pytest.raises(ValueError):
            inject_noise(result_with(3), self._pool(), fraction=1.5, seed=0)

    def test_replacement_positions_uniform_within_5_sigma(self):
        # each of the 5 positions should be replaced with probability 3/5
        r = result_with(5)
        pool = self._pool(6, 5)
        trials = 2000
        counts = Counter()
        for i in range(trials):
            noisy = inject_noise(r, pool, fraction=0.5, seed=derive_seed(55, i))
            counts.update(noisy.meta["replaced_positions"])
        p = 3 / 5
        bound = 5 * (trials * p * (1 - p)) ** 0.5
        for pos in range(5):
            assert abs(counts[pos] - trials * p) <= bound, (pos, counts[pos])


# --- comparative experiment ----------------------------------------------------

N_Q = 8


def forced_world():
    """Per-question vocabulary islands: each question retrieves its own two
    documents only. Scripted rules key on a marker phrase that exists only in
    the question's main document, so replacing that document breaks the match
    and the backend falls back to a wrong default answer."""
    docs = []
    questions = []
    rules = []
    for i in range(N_Q):
        # every body token is family-suffixed so retrieval never crosses families
        entity = f"zephquill{i}"
        marker = f"{entity} registry{i} cycle{i} {1900 + i}"
        docs.append(CorpusDoc(f"main{i}", f"{entity} records{i}",
                              f"{marker}. holdings{i} maps{i}."))
        docs.append(CorpusDoc(f"side{i}", f"{entity} notes{i}",
                              f"annex{i} {entity} appendix{i} {entity}."))
        questions.append(
            make_question(f"rq{i}", f"which year does {entity} registry{i} show?",
                          gold=(str(1900 + i),))
        )
        rules.append(ScriptRule(marker, json.dumps({
            "relevant": True,
            "relevant_reason": "the registry document lists the year",
            "evidence": [{"cite_content": marker, "reason_for_cite": "states the year",
                          "doc_index": 1}],
            "analysis": f"The registry lists {1900 + i} [1].",
            "answer": str(1900 + i),
        })))
    default = json.dumps({
        "relevant": False,
        "relevant_reason": "no document describes this registry",
        "evidence": [],
        "analysis": "Cannot ground an answer in these documents.",
        "answer": "unknown",
    })
    corpus = Corpus(docs=tuple(docs))
    return questions, LexicalRetriever(build_index(corpus)), rules, default


class TestExperiment:
    def test_noisy_accuracy_at_most_baseline_and_shuffle_neutral(self):
        questions, retriever, rules, default = forced_world()
        backend = ScriptedBackend(rules, default_response=default)
        report = run_robustness_experiment(
            questions, retriever, backend, ["baseline", "shuffled", "noisy"],
            master_seed=11, fraction=0.5,
        )
        baseline = report.row("baseline")
        shuffled = report.row("shuffled")
        noisy = report.row("noisy")
        assert baseline.aggregate == 1.0
        # substring rules are order-insensitive, so shuffling changes nothing
        assert shuffled.aggregate == baseline.aggregate
        assert shuffled.delta_vs_baseline == 0.0
        assert noisy.aggregate <= baseline.aggregate
        assert noisy.delta_vs_baseline <= 0.0
        assert noisy.counts["internal_knowledge"] >= 0

    def test_noise_actually_degrades_on_this_fixture(self):
        questions, retriever, rules, default = forced_world()
        backend = ScriptedBackend(rules, default_response=default)
        report = run_robustness_experiment(
            questions, retriever, backend, ["baseline", "noisy"],
            master_seed=11, fraction=1.0,
        )
        assert report.row("noisy").aggregate < report.row("baseline").aggregate

    def test_baseline_only_single_row_zero_delta(self):
        questions, retriever, rules, default = forced_world()
        backend = ScriptedBackend(rules, default_response=default)
        report = run_robustness_experiment(questions, retriever, backend, ["baseline"],
                                           master_seed=0)
        assert len(report.rows) == 1
        assert report.rows[0].delta_vs_baseline == 0.0

    def test_unknown_setting_rejected(self):
        questions, retriever, rules, default = forced_world()
        backend = ScriptedBackend(rules, default_response=default)
        with pytest.raises(ValueError):
            run_robustness_experiment(questions, retriever, backend, ["chaotic"])

    def test_text_table_aligned(self):
        questions, retriever, rules, default = forced_world()
        backend = ScriptedBackend(rules, default_response=default)
        report = run_robustness_experiment(questions, retriever, backend,
                                           ["baseline", "noisy"], master_seed=2)
        text = report.to_text()
        lines = text.splitlines()
        assert len(lines) == 4  # header, rule, two rows
        assert len({len(line) for line in lines if line.strip()}) <= 2
        assert "baseline" in lines[2]

    def test_report_round_trips_to_dict(self):
        questions, retriever, rules, default = forced_world()
        backend = ScriptedBackend(rules, default_response=default)
        report = run_robustness_experiment(questions, retriever, backend, ["baseline"])
        payload = report.to_dict()
        assert payload["rows"][0]["setting"] == "baseline"
        assert payload["rows"][0]["n"] == N_Q
