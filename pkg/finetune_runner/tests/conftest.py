"""Fixture records in the masked-training-record JSONL schema.

Written by hand here (not imported from the producing toolkit) because the
file format is the interface between the two packages."""

import json
import random
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

WORDS = ["lantern", "harbor", "charter", "sealed", "registry", "valley", "keeper",
         "archive", "bridge", "festival", "ledger", "beacon", "orchard", "mill"]

STAGE_MASKS = {1: ("eap", "tap"), 2: ("tap",), 3: ()}


def make_record(i: int, rng: random.Random) -> tuple[str, str, dict[str, tuple[int, int]]]:
    """One synthetic record: prompt, target (trajectory JSON + final answer),
    and the four segment offsets."""
    pick = lambda n: " ".join(rng.choice(WORDS) for _ in range(n))
    answer = rng.choice(WORDS) + str(1800 + i)
    rap = f'{{"relevant": true, "relevant_reason": "{pick(4)}", '
    eap = (f'"evidence": [{{"cite_content": "{pick(5)}", '
           f'"reason_for_cite": "{pick(3)}", "doc_index": 1}}], ')
    tap = f'"analysis": "{pick(6)} [1].", "answer": "{answer}"}}'
    answer_seg = "\n" + answer
    offsets = {}
    cursor = 0
    for label, chunk in (("rap", rap), ("eap", eap), ("tap", tap), ("answer", answer_seg)):
        offsets[label] = (cursor, cursor + len(chunk))
        cursor += len(chunk)
    prompt = f"[1] doc {i}: {pick(8)}.\n\nQuestion: {pick(5)}?"
    return prompt, rap + eap + tap + answer_seg, offsets


def record_row(prompt: str, target: str, offsets: dict, stage: int) -> dict:
    return {
        "question_id": "fixture",
        "stage": stage,
        "prompt_text": prompt,
        "target_text": target,
        "segments": [[label, *offsets[label]] for label in ("rap", "eap", "tap", "answer")],
        "masked_spans": [list(offsets[label]) for label in STAGE_MASKS[stage]],
    }


@pytest.fixture(scope="session")
def fifty_records():
    rng = random.Random(42)
    return [make_record(i, rng) for i in range(50)]


@pytest.fixture(scope="session")
def schedule_dir(tmp_path_factory, fifty_records):
    """Stage record files for all three stages plus the schedule JSON, using
    the published stage learning rates."""
    base = tmp_path_factory.mktemp("schedule")
    stages = []
    for stage, lr in ((1, 5e-5), (2, 3e-5), (3, 1e-5)):
        path = base / f"stage{stage}.jsonl"
        with open(path, "w", encoding="utf-8") as fh:
            for prompt, target, offsets in fifty_records:
                fh.write(json.dumps(record_row(prompt, target, offsets, stage)) + "\n")
        stages.append({"stage": stage, "records_file": path.name, "lr": lr,
                       "epochs": 3, "batch_size": 8})
    (base / "schedule.json").write_text(json.dumps({"stages": stages}), encoding="utf-8")
    return base
