"""Record loading, tokenization, and character-span to token-position masking.

Records come from the training-prep JSONL format:

    {"prompt_text": ..., "target_text": ..., "segments": [[label, a, b], ...],
     "masked_spans": [[a, b], ...]}

The tokenizer covers every character (word runs, single punctuation marks,
whitespace runs), so character offsets map exactly onto token boundaries.
A target token is masked when it overlaps any masked span (the conservative
token-overlap rule: never train on masked content). Masked tokens are also
replaced by a sentinel id on the input side so that their content cannot leak
into the predictions of unmasked positions through attention.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

PAD, UNK, BOS, EOS, MASK = 0, 1, 2, 3, 4
SPECIAL_TOKENS = ("<pad>", "<unk>", "<bos>", "<eos>", "<masked>")

_TOKEN_RE = re.compile(r"\w+|[^\w\s]|\s+")


class SpanMappingFailure(ValueError):
    """Target text and its tokenization (or its spans) disagree in length."""


@dataclass(frozen=True)
class TrainingRecord:
    prompt_text: str
    target_text: str
    masked_spans: tuple[tuple[int, int], ...]

    @classmethod
    def from_dict(cls, row: dict) -> "TrainingRecord":
        return cls(
            prompt_text=row["prompt_text"],
            target_text=row["target_text"],
            masked_spans=tuple((int(a), int(b)) for a, b in row.get("masked_spans", [])),
        )


def load_records(path: str | Path) -> list[TrainingRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(TrainingRecord.from_dict(json.loads(line)))
    return records


def tokenize_with_offsets(text: str) -> list[tuple[str, int, int]]:
    """Full-coverage tokenization: every character belongs to exactly one
    token. Raises SpanMappingFailure if coverage breaks (it cannot for this
    pattern, but the contract is checked anyway)."""
    tokens = [(m.group(0), m.start(), m.end()) for m in _TOKEN_RE.finditer(text)]
    covered = sum(end - start for _, start, end in tokens)
    if covered != len(text):
        raise SpanMappingFailure(
            f"tokenization covers {covered} of {len(text)} characters"
        )
    return tokens


def tokenize(text: str) -> list[str]:
    return [tok for tok, _, _ in tokenize_with_offsets(text)]


class Vocab:
    """Deterministic frequency-ordered vocabulary with reserved special ids."""

    def __init__(self, tokens: Sequence[str]):
        self.itos = list(SPECIAL_TOKENS) + list(tokens)
        self.stoi = {tok: i for i, tok in enumerate(self.itos)}

    def __len__(self) -> int:
        return len(self.itos)

    def id(self, token: str) -> int:
        return self.stoi.get(token, UNK)

    @classmethod
    def build(cls, records: Iterable[TrainingRecord], max_size: int = 4096) -> "Vocab":
        counts: Counter[str] = Counter()
        for record in records:
            counts.update(tokenize(record.prompt_text))
            counts.update(tokenize(record.target_text))
        ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        keep = [tok for tok, _ in ranked[: max_size - len(SPECIAL_TOKENS)]]
        return cls(keep)

    def to_dict(self) -> dict:
        return {"tokens": self.itos[len(SPECIAL_TOKENS):]}

    @classmethod
    def from_dict(cls, payload: dict) -> "Vocab":
        return cls(payload["tokens"])


def masked_token_flags(target_text: str,
                       masked_spans: Sequence[tuple[int, int]]) -> list[bool]:
    """One flag per target token: True iff the token overlaps a masked span.
    This is exactly the image of the character-span mask under tokenization."""
    for a, b in masked_spans:
        if a < 0 or b > len(target_text) or a > b:
            raise SpanMappingFailure(
                f"masked span [{a}, {b}) is outside the target text (length "
                f"{len(target_text)})"
            )
    flags = []
    for _, start, end in tokenize_with_offsets(target_text):
        flags.append(any(start < b and end > a for a, b in masked_spans))
    return flags


@dataclass(frozen=True)
class EncodedExample:
    """input_ids feed the model; labels[j] is the token that position j must
    predict (-100 where no loss applies: prompt, masked targets, padding)."""

    input_ids: tuple[int, ...]
    labels: tuple[int, ...]

    @property
    def n_loss_tokens(self) -> int:
        return sum(1 for lab in self.labels if lab != -100)


def encode_record(record: TrainingRecord, vocab: Vocab) -> EncodedExample:
    prompt_ids = [vocab.id(tok) for tok in tokenize(record.prompt_text)]
    target_tokens = tokenize_with_offsets(record.target_text)
    flags = masked_token_flags(record.target_text, record.masked_spans)

    target_in = [MASK if masked else vocab.id(tok)
                 for (tok, _, _), masked in zip(target_tokens, flags)]
    input_ids = [BOS] + prompt_ids + target_in + [EOS]

    # labels[j] = input_ids[j + 1] where position j+1 is an unmasked target
    # token or the EOS; everywhere else the label is ignored
    labels = [-100] * len(input_ids)
    target_start = 1 + len(prompt_ids)
    for offset, ((tok, _, _), masked) in enumerate(zip(target_tokens, flags)):
        if not masked:
            labels[target_start + offset - 1] = vocab.id(tok)
    labels[len(input_ids) - 2] = EOS
    return EncodedExample(input_ids=tuple(input_ids), labels=tuple(labels))
