"""Three-stage curriculum training over masked records.

Each stage reads its records file and schedule entry (records_file, lr,
epochs, batch_size), continues from the previous stage's checkpoint, and
appends per-epoch rows to the loss log. The per-epoch figure is the mean
cross-entropy over unmasked target tokens, token-weighted so it is invariant
to how records fall into batches.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import random
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import torch

from .data import PAD, EncodedExample, Vocab, encode_record, load_records
from .model import ModelConfig, TinyCausalLM, batch_loss


def derive_seed(master: int, *parts) -> int:
    key = ":".join([str(master), *(str(p) for p in parts)])
    return int.from_bytes(hashlib.sha256(key.encode()).digest()[:8], "big") >> 1


@dataclass
class EpochRow:
    epoch: int
    stage: int
    mean_loss: float


def collate(examples: Sequence[EncodedExample]) -> tuple[torch.Tensor, torch.Tensor]:
    width = max(len(ex.input_ids) for ex in examples)
    input_ids = torch.full((len(examples), width), PAD, dtype=torch.long)
    labels = torch.full((len(examples), width), -100, dtype=torch.long)
    for i, ex in enumerate(examples):
        input_ids[i, : len(ex.input_ids)] = torch.tensor(ex.input_ids, dtype=torch.long)
        labels[i, : len(ex.labels)] = torch.tensor(ex.labels, dtype=torch.long)
    return input_ids, labels


def save_checkpoint(path: str | Path, model: TinyCausalLM, vocab: Vocab, stage: int) -> None:
    torch.save(
        {
            "model_state": model.state_dict(),
            "config": model.config.to_dict(),
            "vocab": vocab.to_dict(),
            "stage": stage,
        },
        path,
    )


def load_checkpoint(path: str | Path) -> tuple[TinyCausalLM, Vocab, int]:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    config = ModelConfig.from_dict(payload["config"])
    model = TinyCausalLM(config)
    model.load_state_dict(payload["model_state"])
    vocab = Vocab.from_dict(payload["vocab"])
    return model, vocab, payload["stage"]


def run_stage(
    records_file: str | Path,
    entry: dict,
    checkpoint_in: str | Path | None,
    checkpoint_out: str | Path,
    *,
    seed: int = 0,
    d_model: int = 64,
    n_layers: int = 2,
) -> list[EpochRow]:
    """Train one stage and write its checkpoint. Returns the per-epoch rows.
    With checkpoint_in=None a fresh model and vocabulary are initialized from
    the stage's records."""
    stage = int(entry.get("stage", 1))
    records = load_records(records_file)
    if not records:
        raise ValueError(f"{records_file}: no records to train on")

    if checkpoint_in is None:
        vocab = Vocab.build(records)
        torch.manual_seed(derive_seed(seed, "init"))
        max_needed = 0
        encoded = [encode_record(r, vocab) for r in records]
        max_needed = max(len(ex.input_ids) for ex in encoded)
        config = ModelConfig(vocab_size=len(vocab), d_model=d_model, n_layers=n_layers,
                             max_len=max(256, max_needed))
        model = TinyCausalLM(config)
    else:
        model, vocab, _ = load_checkpoint(checkpoint_in)
        encoded = [encode_record(r, vocab) for r in records]

    lr = float(entry["lr"])
    epochs = int(entry.get("epochs", 3))
    batch_size = int(entry.get("batch_size", 32))
    optimizer = torch.optim.Adam(model.parameters(), lr=lr)

    rows: list[EpochRow] = []
    model.train()
    for epoch in range(1, epochs + 1):
        order = list(range(len(encoded)))
        random.Random(derive_seed(seed, "shuffle", stage, epoch)).shuffle(order)
        loss_total = 0.0
        token_total = 0
        for start in range(0, len(order), batch_size):
            batch = [encoded[i] for i in order[start : start + batch_size]]
            input_ids, labels = collate(batch)
            loss_sum, n_tokens = batch_loss(model, input_ids, labels)
            if n_tokens == 0:
                continue
            optimizer.zero_grad()
            (loss_sum / n_tokens).backward()
            optimizer.step()
            loss_total += float(loss_sum.item())
            token_total += n_tokens
        rows.append(EpochRow(epoch=epoch, stage=stage,
                             mean_loss=loss_total / max(token_total, 1)))
    save_checkpoint(checkpoint_out, model, vocab, stage)
    return rows


def run_schedule(schedule_path: str | Path, out_dir: str | Path, *, seed: int = 0,
                 d_model: int = 64, n_layers: int = 2) -> list[EpochRow]:
    """Run every stage in the schedule, chaining checkpoints, and write the
    loss log CSV (epoch, stage, mean_loss) next to the checkpoints."""
    schedule_path = Path(schedule_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    schedule = json.loads(schedule_path.read_text(encoding="utf-8"))
    stages = schedule["stages"]
    if not stages:
        raise ValueError(f"{schedule_path}: empty schedule")

    all_rows: list[EpochRow] = []
    checkpoint_in: Path | None = None
    for entry in stages:
        stage = int(entry.get("stage", 1))
        records_file = Path(entry["records_file"])
        if not records_file.is_absolute():
            records_file = schedule_path.parent / records_file
        checkpoint_out = out_dir / f"stage{stage}.pt"
        all_rows += run_stage(records_file, entry, checkpoint_in, checkpoint_out,
                              seed=seed, d_model=d_model, n_layers=n_layers)
        checkpoint_in = checkpoint_out

    with open(out_dir / "loss_log.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "stage", "mean_loss"])
        for row in all_rows:
            writer.writerow([row.epoch, row.stage, f"{row.mean_loss:.6f}"])
    return all_rows


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="finetune-runner",
        description="Fine-tune a tiny causal LM through a masked three-stage curriculum.",
    )
    parser.add_argument("--schedule", required=True, help="schedule JSON")
    parser.add_argument("--out-dir", required=True, help="checkpoint + loss-log directory")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--d-model", type=int, default=64)
    parser.add_argument("--n-layers", type=int, default=2)
    args = parser.parse_args(argv)
    try:
        rows = run_schedule(args.schedule, args.out_dir, seed=args.seed,
                            d_model=args.d_model, n_layers=args.n_layers)
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for row in rows:
        print(f"stage {row.stage} epoch {row.epoch}: mean unmasked loss {row.mean_loss:.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
