"""A tiny decoder-only transformer LM, small enough for CPU smoke training."""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .data import PAD


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 2
    max_len: int = 1024

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, payload: dict) -> "ModelConfig":
        return cls(**payload)


class TinyCausalLM(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.tok_emb = nn.Embedding(config.vocab_size, config.d_model, padding_idx=PAD)
        self.pos_emb = nn.Embedding(config.max_len, config.d_model)
        layer = nn.TransformerEncoderLayer(
            d_model=config.d_model,
            nhead=config.n_heads,
            dim_feedforward=4 * config.d_model,
            dropout=0.0,
            batch_first=True,
            norm_first=True,
        )
        self.blocks = nn.TransformerEncoder(layer, config.n_layers,
                                            enable_nested_tensor=False)
        self.ln_f = nn.LayerNorm(config.d_model)
        self.head = nn.Linear(config.d_model, config.vocab_size)

    def forward(self, input_ids: torch.Tensor) -> torch.Tensor:
        """input_ids: (batch, seq) int64 -> logits (batch, seq, vocab)."""
        batch, seq = input_ids.shape
        if seq > self.config.max_len:
            raise ValueError(f"sequence length {seq} exceeds max_len {self.config.max_len}")
        positions = torch.arange(seq, device=input_ids.device)
        x = self.tok_emb(input_ids) + self.pos_emb(positions)[None, :, :]
        causal = torch.triu(
            torch.ones(seq, seq, dtype=torch.bool, device=input_ids.device), diagonal=1
        )
        padding = input_ids == PAD
        x = self.blocks(x, mask=causal, src_key_padding_mask=padding)
        return self.head(self.ln_f(x))


def batch_loss(model: TinyCausalLM, input_ids: torch.Tensor,
               labels: torch.Tensor) -> tuple[torch.Tensor, int]:
    """Summed cross-entropy over the positions whose label is not -100, plus
    the count of such positions. Masked target tokens and prompt tokens carry
    label -100 and contribute exactly zero."""
    logits = model(input_ids)
    flat_logits = logits.reshape(-1, logits.size(-1))
    flat_labels = labels.reshape(-1)
    loss_sum = nn.functional.cross_entropy(
        flat_logits, flat_labels, ignore_index=-100, reduction="sum"
    )
    n = int((flat_labels != -100).sum().item())
    return loss_sum, n
