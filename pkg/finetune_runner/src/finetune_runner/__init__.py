"""Smoke-scale stage-wise fine-tuning of a tiny causal LM.

Consumes the masked training records and stage schedule emitted by the
training-data preparation toolkit (JSONL + JSON file formats) and realizes
the three-stage curriculum: character-span masks are mapped onto tokens, the
masked tokens contribute exactly zero loss and are sentinel-substituted on
the input side, and each stage trains at its scheduled learning rate.
"""

from .data import (
    EncodedExample,
    SpanMappingFailure,
    TrainingRecord,
    Vocab,
    encode_record,
    load_records,
    masked_token_flags,
    tokenize,
    tokenize_with_offsets,
)
from .model import ModelConfig, TinyCausalLM, batch_loss
from .runner import EpochRow, load_checkpoint, run_schedule, run_stage, save_checkpoint

__version__ = "0.1.0"
