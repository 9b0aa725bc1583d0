"""Collection run configuration."""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Sequence as SequenceOf


@dataclass(frozen=True)
class TextSource:
    """One labeled text file.  Every non-empty line is a document."""

    domain: str
    path: str


@dataclass
class CollectorConfig:
    """Everything a collection run needs.

    Documents shorter than `seq_len` tokens are skipped, longer ones are
    truncated, so every emitted sequence has exactly `seq_len` tokens.
    The optional streams are the greedy argmax prediction from a single
    forward pass and the next-token targets (input shifted left by one,
    with the tokenizer's end-of-sequence id in the final slot).
    """

    model: str  # local checkpoint path or hub id
    sources: SequenceOf[TextSource]
    out: str
    seq_len: int = 512
    max_sequences: int = 0  # 0 keeps every document that fits
    batch_size: int = 4
    with_predicted: bool = False
    with_ground_truth: bool = False
    model_id: str = ""  # trace header label; empty picks the model ref's basename
    device: str = "cpu"

    def __post_init__(self):
        if self.seq_len < 1:
            raise ValueError(f"seq_len must be >= 1, got {self.seq_len}")
        if not self.sources:
            raise ValueError("need at least one text source")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_sequences < 0:
            raise ValueError(f"max_sequences must be >= 0, got {self.max_sequences}")

    def header_model_id(self) -> str:
        if self.model_id:
            return self.model_id
        base = os.path.basename(os.path.normpath(self.model))
        return base or self.model
